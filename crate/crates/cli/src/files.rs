//! Typed file kinds stored in a [`Container`].

use std::path::Path;

use balquant_core::data::{Dataset, MinMaxScaler};
use balquant_core::fixed::{ArgmaxTable, Direction, ThresholdTable};
use balquant_core::model::{FixedHidden, FixedModel, FixedOutput, Layer, Mlp, ModelSpec};
use balquant_core::quant::{Bitwidth, Convention, QuantizedTensor, WeightQuantizer};
use balquant_core::train::{EpochLog, Optimizer, OptimizerKind, RngState, TrainConfig, Trainer};
use balquant_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::container::{Container, Data};
use crate::error::{Error, Result};

pub const TENSOR: &str = "tensor";
pub const QUANTIZED: &str = "quantized";
pub const DATASET: &str = "dataset";
pub const CHECKPOINT: &str = "checkpoint";
pub const FIXED_MODEL: &str = "fixed-model";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Empty {}

pub fn tensor_container(t: &Tensor) -> Result<Container> {
    let mut c = Container::new(TENSOR, &Empty {})?;
    c.push_tensor("data", t);
    Ok(c)
}

pub fn save_tensor(path: &Path, t: &Tensor) -> Result<()> {
    tensor_container(t)?.save(path)
}

pub fn load_tensor(path: &Path) -> Result<Tensor> {
    let c = Container::load(path)?;
    c.expect_kind(TENSOR)?;
    c.tensor("data")
}

/// Everything about a code tensor except the codes themselves.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantizedMeta {
    pub bits: Bitwidth,
    pub scale: f64,
    pub convention: Convention,
    /// How the codes were produced, when known.
    pub quantizer: Option<WeightQuantizer>,
}

fn quantized_meta(q: &QuantizedTensor, quantizer: Option<WeightQuantizer>) -> QuantizedMeta {
    QuantizedMeta {
        bits: q.bits(),
        scale: q.scale(),
        convention: q.convention(),
        quantizer,
    }
}

fn push_codes(c: &mut Container, name: &str, q: &QuantizedTensor) {
    c.push(name, q.shape().to_vec(), Data::U8(q.codes().to_vec()));
}

fn read_codes(c: &Container, name: &str, meta: &QuantizedMeta) -> Result<QuantizedTensor> {
    let (shape, codes) = c.bytes(name)?;
    Ok(QuantizedTensor::new(
        shape.to_vec(),
        codes.to_vec(),
        meta.bits,
        meta.scale,
        meta.convention,
    )?)
}

pub fn quantized_container(q: &QuantizedTensor, quantizer: Option<WeightQuantizer>) -> Result<Container> {
    let mut c = Container::new(QUANTIZED, &quantized_meta(q, quantizer))?;
    push_codes(&mut c, "codes", q);
    Ok(c)
}

pub fn save_quantized(path: &Path, q: &QuantizedTensor, quantizer: Option<WeightQuantizer>) -> Result<()> {
    quantized_container(q, quantizer)?.save(path)
}

pub fn quantized_from(c: &Container) -> Result<(QuantizedTensor, QuantizedMeta)> {
    c.expect_kind(QUANTIZED)?;
    let meta: QuantizedMeta = c.meta()?;
    Ok((read_codes(c, "codes", &meta)?, meta))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetMeta {
    classes: usize,
}

pub fn save_dataset(path: &Path, d: &Dataset) -> Result<()> {
    let mut c = Container::new(DATASET, &DatasetMeta { classes: d.classes })?;
    c.push_tensor("features", &d.features);
    c.push("labels", vec![d.len()], Data::I64(d.labels.iter().map(|&l| l as i64).collect()));
    c.save(path)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let c = Container::load(path)?;
    c.expect_kind(DATASET)?;
    let meta: DatasetMeta = c.meta()?;
    let (_, labels) = c.ints("labels")?;
    let labels = labels
        .iter()
        .map(|&l| usize::try_from(l).map_err(|_| Error::format(format!("negative label {l}"))))
        .collect::<Result<_>>()?;
    Ok(Dataset::new(c.tensor("features")?, labels, meta.classes)?)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizerMeta {
    kind: OptimizerKind,
    step: u64,
    moments: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointMeta {
    spec: ModelSpec,
    config: TrainConfig,
    epoch: usize,
    scales: Vec<f64>,
    scaler: Option<MinMaxScaler>,
    rng: RngState,
    optimizer: OptimizerMeta,
    log: Vec<EpochLog>,
    /// Quantized weight snapshot of each layer.
    codes: Vec<QuantizedMeta>,
}

/// Full training state: float weight copies, quantized snapshot, optimizer
/// moments, generator position and the metrics log.
pub fn checkpoint_container(t: &Trainer) -> Result<Container> {
    let layers = t.model.layers();
    let mut snapshots = Vec::with_capacity(layers.len());
    for l in layers {
        snapshots.push(l.quantized_weights(t.config.tanh_clip)?);
    }
    let meta = CheckpointMeta {
        spec: t.model.spec().clone(),
        config: t.config.clone(),
        epoch: t.epoch,
        scales: layers.iter().map(Layer::scale).collect(),
        scaler: t.model.scaler().cloned(),
        rng: RngState::capture(&t.rng),
        optimizer: OptimizerMeta {
            kind: t.optimizer.kind,
            step: t.optimizer.step,
            moments: t.optimizer.moments.len(),
        },
        log: t.log.clone(),
        codes: snapshots
            .iter()
            .zip(&t.model.spec().layers)
            .map(|(q, s)| quantized_meta(q, Some(s.quantizer)))
            .collect(),
    };
    let mut c = Container::new(CHECKPOINT, &meta)?;
    for (i, (l, q)) in layers.iter().zip(&snapshots).enumerate() {
        c.push_tensor(format!("layer{i}.weights"), l.weights());
        c.push_tensor(format!("layer{i}.bias"), l.bias());
        push_codes(&mut c, &format!("layer{i}.codes"), q);
    }
    for (i, (m, v)) in t.optimizer.moments.iter().enumerate() {
        c.push_tensor(format!("adam{i}.m"), m);
        c.push_tensor(format!("adam{i}.v"), v);
    }
    Ok(c)
}

pub fn trainer_from(c: &Container) -> Result<Trainer> {
    c.expect_kind(CHECKPOINT)?;
    let meta: CheckpointMeta = c.meta()?;
    meta.spec.validate()?;
    if meta.scales.len() != meta.spec.layers.len() {
        return Err(Error::format("one scale per layer expected"));
    }
    let mut layers = Vec::with_capacity(meta.spec.layers.len());
    for (i, (s, &scale)) in meta.spec.layers.iter().zip(&meta.scales).enumerate() {
        layers.push(Layer::from_parts(
            *s,
            c.tensor(&format!("layer{i}.weights"))?,
            c.tensor(&format!("layer{i}.bias"))?,
            scale,
        )?);
    }
    let model = Mlp::from_parts(meta.spec, layers, meta.scaler)?;
    let moments = (0..meta.optimizer.moments)
        .map(|i| Ok((c.tensor(&format!("adam{i}.m"))?, c.tensor(&format!("adam{i}.v"))?)))
        .collect::<Result<_>>()?;
    Ok(Trainer {
        model,
        config: meta.config,
        optimizer: Optimizer {
            kind: meta.optimizer.kind,
            step: meta.optimizer.step,
            moments,
        },
        rng: meta.rng.restore(),
        epoch: meta.epoch,
        log: meta.log,
    })
}

/// Quantized weight snapshots stored in a checkpoint, one per layer.
pub fn checkpoint_codes(c: &Container) -> Result<Vec<QuantizedTensor>> {
    c.expect_kind(CHECKPOINT)?;
    let meta: CheckpointMeta = c.meta()?;
    meta.codes
        .iter()
        .enumerate()
        .map(|(i, m)| read_codes(c, &format!("layer{i}.codes"), m))
        .collect()
}

pub fn save_checkpoint(path: &Path, t: &Trainer) -> Result<()> {
    checkpoint_container(t)?.save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<Trainer> {
    trainer_from(&Container::load(path)?)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TableMeta {
    alpha: f64,
    bias: f64,
    direction: Direction,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HiddenMeta {
    weights: QuantizedMeta,
    act_bits: Bitwidth,
    tables: Vec<TableMeta>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OutputMeta {
    weights: QuantizedMeta,
    alpha: f64,
    outputs: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FixedMeta {
    input_bits: Bitwidth,
    exponent: u32,
    scaler: Option<MinMaxScaler>,
    hidden: Vec<HiddenMeta>,
    output: OutputMeta,
}

/// Self-contained integer inference file: weight codes, threshold tables
/// (`hidden{i}.thresholds`, one row per unit) and argmax margins.
pub fn fixed_container(m: &FixedModel) -> Result<Container> {
    let mut hidden = Vec::with_capacity(m.hidden.len());
    for (i, h) in m.hidden.iter().enumerate() {
        let act_bits = h
            .tables
            .first()
            .map(|t| t.act_bits)
            .ok_or_else(|| Error::format(format!("hidden layer {i} has no units")))?;
        hidden.push(HiddenMeta {
            weights: quantized_meta(&h.weights, None),
            act_bits,
            tables: h
                .tables
                .iter()
                .map(|t| TableMeta {
                    alpha: t.alpha,
                    bias: t.bias,
                    direction: t.direction,
                })
                .collect(),
        });
    }
    let meta = FixedMeta {
        input_bits: m.input_bits,
        exponent: m.exponent,
        scaler: m.scaler.clone(),
        hidden,
        output: OutputMeta {
            weights: quantized_meta(&m.output.weights, None),
            alpha: m.output.table.alpha,
            outputs: m.output.table.outputs,
        },
    };
    let mut c = Container::new(FIXED_MODEL, &meta)?;
    for (i, h) in m.hidden.iter().enumerate() {
        push_codes(&mut c, &format!("hidden{i}.codes"), &h.weights);
        let levels = h.tables[0].thresholds.len();
        let flat = h.tables.iter().flat_map(|t| t.thresholds.iter().copied()).collect();
        c.push(format!("hidden{i}.thresholds"), vec![h.tables.len(), levels], Data::I64(flat));
    }
    push_codes(&mut c, "output.codes", &m.output.weights);
    let n = m.output.table.outputs;
    c.push("output.margins", vec![n, n], Data::I64(m.output.table.margins.clone()));
    Ok(c)
}

pub fn fixed_from(c: &Container) -> Result<FixedModel> {
    c.expect_kind(FIXED_MODEL)?;
    let meta: FixedMeta = c.meta()?;
    let mut hidden = Vec::with_capacity(meta.hidden.len());
    for (i, h) in meta.hidden.iter().enumerate() {
        let weights = read_codes(c, &format!("hidden{i}.codes"), &h.weights)?;
        let (shape, flat) = c.ints(&format!("hidden{i}.thresholds"))?;
        let levels = h.act_bits.max_code() as usize;
        if shape != [h.tables.len(), levels] {
            return Err(Error::format(format!("hidden{i}.thresholds has shape {shape:?}")));
        }
        let tables = h
            .tables
            .iter()
            .zip(flat.chunks(levels))
            .map(|(t, th)| ThresholdTable {
                exponent: meta.exponent,
                thresholds: th.to_vec(),
                alpha: t.alpha,
                bias: t.bias,
                direction: t.direction,
                act_bits: h.act_bits,
            })
            .collect();
        hidden.push(FixedHidden { weights, tables });
    }
    let weights = read_codes(c, "output.codes", &meta.output.weights)?;
    let (shape, margins) = c.ints("output.margins")?;
    let n = meta.output.outputs;
    if shape != [n, n] {
        return Err(Error::format(format!("output.margins has shape {shape:?}")));
    }
    Ok(FixedModel {
        input_bits: meta.input_bits,
        scaler: meta.scaler,
        exponent: meta.exponent,
        hidden,
        output: FixedOutput {
            weights,
            table: ArgmaxTable {
                exponent: meta.exponent,
                alpha: meta.output.alpha,
                outputs: n,
                margins: margins.to_vec(),
            },
        },
    })
}

pub fn save_fixed(path: &Path, m: &FixedModel) -> Result<()> {
    fixed_container(m)?.save(path)
}

pub fn load_fixed(path: &Path) -> Result<FixedModel> {
    fixed_from(&Container::load(path)?)
}
