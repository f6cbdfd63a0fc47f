//! Training loop for [`Mlp`] models.
//!
//! Each step quantizes the weights, runs the quantized forward pass,
//! back-propagates with straight-through quantizer gradients and applies
//! the update to the floating-point copies.

use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, MinMaxScaler};
use crate::error::{precondition, Error, Result};
use crate::metrics::layer_mean_effective_bitwidth;
use crate::model::{ForwardOptions, Mlp, ModelSpec};
use crate::quant::Bitwidth;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case", tag = "kind"))]
pub enum LrSchedule {
    Constant {
        lr: f64,
    },
    /// `lr * factor^(epoch / every)`.
    Step {
        lr: f64,
        factor: f64,
        every: usize,
    },
}

impl LrSchedule {
    pub fn at(&self, epoch: usize) -> f64 {
        match *self {
            Self::Constant { lr } => lr,
            Self::Step { lr, factor, every } => lr * libm::pow(factor, (epoch / every.max(1)) as f64),
        }
    }
}

/// Missing fields take their [`Default`] values when deserializing.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: LrSchedule,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub weight_decay: f64,
    pub tanh_clip: bool,
    /// Gradient quantization bitwidth; `None` passes gradients unchanged.
    pub grad_bits: Option<Bitwidth>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            schedule: LrSchedule::Constant { lr: 0.1 },
            seed: 0,
            optimizer: OptimizerKind::Sgd,
            weight_decay: 0.0,
            tanh_clip: false,
            grad_bits: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(precondition("batch size must be positive"));
        }
        let lr = self.schedule.at(0);
        if !(lr.is_finite() && lr > 0.0) {
            return Err(precondition("learning rate must be positive"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(precondition("weight decay must be non-negative"));
        }
        Ok(())
    }

    pub fn forward_options(&self) -> ForwardOptions {
        ForwardOptions {
            tanh_clip: self.tanh_clip,
            grad_bits: self.grad_bits,
        }
    }
}

/// Snapshot of a ChaCha8 generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Optimizer with its per-parameter state.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub step: u64,
    /// Adam first and second moments, one pair per parameter; empty for SGD.
    pub moments: Vec<(Tensor, Tensor)>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Self {
        Self {
            kind,
            step: 0,
            moments: Vec::new(),
        }
    }

    /// Applies one update. `decay[i]` enables L2 weight decay on parameter `i`.
    pub fn apply(&mut self, params: &mut [&mut Tensor], grads: &[Tensor], decay: &[bool], lr: f64, weight_decay: f64) -> Result<()> {
        if params.len() != grads.len() || params.len() != decay.len() {
            return Err(precondition("parameter and gradient counts differ"));
        }
        self.step += 1;
        if self.kind == OptimizerKind::Adam && self.moments.is_empty() {
            self.moments = params
                .iter()
                .map(|p| {
                    let z = Tensor::zeros(p.shape().to_vec())?;
                    Ok((z.clone(), z))
                })
                .collect::<Result<_>>()?;
        }
        let t = self.step as f64;
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            p.same_shape(g, "optimizer")?;
            let wd = if decay[i] { weight_decay } else { 0.0 };
            match self.kind {
                OptimizerKind::Sgd => {
                    for (w, &gv) in p.data_mut().iter_mut().zip(g.data()) {
                        *w -= lr * (gv + wd * *w);
                    }
                }
                OptimizerKind::Adam => {
                    let (m, v) = &mut self.moments[i];
                    let c1 = 1.0 - libm::pow(ADAM_BETA1, t);
                    let c2 = 1.0 - libm::pow(ADAM_BETA2, t);
                    for ((w, &gv), (mv, vv)) in p
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
                    {
                        let gd = gv + wd * *w;
                        *mv = ADAM_BETA1 * *mv + (1.0 - ADAM_BETA1) * gd;
                        *vv = ADAM_BETA2 * *vv + (1.0 - ADAM_BETA2) * gd * gd;
                        *w -= lr * (*mv / c1) / (libm::sqrt(*vv / c2) + ADAM_EPS);
                    }
                }
            }
            if !p.is_finite() {
                return Err(Error::NonFinite("optimizer"));
            }
        }
        Ok(())
    }
}

/// Metrics recorded after every epoch.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub layer_eb: Vec<f64>,
    pub mean_eb: f64,
}

/// Loss and accuracy of a model on a dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
}

/// Mean cross-entropy and accuracy of the floating-point reference path.
pub fn evaluate(model: &Mlp, data: &Dataset, opts: ForwardOptions) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(precondition("empty dataset"));
    }
    let mut f = model.forward(&data.features, opts)?;
    let loss_node = f.graph.softmax_cross_entropy(f.output, &data.labels)?;
    let loss = f.graph.value(loss_node).data()[0];
    let preds = model.predict(&data.features, opts)?;
    Ok(Evaluation {
        loss,
        accuracy: accuracy(&preds, &data.labels),
    })
}

pub fn accuracy(preds: &[usize], labels: &[usize]) -> f64 {
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    hits as f64 / labels.len().max(1) as f64
}

/// Perplexity from a mean negative log-likelihood in nats.
pub fn perplexity(mean_nll: f64) -> f64 {
    libm::exp(mean_nll)
}

/// Training state: model, optimizer, generator and log.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Mlp,
    pub config: TrainConfig,
    pub optimizer: Optimizer,
    pub rng: ChaCha8Rng,
    pub epoch: usize,
    pub log: Vec<EpochLog>,
}

fn diverged(epoch: usize, e: Error) -> Error {
    match e {
        Error::NonFinite(op) => Error::Diverged {
            epoch,
            detail: format!("non-finite value in {op}"),
        },
        other => other,
    }
}

impl Trainer {
    /// Initializes a model from the config seed and fits the input scaler
    /// on `train`.
    pub fn new(config: TrainConfig, spec: ModelSpec, train: &Dataset) -> Result<Self> {
        config.validate()?;
        if train.is_empty() {
            return Err(precondition("empty dataset"));
        }
        if train.dim() != spec.inputs() || train.classes > spec.outputs() {
            return Err(precondition(format!(
                "dataset has {} features and {} classes, model takes {} and emits {}",
                train.dim(),
                train.classes,
                spec.inputs(),
                spec.outputs()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut model = Mlp::init(spec, &mut rng)?;
        model.set_scaler(Some(MinMaxScaler::fit(&train.features)?));
        Ok(Self {
            model,
            optimizer: Optimizer::new(config.optimizer),
            config,
            rng,
            epoch: 0,
            log: Vec::new(),
        })
    }

    /// One forward/backward/update step; returns the batch loss.
    pub fn step(&mut self, batch: &Dataset) -> Result<f64> {
        let epoch = self.epoch;
        let opts = self.config.forward_options();
        let mut f = self.model.forward(&batch.features, opts).map_err(|e| diverged(epoch, e))?;
        let loss = f
            .graph
            .softmax_cross_entropy(f.output, &batch.labels)
            .map_err(|e| diverged(epoch, e))?;
        let loss_value = f.graph.value(loss).data()[0];
        if !loss_value.is_finite() {
            return Err(Error::Diverged {
                epoch,
                detail: "loss is NaN".to_string(),
            });
        }
        let grads = f.graph.backward(loss)?;
        let mut gs = Vec::with_capacity(2 * f.weights.len());
        for (w, b) in f.weights.iter().zip(&f.biases) {
            for id in [w, b] {
                let g = grads
                    .get(*id)
                    .cloned()
                    .map_or_else(|| Tensor::zeros(f.graph.value(*id).shape().to_vec()), Ok)?;
                gs.push(g);
            }
        }
        let lr = self.config.schedule.at(epoch);
        let mut params: Vec<&mut Tensor> = Vec::with_capacity(gs.len());
        let mut decay = Vec::with_capacity(gs.len());
        for layer in self.model.layers_mut() {
            let (w, b) = layer.update();
            params.push(w);
            params.push(b);
            decay.extend([true, false]);
        }
        self.optimizer
            .apply(&mut params, &gs, &decay, lr, self.config.weight_decay)
            .map_err(|e| diverged(epoch, e))?;
        Ok(loss_value)
    }

    /// One pass over `train` in a freshly shuffled order.
    pub fn run_epoch(&mut self, train: &Dataset) -> Result<EpochLog> {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut self.rng);
        for chunk in order.chunks(self.config.batch_size) {
            self.step(&train.subset(chunk)?)?;
        }
        let eval = evaluate(&self.model, train, self.config.forward_options()).map_err(|e| diverged(self.epoch, e))?;
        let layer_eb = self.model.effective_bitwidths(self.config.tanh_clip)?;
        let entry = EpochLog {
            epoch: self.epoch,
            loss: eval.loss,
            accuracy: eval.accuracy,
            mean_eb: layer_mean_effective_bitwidth(&layer_eb)?,
            layer_eb,
        };
        log::debug!(
            "epoch {} loss {:.4} acc {:.4} eb {:.4}",
            entry.epoch,
            entry.loss,
            entry.accuracy,
            entry.mean_eb
        );
        self.epoch += 1;
        self.log.push(entry.clone());
        Ok(entry)
    }

    /// Runs the remaining configured epochs.
    pub fn fit(&mut self, train: &Dataset) -> Result<()> {
        while self.epoch < self.config.epochs {
            self.run_epoch(train)?;
        }
        Ok(())
    }
}

/// Trains a fresh model for `config.epochs` epochs.
pub fn train(config: TrainConfig, spec: ModelSpec, data: &Dataset) -> Result<Trainer> {
    let mut t = Trainer::new(config, spec, data)?;
    t.fit(data)?;
    Ok(t)
}
