//! Command-line surface.

use std::io::Write;
use std::path::{Path, PathBuf};

use balquant_core::data::{gaussian_blobs, two_spirals, Dataset};
use balquant_core::fixed::Activation;
use balquant_core::metrics::{code_histogram_bins, effective_bitwidth, value_histogram, Bin};
use balquant_core::model::ForwardOptions;
use balquant_core::quant::{Bitwidth, WeightQuantizer};
use balquant_core::rnn::{train_copy_task, CellKind, RnnConfig};
use balquant_core::train::{evaluate, perplexity, LrSchedule, OptimizerKind, Trainer};
use balquant_core::Tensor;
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};

use crate::config::RunConfig;
use crate::container::Container;
use crate::error::{Error, Result};
use crate::{bench, files, idx};

/// Balanced low-bitwidth quantization toolkit.
#[derive(Debug, Parser)]
#[command(name = "balquant", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a quantized MLP and write a checkpoint.
    Train(TrainArgs),
    /// Accuracy and loss of a checkpoint or fixed-point model on a dataset.
    Eval(EvalArgs),
    /// Quantize a tensor file.
    Quantize(QuantizeArgs),
    /// Effective bitwidth and histograms of a file.
    Inspect(InspectArgs),
    /// Time the bit-plane GEMM against a naive integer product (CSV on stdout).
    Bench(BenchArgs),
    /// Fold a checkpoint into an integer-only inference file.
    ExportFixed(ExportArgs),
    /// Generate synthetic datasets and tensors.
    Synth(SynthArgs),
    /// Train a quantized recurrent cell on the copy task.
    CopyTask(CopyArgs),
}

fn bits(s: &str) -> std::result::Result<Bitwidth, String> {
    let n: u32 = s.parse().map_err(|_| format!("{s:?} is not a bitwidth"))?;
    Bitwidth::new(n).map_err(|e| e.to_string())
}

fn quantizer(s: &str) -> std::result::Result<WeightQuantizer, String> {
    WeightQuantizer::parse(s)
        .ok_or_else(|| format!("unknown mode {s:?}; expected imbalanced, balanced-exact, balanced-mean or balanced-median"))
}

fn activation(s: &str) -> std::result::Result<Activation, String> {
    Activation::parse(s).ok_or_else(|| format!("unknown activation {s:?}"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OptimizerArg {
    Sgd,
    Adam,
}

impl From<OptimizerArg> for OptimizerKind {
    fn from(o: OptimizerArg) -> Self {
        match o {
            OptimizerArg::Sgd => OptimizerKind::Sgd,
            OptimizerArg::Adam => OptimizerKind::Adam,
        }
    }
}

/// Where labelled data comes from.
#[derive(Debug, Args)]
pub struct DataArgs {
    /// Dataset file written by `synth`.
    #[arg(long, conflicts_with_all = ["idx_images", "idx_labels"])]
    pub data: Option<PathBuf>,
    /// IDX image file (magic 0x00000803).
    #[arg(long, requires = "idx_labels")]
    pub idx_images: Option<PathBuf>,
    /// IDX label file (magic 0x00000801).
    #[arg(long, requires = "idx_images")]
    pub idx_labels: Option<PathBuf>,
}

impl DataArgs {
    pub fn load(&self) -> Result<Dataset> {
        match (&self.data, &self.idx_images, &self.idx_labels) {
            (Some(p), _, _) => files::load_dataset(p),
            (None, Some(i), Some(l)) => idx::load_dataset(i, l),
            _ => Err(Error::Usage("give --data or --idx-images with --idx-labels".into())),
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Continue from a checkpoint (model and settings come from it).
    #[arg(long, conflicts_with = "config")]
    pub resume: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch metrics CSV.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long, value_parser = bits)]
    pub input_bits: Option<Bitwidth>,
    #[arg(long, value_parser = bits)]
    pub weight_bits: Option<Bitwidth>,
    #[arg(long, value_parser = bits)]
    pub act_bits: Option<Bitwidth>,
    /// Weight quantizer.
    #[arg(long, value_parser = quantizer)]
    pub mode: Option<WeightQuantizer>,
    /// Hidden activation: sigmoid or clipped-identity.
    #[arg(long, value_parser = activation)]
    pub activation: Option<Activation>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Constant learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, value_enum)]
    pub optimizer: Option<OptimizerArg>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Squash weights with tanh before quantizing.
    #[arg(long)]
    pub tanh_clip: bool,
    /// Quantize back-propagated gradients to this many bits.
    #[arg(long, value_parser = bits)]
    pub grad_bits: Option<Bitwidth>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PathArg {
    Float,
    Fixed,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint or fixed-point model file.
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Evaluation path: float reference or integer-only.
    #[arg(long, value_enum, default_value = "float")]
    pub path: PathArg,
    /// Fixed-point exponent used when exporting a checkpoint on the fly.
    #[arg(long, default_value_t = 0)]
    pub exponent: u32,
}

#[derive(Debug, Args)]
pub struct QuantizeArgs {
    #[arg(long, value_parser = bits)]
    pub bits: Bitwidth,
    #[arg(long, value_parser = quantizer, default_value = "balanced-mean")]
    pub mode: WeightQuantizer,
    pub input: PathBuf,
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    pub file: PathBuf,
    /// Histogram CSV to write.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Bins of value histograms.
    #[arg(long, default_value_t = 32)]
    pub bins: usize,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Inner dimensions, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = vec![256usize, 1024, 4096])]
    pub sizes: Vec<usize>,
    /// Left operand bitwidths.
    #[arg(long = "m-bits", value_delimiter = ',', value_parser = bits, default_value = "1,2")]
    pub m_bits: Vec<Bitwidth>,
    /// Right operand bitwidths.
    #[arg(long = "k-bits", value_delimiter = ',', value_parser = bits, default_value = "1,2")]
    pub k_bits: Vec<Bitwidth>,
    /// Timed repetitions per configuration (at least 5).
    #[arg(long, default_value_t = 5)]
    pub runs: usize,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Thresholds compare `2^exponent * acc`.
    #[arg(long, default_value_t = 0)]
    pub exponent: u32,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(subcommand)]
    pub what: SynthKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Distribution1d {
    Gaussian,
    Exponential,
    Uniform,
}

#[derive(Debug, Subcommand)]
pub enum SynthKind {
    /// Gaussian clusters.
    Blobs {
        #[arg(long, default_value_t = 600)]
        n: usize,
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 8)]
        dim: usize,
        #[arg(long, default_value_t = 2.0)]
        separation: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Two interleaved spirals.
    Spirals {
        #[arg(long, default_value_t = 600)]
        n: usize,
        #[arg(long, default_value_t = 1.5)]
        turns: f64,
        #[arg(long, default_value_t = 0.02)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// A `rows x cols` tensor of independent samples.
    Tensor {
        #[arg(long, value_enum, default_value = "gaussian")]
        dist: Distribution1d,
        #[arg(long, default_value_t = 1)]
        rows: usize,
        #[arg(long, default_value_t = 1024)]
        cols: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CellArg {
    Gru,
    Lstm,
}

#[derive(Debug, Args)]
pub struct CopyArgs {
    #[arg(long, value_enum, default_value = "gru")]
    pub cell: CellArg,
    #[arg(long, default_value_t = 16)]
    pub hidden: usize,
    #[arg(long, value_parser = bits, default_value = "2")]
    pub weight_bits: Bitwidth,
    #[arg(long, value_parser = bits, default_value = "4")]
    pub act_bits: Bitwidth,
    #[arg(long, value_parser = quantizer, default_value = "balanced-mean")]
    pub mode: WeightQuantizer,
    #[arg(long, default_value_t = 2)]
    pub width: usize,
    #[arg(long, default_value_t = 8)]
    pub steps: usize,
    #[arg(long, default_value_t = 2)]
    pub lag: usize,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 800)]
    pub iterations: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, value_enum, default_value = "adam")]
    pub optimizer: OptimizerArg,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

/// Runs a parsed command, writing its report to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Train(a) => train(a, out),
        Command::Eval(a) => eval(a, out),
        Command::Quantize(a) => quantize(a, out),
        Command::Inspect(a) => inspect(a, out),
        Command::Bench(a) => bench_cmd(a, out),
        Command::ExportFixed(a) => export(a, out),
        Command::Synth(a) => synth(a, out),
        Command::CopyTask(a) => copy_task(a, out),
    }
}

fn w(out: &mut dyn Write, line: std::fmt::Arguments<'_>) -> Result<()> {
    out.write_fmt(line)
        .and_then(|_| out.write_all(b"\n"))
        .map_err(|e| Error::io("<stdout>", e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(format!("{}: {other:?}", path.display())),
    }
}

fn apply_overrides(cfg: &mut RunConfig, a: &TrainArgs) {
    let m = &mut cfg.model;
    if let Some(h) = &a.hidden {
        m.hidden = h.clone();
    }
    m.input_bits = a.input_bits.unwrap_or(m.input_bits);
    m.weight_bits = a.weight_bits.unwrap_or(m.weight_bits);
    m.act_bits = a.act_bits.unwrap_or(m.act_bits);
    m.quantizer = a.mode.unwrap_or(m.quantizer);
    m.activation = a.activation.unwrap_or(m.activation);
    let t = &mut cfg.train;
    t.epochs = a.epochs.unwrap_or(t.epochs);
    t.batch_size = a.batch_size.unwrap_or(t.batch_size);
    if let Some(lr) = a.lr {
        t.schedule = LrSchedule::Constant { lr };
    }
    if let Some(o) = a.optimizer {
        t.optimizer = o.into();
    }
    t.seed = a.seed.unwrap_or(t.seed);
    t.weight_decay = a.weight_decay.unwrap_or(t.weight_decay);
    t.tanh_clip |= a.tanh_clip;
    if a.grad_bits.is_some() {
        t.grad_bits = a.grad_bits;
    }
}

fn train(a: TrainArgs, out: &mut dyn Write) -> Result<()> {
    let data = a.data.load()?;
    let mut trainer = match &a.resume {
        Some(path) => {
            let mut t = files::load_checkpoint(path)?;
            if let Some(e) = a.epochs {
                t.config.epochs = e;
            }
            t
        }
        None => {
            let mut cfg = match &a.config {
                Some(p) => RunConfig::load(p)?,
                None => RunConfig::default(),
            };
            apply_overrides(&mut cfg, &a);
            let spec = cfg.model.spec(data.dim(), data.classes)?;
            Trainer::new(cfg.train, spec, &data)?
        }
    };
    while trainer.epoch < trainer.config.epochs {
        let e = trainer.run_epoch(&data)?;
        w(
            out,
            format_args!(
                "epoch {} loss {:.6} accuracy {:.4} mean_eb {:.4}",
                e.epoch, e.loss, e.accuracy, e.mean_eb
            ),
        )?;
    }
    files::save_checkpoint(&a.out, &trainer)?;
    if let Some(path) = &a.metrics {
        write_metrics(path, &trainer)?;
    }
    Ok(())
}

/// `epoch,loss,accuracy,mean_eb,eb_layer0,...`
fn write_metrics(path: &Path, t: &Trainer) -> Result<()> {
    let mut wr = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let layers = t.model.layers().len();
    let mut header = vec!["epoch".to_string(), "loss".into(), "accuracy".into(), "mean_eb".into()];
    header.extend((0..layers).map(|i| format!("eb_layer{i}")));
    wr.write_record(&header).map_err(|e| csv_err(path, e))?;
    for e in &t.log {
        let mut row = vec![
            e.epoch.to_string(),
            e.loss.to_string(),
            e.accuracy.to_string(),
            e.mean_eb.to_string(),
        ];
        row.extend(e.layer_eb.iter().map(f64::to_string));
        wr.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    wr.flush().map_err(|e| Error::io(path, e))
}

fn eval(a: EvalArgs, out: &mut dyn Write) -> Result<()> {
    let data = a.data.load()?;
    if data.is_empty() {
        return Err(balquant_core::Error::Precondition("empty dataset".into()).into());
    }
    let c = Container::load(&a.model)?;
    match (c.kind.as_str(), a.path) {
        (files::CHECKPOINT, PathArg::Float) => {
            let t = files::trainer_from(&c)?;
            let opts = ForwardOptions {
                tanh_clip: t.config.tanh_clip,
                grad_bits: None,
            };
            let e = evaluate(&t.model, &data, opts)?;
            w(
                out,
                format_args!(
                    "path float accuracy {:.4} loss {:.6} perplexity {:.4}",
                    e.accuracy,
                    e.loss,
                    perplexity(e.loss)
                ),
            )
        }
        (files::CHECKPOINT, PathArg::Fixed) => {
            let t = files::trainer_from(&c)?;
            let fixed = t.model.export_fixed(t.config.tanh_clip, a.exponent)?;
            fixed_report(&fixed, &data, out)
        }
        (files::FIXED_MODEL, PathArg::Fixed) => fixed_report(&files::fixed_from(&c)?, &data, out),
        (files::FIXED_MODEL, PathArg::Float) => Err(Error::Usage("a fixed-point model only supports --path fixed".into())),
        (kind, _) => Err(Error::format(format!("cannot evaluate a {kind} file"))),
    }
}

fn fixed_report(m: &balquant_core::model::FixedModel, data: &Dataset, out: &mut dyn Write) -> Result<()> {
    let preds = m.predict(&data.features)?;
    let acc = balquant_core::train::accuracy(&preds, &data.labels);
    w(out, format_args!("path fixed accuracy {acc:.4}"))
}

fn quantize(a: QuantizeArgs, out: &mut dyn Write) -> Result<()> {
    let t = files::load_tensor(&a.input)?;
    let q = a.mode.quantize(&t, a.bits)?;
    files::save_quantized(&a.output, &q, Some(a.mode))?;
    w(out, format_args!("effective_bitwidth {:.3}", effective_bitwidth(&q)))
}

/// Histogram rows tagged with the layer and stage they describe.
struct HistRow {
    layer: Option<usize>,
    stage: &'static str,
    bin: Bin,
}

fn inspect(a: InspectArgs, out: &mut dyn Write) -> Result<()> {
    let c = Container::load(&a.file)?;
    w(out, format_args!("kind {}", c.kind))?;
    let mut rows = Vec::new();
    match c.kind.as_str() {
        files::TENSOR => {
            let t = c.tensor("data")?;
            w(out, format_args!("shape {:?}", t.shape()))?;
            w(out, format_args!("min {} max {}", t.min_value(), t.max_value()))?;
            for bin in value_histogram(&t, a.bins)? {
                rows.push(HistRow {
                    layer: None,
                    stage: "pre",
                    bin,
                });
            }
        }
        files::QUANTIZED => {
            let (q, meta) = files::quantized_from(&c)?;
            w(out, format_args!("shape {:?}", q.shape()))?;
            w(out, format_args!("bits {} scale {}", q.bits(), q.scale()))?;
            if let Some(m) = meta.quantizer {
                w(out, format_args!("mode {}", m.name()))?;
            }
            w(out, format_args!("effective_bitwidth {:.3}", effective_bitwidth(&q)))?;
            for bin in code_histogram_bins(&q) {
                rows.push(HistRow {
                    layer: None,
                    stage: "post",
                    bin,
                });
            }
        }
        files::CHECKPOINT => {
            let t = files::trainer_from(&c)?;
            let codes = files::checkpoint_codes(&c)?;
            w(out, format_args!("epoch {}", t.epoch))?;
            let mut ebs = Vec::new();
            for (i, (layer, q)) in t.model.layers().iter().zip(&codes).enumerate() {
                let eb = effective_bitwidth(q);
                ebs.push(eb);
                w(out, format_args!("layer {i} bits {} effective_bitwidth {eb:.3}", q.bits()))?;
                for bin in value_histogram(layer.weights(), a.bins)? {
                    rows.push(HistRow {
                        layer: Some(i),
                        stage: "pre",
                        bin,
                    });
                }
                for bin in code_histogram_bins(q) {
                    rows.push(HistRow {
                        layer: Some(i),
                        stage: "post",
                        bin,
                    });
                }
            }
            let mean = balquant_core::metrics::layer_mean_effective_bitwidth(&ebs)?;
            w(out, format_args!("mean_effective_bitwidth {mean:.3}"))?;
        }
        files::FIXED_MODEL => {
            let m = files::fixed_from(&c)?;
            for (i, h) in m.hidden.iter().enumerate() {
                w(
                    out,
                    format_args!(
                        "hidden {i} units {} effective_bitwidth {:.3}",
                        h.tables.len(),
                        effective_bitwidth(&h.weights)
                    ),
                )?;
            }
            w(
                out,
                format_args!(
                    "output units {} effective_bitwidth {:.3}",
                    m.output.table.outputs,
                    effective_bitwidth(&m.output.weights)
                ),
            )?;
        }
        files::DATASET => {
            let d = files::load_dataset(&a.file)?;
            w(out, format_args!("rows {} features {} classes {}", d.len(), d.dim(), d.classes))?;
        }
        other => return Err(Error::format(format!("unknown file kind {other:?}"))),
    }
    if let Some(path) = &a.csv {
        let mut wr = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        let tagged = rows.iter().any(|r| r.layer.is_some());
        let header: &[&str] = if tagged {
            &["layer", "stage", "bin_left", "bin_right", "count"]
        } else {
            &["stage", "bin_left", "bin_right", "count"]
        };
        wr.write_record(header).map_err(|e| csv_err(path, e))?;
        for r in &rows {
            let mut rec = Vec::with_capacity(5);
            if let Some(l) = r.layer {
                rec.push(l.to_string());
            }
            rec.extend([
                r.stage.to_string(),
                r.bin.left.to_string(),
                r.bin.right.to_string(),
                r.bin.count.to_string(),
            ]);
            wr.write_record(&rec).map_err(|e| csv_err(path, e))?;
        }
        wr.flush().map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

fn bench_cmd(a: BenchArgs, out: &mut dyn Write) -> Result<()> {
    let rows = bench::run(&a.sizes, &a.m_bits, &a.k_bits, a.runs)?;
    let mut wr = csv::Writer::from_writer(out);
    for r in rows {
        wr.serialize(r).map_err(|e| csv_err(Path::new("<stdout>"), e))?;
    }
    wr.flush().map_err(|e| Error::io("<stdout>", e))
}

fn export(a: ExportArgs, out: &mut dyn Write) -> Result<()> {
    let t = files::load_checkpoint(&a.checkpoint)?;
    let fixed = t.model.export_fixed(t.config.tanh_clip, a.exponent)?;
    files::save_fixed(&a.out, &fixed)?;
    w(
        out,
        format_args!("hidden_layers {} exponent {}", fixed.hidden.len(), fixed.exponent),
    )
}

fn synth(a: SynthArgs, out: &mut dyn Write) -> Result<()> {
    match a.what {
        SynthKind::Blobs {
            n,
            classes,
            dim,
            separation,
            seed,
            out: path,
        } => {
            let d = gaussian_blobs(n, classes, dim, separation, &mut ChaCha8Rng::seed_from_u64(seed))?;
            files::save_dataset(&path, &d)?;
            w(out, format_args!("rows {} features {} classes {}", d.len(), d.dim(), d.classes))
        }
        SynthKind::Spirals {
            n,
            turns,
            noise,
            seed,
            out: path,
        } => {
            let d = two_spirals(n, turns, noise, &mut ChaCha8Rng::seed_from_u64(seed))?;
            files::save_dataset(&path, &d)?;
            w(out, format_args!("rows {} features {} classes {}", d.len(), d.dim(), d.classes))
        }
        SynthKind::Tensor {
            dist,
            rows,
            cols,
            seed,
            out: path,
        } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rows * cols;
            let v: Vec<f64> = match dist {
                Distribution1d::Gaussian => (0..n).map(|_| StandardNormal.sample(&mut rng)).collect(),
                Distribution1d::Exponential => {
                    let e = Exp::new(1.0).expect("positive rate");
                    (0..n).map(|_| e.sample(&mut rng)).collect()
                }
                Distribution1d::Uniform => (0..n).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect(),
            };
            let t = Tensor::matrix(rows, cols, v)?;
            files::save_tensor(&path, &t)?;
            w(out, format_args!("shape {:?}", t.shape()))
        }
    }
}

fn copy_task(a: CopyArgs, out: &mut dyn Write) -> Result<()> {
    let config = RnnConfig {
        cell: match a.cell {
            CellArg::Gru => CellKind::Gru,
            CellArg::Lstm => CellKind::Lstm,
        },
        hidden: a.hidden,
        weight_bits: a.weight_bits,
        act_bits: a.act_bits,
        quantizer: a.mode,
        width: a.width,
        steps: a.steps,
        lag: a.lag,
        batch: a.batch,
        iterations: a.iterations,
        lr: a.lr,
        optimizer: a.optimizer.into(),
        seed: a.seed,
    };
    let run = train_copy_task(config)?;
    let last = run.losses.last().copied().unwrap_or(f64::NAN);
    w(
        out,
        format_args!(
            "bit_error {:.4} final_loss {last:.6} perplexity_per_bit {:.4}",
            run.bit_error,
            perplexity(last)
        ),
    )
}
