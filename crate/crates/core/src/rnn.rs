//! Quantized GRU and LSTM cells.
//!
//! Row-vector convention: states are `batch x hidden`, inputs
//! `batch x input`, and every gate weight is `(hidden + input) x hidden`
//! acting on `[h, x]`.
//!
//! GRU:
//!
//! ```text
//! z  = sigmoid([h, x] W_z + b_z)
//! r  = sigmoid([h, x] W_r + b_r)
//! h~ = sigmoid([Q_k(r * h), x] W + b)
//! h' = Q_k((1 - z) * h + z * h~)
//! ```
//!
//! The biases are an optional extension and default to zero.
//!
//! LSTM (the cell state stays real-valued):
//!
//! ```text
//! f  = sigmoid([h, x] W_f + b_f)
//! i  = sigmoid([h, x] W_i + b_i)
//! C~ = tanh([h, x] W_C + b_C)
//! C' = f * C + i * C~
//! o  = sigmoid([h, x] W_o + b_o)
//! h' = Q_k(o * sigmoid(C'))
//! ```
//!
//! Weights must already sit on a symmetric grid inside `[-1, 1]` and inputs
//! on a unit-interval grid, so every matrix product has low-bit operands.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::CopyTask;
use crate::error::{contract, precondition, Result};
use crate::graph::{Graph, NodeId};
use crate::quant::{quantize_unit, Bitwidth, Convention, QuantizedTensor, Quantizer, WeightQuantizer};
use crate::tensor::Tensor;
use crate::train::{Optimizer, OptimizerKind};

/// How a `Q_k` site is realised in a graph.
pub trait QuantSite {
    fn apply(&mut self, g: &mut Graph, u: NodeId, k: Bitwidth) -> Result<NodeId>;
}

/// Straight-through `q_k`.
#[derive(Debug, Clone, Copy, Default)]
pub struct SteSite;

impl QuantSite for SteSite {
    fn apply(&mut self, g: &mut Graph, u: NodeId, k: Bitwidth) -> Result<NodeId> {
        g.quantize(u, Quantizer::Unit(k))
    }
}

/// Node handles of one GRU step.
#[derive(Debug, Clone, Copy)]
pub struct GruNodes {
    pub h: NodeId,
    /// `(1 - z) * h + z * h~` before quantization.
    pub pre_quant: NodeId,
    pub z: NodeId,
    pub r: NodeId,
    pub candidate: NodeId,
}

/// Gate weights (and optional biases) of a GRU as graph nodes.
#[derive(Debug, Clone, Copy)]
pub struct GruParams {
    pub wz: NodeId,
    pub wr: NodeId,
    pub w: NodeId,
    pub bias: Option<[NodeId; 3]>,
}

fn gate(g: &mut Graph, input: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
    let z = g.matmul(input, w)?;
    match b {
        Some(b) => g.add_row(z, b),
        None => Ok(z),
    }
}

/// One GRU step on graph nodes.
pub fn gru_step_graph(g: &mut Graph, h: NodeId, x: NodeId, p: &GruParams, k: Bitwidth, site: &mut dyn QuantSite) -> Result<GruNodes> {
    let [bz, br, bh] = match p.bias {
        Some(b) => b.map(Some),
        None => [None; 3],
    };
    let hx = g.concat(h, x)?;
    let zl = gate(g, hx, p.wz, bz)?;
    let z = g.sigmoid(zl)?;
    let rl = gate(g, hx, p.wr, br)?;
    let r = g.sigmoid(rl)?;
    let rh = g.hadamard(r, h)?;
    let rh_q = site.apply(g, rh, k)?;
    let cx = g.concat(rh_q, x)?;
    let cl = gate(g, cx, p.w, bh)?;
    let candidate = g.sigmoid(cl)?;
    let one_minus_z = g.affine(z, -1.0, 1.0)?;
    let keep = g.hadamard(one_minus_z, h)?;
    let take = g.hadamard(z, candidate)?;
    let pre_quant = g.add(keep, take)?;
    let h = site.apply(g, pre_quant, k)?;
    Ok(GruNodes {
        h,
        pre_quant,
        z,
        r,
        candidate,
    })
}

/// Gate weights and biases of an LSTM as graph nodes, in the order
/// forget, input, candidate, output.
#[derive(Debug, Clone, Copy)]
pub struct LstmParams {
    pub w: [NodeId; 4],
    pub b: [NodeId; 4],
}

#[derive(Debug, Clone, Copy)]
pub struct LstmNodes {
    pub h: NodeId,
    pub c: NodeId,
    pub f: NodeId,
    pub i: NodeId,
    pub o: NodeId,
}

/// One LSTM step on graph nodes.
pub fn lstm_step_graph(
    g: &mut Graph,
    h: NodeId,
    c: NodeId,
    x: NodeId,
    p: &LstmParams,
    k: Bitwidth,
    site: &mut dyn QuantSite,
) -> Result<LstmNodes> {
    let hx = g.concat(h, x)?;
    let fl = gate(g, hx, p.w[0], Some(p.b[0]))?;
    let f = g.sigmoid(fl)?;
    let il = gate(g, hx, p.w[1], Some(p.b[1]))?;
    let i = g.sigmoid(il)?;
    let cl = gate(g, hx, p.w[2], Some(p.b[2]))?;
    let cand = g.tanh(cl)?;
    let ol = gate(g, hx, p.w[3], Some(p.b[3]))?;
    let o = g.sigmoid(ol)?;
    let keep = g.hadamard(f, c)?;
    let write = g.hadamard(i, cand)?;
    let c = g.add(keep, write)?;
    let sc = g.sigmoid(c)?;
    let out = g.hadamard(o, sc)?;
    let h = site.apply(g, out, k)?;
    Ok(LstmNodes { h, c, f, i, o })
}

fn check_weight(w: &QuantizedTensor, rows: usize, cols: usize, name: &str) -> Result<()> {
    if w.convention() != Convention::Symmetric || w.scale() > 1.0 {
        return Err(contract(format!("{name} must be quantized weights inside [-1, 1]")));
    }
    if w.shape() != [rows, cols] {
        return Err(precondition(format!("{name} has shape {:?}, expected [{rows}, {cols}]", w.shape())));
    }
    Ok(())
}

fn check_unit(q: &QuantizedTensor, name: &str) -> Result<(usize, usize)> {
    if q.convention() != Convention::UnitInterval {
        return Err(contract(format!("{name} must be unit-interval codes")));
    }
    match *q.shape() {
        [r, c] => Ok((r, c)),
        _ => Err(precondition(format!("{name} must be a matrix"))),
    }
}

/// GRU weights, each `(hidden + input) x hidden`.
#[derive(Debug, Clone, PartialEq)]
pub struct GruWeights {
    pub wz: QuantizedTensor,
    pub wr: QuantizedTensor,
    pub w: QuantizedTensor,
    /// Optional `1 x hidden` biases for z, r and the candidate.
    pub bias: Option<[Tensor; 3]>,
}

/// Result of a standalone GRU step.
#[derive(Debug, Clone, PartialEq)]
pub struct GruOutput {
    pub h: QuantizedTensor,
    pub pre_quant: Tensor,
}

/// Evaluates one GRU step on quantized operands.
pub fn gru_step(h_prev: &QuantizedTensor, x: &QuantizedTensor, weights: &GruWeights, k: Bitwidth) -> Result<GruOutput> {
    let (b, hidden) = check_unit(h_prev, "h_prev")?;
    let (bx, input) = check_unit(x, "x")?;
    if b != bx {
        return Err(precondition("state and input batch sizes differ"));
    }
    for (w, name) in [(&weights.wz, "W_z"), (&weights.wr, "W_r"), (&weights.w, "W")] {
        check_weight(w, hidden + input, hidden, name)?;
    }
    let mut g = Graph::new();
    let h = g.leaf(h_prev.dequantize());
    let xn = g.leaf(x.dequantize());
    let p = GruParams {
        wz: g.leaf(weights.wz.dequantize()),
        wr: g.leaf(weights.wr.dequantize()),
        w: g.leaf(weights.w.dequantize()),
        bias: weights
            .bias
            .as_ref()
            .map(|bs| [g.leaf(bs[0].clone()), g.leaf(bs[1].clone()), g.leaf(bs[2].clone())]),
    };
    let nodes = gru_step_graph(&mut g, h, xn, &p, k, &mut SteSite)?;
    Ok(GruOutput {
        h: quantize_unit(g.value(nodes.h), k)?,
        pre_quant: g.value(nodes.pre_quant).clone(),
    })
}

/// LSTM weights (forget, input, candidate, output) and `1 x hidden` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmWeights {
    pub w: [QuantizedTensor; 4],
    pub b: [Tensor; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmOutput {
    pub h: QuantizedTensor,
    pub c: Tensor,
}

/// Evaluates one LSTM step on quantized operands.
pub fn lstm_step(h_prev: &QuantizedTensor, c_prev: &Tensor, x: &QuantizedTensor, weights: &LstmWeights, k: Bitwidth) -> Result<LstmOutput> {
    let (b, hidden) = check_unit(h_prev, "h_prev")?;
    let (bx, input) = check_unit(x, "x")?;
    if b != bx || c_prev.shape() != [b, hidden] {
        return Err(precondition("state, cell and input shapes disagree"));
    }
    for (w, name) in weights.w.iter().zip(["W_f", "W_i", "W_C", "W_o"]) {
        check_weight(w, hidden + input, hidden, name)?;
    }
    let mut g = Graph::new();
    let h = g.leaf(h_prev.dequantize());
    let c = g.leaf(c_prev.clone());
    let xn = g.leaf(x.dequantize());
    let p = LstmParams {
        w: core::array::from_fn(|i| g.leaf(weights.w[i].dequantize())),
        b: core::array::from_fn(|i| g.leaf(weights.b[i].clone())),
    };
    let nodes = lstm_step_graph(&mut g, h, c, xn, &p, k, &mut SteSite)?;
    Ok(LstmOutput {
        h: quantize_unit(g.value(nodes.h), k)?,
        c: g.value(nodes.c).clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum CellKind {
    Gru,
    Lstm,
}

/// Settings of a copy-task run.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RnnConfig {
    pub cell: CellKind,
    pub hidden: usize,
    pub weight_bits: Bitwidth,
    pub act_bits: Bitwidth,
    pub quantizer: WeightQuantizer,
    pub width: usize,
    pub steps: usize,
    pub lag: usize,
    pub batch: usize,
    pub iterations: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

/// Recurrent cell with a quantized linear readout.
///
/// Float weight copies are clipped to `[-1, 1]` after every update; the
/// quantized weights are pinned to scale 1 so their grid spans `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RnnModel {
    pub config: RnnConfig,
    /// Gate weights: 3 for GRU, 4 for LSTM.
    pub weights: Vec<Tensor>,
    pub biases: Vec<Tensor>,
    pub readout: Tensor,
    pub readout_bias: Tensor,
}

struct Unrolled {
    graph: Graph,
    params: Vec<NodeId>,
    logits: Vec<NodeId>,
}

impl RnnModel {
    pub fn init(config: RnnConfig, rng: &mut impl Rng) -> Result<Self> {
        if config.hidden == 0 || config.width == 0 {
            return Err(precondition("hidden size and width must be positive"));
        }
        let gates = match config.cell {
            CellKind::Gru => 3,
            CellKind::Lstm => 4,
        };
        let rows = config.hidden + config.width;
        let mut uniform = |r: usize, c: usize, lim: f64| Tensor::matrix(r, c, (0..r * c).map(|_| rng.random_range(-lim..lim)).collect());
        let lim = libm::sqrt(6.0 / (rows + config.hidden) as f64).min(1.0);
        let weights = (0..gates).map(|_| uniform(rows, config.hidden, lim)).collect::<Result<_>>()?;
        let mut biases: Vec<Tensor> = (0..gates).map(|_| Tensor::zeros(vec![1, config.hidden])).collect::<Result<_>>()?;
        if config.cell == CellKind::Lstm {
            // Forget gate starts open.
            biases[0] = Tensor::full(vec![1, config.hidden], 1.0)?;
        }
        let rlim = libm::sqrt(6.0 / (config.hidden + config.width) as f64).min(1.0);
        let readout = uniform(config.hidden, config.width, rlim)?;
        Ok(Self {
            readout_bias: Tensor::zeros(vec![1, config.width])?,
            config,
            weights,
            biases,
            readout,
        })
    }

    fn quantized(&self, w: &Tensor) -> Result<Tensor> {
        let q = self.config.quantizer.quantize(w, self.config.weight_bits)?;
        Ok(q.with_scale(1.0)?.dequantize())
    }

    fn unroll(&self, task: &CopyTask) -> Result<Unrolled> {
        let cfg = &self.config;
        let k = cfg.act_bits;
        let wq = Quantizer::Weights(cfg.quantizer, cfg.weight_bits);
        let mut g = Graph::new();
        let mut params = Vec::new();
        let mut qw = Vec::new();
        for w in &self.weights {
            let leaf = g.leaf(w.clone());
            params.push(leaf);
            qw.push(g.quantize_precomputed(leaf, wq, self.quantized(w)?)?);
        }
        let mut bs = Vec::new();
        for b in &self.biases {
            let leaf = g.leaf(b.clone());
            params.push(leaf);
            bs.push(leaf);
        }
        let ro_leaf = g.leaf(self.readout.clone());
        params.push(ro_leaf);
        let ro = g.quantize_precomputed(ro_leaf, wq, self.quantized(&self.readout)?)?;
        let rb = g.leaf(self.readout_bias.clone());
        params.push(rb);
        let batch = task.batch();
        let mut h = g.leaf(Tensor::zeros(vec![batch, cfg.hidden])?);
        let mut c = g.leaf(Tensor::zeros(vec![batch, cfg.hidden])?);
        let mut logits = Vec::with_capacity(task.steps());
        for x in &task.inputs {
            let xn = g.leaf(x.clone());
            match cfg.cell {
                CellKind::Gru => {
                    let p = GruParams {
                        wz: qw[0],
                        wr: qw[1],
                        w: qw[2],
                        bias: Some([bs[0], bs[1], bs[2]]),
                    };
                    h = gru_step_graph(&mut g, h, xn, &p, k, &mut SteSite)?.h;
                }
                CellKind::Lstm => {
                    let p = LstmParams {
                        w: [qw[0], qw[1], qw[2], qw[3]],
                        b: [bs[0], bs[1], bs[2], bs[3]],
                    };
                    let n = lstm_step_graph(&mut g, h, c, xn, &p, k, &mut SteSite)?;
                    h = n.h;
                    c = n.c;
                }
            }
            let y = g.matmul(h, ro)?;
            logits.push(g.add_row(y, rb)?);
        }
        Ok(Unrolled { graph: g, params, logits })
    }

    /// Mean binary cross-entropy over all steps from `lag` on.
    fn loss(&self, u: &mut Unrolled, task: &CopyTask) -> Result<NodeId> {
        let mut total = None;
        let counted = task.steps() - task.lag;
        for t in task.lag..task.steps() {
            let l = u.graph.bce_with_logits(u.logits[t], &task.targets[t])?;
            total = Some(match total {
                None => l,
                Some(acc) => u.graph.add(acc, l)?,
            });
        }
        let total = total.expect("lag < steps");
        u.graph.affine(total, 1.0 / counted as f64, 0.0)
    }

    /// Fraction of wrongly recalled bits over the steps from `lag` on.
    pub fn bit_error(&self, task: &CopyTask) -> Result<f64> {
        let u = self.unroll(task)?;
        let mut wrong = 0usize;
        let mut total = 0usize;
        for t in task.lag..task.steps() {
            let z = u.graph.value(u.logits[t]);
            for (&v, &y) in z.data().iter().zip(task.targets[t].data()) {
                wrong += usize::from((v > 0.0) != (y > 0.5));
                total += 1;
            }
        }
        Ok(wrong as f64 / total as f64)
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = self.weights.iter_mut().collect();
        out.extend(self.biases.iter_mut());
        out.push(&mut self.readout);
        out.push(&mut self.readout_bias);
        out
    }
}

/// Outcome of [`train_copy_task`].
#[derive(Debug, Clone, PartialEq)]
pub struct CopyRun {
    pub model: RnnModel,
    pub losses: Vec<f64>,
    pub bit_error: f64,
}

/// Trains a quantized recurrent model on freshly sampled copy-task batches
/// and reports the bit error on a held-out batch.
pub fn train_copy_task(config: RnnConfig) -> Result<CopyRun> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = RnnModel::init(config.clone(), &mut rng)?;
    let mut opt = Optimizer::new(config.optimizer);
    let mut losses = Vec::with_capacity(config.iterations);
    let weight_count = model.weights.len();
    for _ in 0..config.iterations {
        let task = CopyTask::generate(config.batch, config.steps, config.width, config.lag, &mut rng)?;
        let mut u = model.unroll(&task)?;
        let loss = model.loss(&mut u, &task)?;
        losses.push(u.graph.value(loss).data()[0]);
        let grads = u.graph.backward(loss)?;
        let gs = u
            .params
            .iter()
            .map(|&id| match grads.get(id) {
                Some(t) => Ok(t.clone()),
                None => Tensor::zeros(u.graph.value(id).shape().to_vec()),
            })
            .collect::<Result<Vec<_>>>()?;
        let mut params = model.params_mut();
        let decay = vec![false; params.len()];
        opt.apply(&mut params, &gs, &decay, config.lr, 0.0)?;
        let clip = |t: &mut Tensor| t.data_mut().iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
        model.weights.iter_mut().take(weight_count).for_each(clip);
        clip(&mut model.readout);
    }
    let held_out = CopyTask::generate(256, config.steps, config.width, config.lag, &mut rng)?;
    let bit_error = model.bit_error(&held_out)?;
    Ok(CopyRun { model, losses, bit_error })
}
