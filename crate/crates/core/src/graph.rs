//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Graph`] is rebuilt for every forward pass. Nodes are appended in
//! evaluation order, so the node list is already a topological order and
//! [`Graph::backward`] simply walks it in reverse.
//!
//! Besides the usual differentiable ops the graph has three nodes with
//! custom backward rules:
//!
//! * [`Graph::quantize`]: forward applies a [`Quantizer`], backward passes the
//!   gradient through unchanged (straight-through estimator);
//! * [`Graph::equalize`]: piecewise-linear histogram equalization whose
//!   backward multiplies by the slope of the containing interval;
//! * [`Graph::quantize_grad`]: identity forward, uniform quantization of the
//!   incoming gradient on the way back.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::balanced::{equalize_backward, equalize_exact, EqualizerSpec};
use crate::error::{contract, precondition, Error, Result};
use crate::quant::{quantize_uniform, Bitwidth, Quantizer};
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation that produced a node.
#[derive(Debug, Clone)]
pub enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    /// `x + bias` with a `1 x n` bias broadcast over the rows of `x`.
    AddRow(NodeId, NodeId),
    Hadamard(NodeId, NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    /// `min(max(x, 0), 1)`.
    Clamp01(NodeId),
    /// Column-wise concatenation of two matrices with equal row counts.
    Concat(NodeId, NodeId),
    /// `scale * x + shift`.
    Affine {
        input: NodeId,
        scale: f64,
        shift: f64,
    },
    Sum(NodeId),
    Mean(NodeId),
    /// Mean softmax cross-entropy over the rows of a logit matrix.
    SoftmaxCrossEntropy {
        logits: NodeId,
        labels: Vec<usize>,
        probs: Tensor,
    },
    /// Mean binary cross-entropy of sigmoid(logits) against 0/1 targets.
    BceWithLogits {
        logits: NodeId,
        targets: Tensor,
    },
    /// Straight-through quantizer.
    Ste(NodeId, Quantizer),
    Equalize {
        input: NodeId,
        spec: EqualizerSpec,
    },
    GradQuant(NodeId, Bitwidth),
}

impl Op {
    /// Short name used in diagnostics.
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::Hadamard(..) => "hadamard",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Clamp01(_) => "clamp01",
            Op::Concat(..) => "concat",
            Op::Affine { .. } => "affine",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
            Op::BceWithLogits { .. } => "bce_with_logits",
            Op::Ste(..) => "ste",
            Op::Equalize { .. } => "equalize",
            Op::GradQuant(..) => "grad_quant",
        }
    }

    /// Nodes this op reads.
    pub fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::AddRow(a, b) | Op::Hadamard(a, b) | Op::Concat(a, b) => {
                vec![*a, *b]
            }
            Op::Sigmoid(a) | Op::Tanh(a) | Op::Clamp01(a) | Op::Sum(a) | Op::Mean(a) | Op::Ste(a, _) | Op::GradQuant(a, _) => {
                vec![*a]
            }
            Op::Affine { input, .. } | Op::Equalize { input, .. } => vec![*input],
            Op::SoftmaxCrossEntropy { logits, .. } | Op::BceWithLogits { logits, .. } => vec![*logits],
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
}

/// A dynamic computation graph.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Logistic function, written to avoid overflow for large `|x|`.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn op(&self, id: NodeId) -> &Op {
        &self.nodes[id.0].op
    }

    fn push(&mut self, op: Op, value: Tensor) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::NonFinite(op.name()));
        }
        self.nodes.push(Node { op, value });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Adds an input (parameter or data) node.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node { op: Op::Leaf, value });
        NodeId(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b))?;
        self.push(Op::MatMul(a, b), v)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).zip_with(self.value(b), "add", |x, y| x + y)?;
        self.push(Op::Add(a, b), v)
    }

    /// Adds a `1 x n` row to every row of an `m x n` matrix.
    pub fn add_row(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (m, n) = self.value(x).dims2()?;
        let b = self.value(bias);
        if b.dims2()? != (1, n) {
            return Err(Error::Shape {
                op: "add_row",
                lhs: self.value(x).shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let xs = self.value(x).data();
        let bs = b.data();
        let data = (0..m * n).map(|i| xs[i] + bs[i % n]).collect();
        let v = Tensor::from_parts(vec![m, n], data);
        self.push(Op::AddRow(x, bias), v)
    }

    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).zip_with(self.value(b), "hadamard", |x, y| x * y)?;
        self.push(Op::Hadamard(a, b), v)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).map(sigmoid);
        self.push(Op::Sigmoid(a), v)
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).map(libm::tanh);
        self.push(Op::Tanh(a), v)
    }

    /// Clamps to `[0, 1]`; the gradient is zero outside the open interval.
    pub fn clamp01(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).map(|x| x.clamp(0.0, 1.0));
        self.push(Op::Clamp01(a), v)
    }

    /// `[a, b]` along columns.
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ra, ca) = self.value(a).dims2()?;
        let (rb, cb) = self.value(b).dims2()?;
        if ra != rb {
            return Err(Error::Shape {
                op: "concat",
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(ra * (ca + cb));
        for r in 0..ra {
            data.extend_from_slice(&da[r * ca..(r + 1) * ca]);
            data.extend_from_slice(&db[r * cb..(r + 1) * cb]);
        }
        let v = Tensor::from_parts(vec![ra, ca + cb], data);
        self.push(Op::Concat(a, b), v)
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, input: NodeId, scale: f64, shift: f64) -> Result<NodeId> {
        let v = self.value(input).map(|x| scale * x + shift);
        self.push(Op::Affine { input, scale, shift }, v)
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let v = Tensor::from_parts(vec![1], vec![self.value(a).sum()]);
        self.push(Op::Sum(a), v)
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let t = self.value(a);
        let v = Tensor::from_parts(vec![1], vec![t.sum() / t.len() as f64]);
        self.push(Op::Mean(a), v)
    }

    /// Mean cross-entropy of `softmax(logits)` against class labels.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let (m, n) = self.value(logits).dims2()?;
        if labels.len() != m {
            return Err(precondition(format!("{} labels for {m} rows", labels.len())));
        }
        if let Some(l) = labels.iter().find(|&&l| l >= n) {
            return Err(precondition(format!("label {l} outside {n} classes")));
        }
        let z = self.value(logits).data();
        let mut probs = vec![0.0; m * n];
        let mut loss = 0.0;
        for r in 0..m {
            let row = &z[r * n..(r + 1) * n];
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = row.iter().map(|&v| libm::exp(v - mx)).sum();
            for c in 0..n {
                probs[r * n + c] = libm::exp(row[c] - mx) / denom;
            }
            loss += libm::log(denom) + mx - row[labels[r]];
        }
        let v = Tensor::from_parts(vec![1], vec![loss / m as f64]);
        let probs = Tensor::from_parts(vec![m, n], probs);
        self.push(
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            v,
        )
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against 0/1 targets.
    pub fn bce_with_logits(&mut self, logits: NodeId, targets: &Tensor) -> Result<NodeId> {
        self.value(logits).same_shape(targets, "bce_with_logits")?;
        let z = self.value(logits).data();
        let n = z.len() as f64;
        let loss: f64 = z
            .iter()
            .zip(targets.data())
            .map(|(&x, &y)| x.max(0.0) - x * y + libm::log1p(libm::exp(-x.abs())))
            .sum();
        let v = Tensor::from_parts(vec![1], vec![loss / n]);
        self.push(
            Op::BceWithLogits {
                logits,
                targets: targets.clone(),
            },
            v,
        )
    }

    /// Straight-through quantizer: forward is `q(x)`, backward is identity.
    pub fn quantize(&mut self, input: NodeId, q: Quantizer) -> Result<NodeId> {
        let v = q.apply(self.value(input))?;
        self.push(Op::Ste(input, q), v)
    }

    /// [`Graph::quantize`] with a forward value the caller already computed
    /// as `q.apply(input)`.
    pub(crate) fn quantize_precomputed(&mut self, input: NodeId, q: Quantizer, value: Tensor) -> Result<NodeId> {
        self.value(input).same_shape(&value, "ste")?;
        self.push(Op::Ste(input, q), value)
    }

    /// Histogram equalization with the slope-scaled backward rule.
    pub fn equalize(&mut self, input: NodeId, spec: EqualizerSpec) -> Result<NodeId> {
        let v = equalize_exact(self.value(input), &spec);
        self.push(Op::Equalize { input, spec }, v)
    }

    /// Identity forward; the gradient flowing back is uniformly quantized to
    /// `bits` with its own max-abs scale.
    pub fn quantize_grad(&mut self, input: NodeId, bits: Bitwidth) -> Result<NodeId> {
        let v = self.value(input).clone();
        self.push(Op::GradQuant(input, bits), v)
    }

    /// Gradients of a scalar root with respect to every node.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(contract(format!(
                "backward needs a scalar root, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::from_parts(self.value(root).shape().to_vec(), vec![1.0]));
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            for (input, contrib) in self.local_grads(&node.op, &node.value, &g)? {
                match &mut grads[input.0] {
                    Some(acc) => {
                        for (a, c) in acc.data_mut().iter_mut().zip(contrib.data()) {
                            *a += c;
                        }
                    }
                    slot @ None => *slot = Some(contrib),
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn local_grads(&self, op: &Op, out: &Tensor, g: &Tensor) -> Result<Vec<(NodeId, Tensor)>> {
        let grads = match op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => {
                let ga = g.matmul(&self.value(*b).transpose()?)?;
                let gb = self.value(*a).transpose()?.matmul(g)?;
                vec![(*a, ga), (*b, gb)]
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::AddRow(x, bias) => {
                let (_, n) = g.dims2()?;
                let mut gb = vec![0.0; n];
                for (i, v) in g.data().iter().enumerate() {
                    gb[i % n] += v;
                }
                vec![(*x, g.clone()), (*bias, Tensor::from_parts(vec![1, n], gb))]
            }
            Op::Hadamard(a, b) => {
                let ga = g.zip_with(self.value(*b), "hadamard", |x, y| x * y)?;
                let gb = g.zip_with(self.value(*a), "hadamard", |x, y| x * y)?;
                vec![(*a, ga), (*b, gb)]
            }
            Op::Sigmoid(a) => vec![(*a, g.zip_with(out, "sigmoid", |gv, s| gv * s * (1.0 - s))?)],
            Op::Tanh(a) => vec![(*a, g.zip_with(out, "tanh", |gv, t| gv * (1.0 - t * t))?)],
            Op::Clamp01(a) => {
                let d = g.zip_with(self.value(*a), "clamp01", |gv, x| if x > 0.0 && x < 1.0 { gv } else { 0.0 })?;
                vec![(*a, d)]
            }
            Op::Concat(a, b) => {
                let (ra, ca) = self.value(*a).dims2()?;
                let (_, cb) = self.value(*b).dims2()?;
                let gd = g.data();
                let mut ga = Vec::with_capacity(ra * ca);
                let mut gb = Vec::with_capacity(ra * cb);
                for r in 0..ra {
                    let row = &gd[r * (ca + cb)..(r + 1) * (ca + cb)];
                    ga.extend_from_slice(&row[..ca]);
                    gb.extend_from_slice(&row[ca..]);
                }
                vec![
                    (*a, Tensor::from_parts(vec![ra, ca], ga)),
                    (*b, Tensor::from_parts(vec![ra, cb], gb)),
                ]
            }
            Op::Affine { input, scale, .. } => vec![(*input, g.map(|v| v * scale))],
            Op::Sum(a) => {
                let s = g.data()[0];
                vec![(*a, self.value(*a).map(|_| s))]
            }
            Op::Mean(a) => {
                let s = g.data()[0] / self.value(*a).len() as f64;
                vec![(*a, self.value(*a).map(|_| s))]
            }
            Op::SoftmaxCrossEntropy { logits, labels, probs } => {
                let (m, n) = probs.dims2()?;
                let scale = g.data()[0] / m as f64;
                let mut d = probs.data().to_vec();
                for (r, &l) in labels.iter().enumerate() {
                    d[r * n + l] -= 1.0;
                }
                for v in &mut d {
                    *v *= scale;
                }
                vec![(*logits, Tensor::from_parts(vec![m, n], d))]
            }
            Op::BceWithLogits { logits, targets } => {
                let scale = g.data()[0] / targets.len() as f64;
                let d = self
                    .value(*logits)
                    .zip_with(targets, "bce_with_logits", |x, y| scale * (sigmoid(x) - y))?;
                vec![(*logits, d)]
            }
            Op::Ste(a, _) => vec![(*a, g.clone())],
            Op::Equalize { input, spec } => {
                vec![(*input, equalize_backward(g, spec, self.value(*input))?)]
            }
            Op::GradQuant(a, bits) => vec![(*a, quantize_uniform(g, *bits).dequantize())],
        };
        Ok(grads)
    }
}

/// Gradients produced by [`Graph::backward`], indexed by node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the root with respect to `id`; `None` when the root does
    /// not depend on it.
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }
}
