//! Quantized multilayer perceptron.
//!
//! Every layer keeps a floating-point weight copy `W` that only the weight
//! quantizer reads and only the optimizer writes. The forward pass uses
//! `W^q = Q_W(W)` through a straight-through node, computes
//! `act(X W^q + b)`, and quantizes the result with `q_k` on every layer
//! except the last.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::Cell;

use rand::Rng;

use crate::data::MinMaxScaler;
use crate::error::{precondition, Result};
use crate::fixed::{accumulators, argmax_f64, layer_alpha, thresholds_for, Activation, ArgmaxTable, ThresholdTable};
use crate::graph::{Graph, NodeId};
use crate::metrics::effective_bitwidth;
use crate::quant::{quantize_unit, Bitwidth, QuantizedTensor, Quantizer, WeightQuantizer};
use crate::tensor::Tensor;

/// Shape and quantization settings of one layer.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct QnnLayerSpec {
    pub inputs: usize,
    pub outputs: usize,
    pub weight_bits: Bitwidth,
    pub act_bits: Bitwidth,
    pub quantizer: WeightQuantizer,
    pub activation: Activation,
}

/// Layer stack plus the bitwidth of the network input.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelSpec {
    pub input_bits: Bitwidth,
    pub layers: Vec<QnnLayerSpec>,
}

impl ModelSpec {
    /// Fully connected stack `sizes[0] -> sizes[1] -> ...` with the same
    /// bitwidths everywhere, sigmoid hidden layers and a linear output.
    pub fn uniform(
        sizes: &[usize],
        input_bits: Bitwidth,
        weight_bits: Bitwidth,
        act_bits: Bitwidth,
        quantizer: WeightQuantizer,
    ) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(precondition("need at least an input and an output size"));
        }
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| QnnLayerSpec {
                inputs: w[0],
                outputs: w[1],
                weight_bits,
                act_bits,
                quantizer,
                activation: if i + 2 == sizes.len() {
                    Activation::Linear
                } else {
                    Activation::Sigmoid
                },
            })
            .collect();
        let spec = Self { input_bits, layers };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(precondition("model has no layers"));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.inputs == 0 || l.outputs == 0 {
                return Err(precondition(format!("layer {i} has an empty extent")));
            }
            if i + 1 < self.layers.len() {
                if l.activation == Activation::Linear {
                    return Err(precondition(format!("hidden layer {i} needs a bounded activation")));
                }
                if self.layers[i + 1].inputs != l.outputs {
                    return Err(precondition(format!(
                        "layer {i} emits {} features, layer {} expects {}",
                        l.outputs,
                        i + 1,
                        self.layers[i + 1].inputs
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn outputs(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }
}

/// Access counters on the floating-point weight copy.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CopyAccess {
    pub quantizer_reads: u64,
    pub update_writes: u64,
    pub other_reads: u64,
}

/// One layer's parameters.
#[derive(Debug, Clone)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Layer {
    spec: QnnLayerSpec,
    weights: Tensor,
    bias: Tensor,
    /// Weight scale used by the most recent quantization.
    scale: Cell<f64>,
    #[cfg_attr(feature = "serde", serde(skip))]
    quantizer_reads: Cell<u64>,
    #[cfg_attr(feature = "serde", serde(skip))]
    update_writes: Cell<u64>,
    #[cfg_attr(feature = "serde", serde(skip))]
    other_reads: Cell<u64>,
}

impl PartialEq for Layer {
    /// Compares parameters and scale; access counters are ignored.
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec && self.weights == other.weights && self.bias == other.bias && self.scale == other.scale
    }
}

impl Layer {
    pub fn from_parts(spec: QnnLayerSpec, weights: Tensor, bias: Tensor, scale: f64) -> Result<Self> {
        if weights.shape() != [spec.inputs, spec.outputs] || bias.shape() != [1, spec.outputs] {
            return Err(precondition("parameter shapes do not match the layer spec"));
        }
        Ok(Self {
            spec,
            weights,
            bias,
            scale: Cell::new(scale),
            quantizer_reads: Cell::new(0),
            update_writes: Cell::new(0),
            other_reads: Cell::new(0),
        })
    }

    pub fn spec(&self) -> &QnnLayerSpec {
        &self.spec
    }

    /// Floating-point weight copy (counted as a non-quantizer read).
    pub fn weights(&self) -> &Tensor {
        self.other_reads.set(self.other_reads.get() + 1);
        &self.weights
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub fn scale(&self) -> f64 {
        self.scale.get()
    }

    pub fn access(&self) -> CopyAccess {
        CopyAccess {
            quantizer_reads: self.quantizer_reads.get(),
            update_writes: self.update_writes.get(),
            other_reads: self.other_reads.get(),
        }
    }

    pub fn reset_access(&self) {
        self.quantizer_reads.set(0);
        self.update_writes.set(0);
        self.other_reads.set(0);
    }

    /// The weight copy handed to the quantizer.
    fn quantizer_input(&self) -> &Tensor {
        self.quantizer_reads.set(self.quantizer_reads.get() + 1);
        &self.weights
    }

    /// Optimizer write access to the weight copy and bias.
    pub fn update(&mut self) -> (&mut Tensor, &mut Tensor) {
        self.update_writes.set(self.update_writes.get() + 1);
        (&mut self.weights, &mut self.bias)
    }

    /// Quantized weights; with `tanh_clip` the quantizer sees `tanh(W)`.
    pub fn quantized_weights(&self, tanh_clip: bool) -> Result<QuantizedTensor> {
        let w = self.quantizer_input();
        let q = if tanh_clip {
            self.spec.quantizer.quantize(&w.map(libm::tanh), self.spec.weight_bits)
        } else {
            self.spec.quantizer.quantize(w, self.spec.weight_bits)
        }?;
        self.scale.set(q.scale());
        Ok(q)
    }

    pub fn effective_bitwidth(&self, tanh_clip: bool) -> Result<f64> {
        Ok(effective_bitwidth(&self.quantized_weights(tanh_clip)?))
    }
}

/// Forward-pass options.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ForwardOptions {
    pub tanh_clip: bool,
    /// Quantize the gradient of each pre-activation to this many bits.
    pub grad_bits: Option<Bitwidth>,
}

/// A built forward graph and the node handles training needs.
#[derive(Debug)]
pub struct Forward {
    pub graph: Graph,
    pub weights: Vec<NodeId>,
    pub quantized_weights: Vec<NodeId>,
    pub biases: Vec<NodeId>,
    /// Final-layer pre-activation.
    pub logits: NodeId,
    /// Final-layer output after its activation.
    pub output: NodeId,
    pub weight_codes: Vec<QuantizedTensor>,
}

/// A quantized MLP.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Mlp {
    spec: ModelSpec,
    layers: Vec<Layer>,
    scaler: Option<MinMaxScaler>,
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn init(spec: ModelSpec, rng: &mut impl Rng) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .layers
            .iter()
            .map(|l| {
                let lim = libm::sqrt(6.0 / (l.inputs + l.outputs) as f64);
                let w = (0..l.inputs * l.outputs).map(|_| rng.random_range(-lim..lim)).collect();
                let w = Tensor::matrix(l.inputs, l.outputs, w)?;
                Layer::from_parts(*l, w, Tensor::zeros(vec![1, l.outputs])?, 0.0)
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            spec,
            layers,
            scaler: None,
        })
    }

    pub fn from_parts(spec: ModelSpec, layers: Vec<Layer>, scaler: Option<MinMaxScaler>) -> Result<Self> {
        spec.validate()?;
        if layers.len() != spec.layers.len() || layers.iter().zip(&spec.layers).any(|(l, s)| l.spec != *s) {
            return Err(precondition("layers do not match the model spec"));
        }
        Ok(Self { spec, layers, scaler })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn scaler(&self) -> Option<&MinMaxScaler> {
        self.scaler.as_ref()
    }

    pub fn set_scaler(&mut self, scaler: Option<MinMaxScaler>) {
        self.scaler = scaler;
    }

    /// Scales raw features into `[0, 1]` and quantizes them to the input
    /// bitwidth.
    pub fn quantize_input(&self, x: &Tensor) -> Result<QuantizedTensor> {
        let (_, d) = x.dims2()?;
        if d != self.spec.inputs() {
            return Err(precondition(format!("model takes {} features, got {d}", self.spec.inputs())));
        }
        let scaled = match &self.scaler {
            Some(s) => s.transform(x)?,
            None => x.clone(),
        };
        quantize_unit(&scaled, self.spec.input_bits)
    }

    /// Builds the training-time forward graph on raw features.
    pub fn forward(&self, x: &Tensor, opts: ForwardOptions) -> Result<Forward> {
        let xq = self.quantize_input(x)?.dequantize();
        let mut g = Graph::new();
        let mut a = g.leaf(xq);
        let n = self.layers.len();
        let (mut weights, mut qweights, mut biases, mut codes) = (vec![], vec![], vec![], vec![]);
        let mut logits = a;
        for (i, layer) in self.layers.iter().enumerate() {
            let s = layer.spec;
            let qt = layer.quantized_weights(opts.tanh_clip)?;
            let w = g.leaf(layer.weights.clone());
            let wsrc = if opts.tanh_clip { g.tanh(w)? } else { w };
            let wq = g.quantize_precomputed(wsrc, Quantizer::Weights(s.quantizer, s.weight_bits), qt.dequantize())?;
            let b = g.leaf(layer.bias.clone());
            let z = g.matmul(a, wq)?;
            let mut z = g.add_row(z, b)?;
            if let Some(bits) = opts.grad_bits {
                z = g.quantize_grad(z, bits)?;
            }
            logits = z;
            let y = match s.activation {
                Activation::Sigmoid => g.sigmoid(z)?,
                Activation::ClippedIdentity => g.clamp01(z)?,
                Activation::Linear => z,
            };
            a = if i + 1 < n {
                g.quantize(y, Quantizer::Unit(s.act_bits))?
            } else {
                y
            };
            weights.push(w);
            qweights.push(wq);
            biases.push(b);
            codes.push(qt);
        }
        Ok(Forward {
            graph: g,
            weights,
            quantized_weights: qweights,
            biases,
            logits,
            output: a,
            weight_codes: codes,
        })
    }

    /// Class predictions of the floating-point reference path.
    pub fn predict(&self, x: &Tensor, opts: ForwardOptions) -> Result<Vec<usize>> {
        let f = self.forward(x, opts)?;
        let last = self.spec.layers[self.layers.len() - 1].activation;
        // Monotone activations do not change the argmax; compare the
        // pre-activations so saturated outputs cannot tie.
        let node = if last == Activation::ClippedIdentity { f.output } else { f.logits };
        let v = f.graph.value(node);
        let (rows, cols) = v.dims2()?;
        Ok((0..rows).map(|r| argmax_f64(&v.data()[r * cols..(r + 1) * cols])).collect())
    }

    /// Per-layer effective bitwidth of the quantized weights.
    pub fn effective_bitwidths(&self, tanh_clip: bool) -> Result<Vec<f64>> {
        self.layers.iter().map(|l| l.effective_bitwidth(tanh_clip)).collect()
    }

    /// Freezes the current quantized weights and folds biases and scales
    /// into integer thresholds.
    pub fn export_fixed(&self, tanh_clip: bool, exponent: u32) -> Result<FixedModel> {
        let n = self.layers.len();
        let mut prev_bits = self.spec.input_bits;
        let mut hidden = Vec::with_capacity(n - 1);
        for (i, layer) in self.layers.iter().enumerate() {
            let s = layer.spec;
            let qt = layer.quantized_weights(tanh_clip)?;
            let alpha = layer_alpha(qt.scale(), s.weight_bits, prev_bits);
            if i + 1 == n {
                if s.activation == Activation::ClippedIdentity {
                    return Err(precondition(format!(
                        "layer {i}: activation {} is unsupported on the output layer of the fixed path",
                        s.activation.name()
                    )));
                }
                let output = ArgmaxTable::new(alpha, layer.bias.data(), exponent)?;
                return Ok(FixedModel {
                    input_bits: self.spec.input_bits,
                    scaler: self.scaler.clone(),
                    exponent,
                    hidden,
                    output: FixedOutput {
                        weights: qt,
                        table: output,
                    },
                });
            }
            let tables = layer
                .bias
                .data()
                .iter()
                .map(|&b| thresholds_for(s.activation, alpha, b, s.act_bits, exponent))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| precondition(format!("layer {i}: {e}")))?;
            hidden.push(FixedHidden { weights: qt, tables });
            prev_bits = s.act_bits;
        }
        unreachable!("the output layer returns")
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FixedHidden {
    pub weights: QuantizedTensor,
    pub tables: Vec<ThresholdTable>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FixedOutput {
    pub weights: QuantizedTensor,
    pub table: ArgmaxTable,
}

/// Integer-only form of an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FixedModel {
    pub input_bits: Bitwidth,
    pub scaler: Option<MinMaxScaler>,
    pub exponent: u32,
    pub hidden: Vec<FixedHidden>,
    pub output: FixedOutput,
}

impl FixedModel {
    /// Predictions from already quantized inputs.
    pub fn predict_codes(&self, x: &QuantizedTensor) -> Result<Vec<usize>> {
        let mut a = x.clone();
        for h in &self.hidden {
            a = crate::fixed::eval_layer_fixed(&h.weights, &a, &h.tables, self.exponent)?;
        }
        let acc = accumulators(&self.output.weights, &a)?;
        let n = self.output.table.outputs;
        Ok(acc.chunks(n).map(|row| self.output.table.argmax(row)).collect())
    }

    /// Predictions from raw features. Input scaling and quantization are
    /// the only floating-point steps.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let scaled = match &self.scaler {
            Some(s) => s.transform(x)?,
            None => x.clone(),
        };
        self.predict_codes(&quantize_unit(&scaled, self.input_bits)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bw(k: u32) -> Bitwidth {
        Bitwidth::new(k).unwrap()
    }

    fn model(seed: u64, q: WeightQuantizer) -> Mlp {
        let spec = ModelSpec::uniform(&[3, 8, 5, 4], bw(4), bw(2), bw(2), q).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Mlp::init(spec, &mut rng).unwrap();
        for l in m.layers_mut() {
            let (_, b) = l.update();
            for v in b.data_mut() {
                *v = rng.random_range(-0.5..0.5);
            }
        }
        m
    }

    #[test]
    fn spec_validation() {
        assert!(ModelSpec::uniform(&[3], bw(2), bw(2), bw(2), WeightQuantizer::Imbalanced).is_err());
        let mut s = ModelSpec::uniform(&[3, 4, 2], bw(2), bw(2), bw(2), WeightQuantizer::Imbalanced).unwrap();
        s.layers[1].inputs = 5;
        assert!(s.validate().is_err());
        let mut s = ModelSpec::uniform(&[3, 4, 2], bw(2), bw(2), bw(2), WeightQuantizer::Imbalanced).unwrap();
        s.layers[0].activation = Activation::Linear;
        assert!(s.validate().is_err());
    }

    #[test]
    fn hidden_activations_are_on_grid() {
        let m = model(1, WeightQuantizer::BalancedExact);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::matrix(6, 3, (0..18).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
        let f = m.forward(&x, ForwardOptions::default()).unwrap();
        for (i, &wq) in f.quantized_weights.iter().enumerate() {
            assert_eq!(f.graph.value(wq), &f.weight_codes[i].dequantize());
        }
        assert_eq!(f.graph.value(f.output).shape(), &[6, 4]);
    }

    #[test]
    fn weight_copy_only_reaches_quantizer() {
        let m = model(3, WeightQuantizer::BalancedMean);
        let x = Tensor::matrix(2, 3, vec![0.1, 0.5, 0.9, 0.3, 0.2, 0.7]).unwrap();
        for l in m.layers() {
            l.reset_access();
        }
        m.forward(&x, ForwardOptions::default()).unwrap();
        for l in m.layers() {
            assert_eq!(
                l.access(),
                CopyAccess {
                    quantizer_reads: 1,
                    update_writes: 0,
                    other_reads: 0
                }
            );
        }
    }

    #[test]
    fn fixed_export_matches_reference_predictions() {
        for q in [WeightQuantizer::Imbalanced, WeightQuantizer::BalancedExact] {
            let m = model(5, q);
            let mut rng = ChaCha8Rng::seed_from_u64(6);
            let x = Tensor::matrix(300, 3, (0..900).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
            let fixed = m.export_fixed(false, 0).unwrap();
            assert_eq!(fixed.predict(&x).unwrap(), m.predict(&x, ForwardOptions::default()).unwrap());
        }
    }

    #[test]
    fn clipped_output_layer_is_rejected_by_fixed_export() {
        let mut spec = ModelSpec::uniform(&[2, 3, 2], bw(2), bw(2), bw(2), WeightQuantizer::Imbalanced).unwrap();
        spec.layers[1].activation = Activation::ClippedIdentity;
        let m = Mlp::init(spec, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let err = m.export_fixed(false, 0).unwrap_err();
        assert!(format!("{err}").contains("layer 1"));
    }
}
