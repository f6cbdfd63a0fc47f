//! Balanced low-bitwidth quantization for neural networks.
//!
//! This crate holds the pure algorithmic core and builds without `std`
//! (an allocator is required):
//!
//! * [`tensor`] and [`graph`]: a dense `f64` tensor and a small reverse-mode
//!   autodiff engine with straight-through quantizer nodes.
//! * [`quant`]: round-half-toward-zero, the unit-interval quantizer and the
//!   symmetric uniform weight quantizer.
//! * [`balanced`]: percentile and recursive-partition histogram equalization
//!   and the balanced weight quantizer built on top of them.
//! * [`bitplane`]: AND + popcount dot products over packed bit planes.
//! * [`fixed`]: integer-only layer evaluation through precomputed thresholds.
//! * [`metrics`]: effective bitwidth (code entropy) and related diagnostics.
//! * [`rnn`]: quantized GRU and LSTM cells.
//! * [`model`], [`train`], [`data`]: a quantized MLP, its training loop and
//!   synthetic datasets.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod balanced;
pub mod bitplane;
pub mod data;
mod error;
pub mod fixed;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod quant;
pub mod rnn;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use quant::{Bitwidth, QuantizedTensor};
pub use tensor::Tensor;
