//! Uniform quantization primitives.
//!
//! Rounding uses "round half toward zero": `sgn(x) * ceil(|x| - 1/2)`.
//! [`q_k`] quantizes values already in `[0, 1]` onto the `2^k` points
//! `{0, 1/(2^k-1), ..., 1}`; [`quant_k`] first maps a weight tensor onto
//! `[0, 1]` with `w / (2 max|w|) + 1/2`, quantizes, and maps back.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::balanced::{self, EqualizeMode};
use crate::error::{precondition, Result};
use crate::tensor::Tensor;

/// A quantization bitwidth in `1..=8`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(try_from = "u32", into = "u32"))]
pub struct Bitwidth(u8);

impl Bitwidth {
    pub const MAX: u32 = 8;

    pub fn new(bits: u32) -> Result<Self> {
        if (1..=Self::MAX).contains(&bits) {
            Ok(Self(bits as u8))
        } else {
            Err(precondition(format!("bitwidth {bits} outside 1..=8")))
        }
    }

    pub fn get(self) -> u32 {
        self.0 as u32
    }

    /// Number of quantization levels, `2^k`.
    pub fn levels(self) -> usize {
        1 << self.0
    }

    /// Largest code, `2^k - 1`.
    pub fn max_code(self) -> u32 {
        (1u32 << self.0) - 1
    }
}

impl TryFrom<u32> for Bitwidth {
    type Error = crate::Error;
    fn try_from(v: u32) -> Result<Self> {
        Self::new(v)
    }
}

impl From<Bitwidth> for u32 {
    fn from(b: Bitwidth) -> u32 {
        b.get()
    }
}

impl core::fmt::Display for Bitwidth {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// How codes map back to reals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Convention {
    /// `code / (2^k - 1)`, values in `[0, 1]`.
    UnitInterval,
    /// `2 * scale * (code / (2^k - 1) - 1/2)`, values in `[-scale, scale]`.
    Symmetric,
}

/// Integer codes in `[0, 2^k - 1]` together with the mapping back to reals.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct QuantizedTensor {
    shape: Vec<usize>,
    codes: Vec<u8>,
    bits: Bitwidth,
    scale: f64,
    convention: Convention,
}

impl QuantizedTensor {
    pub fn new(shape: Vec<usize>, codes: Vec<u8>, bits: Bitwidth, scale: f64, convention: Convention) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(precondition(format!("invalid shape {shape:?}")));
        }
        if shape.iter().product::<usize>() != codes.len() {
            return Err(precondition("code count does not match shape"));
        }
        if let Some(c) = codes.iter().find(|&&c| c as u32 > bits.max_code()) {
            return Err(precondition(format!("code {c} does not fit in {bits} bits")));
        }
        if !(scale.is_finite() && scale >= 0.0) {
            return Err(precondition("scale must be finite and non-negative"));
        }
        Ok(Self {
            shape,
            codes,
            bits,
            scale,
            convention,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn codes(&self) -> &[u8] {
        &self.codes
    }

    pub fn bits(&self) -> Bitwidth {
        self.bits
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn convention(&self) -> Convention {
        self.convention
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    /// Same codes with a different scale (used to pin RNN weights to `[-1, 1]`).
    pub fn with_scale(mut self, scale: f64) -> Result<Self> {
        if !(scale.is_finite() && scale >= 0.0) {
            return Err(precondition("scale must be finite and non-negative"));
        }
        self.scale = scale;
        Ok(self)
    }

    /// The real value of a single code.
    pub fn level(&self, code: u8) -> f64 {
        let m = self.bits.max_code() as f64;
        match self.convention {
            Convention::UnitInterval => code as f64 / m,
            Convention::Symmetric => self.scale * ((2 * code as i32 - m as i32) as f64 / m),
        }
    }

    /// All `2^k` levels in code order.
    pub fn levels(&self) -> Vec<f64> {
        (0..self.bits.levels()).map(|c| self.level(c as u8)).collect()
    }

    pub fn dequantize(&self) -> Tensor {
        let table = self.levels();
        Tensor::from_parts(self.shape.clone(), self.codes.iter().map(|&c| table[c as usize]).collect())
    }
}

/// Round half toward zero: `sgn(x) * ceil(|x| - 1/2)`.
pub fn round_to_zero(x: f64) -> f64 {
    let r = libm::ceil(libm::fabs(x) - 0.5);
    // +0.0 normalises the sign of zero results.
    if x < 0.0 {
        -r + 0.0
    } else {
        r + 0.0
    }
}

pub fn round_to_zero_tensor(x: &Tensor) -> Tensor {
    x.map(round_to_zero)
}

/// Code of `q_k` for one value in `[0, 1]`.
pub fn q_k_code(w: f64, k: Bitwidth) -> Result<u8> {
    if !(0.0..=1.0).contains(&w) {
        return Err(precondition(format!("q_k input {w} outside [0, 1]")));
    }
    Ok(round_to_zero(k.max_code() as f64 * w) as u8)
}

/// `round_to_zero((2^k - 1) w) / (2^k - 1)` for `w` in `[0, 1]`.
pub fn q_k(w: &Tensor, k: Bitwidth) -> Result<Tensor> {
    let m = k.max_code() as f64;
    let data = w
        .data()
        .iter()
        .map(|&v| q_k_code(v, k).map(|c| c as f64 / m))
        .collect::<Result<Vec<_>>>()?;
    Ok(Tensor::from_parts(w.shape().to_vec(), data))
}

/// `q_k` as codes with the unit-interval convention.
pub fn quantize_unit(w: &Tensor, k: Bitwidth) -> Result<QuantizedTensor> {
    let codes = w.data().iter().map(|&v| q_k_code(v, k)).collect::<Result<Vec<_>>>()?;
    QuantizedTensor::new(w.shape().to_vec(), codes, k, 1.0, Convention::UnitInterval)
}

/// Uniform symmetric quantization of a weight tensor.
///
/// The scale is `max|w|`; an all-zero tensor yields code 0 with scale 0,
/// which dequantizes back to zeros.
pub fn quantize_uniform(w: &Tensor, k: Bitwidth) -> QuantizedTensor {
    let scale = w.max_abs();
    let shape = w.shape().to_vec();
    if scale == 0.0 {
        return QuantizedTensor {
            codes: vec![0; w.len()],
            shape,
            bits: k,
            scale: 0.0,
            convention: Convention::Symmetric,
        };
    }
    let m = k.max_code() as f64;
    let codes = w
        .data()
        .iter()
        .map(|&v| {
            let unit = (v / (2.0 * scale) + 0.5).clamp(0.0, 1.0);
            round_to_zero(m * unit) as u8
        })
        .collect();
    QuantizedTensor {
        shape,
        codes,
        bits: k,
        scale,
        convention: Convention::Symmetric,
    }
}

/// `quant_k(w)`: dequantized output of [`quantize_uniform`].
pub fn quant_k(w: &Tensor, k: Bitwidth) -> Tensor {
    quantize_uniform(w, k).dequantize()
}

/// Weight quantizer selection for a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum WeightQuantizer {
    /// Plain uniform quantization ([`quant_k`]).
    Imbalanced,
    BalancedExact,
    BalancedMean,
    BalancedMedian,
}

impl WeightQuantizer {
    pub fn quantize(self, w: &Tensor, k: Bitwidth) -> Result<QuantizedTensor> {
        match self {
            Self::Imbalanced => Ok(quantize_uniform(w, k)),
            Self::BalancedExact => balanced::balanced_quantize(w, k, EqualizeMode::ExactPercentile),
            Self::BalancedMean => balanced::balanced_quantize(w, k, EqualizeMode::RecursiveMean),
            Self::BalancedMedian => balanced::balanced_quantize(w, k, EqualizeMode::RecursiveMedian),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Imbalanced => "imbalanced",
            Self::BalancedExact => "balanced-exact",
            Self::BalancedMean => "balanced-mean",
            Self::BalancedMedian => "balanced-median",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Self::Imbalanced, Self::BalancedExact, Self::BalancedMean, Self::BalancedMedian]
            .into_iter()
            .find(|q| q.name() == s)
    }
}

/// A quantization op that can be wrapped in a straight-through node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Quantizer {
    RoundToZero,
    /// `q_k` on `[0, 1]` inputs.
    Unit(Bitwidth),
    /// Symmetric weight quantization with the selected equalization.
    Weights(WeightQuantizer, Bitwidth),
}

impl Quantizer {
    /// Forward value of the quantizer.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        match *self {
            Self::RoundToZero => Ok(round_to_zero_tensor(x)),
            Self::Unit(k) => q_k(x, k),
            Self::Weights(q, k) => Ok(q.quantize(x, k)?.dequantize()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bw(k: u32) -> Bitwidth {
        Bitwidth::new(k).unwrap()
    }

    #[test]
    fn halves_round_toward_zero() {
        assert_eq!(round_to_zero(0.5), 0.0);
        assert_eq!(round_to_zero(-0.5), 0.0);
        assert_eq!(round_to_zero(1.5), 1.0);
        assert_eq!(round_to_zero(-1.5), -1.0);
        assert_eq!(round_to_zero(0.7), 1.0);
        assert_eq!(round_to_zero(-2.5), -2.0);
        assert!(round_to_zero(-0.3).is_sign_positive());
    }

    #[test]
    fn q_k_examples() {
        let t = Tensor::row(vec![0.6, 0.4, 0.0, 1.0]).unwrap();
        assert_eq!(q_k(&t, bw(1)).unwrap().data(), &[1.0, 0.0, 0.0, 1.0]);
        let half = Tensor::row(vec![0.5]).unwrap();
        assert_eq!(q_k(&half, bw(2)).unwrap().data(), &[1.0 / 3.0]);
        for k in 1..=8 {
            let ends = Tensor::row(vec![0.0, 1.0]).unwrap();
            assert_eq!(q_k(&ends, bw(k)).unwrap().data(), &[0.0, 1.0]);
        }
    }

    #[test]
    fn q_k_rejects_out_of_range() {
        let t = Tensor::row(vec![1.2]).unwrap();
        assert!(q_k(&t, bw(2)).is_err());
        assert!(Bitwidth::new(0).is_err());
        assert!(Bitwidth::new(9).is_err());
    }

    #[test]
    fn quant_1_hand_example() {
        let t = Tensor::row(vec![-1.0, 0.0, 1.0]).unwrap();
        assert_eq!(quant_k(&t, bw(1)).data(), &[-1.0, -1.0, 1.0]);
    }

    #[test]
    fn quant_k_fixed_point_on_grid() {
        for k in 1..=8 {
            let k = bw(k);
            let codes: Vec<u8> = (0..k.levels()).map(|c| c as u8).collect();
            let q = QuantizedTensor::new(vec![codes.len()], codes, k, 0.75, Convention::Symmetric).unwrap();
            let v = q.dequantize();
            assert_eq!(quant_k(&v, k), v);
        }
    }

    #[test]
    fn quant_2_uniform_is_center_heavy() {
        // Rounding buckets of width 1/3 on the unit interval: the outer
        // codes only get half a bucket each.
        let n = 3000;
        let data: Vec<f64> = (0..n).map(|i| -1.0 + 2.0 * (i as f64 + 0.5) / n as f64).collect();
        let q = quantize_uniform(&Tensor::row(data).unwrap(), bw(2));
        let mut counts = [0usize; 4];
        for &c in q.codes() {
            counts[c as usize] += 1;
        }
        assert!(counts.iter().all(|&c| c > 0));
        assert_eq!(counts, [500, 1000, 1000, 500]);
    }

    #[test]
    fn all_zero_weights() {
        let z = Tensor::zeros(vec![3, 2]).unwrap();
        let q = quantize_uniform(&z, bw(3));
        assert_eq!(q.scale(), 0.0);
        assert_eq!(q.dequantize(), z);
    }

    proptest! {
        #[test]
        fn round_to_zero_matches_formula(x in -1e6f64..1e6) {
            let sgn = if x > 0.0 { 1.0 } else if x < 0.0 { -1.0 } else { 0.0 };
            prop_assert_eq!(round_to_zero(x), sgn * libm::ceil(x.abs() - 0.5));
        }

        #[test]
        fn round_to_zero_is_odd(x in -1e6f64..1e6, half in any::<bool>()) {
            let x = if half { libm::trunc(x) + 0.5 } else { x };
            prop_assert_eq!(round_to_zero(-x), -round_to_zero(x));
        }

        #[test]
        fn q_k_idempotent(w in proptest::collection::vec(0.0f64..=1.0, 1..64), k in 1u32..=8) {
            let t = Tensor::row(w).unwrap();
            let once = q_k(&t, bw(k)).unwrap();
            prop_assert_eq!(q_k(&once, bw(k)).unwrap(), once);
        }

        #[test]
        fn quant_k_levels_and_range(w in proptest::collection::vec(-5.0f64..5.0, 1..128), k in 1u32..=8) {
            let t = Tensor::row(w).unwrap();
            let out = quant_k(&t, bw(k));
            let mut distinct: Vec<f64> = out.data().to_vec();
            distinct.sort_by(f64::total_cmp);
            distinct.dedup();
            prop_assert!(distinct.len() <= bw(k).levels());
            prop_assert!(out.max_abs() <= t.max_abs());
        }

        #[test]
        fn quant_k_negation_preserves_magnitudes(w in proptest::collection::vec(-5.0f64..5.0, 1..128), k in 1u32..=8) {
            let t = Tensor::row(w).unwrap();
            let neg = t.map(|v| -v);
            let mut a: Vec<f64> = quant_k(&t, bw(k)).data().iter().map(|v| v.abs()).collect();
            let mut b: Vec<f64> = quant_k(&neg, bw(k)).data().iter().map(|v| v.abs()).collect();
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            prop_assert_eq!(a, b);
        }
    }
}
