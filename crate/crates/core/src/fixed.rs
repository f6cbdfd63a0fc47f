//! Integer-only evaluation of quantized layers.
//!
//! A hidden layer computes `Q_A(act(alpha * acc + b))` where `acc` is the
//! integer dot product of weight and activation codes. Since `act` is
//! monotone, the output code is the number of decision levels `h_j` that
//! `act(alpha * acc + b)` exceeds, and each comparison can be moved onto the
//! accumulator side once:
//!
//! ```text
//! act(alpha * acc + b) > h_j  <=>  2^K acc > floor(2^K (act^-1(h_j) - b) / alpha)
//! ```
//!
//! for increasing `act` and `alpha > 0` (the other cases flip the comparison
//! and use `ceil`). The decision levels are the midpoints
//! `h_j = (2j - 1) / (2 (2^A - 1))` of the activation grid, and a value equal
//! to `h_j` rounds down, which reproduces round-half-toward-zero exactly.
//!
//! Weight codes `c` on the symmetric grid dequantize to `(s / Mw)(2c - Mw)`
//! and activation codes `x` to `x / Mx`, so with
//! `acc = 2 sum(c x) - Mw sum(x)` the real pre-activation is
//! `alpha * acc + b` with `alpha = s / (Mw Mx)`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{contract, precondition, Error, Result};
use crate::graph::sigmoid;
use crate::quant::{q_k_code, Bitwidth, Convention, QuantizedTensor};

/// Layer activation function.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Activation {
    Sigmoid,
    /// `min(max(x, 0), 1)`.
    ClippedIdentity,
    /// No activation; only valid on the output layer.
    Linear,
}

/// Monotonicity of an activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Monotonicity {
    Increasing,
    Decreasing,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Self::Sigmoid => sigmoid(x),
            Self::ClippedIdentity => x.clamp(0.0, 1.0),
            Self::Linear => x,
        }
    }

    /// Inverse on the open interval `(0, 1)`.
    pub fn inverse(self, h: f64) -> f64 {
        match self {
            Self::Sigmoid => libm::log(h / (1.0 - h)),
            Self::ClippedIdentity | Self::Linear => h,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Sigmoid => "sigmoid",
            Self::ClippedIdentity => "clipped-identity",
            Self::Linear => "linear",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Self::Sigmoid, Self::ClippedIdentity, Self::Linear]
            .into_iter()
            .find(|a| a.name() == s)
    }
}

/// Comparison used against a [`ThresholdTable`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Direction {
    /// Thresholds non-decreasing; level `j` is passed when `2^K acc > t_j`.
    Ascending,
    /// Thresholds non-increasing; level `j` is passed when `2^K acc < t_j`.
    Descending,
}

/// Decision level `h_j`, `j = 1..2^A - 1`.
pub fn decision_level(j: u32, bits: Bitwidth) -> f64 {
    (2 * j - 1) as f64 / (2 * bits.max_code()) as f64
}

/// Integer thresholds of one output unit.
///
/// Duplicate thresholds are kept (two adjacent levels can floor to the same
/// integer), so the list is sorted but not necessarily strictly.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ThresholdTable {
    pub exponent: u32,
    pub thresholds: Vec<i64>,
    pub alpha: f64,
    pub bias: f64,
    pub direction: Direction,
    pub act_bits: Bitwidth,
}

fn to_threshold(r: f64, round_up: bool) -> Result<i64> {
    if r.is_nan() {
        return Err(contract("activation inverse produced NaN"));
    }
    let r = if round_up { libm::ceil(r) } else { libm::floor(r) };
    // 2^63 is the first value that does not fit.
    Ok(if r >= 9.223_372_036_854_776e18 {
        i64::MAX
    } else if r < -9.223_372_036_854_776e18 {
        i64::MIN
    } else {
        r as i64
    })
}

/// Accumulator estimates beyond this magnitude are not refined.
const REFINE_LIMIT: f64 = 4.0e15;

/// Turns the real crossing point `r` (in accumulator units) into a scaled
/// threshold. Rounding in `(h - b) / alpha` can move `r` across an integer
/// when `alpha * acc + b` lands exactly on a decision level, so the integer
/// boundary is confirmed with `passes` on its neighbours.
fn refined_threshold(r: f64, exponent: u32, ascending: bool, passes: impl Fn(i64) -> bool) -> Result<i64> {
    let scaled = r * libm::ldexp(1.0, exponent as i32);
    if r.is_nan() || r.abs() > REFINE_LIMIT {
        return to_threshold(scaled, !ascending);
    }
    let step = 1i128 << exponent;
    let t = if ascending {
        // Largest failing accumulator.
        let mut a = libm::floor(r) as i64;
        for _ in 0..4 {
            if passes(a) {
                a -= 1;
            } else if !passes(a + 1) {
                a += 1;
            } else {
                break;
            }
        }
        (libm::floor(scaled) as i128).clamp(a as i128 * step, a as i128 * step + step - 1)
    } else {
        // Smallest failing accumulator.
        let mut a = libm::ceil(r) as i64;
        for _ in 0..4 {
            if passes(a) {
                a += 1;
            } else if !passes(a - 1) {
                a -= 1;
            } else {
                break;
            }
        }
        (libm::ceil(scaled) as i128).clamp((a as i128 - 1) * step + 1, a as i128 * step)
    };
    Ok(t.clamp(i64::MIN as i128, i64::MAX as i128) as i64)
}

/// Builds the thresholds that turn `Q_A(act(alpha * acc + b))` into integer
/// comparisons on `acc`.
///
/// `act_inverse` must be strictly monotone in the declared direction over the
/// decision levels, otherwise a contract error is returned. When
/// `alpha == 0` the output is the constant code of `act(b)` and every
/// threshold saturates.
pub fn precompute_thresholds(
    alpha: f64,
    bias: f64,
    act: impl Fn(f64) -> f64,
    act_inverse: impl Fn(f64) -> f64,
    monotonicity: Monotonicity,
    act_bits: Bitwidth,
    exponent: u32,
) -> Result<ThresholdTable> {
    if !alpha.is_finite() || !bias.is_finite() {
        return Err(precondition("alpha and bias must be finite"));
    }
    if exponent > 62 {
        return Err(precondition(format!("exponent {exponent} exceeds 62")));
    }
    let n = act_bits.max_code();
    let inv: Vec<f64> = (1..=n).map(|j| act_inverse(decision_level(j, act_bits))).collect();
    if inv.iter().any(|v| v.is_nan()) {
        return Err(contract("activation inverse produced NaN"));
    }
    let monotone = inv.windows(2).all(|p| match monotonicity {
        Monotonicity::Increasing => p[0] < p[1],
        Monotonicity::Decreasing => p[0] > p[1],
    });
    if !monotone {
        return Err(contract("activation inverse is not strictly monotone"));
    }
    let ascending = (monotonicity == Monotonicity::Increasing) == (alpha >= 0.0);
    let direction = if ascending { Direction::Ascending } else { Direction::Descending };
    let thresholds = (1..=n)
        .zip(&inv)
        .map(|(j, &t)| {
            if alpha == 0.0 {
                let passed = act(bias) > decision_level(j, act_bits);
                return Ok(if passed { i64::MIN } else { i64::MAX });
            }
            let passes = |acc: i64| {
                let y = act(alpha * acc as f64 + bias).clamp(0.0, 1.0);
                q_k_code(y, act_bits).is_ok_and(|c| c as u32 >= j)
            };
            refined_threshold((t - bias) / alpha, exponent, ascending, passes)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ThresholdTable {
        exponent,
        thresholds,
        alpha,
        bias,
        direction,
        act_bits,
    })
}

/// Thresholds for one of the built-in activations.
pub fn thresholds_for(act: Activation, alpha: f64, bias: f64, act_bits: Bitwidth, exponent: u32) -> Result<ThresholdTable> {
    if act == Activation::Linear {
        return Err(precondition("linear activation has no bounded output grid"));
    }
    precompute_thresholds(
        alpha,
        bias,
        |x| act.apply(x),
        |h| act.inverse(h),
        Monotonicity::Increasing,
        act_bits,
        exponent,
    )
}

impl ThresholdTable {
    /// Output code for an integer accumulator.
    pub fn code(&self, acc: i64) -> u8 {
        let x = (acc as i128) << self.exponent;
        let passed = match self.direction {
            Direction::Ascending => self.thresholds.iter().filter(|&&t| x > t as i128).count(),
            Direction::Descending => self.thresholds.iter().filter(|&&t| x < t as i128).count(),
        };
        passed as u8
    }
}

/// `alpha` of a layer with the given weight and activation quantization.
pub fn layer_alpha(weight_scale: f64, w_bits: Bitwidth, x_bits: Bitwidth) -> f64 {
    weight_scale / (w_bits.max_code() as f64 * x_bits.max_code() as f64)
}

fn check_operands(w: &QuantizedTensor, x: &QuantizedTensor) -> Result<(usize, usize, usize)> {
    if w.convention() != Convention::Symmetric || x.convention() != Convention::UnitInterval {
        return Err(contract("weights must be symmetric codes and inputs unit-interval codes"));
    }
    let (&[rows, inner], &[w_in, out]) = (x.shape(), w.shape()) else {
        return Err(precondition("fixed-point layers take matrices"));
    };
    if inner != w_in {
        return Err(Error::Shape {
            op: "eval_layer_fixed",
            lhs: x.shape().to_vec(),
            rhs: w.shape().to_vec(),
        });
    }
    Ok((rows, inner, out))
}

/// Integer accumulators `2 sum(c x) - Mw sum(x)`, row-major `rows x out`.
pub fn accumulators(w: &QuantizedTensor, x: &QuantizedTensor) -> Result<Vec<i64>> {
    let (rows, inner, out) = check_operands(w, x)?;
    let mw = w.bits().max_code() as i64;
    let (wc, xc) = (w.codes(), x.codes());
    let mut acc = vec![0i64; rows * out];
    for r in 0..rows {
        let xrow = &xc[r * inner..(r + 1) * inner];
        let xsum: i64 = xrow.iter().map(|&v| v as i64).sum();
        let dst = &mut acc[r * out..(r + 1) * out];
        for (p, &xv) in xrow.iter().enumerate() {
            if xv == 0 {
                continue;
            }
            for (d, &c) in dst.iter_mut().zip(&wc[p * out..(p + 1) * out]) {
                *d += 2 * c as i64 * xv as i64;
            }
        }
        for d in dst.iter_mut() {
            *d -= mw * xsum;
        }
    }
    Ok(acc)
}

fn check_tables(w: &QuantizedTensor, x: &QuantizedTensor, tables: &[ThresholdTable], out: usize, exponent: u32) -> Result<Bitwidth> {
    if tables.len() != out {
        return Err(contract(format!("{} threshold tables for {out} outputs", tables.len())));
    }
    let alpha = layer_alpha(w.scale(), w.bits(), x.bits());
    let act_bits = tables[0].act_bits;
    for (j, t) in tables.iter().enumerate() {
        if t.exponent != exponent {
            return Err(contract(format!("table {j} built for K = {}, layer uses {exponent}", t.exponent)));
        }
        if t.act_bits != act_bits || t.thresholds.len() != act_bits.max_code() as usize {
            return Err(contract(format!("table {j} has mismatched activation bitwidth")));
        }
        if t.alpha != alpha {
            return Err(contract(format!("table {j} built for alpha {}, layer has {alpha}", t.alpha)));
        }
    }
    Ok(act_bits)
}

/// Evaluates `Q_A(act(dequant(x) dequant(w) + b))` with integer operations
/// only. `x` is `rows x in` (unit-interval codes), `w` is `in x out`
/// (symmetric codes), and `tables[j]` belongs to output unit `j`.
pub fn eval_layer_fixed(w: &QuantizedTensor, x: &QuantizedTensor, tables: &[ThresholdTable], exponent: u32) -> Result<QuantizedTensor> {
    let (rows, _, out) = check_operands(w, x)?;
    let act_bits = check_tables(w, x, tables, out, exponent)?;
    let acc = accumulators(w, x)?;
    let codes = acc.iter().enumerate().map(|(i, &a)| tables[i % out].code(a)).collect();
    QuantizedTensor::new(vec![rows, out], codes, act_bits, 1.0, Convention::UnitInterval)
}

/// Floating-point reference for [`eval_layer_fixed`].
pub fn eval_layer_reference(
    w: &QuantizedTensor,
    x: &QuantizedTensor,
    bias: &[f64],
    act: Activation,
    act_bits: Bitwidth,
) -> Result<QuantizedTensor> {
    let (rows, _, out) = check_operands(w, x)?;
    if bias.len() != out {
        return Err(precondition(format!("{} biases for {out} outputs", bias.len())));
    }
    let z = x.dequantize().matmul(&w.dequantize())?;
    let codes = z
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| q_k_code(act.apply(v + bias[i % out]).clamp(0.0, 1.0), act_bits))
        .collect::<Result<Vec<_>>>()?;
    QuantizedTensor::new(vec![rows, out], codes, act_bits, 1.0, Convention::UnitInterval)
}

/// Pairwise integer thresholds deciding the argmax of `alpha * acc + b`.
///
/// Output `o` beats `p` when `2^K (acc_o - acc_p) > margin[o][p]` with
/// `margin[o][p] = floor(2^K (b_p - b_o) / alpha)`; ties keep the lower index.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ArgmaxTable {
    pub exponent: u32,
    pub alpha: f64,
    pub outputs: usize,
    /// Row-major `outputs x outputs`.
    pub margins: Vec<i64>,
}

impl ArgmaxTable {
    pub fn new(alpha: f64, bias: &[f64], exponent: u32) -> Result<Self> {
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(precondition("argmax table needs alpha >= 0"));
        }
        let n = bias.len();
        let scale = libm::ldexp(1.0, exponent as i32);
        let mut margins = vec![0i64; n * n];
        for o in 0..n {
            for p in 0..n {
                margins[o * n + p] = if alpha == 0.0 {
                    if bias[o] > bias[p] {
                        i64::MIN
                    } else {
                        i64::MAX
                    }
                } else {
                    to_threshold(scale * (bias[p] - bias[o]) / alpha, false)?
                };
            }
        }
        Ok(Self {
            exponent,
            alpha,
            outputs: n,
            margins,
        })
    }

    /// Index of the largest logit for one row of accumulators.
    pub fn argmax(&self, acc: &[i64]) -> usize {
        let n = self.outputs;
        let mut best = 0;
        for o in 1..n {
            let diff = (acc[o] as i128 - acc[best] as i128) << self.exponent;
            if diff > self.margins[o * n + best] as i128 {
                best = o;
            }
        }
        best
    }
}

/// Index of the first maximum, the float counterpart of [`ArgmaxTable::argmax`].
pub fn argmax_f64(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bw(k: u32) -> Bitwidth {
        Bitwidth::new(k).unwrap()
    }

    #[test]
    fn identity_one_bit_threshold() {
        let t = precompute_thresholds(1.0, 0.0, |x| x, |h| h, Monotonicity::Increasing, bw(1), 0).unwrap();
        assert_eq!(t.thresholds, vec![0]);
        for acc in -3..=3 {
            let float_code = q_k_code((acc as f64).clamp(0.0, 1.0), bw(1)).unwrap();
            assert_eq!(t.code(acc), float_code, "acc {acc}");
        }
        assert_eq!(t.code(0), 0);
        assert_eq!(t.code(1), 1);
    }

    #[test]
    fn sigmoid_two_bit_levels() {
        let levels: Vec<f64> = (1..=3).map(|j| decision_level(j, bw(2))).collect();
        assert_eq!(levels, vec![1.0 / 6.0, 0.5, 5.0 / 6.0]);
        let t = thresholds_for(Activation::Sigmoid, 0.1, 0.0, bw(2), 0).unwrap();
        let expected: Vec<i64> = levels.iter().map(|&h| libm::floor(libm::log(h / (1.0 - h)) / 0.1) as i64).collect();
        assert_eq!(t.thresholds, expected);
        for acc in -40..=40 {
            let y = sigmoid(0.1 * acc as f64);
            assert_eq!(t.code(acc), q_k_code(y, bw(2)).unwrap(), "acc {acc}");
        }
    }

    #[test]
    fn bias_shift_moves_thresholds_only() {
        let base = thresholds_for(Activation::ClippedIdentity, 0.25, 0.0, bw(3), 0).unwrap();
        let shifted = thresholds_for(Activation::ClippedIdentity, 0.25, 0.5, bw(3), 0).unwrap();
        assert_eq!(base.direction, shifted.direction);
        for (a, b) in base.thresholds.iter().zip(&shifted.thresholds) {
            assert!((a - b - 2).abs() <= 1);
        }
    }

    #[test]
    fn descending_activation_flips_comparison() {
        let t = precompute_thresholds(
            1.0,
            0.0,
            |x| sigmoid(-x),
            |h| -libm::log(h / (1.0 - h)),
            Monotonicity::Decreasing,
            bw(2),
            0,
        )
        .unwrap();
        assert_eq!(t.direction, Direction::Descending);
        for acc in -6..=6 {
            let y = sigmoid(-(acc as f64) + 0.0);
            assert_eq!(t.code(acc), q_k_code(y, bw(2)).unwrap(), "acc {acc}");
        }
        let neg_alpha = thresholds_for(Activation::Sigmoid, -0.3, 0.2, bw(2), 0).unwrap();
        assert_eq!(neg_alpha.direction, Direction::Descending);
        for acc in -30..=30 {
            let y = sigmoid(-0.3 * acc as f64 + 0.2);
            assert_eq!(neg_alpha.code(acc), q_k_code(y, bw(2)).unwrap());
        }
    }

    #[test]
    fn non_monotone_inverse_is_a_contract_error() {
        let r = precompute_thresholds(1.0, 0.0, |x| x, |h| (h - 0.5).abs(), Monotonicity::Increasing, bw(2), 0);
        assert!(matches!(r, Err(Error::Contract(_))));
        let r = precompute_thresholds(1.0, 0.0, |x| x, |_| f64::NAN, Monotonicity::Increasing, bw(1), 0);
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    #[test]
    fn out_of_range_levels_saturate() {
        // An activation whose range is [0.4, 0.6]: levels outside never fire.
        let t = precompute_thresholds(
            1.0,
            0.0,
            |x| 0.5 + 0.1 * libm::tanh(x),
            |h| {
                let u = (h - 0.5) / 0.1;
                if u <= -1.0 {
                    f64::NEG_INFINITY
                } else if u >= 1.0 {
                    f64::INFINITY
                } else {
                    libm::atanh(u)
                }
            },
            Monotonicity::Increasing,
            bw(2),
            0,
        )
        .unwrap();
        assert_eq!(t.thresholds[0], i64::MIN);
        assert_eq!(t.thresholds[2], i64::MAX);
        assert_eq!(t.code(1_000_000), 2);
        assert_eq!(t.code(-1_000_000), 1);
    }

    #[test]
    fn exponent_scales_comparisons() {
        let t0 = thresholds_for(Activation::Sigmoid, 0.05, 0.13, bw(3), 0).unwrap();
        let t4 = thresholds_for(Activation::Sigmoid, 0.05, 0.13, bw(3), 4).unwrap();
        for acc in -100..=100 {
            assert_eq!(t0.code(acc), t4.code(acc));
        }
    }

    fn sym(shape: Vec<usize>, codes: Vec<u8>, bits: u32, scale: f64) -> QuantizedTensor {
        QuantizedTensor::new(shape, codes, bw(bits), scale, Convention::Symmetric).unwrap()
    }

    fn unit(shape: Vec<usize>, codes: Vec<u8>, bits: u32) -> QuantizedTensor {
        QuantizedTensor::new(shape, codes, bw(bits), 1.0, Convention::UnitInterval).unwrap()
    }

    #[test]
    fn zero_weights_give_constant_code() {
        let w = sym(vec![3, 2], vec![0; 6], 2, 0.0);
        let x = unit(vec![2, 3], vec![1, 2, 3, 0, 0, 3], 2);
        let bias = [0.3, -2.0];
        let tables: Vec<_> = bias
            .iter()
            .map(|&b| thresholds_for(Activation::Sigmoid, 0.0, b, bw(2), 0).unwrap())
            .collect();
        let out = eval_layer_fixed(&w, &x, &tables, 0).unwrap();
        let c0 = q_k_code(sigmoid(0.3), bw(2)).unwrap();
        let c1 = q_k_code(sigmoid(-2.0), bw(2)).unwrap();
        assert_eq!(out.codes(), &[c0, c1, c0, c1]);
    }

    #[test]
    fn accumulators_match_dequantized_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = sym(vec![6, 4], (0..24).map(|_| rng.random_range(0..8)).collect(), 3, 0.7);
        let x = unit(vec![5, 6], (0..30).map(|_| rng.random_range(0..4)).collect(), 2);
        let acc = accumulators(&w, &x).unwrap();
        let z = x.dequantize().matmul(&w.dequantize()).unwrap();
        let alpha = layer_alpha(0.7, bw(3), bw(2));
        for (a, v) in acc.iter().zip(z.data()) {
            assert!((alpha * *a as f64 - v).abs() < 1e-12);
        }
    }

    #[test]
    fn mismatched_tables_are_rejected() {
        let w = sym(vec![2, 1], vec![1, 0], 1, 1.0);
        let x = unit(vec![1, 2], vec![1, 1], 2);
        let alpha = layer_alpha(1.0, bw(1), bw(2));
        let good = thresholds_for(Activation::Sigmoid, alpha, 0.0, bw(2), 0).unwrap();
        assert!(eval_layer_fixed(&w, &x, core::slice::from_ref(&good), 0).is_ok());
        assert!(matches!(
            eval_layer_fixed(&w, &x, core::slice::from_ref(&good), 3),
            Err(Error::Contract(_))
        ));
        let wrong_alpha = thresholds_for(Activation::Sigmoid, 2.0 * alpha, 0.0, bw(2), 0).unwrap();
        assert!(matches!(eval_layer_fixed(&w, &x, &[wrong_alpha], 0), Err(Error::Contract(_))));
        assert!(matches!(
            eval_layer_fixed(&w, &x, &[good.clone(), good], 0),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn random_layers_match_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let (inn, out, rows) = (rng.random_range(1..10), rng.random_range(1..6), rng.random_range(1..5));
            let scale = rng.random_range(0.01..3.0);
            let w = sym(vec![inn, out], (0..inn * out).map(|_| rng.random_range(0..16)).collect(), 4, scale);
            let x = unit(vec![rows, inn], (0..rows * inn).map(|_| rng.random_range(0..16)).collect(), 4);
            let bias: Vec<f64> = (0..out).map(|_| rng.random_range(-2.0..2.0)).collect();
            let act = if rng.random_bool(0.5) {
                Activation::Sigmoid
            } else {
                Activation::ClippedIdentity
            };
            let alpha = layer_alpha(scale, bw(4), bw(4));
            let tables: Vec<_> = bias.iter().map(|&b| thresholds_for(act, alpha, b, bw(4), 0).unwrap()).collect();
            let fixed = eval_layer_fixed(&w, &x, &tables, 0).unwrap();
            let reference = eval_layer_reference(&w, &x, &bias, act, bw(4)).unwrap();
            assert_eq!(fixed.codes(), reference.codes());
        }
    }

    #[test]
    fn exact_level_hits_round_down() {
        // 0.25 - 1/12 is the level 1/6, but (1/6 - 0.25) / (1/12) floors to -2.
        let w = sym(vec![1, 1], vec![0], 1, 0.25);
        let x = unit(vec![1, 1], vec![1], 2);
        let alpha = layer_alpha(0.25, bw(1), bw(2));
        for k in [0, 5] {
            let t = thresholds_for(Activation::ClippedIdentity, alpha, 0.25, bw(2), k).unwrap();
            let fixed = eval_layer_fixed(&w, &x, &[t], k).unwrap();
            let reference = eval_layer_reference(&w, &x, &[0.25], Activation::ClippedIdentity, bw(2)).unwrap();
            assert_eq!(fixed.codes(), &[0]);
            assert_eq!(reference.codes(), &[0]);
        }
    }

    #[test]
    fn monotone_in_accumulator() {
        let t = thresholds_for(Activation::Sigmoid, 0.02, -0.4, bw(4), 0).unwrap();
        let mut prev = 0;
        for acc in -500..500 {
            let c = t.code(acc);
            assert!(c >= prev);
            prev = c;
        }
    }

    #[test]
    fn argmax_table_matches_float_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..500 {
            let n = rng.random_range(2..6);
            let alpha = rng.random_range(0.001..1.0);
            let bias: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let table = ArgmaxTable::new(alpha, &bias, 0).unwrap();
            let acc: Vec<i64> = (0..n).map(|_| rng.random_range(-100..100)).collect();
            let logits: Vec<f64> = acc.iter().zip(&bias).map(|(&a, &b)| alpha * a as f64 + b).collect();
            assert_eq!(table.argmax(&acc), argmax_f64(&logits));
        }
        let table = ArgmaxTable::new(0.0, &[0.1, 0.5, 0.5], 0).unwrap();
        assert_eq!(table.argmax(&[100, -4, 7]), 1);
    }
}
