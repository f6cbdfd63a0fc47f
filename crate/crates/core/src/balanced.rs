//! Balanced quantization: histogram equalization followed by uniform
//! rounding, so that every code receives (close to) the same number of
//! weights.
//!
//! Two equalizers are provided:
//!
//! * exact percentile equalization ([`percentile_thresholds`] +
//!   [`equalize_exact`]): a monotone piecewise-linear map that sends the
//!   interval between consecutive `100 i / N`-th percentiles onto
//!   `[i/N, (i+1)/N]`;
//! * recursive partitioning ([`recursive_equalize`]): split the working set
//!   at its mean (or median), recurse `k` times, and min-max normalise each
//!   leaf. The mean variant needs no sorting.
//!
//! [`balanced_quantize`] then assigns each equalized value to one of the
//! `N = 2^k` segments and maps the code back onto `[-max|w|, max|w|]`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{precondition, Error, Result};
use crate::quant::{Bitwidth, Convention, QuantizedTensor};
use crate::tensor::Tensor;

/// Upper bound on equalization slopes; zero-width intervals would otherwise
/// have infinite slope.
pub const MAX_SLOPE: f64 = 1e6;

/// Which equalizer feeds the quantizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum EqualizeMode {
    ExactPercentile,
    RecursiveMean,
    RecursiveMedian,
}

/// Split threshold used by recursive partitioning.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitRule {
    Mean,
    Median,
}

/// Thresholds `t_0 < ... < t_N` and the affine pieces `a_i x + b_i` of a
/// piecewise-linear equalization map.
///
/// Interval `i` is `[t_i, t_{i+1})`, the last one closed. When interpolated
/// thresholds collide (heavy ties) the spec is flagged `collapsed` and
/// [`equalize_exact`] falls back to rank-based equalization.
#[derive(Debug, Clone, PartialEq)]
pub struct EqualizerSpec {
    thresholds: Vec<f64>,
    slopes: Vec<f64>,
    intercepts: Vec<f64>,
    collapsed: bool,
}

impl EqualizerSpec {
    /// Builds the affine pieces from non-decreasing thresholds.
    pub fn from_thresholds(thresholds: Vec<f64>) -> Result<Self> {
        if thresholds.len() < 2 {
            return Err(precondition("need at least two thresholds"));
        }
        if thresholds.iter().any(|t| !t.is_finite()) {
            return Err(precondition("thresholds must be finite"));
        }
        if thresholds.windows(2).any(|w| w[1] < w[0]) {
            return Err(precondition("thresholds must be non-decreasing"));
        }
        let n = thresholds.len() - 1;
        if thresholds[0] == thresholds[n] {
            return Err(Error::Degenerate("all thresholds coincide (constant input)".into()));
        }
        let nf = n as f64;
        let mut slopes = Vec::with_capacity(n);
        let mut intercepts = Vec::with_capacity(n);
        let mut collapsed = false;
        for i in 0..n {
            let width = thresholds[i + 1] - thresholds[i];
            let a = if width > 0.0 {
                (1.0 / (nf * width)).min(MAX_SLOPE)
            } else {
                collapsed = true;
                MAX_SLOPE
            };
            slopes.push(a);
            intercepts.push(i as f64 / nf - a * thresholds[i]);
        }
        Ok(Self {
            thresholds,
            slopes,
            intercepts,
            collapsed,
        })
    }

    /// Number of intervals `N`.
    pub fn intervals(&self) -> usize {
        self.slopes.len()
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    pub fn intercepts(&self) -> &[f64] {
        &self.intercepts
    }

    /// True when two thresholds coincide.
    pub fn is_collapsed(&self) -> bool {
        self.collapsed
    }

    /// Interval containing `x`, or `None` outside `[t_0, t_N]`.
    pub fn interval_of(&self, x: f64) -> Option<usize> {
        let n = self.intervals();
        if x < self.thresholds[0] || x > self.thresholds[n] {
            return None;
        }
        // Last i in 0..n with t_i <= x; skips empty collapsed intervals.
        let i = self.thresholds[..n].partition_point(|&t| t <= x);
        Some(i.saturating_sub(1))
    }

    /// The piecewise-linear map, clamping inputs outside `[t_0, t_N]`.
    pub fn map(&self, x: f64) -> f64 {
        let n = self.intervals();
        let x = x.clamp(self.thresholds[0], self.thresholds[n]);
        let i = self.interval_of(x).unwrap_or(0);
        let lo = i as f64 / n as f64;
        // Half-open segments: only the last one reaches its upper end.
        let hi = if i + 1 == n { 1.0 } else { ((i + 1) as f64 / n as f64).next_down() };
        // Anchored at t_i so that x == t_i lands exactly on i/N.
        (lo + self.slopes[i] * (x - self.thresholds[i])).clamp(lo, hi)
    }
}

fn sorted_values(w: &Tensor) -> Vec<f64> {
    let mut v = w.data().to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Linear-interpolation percentile on a sorted slice: position
/// `q * (n - 1)` with `q` in `[0, 1]`.
fn interpolated_percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Thresholds at the `100 i / 2^k`-th percentiles of `w`.
pub fn percentile_thresholds(w: &Tensor, k: Bitwidth) -> Result<EqualizerSpec> {
    let n_int = k.levels();
    if w.len() < n_int {
        return Err(precondition(format!("{} values cannot fill {n_int} intervals", w.len())));
    }
    let sorted = sorted_values(w);
    let mut t: Vec<f64> = (0..=n_int)
        .map(|i| interpolated_percentile(&sorted, i as f64 / n_int as f64))
        .collect();
    t[0] = sorted[0];
    t[n_int] = sorted[sorted.len() - 1];
    EqualizerSpec::from_thresholds(t)
}

/// Rank-based equalization: the `r`-th smallest value (ties broken by flat
/// index) maps to `(r + 1/2) / n`.
fn equalize_by_rank(w: &Tensor) -> Tensor {
    let n = w.len();
    let mut order: Vec<usize> = (0..n).collect();
    let data = w.data();
    order.sort_by(|&a, &b| data[a].total_cmp(&data[b]).then(a.cmp(&b)));
    let mut out = vec![0.0; n];
    for (rank, &idx) in order.iter().enumerate() {
        out[idx] = (rank as f64 + 0.5) / n as f64;
    }
    Tensor::from_parts(w.shape().to_vec(), out)
}

/// Applies the equalization map; output lies in `[0, 1]`.
pub fn equalize_exact(w: &Tensor, spec: &EqualizerSpec) -> Tensor {
    if spec.is_collapsed() {
        return equalize_by_rank(w);
    }
    w.map(|x| spec.map(x))
}

/// Gradient of [`equalize_exact`]: `grad_in = a_i * grad_out` with `i` the
/// interval of each input. Inputs outside `[t_0, t_N]` are clamped in the
/// forward pass and receive zero gradient.
pub fn equalize_backward(grad_out: &Tensor, spec: &EqualizerSpec, w: &Tensor) -> Result<Tensor> {
    grad_out.same_shape(w, "equalize_backward")?;
    Ok(w.zip_with(grad_out, "equalize_backward", |x, g| match spec.interval_of(x) {
        Some(i) => spec.slopes[i] * g,
        None => 0.0,
    })
    .expect("shapes checked"))
}

/// Working-set mask of recursive partitioning.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionMask {
    bits: Vec<bool>,
    level: u32,
}

impl PartitionMask {
    /// The all-ones mask at the top of the recursion.
    pub fn full(len: usize, level: u32) -> Self {
        Self {
            bits: vec![true; len],
            level,
        }
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    fn values<'a>(&'a self, w: &'a [f64]) -> impl Iterator<Item = f64> + 'a {
        w.iter().zip(&self.bits).filter(|(_, &m)| m).map(|(&v, _)| v)
    }

    /// Splits the working set: entries strictly below `threshold` go left,
    /// the rest right.
    pub fn split(&self, w: &[f64], threshold: f64) -> (Self, Self) {
        let level = self.level.saturating_sub(1);
        let mut less = vec![false; self.bits.len()];
        let mut greater = vec![false; self.bits.len()];
        for (i, (&v, &m)) in w.iter().zip(&self.bits).enumerate() {
            if m {
                if v < threshold {
                    less[i] = true;
                } else {
                    greater[i] = true;
                }
            }
        }
        (Self { bits: less, level }, Self { bits: greater, level })
    }
}

/// Statistics of one split of recursive partitioning.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitRecord {
    /// Depth of the splitting node (root is 0).
    pub depth: u32,
    /// Branch bits from the root, most significant first.
    pub path: u32,
    pub threshold: f64,
    pub mean: f64,
    pub median: f64,
    /// Population standard deviation of the working set.
    pub std_dev: f64,
    pub left: usize,
    pub right: usize,
}

impl SplitRecord {
    /// `max(l/g, g/l)`, infinite when one side is empty.
    pub fn imbalance(&self) -> f64 {
        if self.left == 0 || self.right == 0 {
            f64::INFINITY
        } else {
            let (l, r) = (self.left as f64, self.right as f64);
            (l / r).max(r / l)
        }
    }
}

/// Everything recorded during one traced run of recursive partitioning.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PartitionTrace {
    /// One record per split of a non-empty working set.
    pub splits: Vec<SplitRecord>,
    /// Leaf (branch path) reached by each input entry.
    pub leaf_of: Vec<u32>,
    /// Entry count of every leaf, indexed by branch path.
    pub leaf_sizes: Vec<usize>,
}

fn mean_of(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn median_of(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

struct Recursion<'a> {
    w: &'a [f64],
    rule: SplitRule,
    depth_total: u32,
    trace: Option<&'a mut PartitionTrace>,
}

impl Recursion<'_> {
    /// One call of the recursive equalizer. Returns a dense vector that is
    /// zero outside the mask.
    fn equalize(&mut self, mask: &PartitionMask, path: u32) -> Vec<f64> {
        let n = self.w.len();
        let mut set: Vec<f64> = mask.values(self.w).collect();
        if mask.level == 0 {
            if let Some(trace) = self.trace.as_deref_mut() {
                trace.leaf_sizes[path as usize] = set.len();
                for (i, &m) in mask.bits.iter().enumerate() {
                    if m {
                        trace.leaf_of[i] = path;
                    }
                }
            }
            let mut out = vec![0.0; n];
            if set.is_empty() {
                return out;
            }
            let lo = set.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = set.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for (i, (&v, &m)) in self.w.iter().zip(&mask.bits).enumerate() {
                if m {
                    // A constant leaf has no affine normalisation; use the midpoint.
                    out[i] = if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
                }
            }
            return out;
        }
        if set.is_empty() {
            let (l, g) = mask.split(self.w, 0.0);
            self.equalize(&l, path << 1);
            self.equalize(&g, (path << 1) | 1);
            return vec![0.0; n];
        }
        let mean = mean_of(&set);
        let threshold = match self.rule {
            SplitRule::Mean => mean,
            SplitRule::Median => median_of(&mut set),
        };
        let (less, greater) = mask.split(self.w, threshold);
        if let Some(trace) = self.trace.as_deref_mut() {
            let median = if self.rule == SplitRule::Median {
                threshold
            } else {
                median_of(&mut set)
            };
            let var = set.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / set.len() as f64;
            trace.splits.push(SplitRecord {
                depth: self.depth_total - mask.level,
                path,
                threshold,
                mean,
                median,
                std_dev: libm::sqrt(var),
                left: less.count(),
                right: greater.count(),
            });
        }
        let wl = self.equalize(&less, path << 1);
        let wg = self.equalize(&greater, (path << 1) | 1);
        wl.iter()
            .zip(&wg)
            .zip(&greater.bits)
            .map(|((&l, &g), &mg)| 0.5 * l + if mg { 0.5 * g + 0.5 } else { 0.0 })
            .collect()
    }
}

fn check_size(w: &Tensor, k: Bitwidth) -> Result<()> {
    if w.len() < k.levels() {
        return Err(precondition(format!("{} values cannot fill {} codes", w.len(), k.levels())));
    }
    Ok(())
}

/// Histogram equalization by recursive partitioning; output in `[0, 1]`.
pub fn recursive_equalize(w: &Tensor, k: Bitwidth, rule: SplitRule) -> Result<Tensor> {
    check_size(w, k)?;
    let mut rec = Recursion {
        w: w.data(),
        rule,
        depth_total: k.get(),
        trace: None,
    };
    let out = rec.equalize(&PartitionMask::full(w.len(), k.get()), 0);
    Ok(Tensor::from_parts(w.shape().to_vec(), out))
}

/// [`recursive_equalize`] that also records every split and leaf.
pub fn recursive_equalize_traced(w: &Tensor, k: Bitwidth, rule: SplitRule) -> Result<(Tensor, PartitionTrace)> {
    check_size(w, k)?;
    let mut trace = PartitionTrace {
        splits: Vec::new(),
        leaf_of: vec![0; w.len()],
        leaf_sizes: vec![0; k.levels()],
    };
    let mut rec = Recursion {
        w: w.data(),
        rule,
        depth_total: k.get(),
        trace: Some(&mut trace),
    };
    let out = rec.equalize(&PartitionMask::full(w.len(), k.get()), 0);
    Ok((Tensor::from_parts(w.shape().to_vec(), out), trace))
}

/// Code of an equalized value: segment `[i/N, (i+1)/N)`, the last segment
/// closed. Used for the exact-percentile map, which never puts a value on
/// the upper boundary of its own segment.
///
/// Off segment boundaries this equals `round_to_zero(N x - 1/2)`.
pub fn segment_code(x: f64, k: Bitwidth) -> u8 {
    let n = k.levels() as f64;
    let s = libm::floor(x.clamp(0.0, 1.0) * n);
    s.min(n - 1.0) as u8
}

/// `round_to_zero(N x - 1/2)` clamped to the code range.
fn rounded_code(x: f64, k: Bitwidth) -> u32 {
    let n = k.levels() as f64;
    crate::quant::round_to_zero(n * x - 0.5).clamp(0.0, n - 1.0) as u32
}

/// Equalizes `w` with the chosen mode; output in `[0, 1]`.
pub fn equalize(w: &Tensor, k: Bitwidth, mode: EqualizeMode) -> Result<Tensor> {
    match mode {
        EqualizeMode::ExactPercentile => {
            let spec = percentile_thresholds(w, k)?;
            Ok(equalize_exact(w, &spec))
        }
        EqualizeMode::RecursiveMean => recursive_equalize(w, k, SplitRule::Mean),
        EqualizeMode::RecursiveMedian => recursive_equalize(w, k, SplitRule::Median),
    }
}

/// k-bit balanced quantization.
///
/// `scale = max|w|` and code `c` dequantizes to
/// `2 * scale * (c / (2^k - 1) - 1/2)`. Exact-percentile codes come from
/// [`segment_code`]. A recursion leaf spans the closed segment
/// `[i/N, (i+1)/N]`, so its extremes sit on boundaries shared with the
/// neighbouring leaves; recursive modes therefore use the leaf's branch
/// path as the code, which agrees with `round_to_zero(N x - 1/2)` except
/// at the leaf minimum.
/// An all-zero tensor quantizes to code 0 with scale 0.
pub fn balanced_quantize(w: &Tensor, k: Bitwidth, mode: EqualizeMode) -> Result<QuantizedTensor> {
    let scale = w.max_abs();
    if scale == 0.0 {
        check_size(w, k)?;
        return QuantizedTensor::new(w.shape().to_vec(), vec![0; w.len()], k, 0.0, Convention::Symmetric);
    }
    let codes = match mode {
        EqualizeMode::ExactPercentile => {
            let eq = equalize(w, k, mode)?;
            eq.data().iter().map(|&x| segment_code(x, k)).collect()
        }
        EqualizeMode::RecursiveMean | EqualizeMode::RecursiveMedian => {
            let rule = if mode == EqualizeMode::RecursiveMean {
                SplitRule::Mean
            } else {
                SplitRule::Median
            };
            let (_, trace) = recursive_equalize_traced(w, k, rule)?;
            trace.leaf_of.iter().map(|&p| p as u8).collect()
        }
    };
    QuantizedTensor::new(w.shape().to_vec(), codes, k, scale, Convention::Symmetric)
}

/// Outcome of checking the balance bound on one tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct BalanceReport {
    /// Largest split imbalance `max(l/g, g/l)`; infinite if a split had an
    /// empty side.
    pub gamma: f64,
    /// Most frequent code count over least frequent populated code count.
    pub ratio: f64,
    /// Codes that received no entries.
    pub empty_codes: Vec<u32>,
    /// Every entry lies in its leaf's segment `[p/N, (p+1)/N]` and rounds
    /// to `p` (or to `p - 1` exactly at the leaf's lower boundary), so the
    /// `2^k` leaves land on `2^k` distinct codes.
    pub leaves_distinct: bool,
    /// `|mean - median| <= std_dev` held at every split.
    pub mean_median_within_std: bool,
    /// `leaves_distinct && ratio <= gamma^(2k)`.
    pub holds: bool,
    pub counts: Vec<usize>,
    pub trace: PartitionTrace,
}

/// Runs recursive balanced quantization and checks that the most frequent
/// code appears at most `gamma^(2k)` times as often as the least frequent
/// populated one.
pub fn verify_balance_bound(w: &Tensor, k: Bitwidth, rule: SplitRule) -> Result<BalanceReport> {
    let (eq, trace) = recursive_equalize_traced(w, k, rule)?;
    let mut counts = vec![0usize; k.levels()];
    let mut leaves_distinct = true;
    let n = k.levels() as f64;
    for (&x, &leaf) in eq.data().iter().zip(&trace.leaf_of) {
        counts[leaf as usize] += 1;
        let lower = leaf as f64 / n;
        let in_segment = x >= lower && x <= (leaf + 1) as f64 / n;
        let r = rounded_code(x, k);
        let rounds_home = r == leaf || (x == lower && r + 1 == leaf);
        if !(in_segment && rounds_home) {
            leaves_distinct = false;
        }
    }
    let gamma = trace.splits.iter().map(SplitRecord::imbalance).fold(1.0, f64::max);
    let populated = counts.iter().copied().filter(|&c| c > 0);
    let max = populated.clone().max().unwrap_or(0) as f64;
    let min = populated.min().unwrap_or(0) as f64;
    let ratio = if min > 0.0 { max / min } else { f64::INFINITY };
    let empty_codes = counts.iter().enumerate().filter(|(_, &c)| c == 0).map(|(i, _)| i as u32).collect();
    let mean_median_within_std = trace.splits.iter().all(|s| {
        let tol = 1e-12 * (1.0 + s.mean.abs() + s.median.abs());
        (s.mean - s.median).abs() <= s.std_dev + tol
    });
    let bound = libm::pow(gamma, 2.0 * k.get() as f64);
    let holds = leaves_distinct && ratio <= bound * (1.0 + 1e-12);
    Ok(BalanceReport {
        gamma,
        ratio,
        empty_codes,
        leaves_distinct,
        mean_median_within_std,
        holds,
        counts,
        trace,
    })
}
