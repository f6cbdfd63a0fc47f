//! Effective bitwidth and distribution diagnostics.
//!
//! The effective bitwidth of a code tensor is the base-2 entropy of its
//! code distribution, so it ranges from 0 (one code used) to `k` (all
//! `2^k` codes equally often).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{precondition, Result};
use crate::quant::{Bitwidth, QuantizedTensor};
use crate::tensor::Tensor;

/// Occurrence count of every code.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CodeHistogram {
    counts: Vec<u64>,
    total: u64,
}

impl CodeHistogram {
    pub fn from_codes(codes: &[u8], bits: Bitwidth) -> Result<Self> {
        if codes.is_empty() {
            return Err(precondition("histogram of no codes"));
        }
        let mut counts = vec![0u64; bits.levels()];
        for &c in codes {
            let slot = counts
                .get_mut(c as usize)
                .ok_or_else(|| precondition(format!("code {c} does not fit in {bits} bits")))?;
            *slot += 1;
        }
        Ok(Self {
            total: codes.len() as u64,
            counts,
        })
    }

    pub fn of(q: &QuantizedTensor) -> Self {
        Self::from_codes(q.codes(), q.bits()).expect("quantized tensors are nonempty and in range")
    }

    /// Arbitrary counts; at least one must be positive.
    pub fn from_counts(counts: Vec<u64>) -> Result<Self> {
        let total = counts.iter().sum();
        if total == 0 {
            return Err(precondition("histogram with zero total"));
        }
        Ok(Self { counts, total })
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// Base-2 entropy; empty bins contribute nothing.
    pub fn entropy(&self) -> f64 {
        let n = self.total as f64;
        let h: f64 = self
            .counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n;
                -p * libm::log2(p)
            })
            .sum();
        h.max(0.0)
    }
}

/// Entropy of the code distribution, in bits.
pub fn effective_bitwidth(q: &QuantizedTensor) -> f64 {
    CodeHistogram::of(q).entropy()
}

/// Arithmetic mean of per-layer effective bitwidths.
pub fn layer_mean_effective_bitwidth(per_layer: &[f64]) -> Result<f64> {
    if per_layer.is_empty() {
        return Err(precondition("no quantized layers"));
    }
    Ok(per_layer.iter().sum::<f64>() / per_layer.len() as f64)
}

/// Average ranks (ties share the mean rank), 1-based.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation (Pearson correlation of average ranks).
///
/// Returns 0 when either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(precondition("spearman needs two equal-length samples of size >= 2"));
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(0.0);
    }
    Ok(sxy / libm::sqrt(sxx * syy))
}

/// One bin of a value histogram.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bin {
    pub left: f64,
    pub right: f64,
    pub count: u64,
}

/// Equal-width histogram over `[min, max]`; the last bin is closed.
pub fn value_histogram(t: &Tensor, bins: usize) -> Result<Vec<Bin>> {
    if bins == 0 {
        return Err(precondition("histogram needs at least one bin"));
    }
    let (lo, hi) = (t.min_value(), t.max_value());
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0u64; bins];
    for &v in t.data() {
        let b = if width == 0.0 {
            0
        } else {
            (((v - lo) / width) as usize).min(bins - 1)
        };
        counts[b] += 1;
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| Bin {
            left: lo + i as f64 * width,
            right: if i + 1 == bins { hi } else { lo + (i + 1) as f64 * width },
            count,
        })
        .collect())
}

/// One bin per code, bounded by the midpoints between adjacent levels.
pub fn code_histogram_bins(q: &QuantizedTensor) -> Vec<Bin> {
    let levels = q.levels();
    let hist = CodeHistogram::of(q);
    let half = if levels.len() > 1 { (levels[1] - levels[0]) / 2.0 } else { 0.0 };
    levels
        .iter()
        .zip(hist.counts())
        .map(|(&l, &count)| Bin {
            left: l - half,
            right: l + half,
            count,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quant::Convention;
    use proptest::prelude::*;

    fn bw(k: u32) -> Bitwidth {
        Bitwidth::new(k).unwrap()
    }

    #[test]
    fn uniform_codes_have_full_bitwidth() {
        for k in 1..=8 {
            let codes: Vec<u8> = (0..(1u32 << k)).map(|c| c as u8).collect();
            let h = CodeHistogram::from_codes(&codes, bw(k)).unwrap();
            assert!((h.entropy() - k as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn point_mass_has_zero_bitwidth() {
        let h = CodeHistogram::from_codes(&[2; 50], bw(2)).unwrap();
        assert_eq!(h.entropy(), 0.0);
    }

    #[test]
    fn half_half_is_one_bit() {
        let h = CodeHistogram::from_counts(vec![5, 5, 0, 0]).unwrap();
        assert!((h.entropy() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(CodeHistogram::from_codes(&[], bw(2)).is_err());
        assert!(CodeHistogram::from_counts(vec![0, 0]).is_err());
        assert!(layer_mean_effective_bitwidth(&[]).is_err());
    }

    #[test]
    fn layer_mean() {
        assert_eq!(layer_mean_effective_bitwidth(&[1.3]).unwrap(), 1.3);
        assert_eq!(layer_mean_effective_bitwidth(&[1.0, 2.0]).unwrap(), 1.5);
    }

    #[test]
    fn scale_does_not_matter() {
        let a = QuantizedTensor::new(vec![4], vec![0, 1, 1, 3], bw(2), 0.5, Convention::Symmetric).unwrap();
        let b = a.clone().with_scale(40.0).unwrap();
        assert_eq!(effective_bitwidth(&a), effective_bitwidth(&b));
    }

    #[test]
    fn spearman_examples() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(spearman(&[1.0, 1.0], &[2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(ranks(&[5.0, 1.0, 5.0]), vec![2.5, 1.0, 2.5]);
    }

    #[test]
    fn value_histogram_counts_everything() {
        let t = Tensor::row((0..100).map(|i| i as f64).collect()).unwrap();
        let bins = value_histogram(&t, 7).unwrap();
        assert_eq!(bins.iter().map(|b| b.count).sum::<u64>(), 100);
        assert_eq!(bins[0].left, 0.0);
        assert_eq!(bins[6].right, 99.0);
    }

    proptest! {
        #[test]
        fn permuting_bins_keeps_entropy(counts in proptest::collection::vec(0u64..100, 4..16), rot in 0usize..16) {
            prop_assume!(counts.iter().sum::<u64>() > 0);
            let mut rotated = counts.clone();
            let r = rot % counts.len();
            rotated.rotate_left(r);
            rotated.reverse();
            let a = CodeHistogram::from_counts(counts).unwrap().entropy();
            let b = CodeHistogram::from_counts(rotated).unwrap().entropy();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn bitwidth_is_bounded(k in 1u32..=8, codes in proptest::collection::vec(any::<u8>(), 1..500)) {
            let codes: Vec<u8> = codes.into_iter().map(|c| (c as u32 & bw(k).max_code()) as u8).collect();
            let h = CodeHistogram::from_codes(&codes, bw(k)).unwrap().entropy();
            prop_assert!(h >= 0.0 && h <= k as f64 + 1e-12);
        }
    }
}
