//! Bit-plane packed integer dot products.
//!
//! An `M`-bit unsigned code vector `x = sum_m c_m(x) 2^m` is stored as `M`
//! bit vectors ("planes"). The dot product of an `M`-bit and a `K`-bit
//! vector is then
//!
//! ```text
//! x . y = sum_{m<M} sum_{k<K} 2^(m+k) popcount(c_m(x) AND c_k(y))
//! ```
//!
//! which costs `M * K` AND + popcount passes over the packed words.
//!
//! Packing layout: 64-bit words, element `j` of a lane lives in word
//! `j / 64` at bit `j % 64` (least significant bit first). Padding bits past
//! the logical length are always zero, so popcounts over whole words are
//! exact.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{precondition, Error, Result};
use crate::quant::Bitwidth;

const WORD_BITS: usize = 64;

fn words_for(len: usize) -> usize {
    len.div_ceil(WORD_BITS)
}

/// A packed 0/1 vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitVector {
    len: usize,
    words: Vec<u64>,
}

impl BitVector {
    pub fn from_bits(bits: &[u8]) -> Result<Self> {
        let mut words = vec![0u64; words_for(bits.len())];
        for (j, &b) in bits.iter().enumerate() {
            match b {
                0 => {}
                1 => words[j / WORD_BITS] |= 1 << (j % WORD_BITS),
                _ => return Err(precondition(format!("bit value {b} at {j}"))),
            }
        }
        Ok(Self { len: bits.len(), words })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }
}

#[inline]
fn and_popcount(a: &[u64], b: &[u64]) -> u64 {
    a.iter().zip(b).map(|(x, y)| (x & y).count_ones() as u64).sum()
}

/// `popcount(x AND y)`: the dot product of two 0/1 vectors.
pub fn dot_1bit(x: &BitVector, y: &BitVector) -> Result<u64> {
    if x.len != y.len {
        return Err(Error::Shape {
            op: "dot_1bit",
            lhs: vec![x.len],
            rhs: vec![y.len],
        });
    }
    Ok(and_popcount(&x.words, &y.words))
}

/// An unsigned code vector stored as bit planes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitPlaneVector {
    len: usize,
    bits: Bitwidth,
    planes: Vec<Vec<u64>>,
}

impl BitPlaneVector {
    pub fn pack(codes: &[u8], bits: Bitwidth) -> Result<Self> {
        check_codes(codes, bits)?;
        let nw = words_for(codes.len());
        let planes = (0..bits.get())
            .map(|m| {
                let mut words = vec![0u64; nw];
                for (j, &c) in codes.iter().enumerate() {
                    words[j / WORD_BITS] |= (((c >> m) & 1) as u64) << (j % WORD_BITS);
                }
                words
            })
            .collect();
        Ok(Self {
            len: codes.len(),
            bits,
            planes,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn bits(&self) -> Bitwidth {
        self.bits
    }

    /// Bit plane `m` (coefficient of `2^m`).
    pub fn plane(&self, m: usize) -> &[u64] {
        &self.planes[m]
    }

    pub fn unpack(&self) -> Vec<u8> {
        unpack_lane(self.planes.iter().map(Vec::as_slice), self.len)
    }
}

fn check_codes(codes: &[u8], bits: Bitwidth) -> Result<()> {
    match codes.iter().position(|&c| c as u32 > bits.max_code()) {
        Some(j) => Err(precondition(format!("code {} at {j} does not fit in {bits} bits", codes[j]))),
        None => Ok(()),
    }
}

fn unpack_lane<'a>(planes: impl Iterator<Item = &'a [u64]>, len: usize) -> Vec<u8> {
    let mut out = vec![0u8; len];
    for (m, words) in planes.enumerate() {
        for (j, o) in out.iter_mut().enumerate() {
            *o |= (((words[j / WORD_BITS] >> (j % WORD_BITS)) & 1) as u8) << m;
        }
    }
    out
}

/// Counts AND + popcount plane passes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct KernelStats {
    pub plane_passes: u64,
}

fn planes_dot<'a, 'b>(
    xs: impl Iterator<Item = &'a [u64]> + Clone,
    ys: impl Iterator<Item = &'b [u64]> + Clone,
    stats: &mut KernelStats,
) -> i64 {
    let mut acc = 0i64;
    for (m, xp) in xs.enumerate() {
        for (k, yp) in ys.clone().enumerate() {
            acc += (and_popcount(xp, yp) as i64) << (m + k);
            stats.plane_passes += 1;
        }
    }
    acc
}

/// Integer dot product of two bit-plane vectors.
pub fn dot_multibit(x: &BitPlaneVector, y: &BitPlaneVector) -> Result<i64> {
    dot_multibit_with_stats(x, y, &mut KernelStats::default())
}

/// [`dot_multibit`] that also counts plane passes (always `M * K`).
pub fn dot_multibit_with_stats(x: &BitPlaneVector, y: &BitPlaneVector, stats: &mut KernelStats) -> Result<i64> {
    if x.len != y.len {
        return Err(Error::Shape {
            op: "dot_multibit",
            lhs: vec![x.len],
            rhs: vec![y.len],
        });
    }
    Ok(planes_dot(
        x.planes.iter().map(Vec::as_slice),
        y.planes.iter().map(Vec::as_slice),
        stats,
    ))
}

/// Direction along which a matrix is packed into lanes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// Each row is a lane (left operand of a product).
    Rows,
    /// Each column is a lane (right operand of a product).
    Columns,
}

/// A code matrix decomposed into packed bit planes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitPlaneMatrix {
    rows: usize,
    cols: usize,
    bits: Bitwidth,
    layout: Layout,
    words_per_lane: usize,
    /// `planes[m]` holds `lanes * words_per_lane` words.
    planes: Vec<Vec<u64>>,
}

impl BitPlaneMatrix {
    /// Packs a row-major `rows x cols` code matrix.
    pub fn pack(codes: &[u8], rows: usize, cols: usize, bits: Bitwidth, layout: Layout) -> Result<Self> {
        if codes.len() != rows * cols {
            return Err(precondition(format!("{} codes for a {rows}x{cols} matrix", codes.len())));
        }
        check_codes(codes, bits)?;
        let (lanes, lane_len) = match layout {
            Layout::Rows => (rows, cols),
            Layout::Columns => (cols, rows),
        };
        let wpl = words_for(lane_len);
        let mut planes = vec![vec![0u64; lanes * wpl]; bits.get() as usize];
        for r in 0..rows {
            for c in 0..cols {
                let code = codes[r * cols + c];
                let (lane, j) = match layout {
                    Layout::Rows => (r, c),
                    Layout::Columns => (c, r),
                };
                let w = lane * wpl + j / WORD_BITS;
                for (m, plane) in planes.iter_mut().enumerate() {
                    plane[w] |= (((code >> m) & 1) as u64) << (j % WORD_BITS);
                }
            }
        }
        Ok(Self {
            rows,
            cols,
            bits,
            layout,
            words_per_lane: wpl,
            planes,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn bits(&self) -> Bitwidth {
        self.bits
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    fn lanes(&self) -> usize {
        match self.layout {
            Layout::Rows => self.rows,
            Layout::Columns => self.cols,
        }
    }

    fn lane_len(&self) -> usize {
        match self.layout {
            Layout::Rows => self.cols,
            Layout::Columns => self.rows,
        }
    }

    fn lane_planes(&self, lane: usize) -> impl Iterator<Item = &[u64]> + Clone {
        let wpl = self.words_per_lane;
        self.planes.iter().map(move |p| &p[lane * wpl..(lane + 1) * wpl])
    }

    /// Raw words of plane `m`.
    pub fn plane(&self, m: usize) -> &[u64] {
        &self.planes[m]
    }

    /// Recovers the row-major code matrix.
    pub fn unpack(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.rows * self.cols];
        for lane in 0..self.lanes() {
            let vals = unpack_lane(self.lane_planes(lane), self.lane_len());
            for (j, v) in vals.into_iter().enumerate() {
                let idx = match self.layout {
                    Layout::Rows => lane * self.cols + j,
                    Layout::Columns => j * self.cols + lane,
                };
                out[idx] = v;
            }
        }
        out
    }

    /// Sum of the codes in each lane, via popcounts.
    pub fn lane_sums(&self) -> Vec<i64> {
        (0..self.lanes())
            .map(|lane| {
                self.lane_planes(lane)
                    .enumerate()
                    .map(|(m, p)| (p.iter().map(|w| w.count_ones() as i64).sum::<i64>()) << m)
                    .sum()
            })
            .collect()
    }
}

/// Integer product `a * b` of an `m x k` row-packed matrix and a `k x n`
/// column-packed matrix; result is row-major `m x n`.
pub fn gemm_multibit(a: &BitPlaneMatrix, b: &BitPlaneMatrix) -> Result<Vec<i64>> {
    gemm_multibit_with_stats(a, b, &mut KernelStats::default())
}

pub fn gemm_multibit_with_stats(a: &BitPlaneMatrix, b: &BitPlaneMatrix, stats: &mut KernelStats) -> Result<Vec<i64>> {
    if a.layout != Layout::Rows || b.layout != Layout::Columns || a.cols != b.rows {
        return Err(Error::Shape {
            op: "gemm_multibit",
            lhs: vec![a.rows, a.cols],
            rhs: vec![b.rows, b.cols],
        });
    }
    let mut out = Vec::with_capacity(a.rows * b.cols);
    for i in 0..a.rows {
        for j in 0..b.cols {
            out.push(planes_dot(a.lane_planes(i), b.lane_planes(j), stats));
        }
    }
    Ok(out)
}

/// Plain integer GEMM on row-major code matrices, the baseline the bit
/// kernel is benchmarked against.
pub fn gemm_naive(a: &[u8], b: &[u8], m: usize, k: usize, n: usize) -> Vec<i64> {
    let mut out = vec![0i64; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p] as i64;
            if av == 0 {
                continue;
            }
            for j in 0..n {
                out[i * n + j] += av * b[p * n + j] as i64;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bw(k: u32) -> Bitwidth {
        Bitwidth::new(k).unwrap()
    }

    fn random_codes(n: usize, bits: u32, rng: &mut ChaCha8Rng) -> Vec<u8> {
        (0..n).map(|_| rng.random_range(0..(1u32 << bits)) as u8).collect()
    }

    #[test]
    fn planes_are_binary_expansion() {
        let v = BitPlaneVector::pack(&[3, 2], bw(2)).unwrap();
        assert_eq!(v.plane(0)[0], 0b01);
        assert_eq!(v.plane(1)[0], 0b11);
        let z = BitPlaneVector::pack(&[0; 100], bw(3)).unwrap();
        assert!((0..3).all(|m| z.plane(m).iter().all(|&w| w == 0)));
    }

    #[test]
    fn overflowing_code_rejected() {
        assert!(BitPlaneVector::pack(&[4], bw(2)).is_err());
        assert!(BitPlaneMatrix::pack(&[0, 1, 2, 8], 2, 2, bw(3), Layout::Rows).is_err());
    }

    #[test]
    fn matrix_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let codes = random_codes(13 * 17, 4, &mut rng);
        for layout in [Layout::Rows, Layout::Columns] {
            let p = BitPlaneMatrix::pack(&codes, 13, 17, bw(4), layout).unwrap();
            assert_eq!(p.unpack(), codes);
        }
    }

    #[test]
    fn dot_1bit_examples() {
        let x = BitVector::from_bits(&[1, 0, 1]).unwrap();
        let y = BitVector::from_bits(&[1, 1, 1]).unwrap();
        assert_eq!(dot_1bit(&x, &y).unwrap(), 2);
        let z = BitVector::from_bits(&[0, 0, 0]).unwrap();
        assert_eq!(dot_1bit(&x, &z).unwrap(), 0);
        let short = BitVector::from_bits(&[1]).unwrap();
        assert!(dot_1bit(&x, &short).is_err());
    }

    #[test]
    fn dot_1bit_random_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let a = random_codes(1000, 1, &mut rng);
            let b = random_codes(1000, 1, &mut rng);
            let expected: u64 = a.iter().zip(&b).map(|(&x, &y)| (x * y) as u64).sum();
            let got = dot_1bit(&BitVector::from_bits(&a).unwrap(), &BitVector::from_bits(&b).unwrap()).unwrap();
            assert_eq!(got, expected);
        }
    }

    #[test]
    fn scalar_multibit_dot() {
        let x = BitPlaneVector::pack(&[3], bw(2)).unwrap();
        let y = BitPlaneVector::pack(&[2], bw(2)).unwrap();
        let mut stats = KernelStats::default();
        assert_eq!(dot_multibit_with_stats(&x, &y, &mut stats).unwrap(), 6);
        assert_eq!(stats.plane_passes, 4);
    }

    #[test]
    fn one_bit_planes_reduce_to_dot_1bit() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_codes(300, 1, &mut rng);
        let b = random_codes(300, 1, &mut rng);
        let multi = dot_multibit(&BitPlaneVector::pack(&a, bw(1)).unwrap(), &BitPlaneVector::pack(&b, bw(1)).unwrap());
        let single = dot_1bit(&BitVector::from_bits(&a).unwrap(), &BitVector::from_bits(&b).unwrap());
        assert_eq!(multi.unwrap(), single.unwrap() as i64);
    }

    #[test]
    fn mixed_width_dot_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = random_codes(512, 2, &mut rng);
        let b = random_codes(512, 3, &mut rng);
        let expected: i64 = a.iter().zip(&b).map(|(&x, &y)| x as i64 * y as i64).sum();
        let mut stats = KernelStats::default();
        let got = dot_multibit_with_stats(
            &BitPlaneVector::pack(&a, bw(2)).unwrap(),
            &BitPlaneVector::pack(&b, bw(3)).unwrap(),
            &mut stats,
        )
        .unwrap();
        assert_eq!(got, expected);
        assert_eq!(stats.plane_passes, 6);
    }

    #[test]
    fn identity_left_operand_returns_right_codes() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 10;
        let mut eye = vec![0u8; n * n];
        for i in 0..n {
            eye[i * n + i] = 1;
        }
        let b = random_codes(n * 7, 3, &mut rng);
        let pa = BitPlaneMatrix::pack(&eye, n, n, bw(1), Layout::Rows).unwrap();
        let pb = BitPlaneMatrix::pack(&b, n, 7, bw(3), Layout::Columns).unwrap();
        let out = gemm_multibit(&pa, &pb).unwrap();
        assert_eq!(out, b.iter().map(|&v| v as i64).collect::<Vec<_>>());
    }

    #[test]
    fn gemm_layout_and_shape_errors() {
        let a = BitPlaneMatrix::pack(&[1; 6], 2, 3, bw(1), Layout::Rows).unwrap();
        let b = BitPlaneMatrix::pack(&[1; 6], 2, 3, bw(1), Layout::Columns).unwrap();
        assert!(gemm_multibit(&a, &b).is_err());
        let b_rows = BitPlaneMatrix::pack(&[1; 6], 3, 2, bw(1), Layout::Rows).unwrap();
        assert!(gemm_multibit(&a, &b_rows).is_err());
    }

    #[test]
    fn lane_sums_match_code_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let codes = random_codes(5 * 70, 3, &mut rng);
        let p = BitPlaneMatrix::pack(&codes, 5, 70, bw(3), Layout::Columns).unwrap();
        let sums = p.lane_sums();
        for c in 0..70 {
            let s: i64 = (0..5).map(|r| codes[r * 70 + c] as i64).sum();
            assert_eq!(sums[c], s);
        }
    }

    proptest! {
        #[test]
        fn gemm_matches_triple_loop(m in 1usize..20, k in 1usize..150, n in 1usize..20,
                                    ma in 1u32..=8, kb in 1u32..=8, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_codes(m * k, ma, &mut rng);
            let b = random_codes(k * n, kb, &mut rng);
            let pa = BitPlaneMatrix::pack(&a, m, k, bw(ma), Layout::Rows).unwrap();
            let pb = BitPlaneMatrix::pack(&b, k, n, bw(kb), Layout::Columns).unwrap();
            let mut stats = KernelStats::default();
            let got = gemm_multibit_with_stats(&pa, &pb, &mut stats).unwrap();
            let mut expected = vec![0i64; m * n];
            for i in 0..m { for j in 0..n { for p in 0..k {
                expected[i * n + j] += a[i * k + p] as i64 * b[p * n + j] as i64;
            }}}
            prop_assert_eq!(&got, &expected);
            prop_assert_eq!(gemm_naive(&a, &b, m, k, n), expected);
            prop_assert_eq!(stats.plane_passes, (m * n) as u64 * ma as u64 * kb as u64);
        }
    }
}
