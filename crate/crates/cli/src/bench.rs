//! Timing of the bit-plane GEMM against the naive integer product.
//!
//! Each row times an `OUTER x size` by `size x OUTER` product, so `size`
//! is the inner (popcount) dimension. Packing is done once outside the
//! timed region. Reported times are the median over the runs, in
//! nanoseconds per product.

use std::hint::black_box;
use std::time::Instant;

use balquant_core::bitplane::{gemm_multibit, gemm_naive, BitPlaneMatrix, Layout};
use balquant_core::quant::Bitwidth;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;

pub const OUTER: usize = 16;

/// One CSV row: `size,M,K,kernel_ns,naive_ns`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BenchRow {
    pub size: usize,
    #[serde(rename = "M")]
    pub m: u32,
    #[serde(rename = "K")]
    pub k: u32,
    pub kernel_ns: f64,
    pub naive_ns: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn time(runs: usize, mut f: impl FnMut()) -> f64 {
    f();
    median(
        (0..runs)
            .map(|_| {
                let t = Instant::now();
                f();
                t.elapsed().as_nanos() as f64
            })
            .collect(),
    )
}

fn codes(rng: &mut ChaCha8Rng, n: usize, bits: Bitwidth) -> Vec<u8> {
    (0..n).map(|_| rng.random_range(0..=bits.max_code()) as u8).collect()
}

/// Times one `(size, M, K)` configuration; `naive` can be skipped when only
/// the kernel is of interest.
pub fn measure(size: usize, m: Bitwidth, k: Bitwidth, runs: usize, naive: bool, seed: u64) -> Result<BenchRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = codes(&mut rng, OUTER * size, m);
    let b = codes(&mut rng, size * OUTER, k);
    let pa = BitPlaneMatrix::pack(&a, OUTER, size, m, Layout::Rows)?;
    let pb = BitPlaneMatrix::pack(&b, size, OUTER, k, Layout::Columns)?;
    let kernel_ns = time(runs, || {
        black_box(gemm_multibit(black_box(&pa), black_box(&pb)).expect("shapes agree"));
    });
    let naive_ns = if naive {
        time(runs, || {
            black_box(gemm_naive(black_box(&a), black_box(&b), OUTER, size, OUTER));
        })
    } else {
        f64::NAN
    };
    Ok(BenchRow {
        size,
        m: m.get(),
        k: k.get(),
        kernel_ns,
        naive_ns,
    })
}

/// Every combination of `sizes` and weight/activation bitwidths.
pub fn run(sizes: &[usize], m_bits: &[Bitwidth], k_bits: &[Bitwidth], runs: usize) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for &size in sizes {
        for &m in m_bits {
            for &k in k_bits {
                rows.push(measure(size, m, k, runs.max(5), true, 0)?);
            }
        }
    }
    Ok(rows)
}
