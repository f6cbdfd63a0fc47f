//! Kernel time should grow linearly with the number of plane pairs M*K.

use balquant::bench::measure;
use balquant_core::quant::Bitwidth;

/// Coefficient of determination of the least-squares line through `(x, y)`.
fn r_squared(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - (my + slope * (a - mx))).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    1.0 - ss_res / ss_tot
}

#[test]
fn kernel_time_is_linear_in_plane_pairs() {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for m in [1, 2, 4] {
        for k in [1, 2, 4] {
            let row = measure(4096, Bitwidth::new(m).unwrap(), Bitwidth::new(k).unwrap(), 15, false, 7).unwrap();
            x.push((m * k) as f64);
            y.push(row.kernel_ns);
        }
    }
    let r2 = r_squared(&x, &y);
    println!("plane pairs {x:?}\nkernel ns {y:?}\nR^2 {r2:.4}");
    assert!(r2 >= 0.9, "R^2 {r2}");
}

#[test]
fn r_squared_oracle() {
    assert!((r_squared(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]) - 1.0).abs() < 1e-12);
    // Symmetric scatter around a flat line explains nothing.
    assert!(r_squared(&[1.0, 2.0, 3.0], &[1.0, 0.0, 1.0]).abs() < 1e-12);
}
