//! Synthetic datasets.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{precondition, Result};
use crate::tensor::Tensor;

/// Labelled feature rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Vec<usize>, classes: usize) -> Result<Self> {
        let (n, _) = features.dims2()?;
        if labels.len() != n {
            return Err(precondition(format!("{} labels for {n} rows", labels.len())));
        }
        if let Some(l) = labels.iter().find(|&&l| l >= classes) {
            return Err(precondition(format!("label {l} outside {classes} classes")));
        }
        Ok(Self { features, labels, classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        Ok(Self {
            features: self.features.select_rows(rows)?,
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            classes: self.classes,
        })
    }

    /// Shuffles then splits off the last `test_fraction` of rows.
    pub fn split(&self, test_fraction: f64, rng: &mut impl Rng) -> Result<(Self, Self)> {
        let n = self.len();
        let n_test = (n as f64 * test_fraction) as usize;
        if n_test == 0 || n_test >= n {
            return Err(precondition(format!("split of {n} rows leaves an empty side")));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(rng);
        Ok((self.subset(&idx[..n - n_test])?, self.subset(&idx[n - n_test..])?))
    }
}

/// Isotropic Gaussian clusters with centers drawn from `N(0, separation^2)`.
pub fn gaussian_blobs(n: usize, classes: usize, dim: usize, separation: f64, rng: &mut impl Rng) -> Result<Dataset> {
    if n == 0 || classes < 2 || dim == 0 {
        return Err(precondition("blobs need n > 0, classes >= 2, dim > 0"));
    }
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let centers: Vec<f64> = (0..classes * dim).map(|_| separation * unit.sample(rng)).collect();
    let mut features = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        labels.push(c);
        for d in 0..dim {
            features.push(centers[c * dim + d] + unit.sample(rng));
        }
    }
    Dataset::new(Tensor::matrix(n, dim, features)?, labels, classes)
}

/// Two interleaved spirals in the plane.
pub fn two_spirals(n: usize, turns: f64, noise: f64, rng: &mut impl Rng) -> Result<Dataset> {
    if n < 2 {
        return Err(precondition("spirals need at least two points"));
    }
    let noise = Normal::new(0.0, noise.max(0.0)).map_err(|_| precondition("bad noise"))?;
    let mut features = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % 2;
        let t: f64 = rng.random_range(0.05..1.0);
        let angle = t * turns * core::f64::consts::TAU + c as f64 * core::f64::consts::PI;
        features.push(t * libm::cos(angle) + noise.sample(rng));
        features.push(t * libm::sin(angle) + noise.sample(rng));
        labels.push(c);
    }
    Dataset::new(Tensor::matrix(n, 2, features)?, labels, 2)
}

/// Sequence task: at every step the target is the input bit vector seen
/// `lag` steps earlier (zeros before that).
#[derive(Debug, Clone, PartialEq)]
pub struct CopyTask {
    /// One `batch x width` 0/1 matrix per step.
    pub inputs: Vec<Tensor>,
    pub targets: Vec<Tensor>,
    pub lag: usize,
}

impl CopyTask {
    pub fn generate(batch: usize, steps: usize, width: usize, lag: usize, rng: &mut impl Rng) -> Result<Self> {
        if batch == 0 || steps == 0 || width == 0 || lag >= steps {
            return Err(precondition("copy task needs positive extents and lag < steps"));
        }
        let inputs: Vec<Tensor> = (0..steps)
            .map(|_| {
                let bits = (0..batch * width).map(|_| rng.random_range(0..2) as f64).collect();
                Tensor::matrix(batch, width, bits)
            })
            .collect::<Result<_>>()?;
        let targets = (0..steps)
            .map(|t| {
                if t >= lag {
                    inputs[t - lag].clone()
                } else {
                    Tensor::from_parts(vec![batch, width], vec![0.0; batch * width])
                }
            })
            .collect();
        Ok(Self { inputs, targets, lag })
    }

    pub fn steps(&self) -> usize {
        self.inputs.len()
    }

    pub fn batch(&self) -> usize {
        self.inputs[0].shape()[0]
    }

    pub fn width(&self) -> usize {
        self.inputs[0].shape()[1]
    }
}

/// Per-feature affine map of the training range onto `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MinMaxScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMaxScaler {
    pub fn fit(x: &Tensor) -> Result<Self> {
        let (n, d) = x.dims2()?;
        let mut min = vec![f64::INFINITY; d];
        let mut max = vec![f64::NEG_INFINITY; d];
        for r in 0..n {
            for c in 0..d {
                let v = x.at(r, c);
                min[c] = min[c].min(v);
                max[c] = max[c].max(v);
            }
        }
        Ok(Self { min, max })
    }

    /// Maps into `[0, 1]`, clamping values outside the fitted range. A
    /// constant feature maps to 0.
    pub fn transform(&self, x: &Tensor) -> Result<Tensor> {
        let (_, d) = x.dims2()?;
        if d != self.min.len() {
            return Err(precondition(format!("scaler fitted on {} features, got {d}", self.min.len())));
        }
        let data = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let (lo, hi) = (self.min[i % d], self.max[i % d]);
                if hi > lo {
                    ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
                } else {
                    0.0
                }
            })
            .collect();
        Tensor::new(x.shape().to_vec(), data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn blobs_shape_and_labels() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = gaussian_blobs(30, 3, 4, 5.0, &mut rng).unwrap();
        assert_eq!(d.features.shape(), &[30, 4]);
        assert_eq!(d.labels.iter().filter(|&&l| l == 2).count(), 10);
    }

    #[test]
    fn split_partitions_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = two_spirals(100, 1.5, 0.01, &mut rng).unwrap();
        let (a, b) = d.split(0.25, &mut rng).unwrap();
        assert_eq!((a.len(), b.len()), (75, 25));
        assert!(d.split(0.0, &mut rng).is_err());
    }

    #[test]
    fn copy_targets_lag_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let task = CopyTask::generate(5, 8, 3, 2, &mut rng).unwrap();
        assert_eq!(task.targets[0].sum(), 0.0);
        assert_eq!(task.targets[5], task.inputs[3]);
        assert!(CopyTask::generate(5, 2, 3, 2, &mut rng).is_err());
    }

    #[test]
    fn scaler_maps_to_unit_interval() {
        let x = Tensor::matrix(3, 2, vec![1.0, 5.0, 2.0, 5.0, 3.0, 5.0]).unwrap();
        let s = MinMaxScaler::fit(&x).unwrap();
        let y = s.transform(&x).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 0.5, 0.0, 1.0, 0.0]);
        let out = s.transform(&Tensor::matrix(1, 2, vec![9.0, 0.0]).unwrap()).unwrap();
        assert_eq!(out.data(), &[1.0, 0.0]);
    }
}
