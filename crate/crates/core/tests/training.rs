//! End-to-end training runs with pinned seeds.

use balquant_core::data::{gaussian_blobs, Dataset};
use balquant_core::model::{ForwardOptions, ModelSpec};
use balquant_core::quant::{Bitwidth, WeightQuantizer};
use balquant_core::rnn::{train_copy_task, CellKind, RnnConfig};
use balquant_core::train::{train, LrSchedule, OptimizerKind, TrainConfig};
use balquant_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn bw(k: u32) -> Bitwidth {
    Bitwidth::new(k).unwrap()
}

/// Two unit-variance clusters at (-3, -3) and (3, 3).
fn separable(seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for i in 0..200 {
        let c = i % 2;
        let center = if c == 0 { -3.0 } else { 3.0 };
        for _ in 0..2 {
            let z: f64 = StandardNormal.sample(&mut rng);
            features.push(center + z);
        }
        labels.push(c);
    }
    Dataset::new(Tensor::matrix(200, 2, features).unwrap(), labels, 2).unwrap()
}

#[test]
fn one_bit_weights_fit_separable_blobs() {
    for seed in 0..3 {
        let data = separable(seed);
        let spec = ModelSpec::uniform(&[2, 2], bw(8), bw(1), bw(2), WeightQuantizer::BalancedMean).unwrap();
        // 20 epochs of 10 batches: 200 steps.
        let config = TrainConfig {
            epochs: 20,
            batch_size: 20,
            schedule: LrSchedule::Constant { lr: 0.1 },
            seed,
            ..TrainConfig::default()
        };
        let t = train(config, spec, &data).unwrap();
        let acc = t.log.last().unwrap().accuracy;
        assert!(acc >= 0.99, "seed {seed}: accuracy {acc}");
    }
}

#[test]
fn trained_model_fixed_path_agrees_on_random_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let data = gaussian_blobs(600, 4, 8, 2.0, &mut rng).unwrap();
    for q in [WeightQuantizer::BalancedMean, WeightQuantizer::Imbalanced] {
        let spec = ModelSpec::uniform(&[8, 24, 16, 4], bw(8), bw(2), bw(3), q).unwrap();
        let config = TrainConfig {
            epochs: 5,
            seed: 3,
            ..TrainConfig::default()
        };
        let t = train(config, spec, &data).unwrap();
        let x = Tensor::matrix(10_000, 8, (0..80_000).map(|_| rng.random_range(-6.0..6.0)).collect()).unwrap();
        let fixed = t.model.export_fixed(false, 0).unwrap();
        let reference = t.model.predict(&x, ForwardOptions::default()).unwrap();
        assert_eq!(fixed.predict(&x).unwrap(), reference);
    }
}

/// Bit-error ceiling picked from a pilot sweep; the pinned seed reaches
/// well under it with both cells.
const COPY_BIT_ERROR: f64 = 0.1;

fn copy_config(cell: CellKind) -> RnnConfig {
    RnnConfig {
        cell,
        hidden: 16,
        weight_bits: bw(2),
        act_bits: bw(4),
        quantizer: WeightQuantizer::BalancedMean,
        width: 2,
        steps: 8,
        lag: 2,
        batch: 32,
        iterations: 800,
        lr: 0.01,
        optimizer: OptimizerKind::Adam,
        seed: 1,
    }
}

#[test]
fn gru_learns_copy_task() {
    let run = train_copy_task(copy_config(CellKind::Gru)).unwrap();
    assert!(run.bit_error < COPY_BIT_ERROR, "bit error {}", run.bit_error);
    assert!(run.losses.last().unwrap() < &run.losses[0]);
}

#[test]
fn lstm_learns_copy_task() {
    let run = train_copy_task(copy_config(CellKind::Lstm)).unwrap();
    assert!(run.bit_error < COPY_BIT_ERROR, "bit error {}", run.bit_error);
    assert!(run.losses.last().unwrap() < &run.losses[0]);
}
