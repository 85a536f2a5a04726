#![allow(dead_code)]

use tsattack::classifier::{train, ModelConfig, ModelWeights, TrainConfig};
use tsattack::data::{make_synthetic, train_test_split, Dataset, SyntheticKind};

pub const LENGTH: usize = 64;

/// Four-class bump data, z-normalised, split in half.
pub fn bumps(seed: u64) -> (Dataset<f64>, Dataset<f64>) {
    let ds: Dataset<f64> = make_synthetic(
        SyntheticKind::ShiftedGaussianBumps { classes: 4 },
        20,
        LENGTH,
        0.1,
        seed,
    )
    .unwrap()
    .znormalized();
    train_test_split(&ds, 0.5, seed).unwrap()
}

pub fn desk_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 150,
        batch_size: 16,
        learning_rate: 0.2,
        seed,
    }
}

/// A trained classifier with its held-out split.
pub fn trained_bumps_model(seed: u64) -> (ModelWeights<f64>, Dataset<f64>) {
    let (tr, te) = bumps(seed);
    let model = ModelConfig::small(tr.num_classes, LENGTH, seed);
    let out = train(&tr, Some(&te), &model, &desk_train_config(seed)).unwrap();
    (out.weights, te)
}

/// Small random model with non-zero biases, so no unit sits exactly on a relu kink.
pub fn random_model(classes: usize, length: usize, seed: u64) -> ModelWeights<f64> {
    use rand::{Rng, SeedableRng};
    let mut w = ModelWeights::<f64>::init(ModelConfig::small(classes, length, seed)).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5);
    let names: Vec<String> = w
        .tensors()
        .keys()
        .filter(|n| n.ends_with("bias"))
        .cloned()
        .collect();
    for name in names {
        for v in w.tensor_mut(&name).unwrap().values_mut() {
            *v = rng.gen_range(-0.3..0.3);
        }
    }
    w
}
