mod common;

use tsattack::classifier::{
    load_weights, save_weights, train, ModelConfig, ModelWeights, TrainConfig,
};
use tsattack::data::{make_synthetic, train_test_split, Dataset, SyntheticKind};

#[test]
fn sine_vs_square_is_learned() {
    let ds: Dataset<f64> = make_synthetic(SyntheticKind::SineVsSquare, 50, 64, 0.05, 7)
        .unwrap()
        .znormalized();
    let again: Dataset<f64> = make_synthetic(SyntheticKind::SineVsSquare, 50, 64, 0.05, 7)
        .unwrap()
        .znormalized();
    assert_eq!(ds.len(), 100);
    assert_eq!(ds, again);

    let (tr, te) = train_test_split(&ds, 0.5, 7).unwrap();
    let model = ModelConfig::small(2, 64, 7);
    let out = train(
        &tr,
        Some(&te),
        &model,
        &TrainConfig {
            seed: 7,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    assert_eq!(out.log.len(), 50);
    assert!(out.log.iter().all(|r| r.train_loss.is_finite()));
    let test_acc = out.weights.accuracy(&te).unwrap();
    assert!(test_acc >= 0.95, "test accuracy {test_acc}");
    let train_acc = out.weights.accuracy(&tr).unwrap();
    assert!(train_acc >= 0.9, "train accuracy {train_acc}");
    assert_eq!(out.log.last().unwrap().test_acc, Some(test_acc));
}

#[test]
fn desk_model_reaches_target_accuracy() {
    let (tr, te) = common::bumps(3);
    let out = train(
        &tr,
        Some(&te),
        &ModelConfig::small(4, common::LENGTH, 3),
        &common::desk_train_config(3),
    )
    .unwrap();
    assert!(out.weights.accuracy(&te).unwrap() >= 0.85);
    assert!(out.weights.accuracy(&tr).unwrap() >= 0.9);
}

#[test]
fn trained_weights_survive_disk_and_precision_change() {
    let (weights, te) = common::trained_bumps_model(1);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.tsaw");
    save_weights(&weights, &path).unwrap();
    let back: ModelWeights<f64> = load_weights(&path).unwrap();
    assert_eq!(back, weights);
    for s in &te.samples {
        assert_eq!(
            back.predict_proba(s).unwrap(),
            weights.predict_proba(s).unwrap()
        );
    }

    // The f32 copy agrees on nearly every prediction.
    let narrow: ModelWeights<f32> = weights.cast();
    let te32: Dataset<f32> = te.cast();
    let agree = te
        .samples
        .iter()
        .zip(&te32.samples)
        .filter(|(a, b)| weights.predict(a).unwrap() == narrow.predict(b).unwrap())
        .count();
    assert!(agree as f64 >= 0.95 * te.len() as f64);
}
