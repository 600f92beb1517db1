use featclash_core::datagen::{build_hardness_dataset, Split};
use featclash_core::features::FeatureKind;
use featclash_core::neural::{ModelConfig, ModelParams};
use featclash_core::trainer::{evaluate, train, TrainConfig};

fn contains_one(n: usize, split: Split, seed: u64) -> Vec<featclash_core::Example> {
    build_hardness_dataset(FeatureKind::ContainsSymbol(1), n, 500, 5, split, seed).unwrap()
}

#[test]
fn loss_decreases_over_five_epochs() {
    for seed in 42..47 {
        let data = contains_one(1_000, Split::Train, seed);
        let val = contains_one(200, Split::Test, seed);
        let cfg = TrainConfig {
            max_epochs: 5,
            patience: 5,
            seed,
            ..TrainConfig::default()
        };
        let (_, h) = train::<f32>(ModelConfig::new(500, 16, 5), &cfg, &data, &val).unwrap();
        let losses: Vec<f64> = h.epochs.iter().map(|e| e.train_loss).collect();
        assert_eq!(losses.len(), 5);
        assert!(losses[4] < losses[0], "seed {seed}: {losses:?}");
    }
}

#[test]
fn contains_one_solved_after_first_epoch() {
    let data = build_hardness_dataset(
        FeatureKind::ContainsSymbol(1),
        10_000,
        50_000,
        5,
        Split::Train,
        42,
    )
    .unwrap();
    let val = build_hardness_dataset(
        FeatureKind::ContainsSymbol(1),
        2_000,
        50_000,
        5,
        Split::Test,
        42,
    )
    .unwrap();
    let cfg = TrainConfig {
        max_epochs: 1,
        ..TrainConfig::default()
    };
    let (_, h) = train::<f32>(ModelConfig::new(50_000, 64, 5), &cfg, &data, &val).unwrap();
    assert_eq!(h.epochs[0].val_error, 0.0);
}

#[test]
fn returned_params_reproduce_best_epoch_and_survive_checkpoint() {
    let data = contains_one(2_000, Split::Train, 1);
    let val = contains_one(400, Split::Test, 1);
    let cfg = TrainConfig {
        max_epochs: 6,
        patience: 2,
        ..TrainConfig::default()
    };
    let (params, h) = train::<f64>(ModelConfig::new(500, 8, 5), &cfg, &data, &val).unwrap();
    let best = h.best().unwrap();
    let (err, loss) = evaluate(&params, &val).unwrap();
    assert_eq!(err, best.val_error);
    assert!((loss - best.val_loss).abs() < 1e-12);

    let mut buf = Vec::new();
    params.write_checkpoint(&mut buf).unwrap();
    let restored = ModelParams::<f64>::read_checkpoint(buf.as_slice()).unwrap();
    assert_eq!(evaluate(&restored, &val).unwrap(), (err, loss));
}

#[test]
fn double_precision_training_is_bit_reproducible() {
    let data = contains_one(1_000, Split::Train, 9);
    let val = contains_one(200, Split::Test, 9);
    let cfg = TrainConfig {
        max_epochs: 3,
        ..TrainConfig::default()
    };
    let run = || train::<f64>(ModelConfig::new(500, 8, 5), &cfg, &data, &val).unwrap();
    let (a, ha) = run();
    let (b, hb) = run();
    assert_eq!(a.values, b.values);
    assert_eq!(ha.epochs, hb.epochs);
}
