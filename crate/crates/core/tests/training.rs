use kpbench_core::dataset::synthesize_dataset;
use kpbench_core::evaluation::{dataset_rmse_px, normalized_mse, EVAL_BATCH};
use kpbench_core::models::{build_manual_cnn, custom_cnn_spec, Model};
use kpbench_core::training::{
    random_search_tune, split_train_val, train, train_with_validation, OptimizerKind, SearchSpace,
};
use kpbench_core::TrainConfig;

fn overfit_config(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 500,
        batch_size: 8,
        optimizer: OptimizerKind::adam(1e-3),
        seed,
        validation_fraction: 0.2,
        early_stop_patience: None,
        target_val_rmse_px: Some(1.0),
    }
}

#[test]
fn manual_cnn_overfits_eight_samples() {
    let ds = synthesize_dataset(8, 31);
    let run = || {
        let model = build_manual_cnn(2).unwrap();
        train_with_validation(model, &ds, &ds, &overfit_config(2)).unwrap()
    };
    let out = run();
    let rmse = dataset_rmse_px(&out.model, &ds).unwrap();
    println!("overfit: {} epochs, train rmse {rmse:.4} px", out.curve.len());
    assert!(rmse < 1.0, "train rmse {rmse}");
    let recs = &out.curve.records;
    assert!(recs.len() >= 5 && recs[4].train_mse < recs[0].train_mse);

    let again = run();
    assert_eq!(again.model, out.model);
    let strip = |c: &kpbench_core::TrainingCurve| {
        c.records
            .iter()
            .map(|r| (r.epoch, r.train_mse, r.val_mse))
            .collect::<Vec<_>>()
    };
    assert_eq!(strip(&again.curve), strip(&out.curve));
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let ds = synthesize_dataset(12, 3);
    let model = build_manual_cnn(1).unwrap();
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 4,
        optimizer: OptimizerKind::adam(0.0),
        ..TrainConfig::default()
    };
    let out = train(model.clone(), &ds, &cfg).unwrap();
    assert_eq!(out.curve.len(), 1);
    assert_eq!(out.model, model);
}

#[test]
fn returned_model_matches_best_curve_row() {
    let ds = synthesize_dataset(60, 8);
    let spec = custom_cnn_spec("small", &[4, 8, 8, 8, 8], 16).unwrap();
    let cfg = TrainConfig {
        epochs: 6,
        batch_size: 16,
        optimizer: OptimizerKind::adam(3e-3),
        seed: 4,
        ..TrainConfig::default()
    };
    let out = train(Model::init(spec, 4).unwrap(), &ds, &cfg).unwrap();
    let (_, val) = split_train_val(&ds, cfg.validation_fraction, cfg.seed).unwrap();
    let best = out.curve.best().unwrap();
    assert_eq!(best.epoch, out.best_epoch);
    let mse = normalized_mse(&out.model, &val, EVAL_BATCH).unwrap();
    assert!((mse - best.val_mse).abs() <= 1e-9 * best.val_mse.max(1.0));
    let px = dataset_rmse_px(&out.model, &val).unwrap();
    assert!((px - best.val_rmse_px).abs() < 1e-3, "{px} vs {}", best.val_rmse_px);
    for r in &out.curve.records {
        assert!(r.train_mse.is_finite() && r.val_rmse_px.is_finite() && r.seconds >= 0.0);
    }
}

#[test]
fn tuner_is_deterministic_and_picks_argmin() {
    let ds = synthesize_dataset(40, 5);
    let space = SearchSpace {
        conv_blocks: (4, 5),
        base_filters: vec![2, 4],
        dense_width: vec![8, 16],
        learning_rate: (1e-3, 3e-3),
    };
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 16,
        seed: 9,
        ..TrainConfig::default()
    };
    let a = random_search_tune(&space, 3, &ds, &cfg).unwrap();
    let b = random_search_tune(&space, 3, &ds, &cfg).unwrap();
    assert_eq!(a.trials, b.trials);
    assert_eq!(a.best_spec, b.best_spec);
    assert_eq!(a.trials.len(), 3);
    let min = a.trials.iter().map(|t| t.val_rmse_px).fold(f64::INFINITY, f64::min);
    assert_eq!(a.trials[a.best_trial].val_rmse_px, min);

    let one = random_search_tune(&space, 1, &ds, &cfg).unwrap();
    assert_eq!(one.best_trial, 0);
    assert_eq!(one.best_spec.name, "tuned-0");
    assert!(random_search_tune(&space, 0, &ds, &cfg).is_err());
}
