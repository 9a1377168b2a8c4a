use upseg_core::data::{Dataset, DatasetSpec};
use upseg_core::graph::{build_unet, build_upscale_stack, BackboneConfig, UpscaleStackConfig};
use upseg_core::loss::{resize_target, LossConfig};
use upseg_core::ops::cross_entropy;
use upseg_core::resample::downscale_mask;
use upseg_core::train::{train, OptimizerKind, TrainConfig};
use upseg_core::{Dataset64, Error, Model64};

fn data(seed: u64) -> (Dataset64, Dataset64) {
    let spec = DatasetSpec {
        num_samples: 30,
        input_res: 8,
        gt_res: 32,
        seed,
        ..Default::default()
    };
    Dataset::generate(&spec).unwrap().split(2.0 / 3.0).unwrap()
}

fn backbone() -> BackboneConfig {
    BackboneConfig {
        in_channels: 1,
        base_channels: 4,
        depth: 1,
        num_classes: 1,
    }
}

fn model(m: usize) -> Model64 {
    let base = build_unet(&backbone(), 3).unwrap();
    build_upscale_stack(&base, &UpscaleStackConfig::new(m, 1), 4).unwrap()
}

fn cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        max_epochs: epochs,
        batch_size: 4,
        seed: 9,
        ..Default::default()
    }
}

#[test]
fn first_batch_loss_matches_an_independent_forward() {
    let (tr, va) = data(1);
    let m = 2;
    let loss = LossConfig {
        stage_weights: vec![0.5, 1.0, 2.0],
        ..LossConfig::uniform(m)
    };
    let init = model(m);
    let report = train(init.clone(), &tr, &va, &loss, &cfg(1), |_| {}).unwrap();
    assert_eq!(report.first_batch_indices.len(), 4);

    let batch = tr.select(&report.first_batch_indices).unwrap();
    let taps = init.forward_all_taps(&batch.images).unwrap();
    // Model output is 32×32 here, the same as the ground truth.
    let want: f64 = taps
        .iter()
        .enumerate()
        .map(|(i, t)| loss.stage_weights[i] * cross_entropy(t, &resize_target(&batch.masks, i, m).unwrap()).unwrap())
        .sum();
    assert!((report.first_batch_loss - want).abs() < 1e-12);
}

#[test]
fn baseline_trains_on_ground_truth_at_input_size() {
    let (tr, va) = data(2);
    let init = model(0);
    let report = train(init.clone(), &tr, &va, &LossConfig::uniform(0), &cfg(1), |_| {}).unwrap();
    let batch = tr.select(&report.first_batch_indices).unwrap();
    let y = init.forward(&batch.images).unwrap();
    let want = cross_entropy(&y, &downscale_mask(&batch.masks, 4).unwrap()).unwrap();
    assert!((report.first_batch_loss - want).abs() < 1e-12);
}

#[test]
fn zero_stage_stack_trains_exactly_like_the_backbone() {
    let (tr, va) = data(3);
    let base = build_unet::<f64>(&backbone(), 3).unwrap();
    let a = train(base.clone(), &tr, &va, &LossConfig::uniform(0), &cfg(3), |_| {}).unwrap();
    let b = train(model(0), &tr, &va, &LossConfig::uniform(0), &cfg(3), |_| {}).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.model.params(), b.model.params());
}

#[test]
fn training_is_deterministic() {
    let (tr, va) = data(4);
    let run = || train(model(2), &tr, &va, &LossConfig::uniform(2), &cfg(3), |_| {}).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.history, b.history);
    assert_eq!(a.model.params(), b.model.params());
    assert_eq!(a.first_batch_indices, b.first_batch_indices);
}

#[test]
fn loss_goes_down() {
    let (tr, va) = data(5);
    for optimizer in [OptimizerKind::Adam, OptimizerKind::Sgd] {
        let c = TrainConfig {
            optimizer,
            lr: if optimizer == OptimizerKind::Sgd { 0.1 } else { 1e-2 },
            patience: 100,
            ..cfg(8)
        };
        let r = train(model(2), &tr, &va, &LossConfig::uniform(2), &c, |_| {}).unwrap();
        let first = r.history.first().unwrap().train_loss;
        let last = r.history.last().unwrap().train_loss;
        assert!(last < first, "{optimizer:?}: {first} -> {last}");
    }
}

#[test]
fn early_stopping_restores_the_best_epoch() {
    let (tr, va) = data(6);
    // An unreachable improvement threshold stops after `patience` idle epochs.
    let c = TrainConfig {
        patience: 2,
        min_delta: 10.0,
        ..cfg(20)
    };
    let mut seen = Vec::new();
    let r = train(model(1), &tr, &va, &LossConfig::uniform(1), &c, |e| seen.push(e.epoch)).unwrap();
    assert_eq!(seen, vec![1, 2, 3]);
    assert_eq!(r.best_epoch, 1);
    assert_eq!(r.best_val_jaccard, r.history[0].val_jaccard);
    let again = upseg_core::train::evaluate_model(&r.model, &va, 4).unwrap();
    assert_eq!(again.macro_mean_jaccard, r.history[0].val_jaccard);
}

#[test]
fn divergence_is_reported() {
    let (tr, va) = data(7);
    let c = TrainConfig { lr: 1e300, ..cfg(5) };
    let err = train(model(1), &tr, &va, &LossConfig::uniform(1), &c, |_| {}).unwrap_err();
    assert!(matches!(err, Error::NonFinite(_)), "{err}");
}

#[test]
fn mismatched_loss_and_model_are_rejected() {
    let (tr, va) = data(8);
    let err = train(model(2), &tr, &va, &LossConfig::uniform(1), &cfg(1), |_| {}).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
    let bad = TrainConfig { batch_size: 0, ..cfg(1) };
    assert!(train(model(0), &tr, &va, &LossConfig::uniform(0), &bad, |_| {}).is_err());
}
