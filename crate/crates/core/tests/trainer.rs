use scatternet_core::loss::{merge_identical_classes, WeightMatrix};
use scatternet_core::pipeline::{make_synthetic_dataset, prepare_examples, synthetic_weights, AugmentConfig, Example};
use scatternet_core::trainer::*;
use scatternet_core::Error;

#[test]
fn first_adam_step_moves_by_the_learning_rate() {
    let cfg = AdamConfig::default();
    let mut p = [1.0f64, -2.0, 0.5];
    let g = [0.5f64, -3.0, 1e-3];
    let mut state = AdamState::new(&[3]);
    adam_step(&mut [&mut p[..]], &[&g[..]], &mut state, 0.003, &cfg).unwrap();
    // bias-corrected moments are g and g², so each step is lr·g/(|g| + eps)
    for ((after, before), gi) in p.iter().zip([1.0, -2.0, 0.5]).zip(g) {
        let want = before - 0.003 * gi / (gi.abs() + 1e-8);
        assert!((after - want).abs() < 1e-15, "{after} vs {want}");
    }
    assert_eq!(state.step, 1);
}

#[test]
fn zero_gradient_leaves_parameters_unchanged() {
    let mut p = [1.5f32, -0.25];
    let mut state = AdamState::new(&[2]);
    for _ in 0..5 {
        adam_step(&mut [&mut p[..]], &[&[0.0f32, 0.0][..]], &mut state, 0.01, &AdamConfig::default()).unwrap();
    }
    assert_eq!(p, [1.5, -0.25]);
}

#[test]
fn adam_minimizes_a_quadratic() {
    let mut x = [0.0f64];
    let mut state = AdamState::new(&[1]);
    for _ in 0..2000 {
        let g = [2.0 * (x[0] - 3.0)];
        adam_step(&mut [&mut x[..]], &[&g[..]], &mut state, 0.05, &AdamConfig::default()).unwrap();
    }
    assert!((x[0] - 3.0).abs() < 1e-2, "{}", x[0]);
}

#[test]
fn adam_rejects_mismatched_shapes() {
    let mut p = [0.0f64; 3];
    let mut state = AdamState::new(&[3]);
    let err = adam_step(&mut [&mut p[..]], &[&[0.0; 2][..]], &mut state, 0.1, &AdamConfig::default());
    assert!(matches!(err, Err(Error::Contract(_))));
    let err = adam_step(&mut [&mut p[..]], &[], &mut state, 0.1, &AdamConfig::default());
    assert!(matches!(err, Err(Error::Contract(_))));
}

#[test]
fn plateau_schedule_reduces_after_patience() {
    let mut s = PlateauScheduler::new(0.003, 12, 0.1, 1e-6, 1e-6);
    assert_eq!(s.step(1.0), 0.003);
    for _ in 0..11 {
        assert_eq!(s.step(1.0), 0.003);
    }
    let lr = s.step(1.0);
    assert!((lr - 0.0003).abs() < 1e-15);
    // improvements reset the counter
    for i in 0..20 {
        s.step(0.5 - 0.01 * i as f64);
    }
    assert!((s.lr - 0.0003).abs() < 1e-15);
    for _ in 0..12 {
        s.step(1.0);
    }
    assert!((s.lr - 0.00003).abs() < 1e-15);
    // a change within the tolerance is not an improvement
    let mut s = PlateauScheduler::new(1.0, 2, 0.5, 1e-3, 0.3);
    s.step(1.0);
    s.step(0.9995);
    assert_eq!(s.step(0.9991), 0.5);
    s.step(0.9991);
    assert_eq!(s.step(0.9991), 0.3);
}

#[test]
fn config_entries_round_trip() {
    let mut cfg = TrainConfig::with_preset("tiny").unwrap();
    cfg.apply(&[("lr", "0.01"), ("normalization", "pooled"), ("aug.power_freq", "49..51"), ("window", "512"), ("variant", "baseline")])
        .unwrap();
    let mut back = TrainConfig::default();
    back.apply(&cfg.entries()).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(back.model.window, 512);

    // preset is applied before other keys regardless of order
    let mut late = TrainConfig::default();
    late.apply(&[("window", "512"), ("preset", "tiny")]).unwrap();
    assert_eq!(late.model.window, 512);
    assert_eq!(late.model.stem_channels, 12);

    assert!(matches!(cfg.set("learning_rate", "1"), Err(Error::Config(_))));
    assert!(matches!(cfg.set("lr", "fast"), Err(Error::Config(_))));
    cfg.lr = -1.0;
    assert!(cfg.validate().is_err());
}

fn synthetic(n: usize, k: usize, seed: u64) -> (WeightMatrix, Vec<Example>) {
    let records = make_synthetic_dataset(n, k, seed).unwrap();
    let classes = merge_identical_classes(&synthetic_weights(k));
    (classes.matrix.clone(), prepare_examples(&records, &classes))
}

fn small_config() -> TrainConfig {
    let mut cfg = TrainConfig::with_preset("tiny").unwrap();
    cfg.batch_size = 4;
    cfg.max_epochs = 2;
    cfg.seed = 5;
    cfg
}

#[test]
fn training_is_bit_reproducible() {
    let (wm, ex) = synthetic(8, 3, 1);
    let run = || {
        let mut t = Trainer::new(small_config(), wm.clone(), ex.clone(), ex[..2].to_vec()).unwrap();
        let losses: Vec<u64> = (0..3).map(|b| t.train_step(&[b, b + 1, b + 4], b).unwrap().to_bits()).collect();
        let params: Vec<u32> = t.model().params().iter().flat_map(|p| p.value.data().iter().map(|v| v.to_bits())).collect();
        (losses, params)
    };
    assert_eq!(run(), run());
}

#[test]
fn epochs_log_and_keep_the_best_snapshot() {
    let (wm, ex) = synthetic(12, 3, 2);
    let mut cfg = small_config();
    cfg.max_epochs = 3;
    let mut t = Trainer::new(cfg, wm, ex[..9].to_vec(), ex[9..].to_vec()).unwrap();
    let best = t.fit().unwrap();
    let hist = t.history();
    assert_eq!(hist.len(), 3);
    assert!(hist.iter().all(|h| h.train_loss.is_finite() && h.lr == 0.003));
    let top = hist.iter().map(|h| h.val_score).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(best.best_score, Some(top));
    let first_top = hist.iter().position(|h| h.val_score == top).unwrap();
    assert_eq!(best.epoch, first_top + 1);
    // the snapshot reproduces its own validation score
    let report = evaluate(&best.model, &ex[9..], &best.weights, &best.config).unwrap();
    assert_eq!(report.score, top);
}

#[test]
fn evaluation_is_deterministic_and_checks_dimensions() {
    let (wm, ex) = synthetic(6, 3, 3);
    let t = Trainer::new(small_config(), wm.clone(), ex.clone(), ex.clone()).unwrap();
    let a = evaluate(t.model(), &ex, &wm, &small_config()).unwrap();
    let b = evaluate(t.model(), &ex, &wm, &small_config()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.ids.len(), ex.len());
    assert!(a.probabilities.iter().flatten().all(|p| (0.0..=1.0).contains(p)));
    assert!((0.0..=1.0).contains(&a.score));

    let other = synthetic_weights(4);
    assert!(matches!(evaluate(t.model(), &ex, &other, &small_config()), Err(Error::Data(_))));
    assert!(matches!(evaluate(t.model(), &[], &wm, &small_config()), Err(Error::Data(_))));
}

#[test]
fn non_finite_input_aborts_with_context() {
    let (wm, mut ex) = synthetic(4, 2, 4);
    ex[0].signal.iter_mut().for_each(|v| *v = f32::NAN);
    let mut cfg = small_config();
    cfg.augment = AugmentConfig::none();
    let mut t = Trainer::new(cfg, wm, ex.clone(), ex).unwrap();
    match t.run_epoch() {
        Err(Error::NumericalAbort { epoch, lr, .. }) => {
            assert_eq!(epoch, 0);
            assert_eq!(lr, 0.003);
        }
        other => panic!("expected an abort, got {other:?}"),
    }
}

#[test]
fn trainer_rejects_mismatched_targets() {
    let (_, ex) = synthetic(4, 2, 4);
    let err = Trainer::new(small_config(), synthetic_weights(3), ex.clone(), ex);
    assert!(matches!(err, Err(Error::Data(_))));
}

#[test]
fn gradient_suite_passes() {
    let results = gradient_suite(3, 1).unwrap();
    assert!(results.len() > 25);
    for r in &results {
        assert!(r.passed(), "{}: {:?}", r.name, r.report);
    }
}
