use dtsc_core::datagen::{batch_iter, make_blobs, split_semi, Dataset, SemiSplit, Split};
use dtsc_core::network::{forward, forward_clean, Parameters, TeacherState};
use dtsc_core::numerics::{Matrix, Rng};
use dtsc_core::trainer::{
    consistency_step, evaluate, predict, run_experiment, scatter_step, warm_up, Phase, StepLosses, TrainConfig,
    TrainState, Variant,
};

fn small_config(variant: Variant) -> TrainConfig {
    TrainConfig {
        epochs: 4,
        scatter_epochs: 2,
        hidden_dims: vec![8],
        feature_dim: 8,
        rsp_capacity: 8,
        bank_capacity: 16,
        batch_size: 8,
        labeled_per_batch: 2,
        learning_rate: 1e-2,
        seed: 5,
        ..TrainConfig::default()
    }
    .with_variant(variant)
}

fn data(seed: u64) -> (Dataset, SemiSplit) {
    let mut ds = make_blobs(&[30, 30, 30], 6, 1.0, 0.5, seed).unwrap();
    ds.assign_splits(0.2, 0.2, seed).unwrap();
    let split = split_semi(&ds, 0.2, seed).unwrap();
    (ds, split)
}

fn assert_ledger(l: &StepLosses, cfg: &TrainConfig) {
    let expected = l.supervised
        + cfg.lambda_alc * l.alc.unwrap_or(0.0)
        + cfg.lambda_rlc * l.rlc.unwrap_or(0.0)
        + cfg.lambda_cl * l.contrastive.unwrap_or(0.0);
    assert!((l.total - expected).abs() < 1e-12, "{l:?}");
}

/// Runs the first `steps` steps of each phase by hand, calling `inspect`
/// with the state before and after every step.
fn drive(cfg: &TrainConfig, steps: usize, mut inspect: impl FnMut(Phase, &TrainState, &TrainState, &StepLosses)) {
    let (ds, split) = data(1);
    let mut state = TrainState::new(cfg, ds.dim(), ds.class_count).unwrap();
    let has_bank = state.bank.is_some();
    warm_up(&mut state, &ds, &split, cfg, has_bank, false, &Rng::new(2)).unwrap();
    let batches = batch_iter(&split, cfg.batch_size, cfg.labeled_per_batch, &Rng::new(3)).unwrap();
    for (i, b) in batches.iter().enumerate().take(2 * steps) {
        let before = state.clone();
        let rng = Rng::new(100 + i as u64);
        let (phase, l) = if i < steps {
            (Phase::Scatter, scatter_step(&mut state, &ds, b, cfg, &rng).unwrap())
        } else {
            (
                Phase::Consistency,
                consistency_step(&mut state, &ds, b, cfg, &rng).unwrap(),
            )
        };
        inspect(phase, &before, &state, &l);
    }
}

#[test]
fn loss_ledger_every_step() {
    let cfg = small_config(Variant::Dtsc);
    drive(&cfg, 4, |phase, _, _, l| {
        assert_ledger(l, &cfg);
        match phase {
            Phase::Scatter => assert!(l.contrastive.is_some() && l.alc.is_none() && l.rlc.is_none()),
            Phase::Consistency => assert!(l.contrastive.is_none() && l.alc.is_some() && l.rlc.is_some()),
        }
    });
}

fn ema_of(before: &TeacherState, after_student: &dyn Parameters, eps: f64) -> Matrix {
    let t = before.net.flatten();
    let s = after_student.flatten();
    t.scale(eps).add(&s.scale(1.0 - eps)).unwrap()
}

#[test]
fn teachers_follow_the_post_step_student_every_step() {
    let cfg = small_config(Variant::Dtsc);
    drive(&cfg, 3, |_, before, after, _| {
        assert_eq!(after.steps, before.steps + 1);
        for (b, a, eps) in [
            (&before.teacher_sc, &after.teacher_sc, cfg.ema_consistency),
            (&before.teacher_ss, &after.teacher_ss, cfg.ema_scatter),
        ] {
            let expected = ema_of(b, &after.student.net, eps);
            assert!(a.net.flatten().max_abs_diff(&expected).unwrap() < 1e-12);
        }
        let p_before = before.teacher_ss.projector.as_ref().unwrap();
        let p_after = after.teacher_ss.projector.as_ref().unwrap();
        let eps = cfg.ema_scatter;
        let expected = p_before
            .hidden
            .weights
            .scale(eps)
            .add(&after.student.heads.projector.hidden.weights.scale(1.0 - eps))
            .unwrap();
        assert!(p_after.hidden.weights.max_abs_diff(&expected).unwrap() < 1e-12);
        assert!(after.teacher_sc.projector.is_none());
    });
}

#[test]
fn hidden_labels_never_reach_training() {
    for variant in [Variant::Dtsc, Variant::PureMt, Variant::Baseline] {
        let cfg = small_config(variant);
        let (ds, split) = data(4);
        let mut poisoned = ds.clone();
        for &i in split.unlabeled() {
            poisoned.labels[i] = (poisoned.labels[i] + 1) % poisoned.class_count;
        }
        let a = run_experiment(&cfg, &ds, &split).unwrap();
        let b = run_experiment(&cfg, &poisoned, &split).unwrap();
        assert_eq!(a.state.student, b.state.student, "{variant}");
        assert_eq!(a.metrics_csv(), b.metrics_csv());
    }
}

#[test]
fn evaluation_is_noise_free() {
    let (ds, split) = data(2);
    let cfg = small_config(Variant::Dtsc);
    let run = run_experiment(&cfg, &ds, &split).unwrap();
    let test = ds.indices(Split::Test);
    let e1 = evaluate(&run.state.student, &ds, &test).unwrap();
    let e2 = evaluate(&run.state.student, &ds, &test).unwrap();
    assert_eq!(e1.predictions, e2.predictions);
    assert_eq!(e1.scores, e2.scores);

    let x = ds.inputs.select_rows(&test);
    let clean = forward_clean(&run.state.student.net, &x).unwrap();
    let zero_noise = forward(&run.state.student.net, &x, 0.0, &mut Rng::new(9)).unwrap();
    assert_eq!(clean.logits, zero_noise.logits);
    assert_eq!(predict(&clean.logits).unwrap().0, e1.predictions);
    assert_eq!(run.test_report, e1.report);
}

#[test]
fn noise_settings_do_not_change_the_initial_evaluation() {
    let (ds, split) = data(3);
    let mut cfg = small_config(Variant::Baseline);
    cfg.epochs = 1;
    let a = run_experiment(&cfg, &ds, &split).unwrap();
    cfg.noise_student = 0.7;
    cfg.noise_teacher = 0.0;
    let b = run_experiment(&cfg, &ds, &split).unwrap();
    assert_eq!(a.test_cosine_initial, b.test_cosine_initial);
    assert_ne!(a.state.student, b.state.student);
}

#[test]
fn phase_purity_in_epoch_rows() {
    let (ds, split) = data(5);
    let run = run_experiment(&small_config(Variant::Dtsc), &ds, &split).unwrap();
    for row in &run.rows {
        match row.phase {
            Phase::Scatter => assert!(row.losses.alc.is_none() && row.losses.rlc.is_none()),
            Phase::Consistency => assert!(row.losses.contrastive.is_none()),
        }
    }
    let csv = run.metrics_csv();
    let scatter_row = csv.lines().nth(1).unwrap();
    let fields: Vec<&str> = scatter_row.split(',').collect();
    assert_eq!(fields[1], "scatter");
    assert_eq!((fields[3], fields[4]), ("", ""));
    assert!(!fields[5].is_empty());
}

#[test]
fn converged_run_fits_its_labeled_subset() {
    let mut ds = make_blobs(&[20, 20], 4, 3.0, 0.3, 11).unwrap();
    ds.assign_splits(0.25, 0.25, 11).unwrap();
    let split = split_semi(&ds, 0.5, 11).unwrap();
    let cfg = TrainConfig {
        epochs: 30,
        ..small_config(Variant::Baseline)
    };
    let run = run_experiment(&cfg, &ds, &split).unwrap();
    let labeled: Vec<usize> = split.labeled().iter().map(|&(i, _)| i).collect();
    let e = evaluate(&run.state.student, &ds, &labeled).unwrap();
    assert!(e.report.accuracy > 0.99, "{}", e.report.accuracy);
}

#[test]
fn untrained_network_is_near_chance() {
    let mut total = 0.0;
    let seeds = 40;
    for seed in 0..seeds {
        let mut ds = make_blobs(&[50; 4], 8, 1.0, 1.0, seed).unwrap();
        ds.assign_splits(0.1, 0.5, seed).unwrap();
        let cfg = TrainConfig {
            seed,
            ..TrainConfig::default()
        };
        let state = TrainState::new(&cfg, ds.dim(), ds.class_count).unwrap();
        total += evaluate(&state.student, &ds, &ds.indices(Split::Test))
            .unwrap()
            .report
            .accuracy;
    }
    let mean = total / seeds as f64;
    assert!((mean - 0.25).abs() < 0.05, "{mean}");
}
