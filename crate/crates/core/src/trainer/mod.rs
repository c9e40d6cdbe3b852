//! Two-phase training loop, evaluation and run bookkeeping.

mod config;
mod objective;

pub use config::{ablation_preset, TrainConfig, Variant};
pub use objective::{consistency_objective, predict, scatter_objective, supervised_loss, StepLosses};

use std::fmt::Write as _;

use crate::consistency::ReferenceSamplePool;
use crate::datagen::{batch_iter, perturb, Batch, Dataset, SemiSplit, Split};
use crate::error::{Error, Result};
use crate::metrics::{auc_ovr, classification_report, similarity_matrix, MetricsReport};
use crate::network::{
    ema_update, forward, forward_clean, head_dims, init_params, Checkpoint, Parameters, StudentModel, TeacherRole,
    TeacherState,
};
use crate::numerics::{adam_step, normalize_rows_masked, AdamConfig, AdamState, Matrix, Rng, NORM_FLOOR};
use crate::scatter::{mean_pairwise_cosine_nonzero, MemoryBank};

/// Rows of the similarity export.
pub const SIMILARITY_ROWS: usize = 32;
/// Columns (pool slots) of the similarity export.
pub const SIMILARITY_COLS: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Scatter,
    Consistency,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Scatter => "scatter",
            Phase::Consistency => "consistency",
        }
    }

    pub fn of_epoch(epoch: usize, cfg: &TrainConfig) -> Self {
        if epoch < cfg.scatter_epochs {
            Phase::Scatter
        } else {
            Phase::Consistency
        }
    }
}

/// Adam moments for every student parameter, in `named_params` order.
#[derive(Clone, Debug)]
pub struct Optimizer {
    pub config: AdamConfig,
    states: Vec<AdamState>,
}

impl Optimizer {
    pub fn new(model: &StudentModel, config: AdamConfig) -> Self {
        let states = model
            .named_params()
            .iter()
            .map(|(_, m)| AdamState::for_params(m))
            .collect();
        Self { config, states }
    }

    pub fn step(&mut self, model: &mut StudentModel, grads: &StudentModel) -> Result<()> {
        let grads = grads.named_params();
        for ((state, (_, p)), (_, g)) in self.states.iter_mut().zip(model.named_params_mut()).zip(grads) {
            adam_step(p, g, state, &self.config)?;
        }
        Ok(())
    }
}

/// Everything that evolves during a run.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub student: StudentModel,
    pub teacher_sc: TeacherState,
    pub teacher_ss: TeacherState,
    pub optimizer: Optimizer,
    /// Present when RL-c is used by the run.
    pub rsp: Option<ReferenceSamplePool>,
    /// Present when the contrastive term is used by the run.
    pub bank: Option<MemoryBank>,
    pub steps: u64,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig, input_dim: usize, class_count: usize) -> Result<Self> {
        cfg.validate()?;
        let student = init_params(&cfg.layer_dims(input_dim), class_count, &mut Rng::new(cfg.seed))?;
        let teacher_sc = TeacherState::from_student(&student, TeacherRole::SampleConsistency, cfg.ema_consistency)?;
        let teacher_ss = TeacherState::from_student(&student, TeacherRole::SampleScatter, cfg.ema_scatter)?;
        let optimizer = Optimizer::new(&student, AdamConfig::with_lr(cfg.learning_rate));
        let rsp = if cfg.uses_rlc() {
            Some(ReferenceSamplePool::new(cfg.rsp_capacity, cfg.feature_dim)?)
        } else {
            None
        };
        let bank = if cfg.uses_contrastive() {
            Some(MemoryBank::new(cfg.bank_capacity, head_dims(cfg.feature_dim).1)?)
        } else {
            None
        };
        Ok(Self {
            student,
            teacher_sc,
            teacher_ss,
            optimizer,
            rsp,
            bank,
            steps: 0,
        })
    }

    fn update_teachers(&mut self) -> Result<()> {
        ema_update(&mut self.teacher_sc, &self.student)?;
        ema_update(&mut self.teacher_ss, &self.student)
    }
}

fn batch_inputs(dataset: &Dataset, batch: &Batch) -> Result<Matrix> {
    if batch.labeled_count() == 0 {
        return Err(Error::InvalidArgument("batch has no labeled samples".into()));
    }
    Ok(dataset.inputs.select_rows(&batch.indices))
}

/// One scatter-phase step: Adam on `L_s + λ_CL·L_CL`, then bank and pool
/// enqueues, then EMA updates of both teachers.
pub fn scatter_step(
    state: &mut TrainState,
    dataset: &Dataset,
    batch: &Batch,
    cfg: &TrainConfig,
    rng: &Rng,
) -> Result<StepLosses> {
    let x = batch_inputs(dataset, batch)?;
    let x_student = perturb(&x, cfg.noise_student, &mut rng.split("student"))?;
    let ss = forward(
        &state.teacher_ss.net,
        &x,
        cfg.noise_teacher,
        &mut rng.split("teacher_ss"),
    )?;
    let projector = state
        .teacher_ss
        .projector
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("scatter teacher has no projector".into()))?;

    let (losses, grads, keys) = match state.bank.as_ref() {
        Some(bank) => scatter_objective(
            &state.student,
            &x_student,
            &batch.labels,
            &ss.features,
            projector,
            bank,
            cfg.lambda_cl,
            cfg.temperature,
            cfg.infonce,
        )?,
        None => {
            let empty = MemoryBank::new(1, head_dims(cfg.feature_dim).1)?;
            scatter_objective(
                &state.student,
                &x_student,
                &batch.labels,
                &ss.features,
                projector,
                &empty,
                0.0,
                cfg.temperature,
                cfg.infonce,
            )?
        }
    };
    state.optimizer.step(&mut state.student, &grads)?;

    if let Some(bank) = state.bank.as_mut() {
        bank.enqueue(&keys)?;
    }
    if let Some(rsp) = state.rsp.as_mut() {
        let sc = forward(
            &state.teacher_sc.net,
            &x,
            cfg.noise_teacher,
            &mut rng.split("teacher_sc"),
        )?;
        rsp.enqueue(&sc.features)?;
    }
    state.update_teachers()?;
    state.steps += 1;
    Ok(losses)
}

/// One consistency-phase step: Adam on `L_s + λ_A·L_ALC + λ_R·L_RLC` against
/// the pre-step pool, then pool enqueue, then EMA updates of both teachers.
pub fn consistency_step(
    state: &mut TrainState,
    dataset: &Dataset,
    batch: &Batch,
    cfg: &TrainConfig,
    rng: &Rng,
) -> Result<StepLosses> {
    let x = batch_inputs(dataset, batch)?;
    if cfg.lambda_rlc > 0.0 {
        let rsp = state
            .rsp
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("RL-c requires a reference pool".into()))?;
        if !rsp.is_full() {
            return Err(Error::PoolNotFull {
                occupancy: rsp.occupancy(),
                capacity: rsp.capacity(),
            });
        }
    }
    let x_student = perturb(&x, cfg.noise_student, &mut rng.split("student"))?;
    let sc = forward(
        &state.teacher_sc.net,
        &x,
        cfg.noise_teacher,
        &mut rng.split("teacher_sc"),
    )?;
    let (losses, grads) = consistency_objective(
        &state.student,
        &x_student,
        &batch.labels,
        &sc.logits,
        &sc.features,
        state.rsp.as_ref(),
        cfg.lambda_alc,
        cfg.lambda_rlc,
    )?;
    state.optimizer.step(&mut state.student, &grads)?;
    if let Some(rsp) = state.rsp.as_mut() {
        rsp.enqueue(&sc.features)?;
    }
    state.update_teachers()?;
    state.steps += 1;
    Ok(losses)
}

/// Gradient-free pass over the training samples that fills the bank and/or
/// the pool from the current teachers. Stops once every requested buffer is full.
pub fn warm_up(
    state: &mut TrainState,
    dataset: &Dataset,
    split: &SemiSplit,
    cfg: &TrainConfig,
    fill_bank: bool,
    fill_rsp: bool,
    rng: &Rng,
) -> Result<()> {
    let mut order: Vec<usize> = split
        .labeled()
        .iter()
        .map(|&(i, _)| i)
        .chain(split.unlabeled().iter().copied())
        .collect();
    order.sort_unstable();
    rng.split("order").shuffle(&mut order);
    for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
        let bank_done = !fill_bank || state.bank.as_ref().is_none_or(|m| m.occupancy() == m.capacity());
        let rsp_done = !fill_rsp || state.rsp.as_ref().is_none_or(|p| p.is_full());
        if bank_done && rsp_done {
            break;
        }
        let x = dataset.inputs.select_rows(chunk);
        let brng = rng.split_indexed("batch", b as u64);
        if !bank_done {
            let ss = forward(
                &state.teacher_ss.net,
                &x,
                cfg.noise_teacher,
                &mut brng.split("teacher_ss"),
            )?;
            let projector = state.teacher_ss.projector.as_ref().expect("scatter teacher projector");
            let (keys, _, valid) = normalize_rows_masked(&projector.forward(&ss.features)?);
            let rows: Vec<usize> = (0..valid.len()).filter(|&i| valid[i]).collect();
            state.bank.as_mut().unwrap().enqueue(&keys.select_rows(&rows))?;
        }
        if !rsp_done {
            let sc = forward(
                &state.teacher_sc.net,
                &x,
                cfg.noise_teacher,
                &mut brng.split("teacher_sc"),
            )?;
            state.rsp.as_mut().unwrap().enqueue(&sc.features)?;
        }
    }
    Ok(())
}

/// Noise-free student evaluation on a set of sample indices.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub features: Matrix,
    pub predictions: Vec<usize>,
    pub scores: Matrix,
}

pub fn evaluate(student: &StudentModel, dataset: &Dataset, indices: &[usize]) -> Result<Evaluation> {
    if indices.is_empty() {
        return Err(Error::InvalidArgument("evaluation split is empty".into()));
    }
    let x = dataset.inputs.select_rows(indices);
    let truth = dataset.labels_of(indices);
    let out = forward_clean(&student.net, &x)?;
    let (predictions, scores) = predict(&out.logits)?;
    let mut report = classification_report(&predictions, &truth, dataset.class_count)?;
    report.auc = auc_ovr(&scores, &truth).ok();
    Ok(Evaluation {
        report,
        features: out.features,
        predictions,
        scores,
    })
}

/// Per-epoch row of the metric trace. Loss columns hold step means.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub phase: Phase,
    pub losses: StepLosses,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub macro_auc: Option<f64>,
    pub mean_pairwise_cosine: Option<f64>,
}

pub const METRICS_CSV_HEADER: &str =
    "epoch,phase,loss_s,loss_alc,loss_rlc,loss_cl,accuracy,macro_f1,macro_auc,mean_pairwise_cosine";

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:?}"))
}

pub fn metrics_csv(rows: &[EpochRow]) -> String {
    let mut s = String::from(METRICS_CSV_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{:?},{},{},{},{:?},{:?},{},{}",
            r.epoch,
            r.phase.as_str(),
            r.losses.supervised,
            opt(r.losses.alc),
            opt(r.losses.rlc),
            opt(r.losses.contrastive),
            r.accuracy,
            r.macro_f1,
            opt(r.macro_auc),
            opt(r.mean_pairwise_cosine),
        );
    }
    s
}

/// Test-set features captured at one point of the run.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSnapshot {
    /// Number of completed epochs when captured.
    pub epoch: usize,
    pub features: Matrix,
    pub labels: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub config: TrainConfig,
    pub config_hash: String,
    pub dataset_hash: String,
    pub rows: Vec<EpochRow>,
    pub test_report: MetricsReport,
    /// Mean pairwise cosine of test features before training.
    pub test_cosine_initial: Option<f64>,
    /// Mean pairwise cosine of test features after each epoch.
    pub test_cosine: Vec<Option<f64>>,
    /// Test features once the scatter phase is over.
    pub boundary_snapshot: FeatureSnapshot,
    pub final_snapshot: FeatureSnapshot,
    /// Cosine similarities of test features to reference-pool slots after training.
    pub similarity: Option<Matrix>,
    pub state: TrainState,
}

impl RunResult {
    pub fn metrics_csv(&self) -> String {
        metrics_csv(&self.rows)
    }

    /// Test-feature cosine after `epochs` completed epochs (0 = initialisation).
    pub fn test_cosine_after(&self, epochs: usize) -> Option<f64> {
        if epochs == 0 {
            self.test_cosine_initial
        } else {
            self.test_cosine.get(epochs - 1).copied().flatten()
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_models(
            self.config_hash.clone(),
            &self.state.student,
            &[&self.state.teacher_sc, &self.state.teacher_ss],
        )
    }
}

fn mean_losses(sum: &StepLosses, n: usize) -> StepLosses {
    let n = n.max(1) as f64;
    StepLosses {
        supervised: sum.supervised / n,
        alc: sum.alc.map(|v| v / n),
        rlc: sum.rlc.map(|v| v / n),
        contrastive: sum.contrastive.map(|v| v / n),
        total: sum.total / n,
    }
}

fn accumulate(acc: &mut StepLosses, l: &StepLosses) {
    let add = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (None, None) => None,
        (a, b) => Some(a.unwrap_or(0.0) + b.unwrap_or(0.0)),
    };
    acc.supervised += l.supervised;
    acc.alc = add(acc.alc, l.alc);
    acc.rlc = add(acc.rlc, l.rlc);
    acc.contrastive = add(acc.contrastive, l.contrastive);
    acc.total += l.total;
}

/// Full run: optional warm-up, `scatter_epochs` scatter epochs, the remaining
/// consistency epochs, validation after every epoch and a final test evaluation.
pub fn run_experiment(cfg: &TrainConfig, dataset: &Dataset, split: &SemiSplit) -> Result<RunResult> {
    cfg.validate()?;
    dataset.validate()?;
    if split.class_count() != dataset.class_count {
        return Err(Error::InvalidArgument(format!(
            "split has {} classes, dataset {}",
            split.class_count(),
            dataset.class_count
        )));
    }
    let val_idx = dataset.indices(Split::Val);
    let test_idx = dataset.indices(Split::Test);
    if val_idx.is_empty() || test_idx.is_empty() {
        return Err(Error::InvalidArgument(
            "dataset needs non-empty val and test splits".into(),
        ));
    }
    let test_labels = dataset.labels_of(&test_idx);

    let root = Rng::new(cfg.seed);
    let mut state = TrainState::new(cfg, dataset.dim(), dataset.class_count)?;

    let fill_bank = state.bank.is_some();
    let fill_rsp = state.rsp.is_some() && !cfg.has_scatter_phase();
    if fill_bank || fill_rsp {
        warm_up(
            &mut state,
            dataset,
            split,
            cfg,
            fill_bank,
            fill_rsp,
            &root.split("warmup"),
        )?;
    }

    let initial = evaluate(&state.student, dataset, &test_idx)?;
    let test_cosine_initial = mean_pairwise_cosine_nonzero(&initial.features);
    let mut boundary_snapshot = FeatureSnapshot {
        epoch: 0,
        features: initial.features,
        labels: test_labels.clone(),
    };

    let mut rows = Vec::with_capacity(cfg.epochs);
    let mut test_cosine = Vec::with_capacity(cfg.epochs);
    let mut final_features = None;
    for epoch in 0..cfg.epochs {
        let phase = Phase::of_epoch(epoch, cfg);
        if phase == Phase::Consistency && state.rsp.as_ref().is_some_and(|p| !p.is_full()) {
            warm_up(
                &mut state,
                dataset,
                split,
                cfg,
                false,
                true,
                &root.split_indexed("warmup", epoch as u64),
            )?;
        }
        let batches = batch_iter(
            split,
            cfg.batch_size,
            cfg.labeled_per_batch,
            &root.split_indexed("batches", epoch as u64),
        )?;
        let mut sum = StepLosses::default();
        for batch in &batches {
            let step_rng = root.split_indexed("step", state.steps);
            let l = match phase {
                Phase::Scatter => scatter_step(&mut state, dataset, batch, cfg, &step_rng)?,
                Phase::Consistency => consistency_step(&mut state, dataset, batch, cfg, &step_rng)?,
            };
            accumulate(&mut sum, &l);
        }

        let val = evaluate(&state.student, dataset, &val_idx)?;
        let test = evaluate(&state.student, dataset, &test_idx)?;
        test_cosine.push(mean_pairwise_cosine_nonzero(&test.features));
        rows.push(EpochRow {
            epoch,
            phase,
            losses: mean_losses(&sum, batches.len()),
            accuracy: val.report.accuracy,
            macro_f1: val.report.macro_f1,
            macro_auc: val.report.macro_auc(),
            mean_pairwise_cosine: mean_pairwise_cosine_nonzero(&val.features),
        });
        if epoch + 1 == cfg.scatter_epochs {
            boundary_snapshot = FeatureSnapshot {
                epoch: epoch + 1,
                features: test.features.clone(),
                labels: test_labels.clone(),
            };
        }
        final_features = Some(test.features);
    }

    let final_eval = evaluate(&state.student, dataset, &test_idx)?;
    let final_snapshot = FeatureSnapshot {
        epoch: cfg.epochs,
        features: final_features.unwrap_or_else(|| final_eval.features.clone()),
        labels: test_labels,
    };
    let similarity = similarity_export(&state, dataset, split, cfg, &final_snapshot.features)?;
    Ok(RunResult {
        config: cfg.clone(),
        config_hash: cfg.hash(),
        dataset_hash: dataset.content_hash(),
        rows,
        test_report: final_eval.report,
        test_cosine_initial,
        test_cosine,
        boundary_snapshot,
        final_snapshot,
        similarity,
        state,
    })
}

/// Cosine similarities between the first nonzero test features and the
/// reference pool. Runs without a pool use one filled in index order from the
/// consistency teacher's features on the training samples.
fn similarity_export(
    state: &TrainState,
    dataset: &Dataset,
    split: &SemiSplit,
    cfg: &TrainConfig,
    test_features: &Matrix,
) -> Result<Option<Matrix>> {
    let keep: Vec<usize> = test_features
        .row_norms()
        .iter()
        .enumerate()
        .filter(|(_, &n)| n > NORM_FLOOR)
        .map(|(i, _)| i)
        .take(SIMILARITY_ROWS)
        .collect();
    if keep.is_empty() {
        return Ok(None);
    }
    let rows = test_features.select_rows(&keep);
    let owned;
    let pool = match state.rsp.as_ref() {
        Some(p) => p,
        None => {
            let mut train: Vec<usize> = split
                .labeled()
                .iter()
                .map(|&(i, _)| i)
                .chain(split.unlabeled().iter().copied())
                .collect();
            train.sort_unstable();
            let mut p = ReferenceSamplePool::new(cfg.rsp_capacity, cfg.feature_dim)?;
            for chunk in train.chunks(cfg.batch_size) {
                if p.is_full() {
                    break;
                }
                let out = forward_clean(&state.teacher_sc.net, &dataset.inputs.select_rows(chunk))?;
                p.enqueue(&out.features)?;
            }
            owned = p;
            &owned
        }
    };
    if pool.occupancy() == 0 {
        return Ok(None);
    }
    similarity_matrix(&rows, pool, SIMILARITY_COLS).map(Some)
}
