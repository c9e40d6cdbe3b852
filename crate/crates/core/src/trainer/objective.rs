use crate::consistency::{alc_loss, relative_location_batch, rlc_batch_loss, ReferenceSamplePool};
use crate::error::{shape_err, Error, Result};
use crate::network::{backward, forward_clean, heads_backward, heads_forward, Mlp2, StudentModel};
use crate::numerics::{log_sum_exp, softmax_rows, Matrix, NORM_FLOOR};
use crate::scatter::{info_nce_batch, InfoNceVariant, MemoryBank};

/// Loss breakdown of one step. Terms that belong to the other phase are `None`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepLosses {
    pub supervised: f64,
    pub alc: Option<f64>,
    pub rlc: Option<f64>,
    pub contrastive: Option<f64>,
    pub total: f64,
}

/// Mean cross-entropy over rows with a label, and its gradient on all logits
/// (zero rows for unlabeled samples).
pub fn supervised_loss(logits: &Matrix, labels: &[Option<usize>]) -> Result<(f64, Matrix)> {
    if labels.len() != logits.rows() {
        return Err(shape_err(format!(
            "{} labels for {} logit rows",
            labels.len(),
            logits.rows()
        )));
    }
    let n_labeled = labels.iter().filter(|l| l.is_some()).count();
    if n_labeled == 0 {
        return Err(Error::InvalidArgument("batch has no labeled samples".into()));
    }
    let c = logits.cols();
    let mut grad = Matrix::zeros(logits.rows(), c);
    let mut loss = 0.0;
    for (r, label) in labels.iter().enumerate() {
        let Some(y) = *label else { continue };
        if y >= c {
            return Err(Error::InvalidArgument(format!("label {y} for {c} classes")));
        }
        let z = logits.row(r);
        let lse = log_sum_exp(z);
        loss += lse - z[y];
        for (j, g) in grad.row_mut(r).iter_mut().enumerate() {
            *g = ((z[j] - lse).exp() - if j == y { 1.0 } else { 0.0 }) / n_labeled as f64;
        }
    }
    Ok((loss / n_labeled as f64, grad))
}

/// Scatter-phase objective `L_s + λ_CL·L_CL` at fixed (already perturbed) inputs.
///
/// `x_student` is the student's noisy view, `teacher_features` the scatter
/// teacher's backbone output on its own view. Returns the loss breakdown, the
/// gradient for every student parameter, and the normalised teacher keys.
/// Rows whose query or key has zero norm are left out of L_CL and of the keys.
#[allow(clippy::too_many_arguments)]
pub fn scatter_objective(
    student: &StudentModel,
    x_student: &Matrix,
    labels: &[Option<usize>],
    teacher_features: &Matrix,
    teacher_projector: &Mlp2,
    bank: &MemoryBank,
    lambda_cl: f64,
    temperature: f64,
    variant: InfoNceVariant,
) -> Result<(StepLosses, StudentModel, Matrix)> {
    let out = forward_clean(&student.net, x_student)?;
    let (l_s, d_logits) = supervised_loss(&out.logits, labels)?;
    let mut grads = student.zeros_like();
    let mut d_features = Matrix::zeros(out.features.rows(), out.features.cols());

    let heads = heads_forward(&student.heads, teacher_projector, &out.features, teacher_features)?;
    let rows: Vec<usize> = (0..heads.valid.len()).filter(|&i| heads.valid[i]).collect();
    let mut l_cl = 0.0;
    if lambda_cl > 0.0 && !rows.is_empty() {
        let (loss, dq_valid) = info_nce_batch(
            &heads.q.select_rows(&rows),
            &heads.k.select_rows(&rows),
            bank,
            temperature,
            variant,
        )?;
        l_cl = loss;
        let mut dq = Matrix::zeros(heads.q.rows(), heads.q.cols());
        for (j, &i) in rows.iter().enumerate() {
            for (o, g) in dq.row_mut(i).iter_mut().zip(dq_valid.row(j)) {
                *o = lambda_cl * g;
            }
        }
        let (g_heads, da) = heads_backward(&student.heads, &heads, &dq)?;
        grads.heads = g_heads;
        d_features = da;
    }

    let (g_net, _) = backward(&student.net, &out.cache, &d_features, &d_logits)?;
    grads.net = g_net;
    let losses = StepLosses {
        supervised: l_s,
        alc: None,
        rlc: None,
        contrastive: Some(l_cl),
        total: l_s + lambda_cl * l_cl,
    };
    Ok((losses, grads, heads.k.select_rows(&rows)))
}

/// Consistency-phase objective `L_s + λ_A·L_ALC + λ_R·L_RLC` at fixed inputs.
///
/// RL-c is averaged over rows whose student and teacher features both have a
/// nonzero norm; other rows contribute nothing to that term.
#[allow(clippy::too_many_arguments)]
pub fn consistency_objective(
    student: &StudentModel,
    x_student: &Matrix,
    labels: &[Option<usize>],
    teacher_logits: &Matrix,
    teacher_features: &Matrix,
    pool: Option<&ReferenceSamplePool>,
    lambda_alc: f64,
    lambda_rlc: f64,
) -> Result<(StepLosses, StudentModel)> {
    let out = forward_clean(&student.net, x_student)?;
    let (l_s, mut d_logits) = supervised_loss(&out.logits, labels)?;
    let mut d_features = Matrix::zeros(out.features.rows(), out.features.cols());

    let mut l_alc = 0.0;
    if lambda_alc > 0.0 {
        let (loss, g) = alc_loss(&out.logits, teacher_logits)?;
        l_alc = loss;
        d_logits.axpy(lambda_alc, &g)?;
    }

    let mut l_rlc = 0.0;
    if lambda_rlc > 0.0 {
        let pool = pool.ok_or_else(|| Error::InvalidArgument("RL-c requires a reference pool".into()))?;
        if teacher_features.shape() != out.features.shape() {
            return Err(shape_err("teacher and student features differ in shape"));
        }
        let s_norms = out.features.row_norms();
        let t_norms = teacher_features.row_norms();
        let keep: Vec<usize> = (0..s_norms.len())
            .filter(|&i| s_norms[i] > NORM_FLOOR && t_norms[i] > NORM_FLOOR)
            .collect();
        if !keep.is_empty() {
            let a_s = out.features.select_rows(&keep);
            let r_t = relative_location_batch(&teacher_features.select_rows(&keep), pool)?;
            let (loss, da) = rlc_batch_loss(&a_s, &r_t, pool)?;
            l_rlc = loss;
            for (j, &i) in keep.iter().enumerate() {
                for (o, g) in d_features.row_mut(i).iter_mut().zip(da.row(j)) {
                    *o = lambda_rlc * g;
                }
            }
        }
    }

    let (g_net, _) = backward(&student.net, &out.cache, &d_features, &d_logits)?;
    let mut grads = student.zeros_like();
    grads.net = g_net;
    let losses = StepLosses {
        supervised: l_s,
        alc: Some(l_alc),
        rlc: Some(l_rlc),
        contrastive: None,
        total: l_s + lambda_alc * l_alc + lambda_rlc * l_rlc,
    };
    Ok((losses, grads))
}

/// Softmax scores and argmax predictions (ties go to the lowest class index).
pub fn predict(logits: &Matrix) -> Result<(Vec<usize>, Matrix)> {
    let scores = softmax_rows(logits)?;
    let pred = logits
        .iter_rows()
        .map(|r| {
            r.iter()
                .enumerate()
                .fold(
                    (0, f64::NEG_INFINITY),
                    |best, (j, &v)| if v > best.1 { (j, v) } else { best },
                )
                .0
        })
        .collect();
    Ok((pred, scores))
}
