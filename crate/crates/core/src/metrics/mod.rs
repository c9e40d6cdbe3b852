//! Classification metrics, one-vs-rest AUC, the paired t-test and similarity matrices.

mod special;

use std::fmt::Write as _;

pub use special::{ln_gamma, reg_inc_beta, student_t_two_sided};

use crate::consistency::ReferenceSamplePool;
use crate::error::{shape_err, Error, Result};
use crate::numerics::{cosine_similarity, Matrix};

/// Per-class and macro-averaged classification metrics.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub support: Vec<usize>,
    /// Present when scores were supplied.
    pub auc: Option<AucReport>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AucReport {
    /// `None` for classes lacking positives or negatives.
    pub per_class: Vec<Option<f64>>,
    /// Unweighted mean over defined classes.
    pub macro_auc: Option<f64>,
}

impl MetricsReport {
    pub fn macro_auc(&self) -> Option<f64> {
        self.auc.as_ref().and_then(|a| a.macro_auc)
    }

    /// `key = value` lines; undefined values are written as `nan`.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let fmt = |v: Option<f64>| v.map_or_else(|| "nan".to_string(), |x| format!("{x:?}"));
        let _ = writeln!(s, "accuracy = {:?}", self.accuracy);
        let _ = writeln!(s, "macro_precision = {:?}", self.macro_precision);
        let _ = writeln!(s, "macro_recall = {:?}", self.macro_recall);
        let _ = writeln!(s, "macro_f1 = {:?}", self.macro_f1);
        let _ = writeln!(s, "macro_auc = {}", fmt(self.macro_auc()));
        for c in 0..self.support.len() {
            let _ = writeln!(s, "precision_{c} = {:?}", self.precision[c]);
            let _ = writeln!(s, "recall_{c} = {:?}", self.recall[c]);
            let _ = writeln!(s, "f1_{c} = {:?}", self.f1[c]);
            let auc = self.auc.as_ref().and_then(|a| a.per_class[c]);
            let _ = writeln!(s, "auc_{c} = {}", fmt(auc));
            let _ = writeln!(s, "support_{c} = {}", self.support[c]);
        }
        s
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Accuracy and one-vs-rest precision/recall/F1 (0/0 taken as 0), macro-averaged.
pub fn classification_report(pred: &[usize], truth: &[usize], class_count: usize) -> Result<MetricsReport> {
    if pred.len() != truth.len() {
        return Err(shape_err(format!(
            "{} predictions for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::InvalidArgument("classification_report on empty input".into()));
    }
    if let Some(&bad) = pred.iter().chain(truth).find(|&&l| l >= class_count) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} outside [0, {class_count})"
        )));
    }
    let mut tp = vec![0usize; class_count];
    let mut predicted = vec![0usize; class_count];
    let mut support = vec![0usize; class_count];
    for (&p, &t) in pred.iter().zip(truth) {
        predicted[p] += 1;
        support[t] += 1;
        if p == t {
            tp[p] += 1;
        }
    }
    let precision: Vec<f64> = (0..class_count).map(|c| ratio(tp[c], predicted[c])).collect();
    let recall: Vec<f64> = (0..class_count).map(|c| ratio(tp[c], support[c])).collect();
    let f1: Vec<f64> = precision
        .iter()
        .zip(&recall)
        .map(|(&p, &r)| if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) })
        .collect();
    Ok(MetricsReport {
        accuracy: ratio(tp.iter().sum(), pred.len()),
        macro_precision: mean(&precision),
        macro_recall: mean(&recall),
        macro_f1: mean(&f1),
        precision,
        recall,
        f1,
        support,
        auc: None,
    })
}

/// One-vs-rest AUC per class via the Mann–Whitney statistic with midranks.
pub fn auc_ovr(scores: &Matrix, truth: &[usize]) -> Result<AucReport> {
    let (n, c) = scores.shape();
    if n != truth.len() {
        return Err(shape_err(format!("{n} score rows for {} labels", truth.len())));
    }
    if let Some(&bad) = truth.iter().find(|&&l| l >= c) {
        return Err(Error::InvalidArgument(format!("label {bad} outside [0, {c})")));
    }
    if truth.windows(2).all(|w| w[0] == w[1]) {
        return Err(Error::InvalidArgument("AUC needs at least two classes present".into()));
    }
    let per_class: Vec<Option<f64>> = (0..c)
        .map(|k| {
            let col: Vec<f64> = (0..n).map(|i| scores[(i, k)]).collect();
            let positive: Vec<bool> = truth.iter().map(|&t| t == k).collect();
            binary_auc(&col, &positive)
        })
        .collect();
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    let macro_auc = (!defined.is_empty()).then(|| mean(&defined));
    Ok(AucReport { per_class, macro_auc })
}

/// `(wins + ½·ties) / (n_pos·n_neg)` computed from midranks. `None` when either side is empty.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // ranks doubled so midranks stay integral
    let mut rank_sum_x2: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 share the midrank (i+j+2)/2
        let mid_x2 = (i + j + 2) as u64;
        for &o in &order[i..=j] {
            if positive[o] {
                rank_sum_x2 += mid_x2;
            }
        }
        i = j + 1;
    }
    let np = n_pos as u64;
    // 2U = 2·R_pos − n_pos(n_pos+1)
    let u_x2 = rank_sum_x2 - np * (np + 1);
    Some(u_x2 as f64 / 2.0 / (n_pos * n_neg) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub df: usize,
    pub mean_diff: f64,
}

/// Paired two-sided t-test on `a − b`.
///
/// Zero-variance differences follow a fixed convention: all-zero → `t = 0, p = 1`;
/// constant non-zero → `t = ±∞, p = 0`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(shape_err(format!(
            "paired samples of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("paired t-test needs n >= 2, got {n}")));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let m = mean(&d);
    let var = d.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    let df = n - 1;
    if var == 0.0 {
        let (t, p) = if m == 0.0 {
            (0.0, 1.0)
        } else {
            (f64::INFINITY.copysign(m), 0.0)
        };
        return Ok(TTest { t, p, df, mean_diff: m });
    }
    let t = m / (var.sqrt() / (n as f64).sqrt());
    Ok(TTest {
        t,
        p: student_t_two_sided(t, df as f64),
        df,
        mean_diff: m,
    })
}

/// Cosine similarity of each batch row to the first `min(max_cols, occupancy)` pool slots.
pub fn similarity_matrix(batch: &Matrix, pool: &ReferenceSamplePool, max_cols: usize) -> Result<Matrix> {
    if pool.occupancy() == 0 {
        return Err(Error::InvalidArgument("similarity matrix against an empty pool".into()));
    }
    let cols = max_cols.min(pool.occupancy());
    let mut out = Matrix::zeros(batch.rows(), cols);
    for (i, row) in batch.iter_rows().enumerate() {
        for (k, slot) in pool.slots().take(cols).enumerate() {
            out[(i, k)] = cosine_similarity(row, slot)?;
        }
    }
    Ok(out)
}
