//! Reference sample pool, relative-location features and the two consistency losses.
//!
//! A sample's relative location is the vector of cosine similarities between
//! its feature and every reference feature in the pool, in pool order.
//! Absolute-location consistency compares softmax predictions of two views;
//! relative-location consistency compares their relative locations.

use std::collections::VecDeque;

use crate::error::{shape_err, Error, Result};
use crate::numerics::{cosine_similarity, dot, norm, softmax_rows, Matrix, NORM_FLOOR};

/// Fixed-capacity FIFO of reference feature vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceSamplePool {
    capacity: usize,
    dim: usize,
    slots: VecDeque<Vec<f64>>,
    inserted: u64,
    skipped: u64,
}

impl ReferenceSamplePool {
    pub fn new(capacity: usize, dim: usize) -> Result<Self> {
        if capacity == 0 || dim == 0 {
            return Err(Error::InvalidArgument(format!(
                "reference pool needs positive capacity and dim, got {capacity}/{dim}"
            )));
        }
        Ok(Self {
            capacity,
            dim,
            slots: VecDeque::with_capacity(capacity),
            inserted: 0,
            skipped: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn occupancy(&self) -> usize {
        self.slots.len()
    }

    pub fn is_full(&self) -> bool {
        self.slots.len() == self.capacity
    }

    /// Total vectors accepted so far.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    /// Vectors rejected for having a norm below the floor.
    pub fn skipped(&self) -> u64 {
        self.skipped
    }

    pub fn slot(&self, k: usize) -> Option<&[f64]> {
        self.slots.get(k).map(Vec::as_slice)
    }

    pub fn slots(&self) -> impl Iterator<Item = &[f64]> {
        self.slots.iter().map(Vec::as_slice)
    }

    /// Appends every row of `features` in order, evicting the oldest beyond capacity.
    /// Rows with norm at or below the floor are skipped and counted.
    pub fn enqueue(&mut self, features: &Matrix) -> Result<()> {
        if features.cols() != self.dim {
            return Err(shape_err(format!(
                "pool dim {} got {}-wide features",
                self.dim,
                features.cols()
            )));
        }
        features.ensure_finite("pool enqueue")?;
        for row in features.iter_rows() {
            if !(norm(row) > NORM_FLOOR) {
                self.skipped += 1;
                continue;
            }
            if self.slots.len() == self.capacity {
                self.slots.pop_front();
            }
            self.slots.push_back(row.to_vec());
            self.inserted += 1;
        }
        Ok(())
    }

    /// Current contents as an occupancy × dim matrix, oldest first.
    pub fn snapshot(&self) -> Matrix {
        let mut m = Matrix::zeros(self.slots.len(), self.dim);
        for (i, s) in self.slots.iter().enumerate() {
            m.row_mut(i).copy_from_slice(s);
        }
        m
    }

    /// Numerical rank of the stored vectors (modified Gram-Schmidt, relative tolerance `tol`).
    pub fn numerical_rank(&self, tol: f64) -> usize {
        let mut basis: Vec<Vec<f64>> = Vec::new();
        for s in &self.slots {
            let scale = norm(s);
            let mut v = s.clone();
            for b in &basis {
                let p = dot(&v, b);
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
            }
            let n = norm(&v);
            if n > tol * scale {
                v.iter_mut().for_each(|x| *x /= n);
                basis.push(v);
            }
        }
        basis.len()
    }
}

/// Cosine similarities to each pool slot, in pool order.
#[derive(Clone, Debug, PartialEq)]
pub struct RelativeLocation {
    pub values: Vec<f64>,
}

pub fn relative_location(a: &[f64], pool: &ReferenceSamplePool) -> Result<RelativeLocation> {
    if !pool.is_full() {
        return Err(Error::PoolNotFull {
            occupancy: pool.occupancy(),
            capacity: pool.capacity(),
        });
    }
    if a.len() != pool.dim() {
        return Err(shape_err(format!(
            "feature of width {} for pool dim {}",
            a.len(),
            pool.dim()
        )));
    }
    let values = pool
        .slots()
        .map(|s| cosine_similarity(a, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(RelativeLocation { values })
}

/// Relative locations for every row of `features` (batch × K).
pub fn relative_location_batch(features: &Matrix, pool: &ReferenceSamplePool) -> Result<Matrix> {
    let mut out = Matrix::zeros(features.rows(), pool.capacity());
    for (i, row) in features.iter_rows().enumerate() {
        let r = relative_location(row, pool)?;
        out.row_mut(i).copy_from_slice(&r.values);
    }
    Ok(out)
}

/// Mean squared error between softmax predictions, averaged over batch and classes.
///
/// Returns the loss and its gradient with respect to `student_logits`; the
/// teacher side is constant.
pub fn alc_loss(student_logits: &Matrix, teacher_logits: &Matrix) -> Result<(f64, Matrix)> {
    if student_logits.shape() != teacher_logits.shape() {
        return Err(shape_err(format!(
            "AL-c logits {:?} vs {:?}",
            student_logits.shape(),
            teacher_logits.shape()
        )));
    }
    let (b, c) = student_logits.shape();
    if b == 0 || c == 0 {
        return Ok((0.0, Matrix::zeros(b, c)));
    }
    let p = softmax_rows(student_logits)?;
    let t = softmax_rows(teacher_logits)?;
    let n = (b * c) as f64;

    let mut loss = 0.0;
    let mut grad = Matrix::zeros(b, c);
    for r in 0..b {
        let (pr, tr) = (p.row(r), t.row(r));
        let dp: Vec<f64> = pr.iter().zip(tr).map(|(x, y)| 2.0 * (x - y) / n).collect();
        loss += pr.iter().zip(tr).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
        // softmax Jacobian-vector product: ds_j = p_j (dp_j − Σ_i p_i dp_i)
        let inner = dot(pr, &dp);
        for ((g, &pj), &dpj) in grad.row_mut(r).iter_mut().zip(pr).zip(&dp) {
            *g = pj * (dpj - inner);
        }
    }
    Ok((loss / n, grad))
}

/// Mean squared error between two relative-location vectors, with the gradient
/// with respect to the student's vector.
pub fn rlc_loss(r_student: &[f64], r_teacher: &[f64]) -> Result<(f64, Vec<f64>)> {
    if r_student.len() != r_teacher.len() {
        return Err(shape_err(format!(
            "RL-c vectors of length {} and {}",
            r_student.len(),
            r_teacher.len()
        )));
    }
    if r_student.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let k = r_student.len() as f64;
    let loss = r_student
        .iter()
        .zip(r_teacher)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / k;
    let grad = r_student
        .iter()
        .zip(r_teacher)
        .map(|(a, b)| 2.0 * (a - b) / k)
        .collect();
    Ok((loss, grad))
}

/// Batch RL-c: mean over rows of [`rlc_loss`] between the student's relative
/// locations (computed from `student_features` against `pool`) and the given
/// teacher relative locations. The gradient is taken through the cosine
/// similarities into the student features; pool entries are constants.
pub fn rlc_batch_loss(
    student_features: &Matrix,
    teacher_relative: &Matrix,
    pool: &ReferenceSamplePool,
) -> Result<(f64, Matrix)> {
    let b = student_features.rows();
    if teacher_relative.shape() != (b, pool.capacity()) {
        return Err(shape_err(format!(
            "teacher relative locations {:?}, expected ({b}, {})",
            teacher_relative.shape(),
            pool.capacity()
        )));
    }
    let mut grad = Matrix::zeros(b, student_features.cols());
    if b == 0 {
        return Ok((0.0, grad));
    }
    let slot_norms: Vec<f64> = pool.slots().map(norm).collect();
    let mut total = 0.0;
    for i in 0..b {
        let a = student_features.row(i);
        let r = relative_location(a, pool)?;
        let (loss, dr) = rlc_loss(&r.values, teacher_relative.row(i))?;
        total += loss;

        // ∂R_k/∂a = s_k/(|a||s_k|) − R_k a/|a|²
        let na = norm(a);
        let g = grad.row_mut(i);
        let mut radial = 0.0;
        for ((s, &ns), (&drk, &rk)) in pool.slots().zip(&slot_norms).zip(dr.iter().zip(&r.values)) {
            let w = drk / (b as f64 * na * ns);
            g.iter_mut().zip(s).for_each(|(gj, sj)| *gj += w * sj);
            radial += drk * rk;
        }
        let scale = radial / (b as f64 * na * na);
        g.iter_mut().zip(a).for_each(|(gj, aj)| *gj -= scale * aj);
    }
    Ok((total / b as f64, grad))
}
