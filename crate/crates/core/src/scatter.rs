//! Memory bank of unit-norm keys and the InfoNCE loss that scatters samples.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::numerics::{cosine_similarity, dot, log_sum_exp, norm, Matrix};

/// Allowed deviation of a stored key's norm from 1.
pub const BANK_NORM_TOL: f64 = 1e-10;
/// Allowed deviation of query/positive-key norms from 1 in [`info_nce`].
pub const UNIT_TOL: f64 = 1e-9;

/// Fixed-capacity FIFO of unit-norm keys.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryBank {
    capacity: usize,
    dim: usize,
    slots: VecDeque<Vec<f64>>,
    inserted: u64,
}

impl MemoryBank {
    pub fn new(capacity: usize, dim: usize) -> Result<Self> {
        if capacity == 0 || dim == 0 {
            return Err(Error::InvalidArgument(format!(
                "memory bank needs positive capacity and dim, got {capacity}/{dim}"
            )));
        }
        Ok(Self {
            capacity,
            dim,
            slots: VecDeque::with_capacity(capacity),
            inserted: 0,
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

    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn slots(&self) -> impl Iterator<Item = &[f64]> {
        self.slots.iter().map(Vec::as_slice)
    }

    pub fn slot(&self, k: usize) -> Option<&[f64]> {
        self.slots.get(k).map(Vec::as_slice)
    }

    /// Appends every row of `keys` in order. The whole batch is validated first,
    /// so a rejected batch leaves the bank untouched.
    pub fn enqueue(&mut self, keys: &Matrix) -> Result<()> {
        if keys.cols() != self.dim {
            return Err(shape_err(format!(
                "bank dim {} got {}-wide keys",
                self.dim,
                keys.cols()
            )));
        }
        for (i, row) in keys.iter_rows().enumerate() {
            let n = norm(row);
            if !((n - 1.0).abs() <= BANK_NORM_TOL) {
                return Err(Error::InvalidArgument(format!("key {i} has norm {n}, expected 1")));
            }
        }
        for row in keys.iter_rows() {
            if self.slots.len() == self.capacity {
                self.slots.pop_front();
            }
            self.slots.push_back(row.to_vec());
            self.inserted += 1;
        }
        Ok(())
    }
}

/// Whether the positive logit also appears in the InfoNCE denominator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfoNceVariant {
    /// `−log(e^{l+} / (e^{l+} + Σ_bank e^{l_j}))`, always ≥ 0.
    #[default]
    IncludePositive,
    /// `−log(e^{l+} / Σ_bank e^{l_j})`; may be negative.
    BankOnly,
}

fn check_unit(v: &[f64], what: &str) -> Result<()> {
    let n = norm(v);
    if (n - 1.0).abs() > UNIT_TOL {
        return Err(Error::InvalidArgument(format!("{what} has norm {n}, expected 1")));
    }
    Ok(())
}

/// Single-query InfoNCE with bank negatives. Returns the loss and `∂loss/∂q`;
/// the positive key and bank entries are constants.
pub fn info_nce(
    q: &[f64],
    k_pos: &[f64],
    bank: &MemoryBank,
    tau: f64,
    variant: InfoNceVariant,
) -> Result<(f64, Vec<f64>)> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature {tau} must be > 0")));
    }
    if bank.occupancy() == 0 {
        return Err(Error::EmptyBank);
    }
    if q.len() != bank.dim() || k_pos.len() != bank.dim() {
        return Err(shape_err(format!(
            "query {} / key {} for bank dim {}",
            q.len(),
            k_pos.len(),
            bank.dim()
        )));
    }
    check_unit(q, "query")?;
    check_unit(k_pos, "positive key")?;

    let pos = dot(q, k_pos) / tau;
    let mut logits = Vec::with_capacity(bank.occupancy() + 1);
    if variant == InfoNceVariant::IncludePositive {
        logits.push(pos);
    }
    logits.extend(bank.slots().map(|k| dot(q, k) / tau));
    let lse = log_sum_exp(&logits);
    let loss = lse - pos;

    // ∂/∂q = (Σ_j p_j k_j − k_pos) / τ, with p the softmax over the denominator terms
    let mut grad: Vec<f64> = k_pos.iter().map(|k| -k / tau).collect();
    let mut li = logits.iter();
    if variant == InfoNceVariant::IncludePositive {
        let p = (li.next().unwrap() - lse).exp();
        grad.iter_mut().zip(k_pos).for_each(|(g, k)| *g += p * k / tau);
    }
    for (k, l) in bank.slots().zip(li) {
        let p = (l - lse).exp();
        grad.iter_mut().zip(k).for_each(|(g, kj)| *g += p * kj / tau);
    }
    Ok((loss, grad))
}

/// Mean InfoNCE over rows of `q`/`k_pos`, with its gradient with respect to `q`.
pub fn info_nce_batch(
    q: &Matrix,
    k_pos: &Matrix,
    bank: &MemoryBank,
    tau: f64,
    variant: InfoNceVariant,
) -> Result<(f64, Matrix)> {
    if q.shape() != k_pos.shape() {
        return Err(shape_err(format!(
            "queries {:?} vs keys {:?}",
            q.shape(),
            k_pos.shape()
        )));
    }
    let b = q.rows();
    let mut grad = Matrix::zeros(b, q.cols());
    if b == 0 {
        return Ok((0.0, grad));
    }
    let mut total = 0.0;
    for i in 0..b {
        let (l, g) = info_nce(q.row(i), k_pos.row(i), bank, tau, variant)?;
        total += l;
        grad.row_mut(i).iter_mut().zip(g).for_each(|(o, gi)| *o = gi / b as f64);
    }
    Ok((total / b as f64, grad))
}

/// Mean cosine similarity over all unordered pairs of distinct rows.
pub fn mean_pairwise_cosine(features: &Matrix) -> Result<f64> {
    let n = features.rows();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "mean_pairwise_cosine needs >= 2 rows, got {n}"
        )));
    }
    // Σ_{i<j} û_i·û_j = (|Σ û_i|² − n) / 2
    let mut sum = vec![0.0; features.cols()];
    for (i, row) in features.iter_rows().enumerate() {
        let nr = norm(row);
        if !(nr > crate::numerics::NORM_FLOOR) {
            return Err(Error::ZeroNorm(format!("row {i} of mean_pairwise_cosine")));
        }
        sum.iter_mut().zip(row).for_each(|(s, x)| *s += x / nr);
    }
    let pairs = (n * (n - 1) / 2) as f64;
    if n <= 64 {
        // exact pair loop for small inputs keeps the result identical to the reference definition
        let mut total = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                total += cosine_similarity(features.row(i), features.row(j))?;
            }
        }
        return Ok(total / pairs);
    }
    Ok(((dot(&sum, &sum) - n as f64) / 2.0 / pairs).clamp(-1.0, 1.0))
}

/// Mean pairwise cosine over rows whose norm exceeds the floor. Returns `None`
/// when fewer than two such rows exist.
pub fn mean_pairwise_cosine_nonzero(features: &Matrix) -> Option<f64> {
    let keep: Vec<usize> = features
        .row_norms()
        .iter()
        .enumerate()
        .filter(|(_, &n)| n > crate::numerics::NORM_FLOOR)
        .map(|(i, _)| i)
        .collect();
    if keep.len() < 2 {
        return None;
    }
    mean_pairwise_cosine(&features.select_rows(&keep)).ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn unit(rng: &mut Rng, d: usize) -> Vec<f64> {
        let v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        let n = norm(&v);
        v.into_iter().map(|x| x / n).collect()
    }

    fn bank_of(rows: &[Vec<f64>], capacity: usize) -> MemoryBank {
        let mut b = MemoryBank::new(capacity, rows[0].len()).unwrap();
        b.enqueue(&Matrix::from_rows(rows).unwrap()).unwrap();
        b
    }

    #[test]
    fn uniform_logits_give_log_m_plus_one() {
        // every bank entry equals the positive key
        let k = vec![0.6, 0.8];
        for m in [1usize, 4, 9] {
            let bank = bank_of(&vec![k.clone(); m], m);
            let (loss, _) = info_nce(&[1.0, 0.0], &k, &bank, 0.7, InfoNceVariant::IncludePositive).unwrap();
            assert!((loss - ((m + 1) as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn perfect_positive_drives_loss_to_zero() {
        let bank = bank_of(&[vec![-1.0, 0.0]], 1);
        let (loss, _) = info_nce(&[1.0, 0.0], &[1.0, 0.0], &bank, 0.01, InfoNceVariant::IncludePositive).unwrap();
        // exact value ln(1 + e^-200) is below f64 resolution next to the positive logit
        assert!((0.0..1e-15).contains(&loss));
    }

    #[test]
    fn small_case_matches_direct_formula() {
        let bank = bank_of(&[vec![0.0, 1.0], vec![-1.0, 0.0]], 2);
        let (loss, _) = info_nce(&[1.0, 0.0], &[0.6, 0.8], &bank, 0.7, InfoNceVariant::IncludePositive).unwrap();
        let pos = (0.6f64 / 0.7).exp();
        let want = -(pos / (pos + 1.0 + (-1.0f64 / 0.7).exp())).ln();
        assert!((loss - want).abs() < 1e-14);

        let (loss, _) = info_nce(&[1.0, 0.0], &[0.6, 0.8], &bank, 0.7, InfoNceVariant::BankOnly).unwrap();
        let want = -(pos / (1.0 + (-1.0f64 / 0.7).exp())).ln();
        assert!((loss - want).abs() < 1e-14);
    }

    #[test]
    fn gradient_matches_finite_differences_on_raw_query() {
        // check through q = u/|u| so the perturbation stays valid
        let mut rng = Rng::new(21);
        let rows: Vec<Vec<f64>> = (0..6).map(|_| unit(&mut rng, 5)).collect();
        let bank = bank_of(&rows, 6);
        let k = unit(&mut rng, 5);
        let u: Vec<f64> = (0..5).map(|_| rng.normal()).collect();
        for variant in [InfoNceVariant::IncludePositive, InfoNceVariant::BankOnly] {
            let f = |u: &Matrix| -> Result<f64> {
                let n = norm(u.as_slice());
                let q: Vec<f64> = u.as_slice().iter().map(|x| x / n).collect();
                Ok(info_nce(&q, &k, &bank, 0.7, variant)?.0)
            };
            let um = Matrix::row_vector(&u);
            let numeric = crate::numerics::finite_diff_grad(f, &um, 1e-6).unwrap();
            let n = norm(&u);
            let q: Vec<f64> = u.iter().map(|x| x / n).collect();
            let (_, gq) = info_nce(&q, &k, &bank, 0.7, variant).unwrap();
            let qm = Matrix::row_vector(&q);
            let analytic = crate::numerics::normalize_rows_backward(&qm, &[n], &Matrix::row_vector(&gq));
            assert!(crate::numerics::max_relative_error(&analytic, &numeric).unwrap() < 1e-5);
        }
    }

    #[test]
    fn errors() {
        let bank = MemoryBank::new(2, 2).unwrap();
        assert!(matches!(
            info_nce(&[1.0, 0.0], &[1.0, 0.0], &bank, 0.7, InfoNceVariant::IncludePositive),
            Err(Error::EmptyBank)
        ));
        let bank = bank_of(&[vec![1.0, 0.0]], 2);
        assert!(info_nce(&[2.0, 0.0], &[1.0, 0.0], &bank, 0.7, InfoNceVariant::IncludePositive).is_err());
        assert!(info_nce(&[1.0, 0.0], &[1.0, 0.0], &bank, 0.0, InfoNceVariant::IncludePositive).is_err());
    }

    #[test]
    fn loss_decreases_with_positive_alignment() {
        let bank = bank_of(&[vec![0.0, 1.0]], 1);
        // negatives' logit q·[0,1] is held at 0 by moving k_pos instead of q
        let q = [1.0, 0.0];
        let mut last = f64::INFINITY;
        for t in [0.0f64, 0.3, 0.6, 0.9, 1.2] {
            let k = [t.sin(), t.cos()];
            let (loss, _) = info_nce(&q, &k, &bank, 0.7, InfoNceVariant::IncludePositive).unwrap();
            assert!(loss < last);
            last = loss;
        }
    }

    #[test]
    fn bank_fifo() {
        let mut rng = Rng::new(4);
        let keys: Vec<Vec<f64>> = (0..5).map(|_| unit(&mut rng, 3)).collect();
        let bank = bank_of(&keys, 3);
        assert_eq!(bank.occupancy(), 3);
        for k in 0..3 {
            assert_eq!(bank.slot(k).unwrap(), keys[k + 2].as_slice());
        }
        let mut b = MemoryBank::new(2, 3).unwrap();
        let m = Matrix::from_rows(&keys[..2]).unwrap();
        b.enqueue(&m).unwrap();
        b.enqueue(&m).unwrap();
        assert_eq!(b.slot(0).unwrap(), keys[0].as_slice());
        assert_eq!(b.slot(1).unwrap(), keys[1].as_slice());
        assert!(b.enqueue(&Matrix::row_vector(&[1.0, 1.0, 0.0])).is_err());
        assert_eq!(b.occupancy(), 2);
    }

    #[test]
    fn pairwise_cosine_examples() {
        assert!((mean_pairwise_cosine(&Matrix::filled(3, 2, 1.5)).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(mean_pairwise_cosine(&Matrix::identity(2)).unwrap(), 0.0);
        assert!(mean_pairwise_cosine(&Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn pairwise_cosine_large_matches_pair_loop() {
        let mut rng = Rng::new(6);
        let m = Matrix::from_vec(100, 5, (0..500).map(|_| rng.normal()).collect()).unwrap();
        let mut total = 0.0;
        for i in 0..100 {
            for j in i + 1..100 {
                total += cosine_similarity(m.row(i), m.row(j)).unwrap();
            }
        }
        let want = total / 4950.0;
        assert!((mean_pairwise_cosine(&m).unwrap() - want).abs() < 1e-12);
    }
}
