use super::matrix::{dot, norm, Matrix};
use crate::error::{shape_err, Error, Result};

/// Norms at or below this are treated as zero vectors.
pub const NORM_FLOOR: f64 = 1e-12;

/// Row-wise softmax with per-row max subtraction.
pub fn softmax_rows(m: &Matrix) -> Result<Matrix> {
    m.ensure_finite("softmax input")?;
    let mut out = m.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    Ok(out)
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

/// `ln Σ exp(x_i)`, shifted by the maximum.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(shape_err(format!(
            "cosine of length {} and {} vectors",
            u.len(),
            v.len()
        )));
    }
    let (nu, nv) = (norm(u), norm(v));
    if !(nu > NORM_FLOOR && nv > NORM_FLOOR) {
        return Err(Error::ZeroNorm("cosine_similarity".into()));
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// Row-wise L2 normalisation. Returns the normalised rows and the original norms.
pub fn normalize_rows(m: &Matrix) -> Result<(Matrix, Vec<f64>)> {
    let mut out = m.clone();
    let mut norms = Vec::with_capacity(m.rows());
    for r in 0..m.rows() {
        let n = norm(m.row(r));
        if !(n > NORM_FLOOR) {
            return Err(Error::ZeroNorm(format!("row {r} of normalize_rows")));
        }
        out.row_mut(r).iter_mut().for_each(|x| *x /= n);
        norms.push(n);
    }
    Ok((out, norms))
}

/// Like [`normalize_rows`], but rows with norm at or below [`NORM_FLOOR`] are
/// left as zero rows and flagged `false` instead of failing.
pub fn normalize_rows_masked(m: &Matrix) -> (Matrix, Vec<f64>, Vec<bool>) {
    let mut out = m.clone();
    let mut norms = Vec::with_capacity(m.rows());
    let mut valid = Vec::with_capacity(m.rows());
    for r in 0..m.rows() {
        let n = norm(m.row(r));
        let ok = n > NORM_FLOOR;
        if ok {
            out.row_mut(r).iter_mut().for_each(|x| *x /= n);
        } else {
            out.row_mut(r).fill(0.0);
        }
        norms.push(n);
        valid.push(ok);
    }
    (out, norms, valid)
}

/// Pulls a gradient on normalised rows `y = x/|x|` back onto `x`:
/// `dx = (dy − y (y·dy)) / |x|`. Rows with a norm at the floor get zero gradient.
pub fn normalize_rows_backward(normalized: &Matrix, norms: &[f64], dy: &Matrix) -> Matrix {
    let mut dx = Matrix::zeros(dy.rows(), dy.cols());
    for (r, &n) in norms.iter().enumerate().take(dy.rows()) {
        if !(n > NORM_FLOOR) {
            continue;
        }
        let y = normalized.row(r);
        let g = dy.row(r);
        let proj = dot(y, g);
        for ((o, &yi), &gi) in dx.row_mut(r).iter_mut().zip(y).zip(g) {
            *o = (gi - yi * proj) / n;
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn masked_normalization_zeroes_degenerate_rows() {
        let m = Matrix::from_rows(&[[3.0, 4.0], [0.0, 0.0]]).unwrap();
        let (y, norms, valid) = normalize_rows_masked(&m);
        assert_eq!(y.as_slice(), &[0.6, 0.8, 0.0, 0.0]);
        assert_eq!(valid, [true, false]);
        let dx = normalize_rows_backward(&y, &norms, &Matrix::from_rows(&[[1.0, 0.0], [1.0, 1.0]]).unwrap());
        assert_eq!(dx.row(1), &[0.0, 0.0]);
    }

    #[test]
    fn softmax_symmetric_and_stable() {
        let m = Matrix::from_rows(&[[0.0, 0.0], [1000.0, 1000.0]]).unwrap();
        let s = softmax_rows(&m).unwrap();
        assert_eq!(s.as_slice(), &[0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn softmax_matches_direct_formula() {
        let s = softmax_rows(&Matrix::row_vector(&[1.0, 2.0, 3.0])).unwrap();
        // direct e^{x-3}/Σ, summed smallest-first
        let e = [(-2.0f64).exp(), (-1.0f64).exp(), 1.0];
        let z = e[0] + e[1] + e[2];
        for (got, want) in s.as_slice().iter().zip(e.iter().map(|x| x / z)) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_rejects_non_finite() {
        let m = Matrix::row_vector(&[f64::INFINITY, 0.0]);
        assert!(softmax_rows(&m).is_err());
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&[3.0, 4.0], &[3.0, 4.0]).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let want = 11.0 / (5f64.sqrt() * 25f64.sqrt());
        let got = cosine_similarity(&[1.0, 2.0], &[3.0, 4.0]).unwrap();
        assert!((got - want).abs() < 1e-15);
    }

    #[test]
    fn cosine_errors() {
        assert!(matches!(cosine_similarity(&[1.0], &[1.0, 2.0]), Err(Error::Shape(_))));
        assert!(matches!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 2.0]),
            Err(Error::ZeroNorm(_))
        ));
        assert!(cosine_similarity(&[1e-13, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn log_sum_exp_of_equal_entries() {
        let v = [0.3; 5];
        assert!((log_sum_exp(&v) - (0.3 + 5f64.ln())).abs() < 1e-15);
        assert!(log_sum_exp(&[1000.0, 1000.0]).is_finite());
    }
}
