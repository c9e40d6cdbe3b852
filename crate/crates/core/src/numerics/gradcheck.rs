use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Central-difference gradient `(f(p + h·e_i) − f(p − h·e_i)) / 2h` for every coordinate.
pub fn finite_diff_grad<F>(mut loss_fn: F, params: &Matrix, h: f64) -> Result<Matrix>
where
    F: FnMut(&Matrix) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step h = {h} must be > 0")));
    }
    let mut probe = params.clone();
    let mut grad = Matrix::zeros(params.rows(), params.cols());
    for i in 0..params.len() {
        let orig = probe.as_slice()[i];
        probe.as_mut_slice()[i] = orig + h;
        let plus = loss_fn(&probe)?;
        probe.as_mut_slice()[i] = orig - h;
        let minus = loss_fn(&probe)?;
        probe.as_mut_slice()[i] = orig;
        if !(plus.is_finite() && minus.is_finite()) {
            return Err(Error::NonFinite(format!("loss evaluation at coordinate {i}")));
        }
        grad.as_mut_slice()[i] = (plus - minus) / (2.0 * h);
    }
    Ok(grad)
}

/// Largest per-coordinate relative error `|a − b| / max(|a|, |b|, 1e-8)`.
pub fn max_relative_error(analytic: &Matrix, numeric: &Matrix) -> Result<f64> {
    if analytic.shape() != numeric.shape() {
        return Err(Error::Shape("gradient comparison".into()));
    }
    Ok(analytic
        .as_slice()
        .iter()
        .zip(numeric.as_slice())
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(1e-8))
        .fold(0.0, f64::max))
}
