use super::matrix::{dot, norm, Matrix};
use crate::error::{Error, Result};

const MAX_ITERS: usize = 1000;
const TOL: f64 = 1e-10;

/// Two-component projection of a point cloud.
#[derive(Clone, Debug)]
pub struct Projection2d {
    /// n×2 coordinates on (PC1, PC2).
    pub points: Matrix,
    pub components: [Vec<f64>; 2],
    /// Variance along each component (eigenvalues of the sample covariance).
    pub variances: [f64; 2],
    /// Set when the centred data have rank < 2; missing coordinates are zero.
    pub degenerate: bool,
}

/// Projects mean-centred `points` onto their top two principal components.
///
/// Components come from power iteration on the covariance with deflation.
/// Each component's sign is fixed so that its largest-magnitude coordinate is positive.
pub fn pca_project_2d(points: &Matrix) -> Result<Projection2d> {
    let (n, d) = points.shape();
    if n < 3 || d < 2 {
        return Err(Error::InvalidArgument(format!(
            "pca needs >= 3 points of dimension >= 2, got {n}x{d}"
        )));
    }
    points.ensure_finite("pca input")?;

    let mean = points.sum_rows().scale(1.0 / n as f64);
    let mut centred = points.clone();
    centred.add_row_broadcast(&mean.scale(-1.0))?;
    let mut cov = centred.t_matmul(&centred)?.scale(1.0 / (n - 1) as f64);

    let trace: f64 = (0..d).map(|i| cov[(i, i)]).sum();
    let floor = 1e-12 * trace.max(1.0);

    let mut components = [vec![0.0; d], vec![0.0; d]];
    let mut variances = [0.0; 2];
    let mut degenerate = false;
    for k in 0..2 {
        match top_eigenpair(&cov, floor) {
            Some((lambda, v)) => {
                for i in 0..d {
                    for j in 0..d {
                        cov[(i, j)] -= lambda * v[i] * v[j];
                    }
                }
                variances[k] = lambda;
                components[k] = v;
            }
            None => {
                degenerate = true;
                break;
            }
        }
    }

    let mut out = Matrix::zeros(n, 2);
    for r in 0..n {
        for k in 0..2 {
            out[(r, k)] = dot(centred.row(r), &components[k]);
        }
    }
    Ok(Projection2d {
        points: out,
        components,
        variances,
        degenerate,
    })
}

fn top_eigenpair(cov: &Matrix, floor: f64) -> Option<(f64, Vec<f64>)> {
    let d = cov.rows();
    // start from the covariance column of largest norm: it lies in the range of cov
    let mut v = (0..d)
        .map(|j| (0..d).map(|i| cov[(i, j)]).collect::<Vec<_>>())
        .max_by(|a, b| norm(a).total_cmp(&norm(b)))?;
    let n0 = norm(&v);
    if !(n0 > floor) {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= n0);

    for _ in 0..MAX_ITERS {
        let mut w = vec![0.0; d];
        for (i, wi) in w.iter_mut().enumerate() {
            *wi = dot(cov.row(i), &v);
        }
        let nw = norm(&w);
        if !(nw > floor) {
            return None;
        }
        w.iter_mut().for_each(|x| *x /= nw);
        let delta = w.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = w;
        if delta < TOL {
            break;
        }
    }

    let cv: Vec<f64> = (0..d).map(|i| dot(cov.row(i), &v)).collect();
    let lambda = dot(&v, &cv);
    if !(lambda > floor) {
        return None;
    }
    let pivot = v
        .iter()
        .copied()
        .max_by(|a, b| a.abs().total_cmp(&b.abs()))
        .unwrap_or(1.0);
    if pivot < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    Some((lambda, v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    #[test]
    fn recovers_axes_of_anisotropic_2d_cloud() {
        let pts = Matrix::from_rows(&[[-3.0, 0.5], [-1.0, -0.5], [1.0, -0.5], [3.0, 0.5], [0.0, 0.0]]).unwrap();
        let p = pca_project_2d(&pts).unwrap();
        assert!(!p.degenerate);
        assert!((p.components[0][0] - 1.0).abs() < 1e-9);
        assert!(p.components[0][1].abs() < 1e-9);
        assert!((p.components[1][1] - 1.0).abs() < 1e-9);
        assert!((p.points[(0, 0)] + 3.0).abs() < 1e-9);
    }

    #[test]
    fn identical_points_are_degenerate() {
        let pts = Matrix::filled(5, 3, 2.5);
        let p = pca_project_2d(&pts).unwrap();
        assert!(p.degenerate);
        assert_eq!(p.points.max_abs(), 0.0);
    }

    #[test]
    fn collinear_points_pad_second_coordinate() {
        let pts = Matrix::from_rows(&[[0.0, 0.0], [1.0, 2.0], [2.0, 4.0], [3.0, 6.0]]).unwrap();
        let p = pca_project_2d(&pts).unwrap();
        assert!(p.degenerate);
        assert!(p.variances[0] > 0.0);
        assert!(p.points.iter_rows().all(|r| r[1] == 0.0));
    }

    #[test]
    fn rejects_too_few_points() {
        assert!(pca_project_2d(&Matrix::zeros(2, 3)).is_err());
        assert!(pca_project_2d(&Matrix::zeros(5, 1)).is_err());
    }

    #[test]
    fn leading_components_dominate_random_directions() {
        let mut rng = Rng::new(11);
        let scales = [3.0, 2.0, 1.0, 0.5, 0.2];
        let rows: Vec<Vec<f64>> = (0..400)
            .map(|_| scales.iter().map(|s| s * rng.normal()).collect())
            .collect();
        let pts = Matrix::from_rows(&rows).unwrap();
        let p = pca_project_2d(&pts).unwrap();

        let var = |col: usize| {
            let v: Vec<f64> = p.points.iter_rows().map(|r| r[col]).collect();
            v.iter().map(|x| x * x).sum::<f64>() / (v.len() - 1) as f64
        };
        let (v1, v2) = (var(0), var(1));
        assert!(v1 >= v2);

        // exhaustive comparison against sampled unit directions
        let mean = pts.sum_rows().scale(1.0 / 400.0);
        for _ in 0..500 {
            let mut dir: Vec<f64> = (0..5).map(|_| rng.normal()).collect();
            let n = norm(&dir);
            dir.iter_mut().for_each(|x| *x /= n);
            let proj: Vec<f64> = pts
                .iter_rows()
                .map(|r| {
                    r.iter()
                        .zip(mean.as_slice())
                        .zip(&dir)
                        .map(|((x, m), d)| (x - m) * d)
                        .sum()
                })
                .collect();
            let vd = proj.iter().map(|x| x * x).sum::<f64>() / 399.0;
            assert!(v1 >= vd - 1e-9, "PC1 {v1} < random {vd}");
        }
    }
}
