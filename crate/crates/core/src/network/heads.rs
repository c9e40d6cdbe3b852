use super::{relu, relu_backward, Dense, Parameters};
use crate::error::{shape_err, Result};
use crate::numerics::{normalize_rows_backward, normalize_rows_masked, Matrix, Rng};

/// Hidden and output widths of the projector/predictor for feature width `d`.
pub fn head_dims(feature_dim: usize) -> (usize, usize) {
    (feature_dim, (feature_dim / 2).max(8))
}

/// Two dense layers with a ReLU in between and a linear output.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp2 {
    pub hidden: Dense,
    pub output: Dense,
}

#[derive(Clone, Debug)]
struct Mlp2Cache {
    input: Matrix,
    pre: Matrix,
    hidden: Matrix,
}

impl Mlp2 {
    pub fn glorot(input: usize, hidden: usize, output: usize, rng: &mut Rng) -> Self {
        Self {
            hidden: Dense::glorot(input, hidden, rng),
            output: Dense::glorot(hidden, output, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            hidden: self.hidden.zeros_like(),
            output: self.output.zeros_like(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.output.fan_out()
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward_cached(x)?.0)
    }

    fn forward_cached(&self, x: &Matrix) -> Result<(Matrix, Mlp2Cache)> {
        let pre = self.hidden.forward(x)?;
        let hidden = relu(&pre);
        let out = self.output.forward(&hidden)?;
        Ok((
            out,
            Mlp2Cache {
                input: x.clone(),
                pre,
                hidden,
            },
        ))
    }

    fn backward(&self, cache: &Mlp2Cache, dy: &Matrix) -> Result<(Mlp2, Matrix)> {
        let (g_out, dh) = self.output.backward(&cache.hidden, dy)?;
        let dpre = relu_backward(&cache.pre, &dh);
        let (g_hidden, dx) = self.hidden.backward(&cache.input, &dpre)?;
        Ok((
            Mlp2 {
                hidden: g_hidden,
                output: g_out,
            },
            dx,
        ))
    }

    pub(crate) fn named_params_prefixed(&self, prefix: &str) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        self.hidden.push_named(&format!("{prefix}.hidden"), &mut out);
        self.output.push_named(&format!("{prefix}.output"), &mut out);
        out
    }

    pub(crate) fn named_params_mut_prefixed(&mut self, prefix: &str) -> Vec<(String, &mut Matrix)> {
        let mut out = Vec::new();
        self.hidden.push_named_mut(&format!("{prefix}.hidden"), &mut out);
        self.output.push_named_mut(&format!("{prefix}.output"), &mut out);
        out
    }
}

impl Parameters for Mlp2 {
    fn named_params(&self) -> Vec<(String, &Matrix)> {
        self.named_params_prefixed("mlp")
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        self.named_params_mut_prefixed("mlp")
    }
}

/// Student-side projector and predictor. The teacher keeps only its own projector.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    pub projector: Mlp2,
    pub predictor: Mlp2,
}

impl HeadParams {
    pub fn init(feature_dim: usize, rng: &mut Rng) -> Self {
        let (hidden, out) = head_dims(feature_dim);
        Self {
            projector: Mlp2::glorot(feature_dim, hidden, out, rng),
            predictor: Mlp2::glorot(out, hidden, out, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            projector: self.projector.zeros_like(),
            predictor: self.predictor.zeros_like(),
        }
    }
}

impl Parameters for HeadParams {
    fn named_params(&self) -> Vec<(String, &Matrix)> {
        let mut out = self.projector.named_params_prefixed("projector");
        out.extend(self.predictor.named_params_prefixed("predictor"));
        out
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut out = self.projector.named_params_mut_prefixed("projector");
        out.extend(self.predictor.named_params_mut_prefixed("predictor"));
        out
    }
}

#[derive(Clone, Debug)]
pub struct HeadsCache {
    projector: Mlp2Cache,
    predictor: Mlp2Cache,
    q_raw_norms: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct HeadsOutput {
    /// Unit-norm queries `Pred(Proj(A_student))`.
    pub q: Matrix,
    /// Unit-norm keys `Proj'(A_teacher)`; constants for the student's loss.
    pub k: Matrix,
    /// Rows whose raw query and key are both nonzero. Other rows of `q`/`k` are zero.
    pub valid: Vec<bool>,
    pub cache: HeadsCache,
}

/// Query/key computation. Only the query branch keeps a cache for backprop.
pub fn heads_forward(
    heads: &HeadParams,
    teacher_projector: &Mlp2,
    a_student: &Matrix,
    a_teacher: &Matrix,
) -> Result<HeadsOutput> {
    if a_student.cols() != heads.projector.input_dim() || a_teacher.cols() != teacher_projector.input_dim() {
        return Err(shape_err(format!(
            "head input widths: student {} / teacher {} vs projector {}",
            a_student.cols(),
            a_teacher.cols(),
            heads.projector.input_dim()
        )));
    }
    if teacher_projector.output_dim() != heads.predictor.output_dim() {
        return Err(shape_err("query and key widths differ"));
    }
    let (z, projector) = heads.projector.forward_cached(a_student)?;
    let (q_raw, predictor) = heads.predictor.forward_cached(&z)?;
    let (q, q_raw_norms, q_ok) = normalize_rows_masked(&q_raw);
    let k_raw = teacher_projector.forward(a_teacher)?;
    let (k, _, k_ok) = normalize_rows_masked(&k_raw);
    Ok(HeadsOutput {
        q,
        k,
        valid: q_ok.iter().zip(&k_ok).map(|(a, b)| *a && *b).collect(),
        cache: HeadsCache {
            projector,
            predictor,
            q_raw_norms,
        },
    })
}

/// Gradient of a loss on the normalised queries back to head parameters and student features.
pub fn heads_backward(heads: &HeadParams, out: &HeadsOutput, dq: &Matrix) -> Result<(HeadParams, Matrix)> {
    if dq.shape() != out.q.shape() {
        return Err(shape_err(format!(
            "query gradient {:?} for queries {:?}",
            dq.shape(),
            out.q.shape()
        )));
    }
    let d_raw = normalize_rows_backward(&out.q, &out.cache.q_raw_norms, dq);
    let (g_pred, dz) = heads.predictor.backward(&out.cache.predictor, &d_raw)?;
    let (g_proj, da) = heads.projector.backward(&out.cache.projector, &dz)?;
    Ok((
        HeadParams {
            projector: g_proj,
            predictor: g_pred,
        },
        da,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_grad, max_relative_error, norm};

    fn identity_mlp(n: usize) -> Mlp2 {
        Mlp2 {
            hidden: Dense {
                weights: Matrix::identity(n),
                bias: Matrix::zeros(1, n),
            },
            output: Dense {
                weights: Matrix::identity(n),
                bias: Matrix::zeros(1, n),
            },
        }
    }

    #[test]
    fn identity_heads_normalise_keys() {
        let heads = HeadParams {
            projector: identity_mlp(2),
            predictor: identity_mlp(2),
        };
        let a = Matrix::row_vector(&[3.0, 4.0]);
        let out = heads_forward(&heads, &identity_mlp(2), &a, &a).unwrap();
        assert!((out.k[(0, 0)] - 0.6).abs() < 1e-15);
        assert!((out.k[(0, 1)] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn queries_have_unit_norm() {
        let mut rng = Rng::new(4);
        let heads = HeadParams::init(16, &mut rng);
        let teacher = heads.projector.clone();
        let mut a = Matrix::zeros(6, 16);
        a.as_mut_slice().iter_mut().for_each(|x| *x = rng.normal().abs());
        let out = heads_forward(&heads, &teacher, &a, &a).unwrap();
        for r in out.q.iter_rows() {
            assert!((norm(r) - 1.0).abs() < 1e-12);
        }
        assert_eq!(out.q.cols(), 8);
    }

    #[test]
    fn query_gradient_matches_finite_differences() {
        let mut rng = Rng::new(8);
        let heads = HeadParams::init(10, &mut rng);
        let teacher = Mlp2::glorot(10, 10, 8, &mut rng);
        let mut a = Matrix::zeros(4, 10);
        a.as_mut_slice().iter_mut().for_each(|x| *x = rng.normal());
        let w: Vec<f64> = (0..32).map(|_| rng.normal()).collect();
        let w = Matrix::from_vec(4, 8, w).unwrap();

        let scalar = |h: &HeadParams, a: &Matrix| -> Result<f64> {
            let o = heads_forward(h, &teacher, a, a)?;
            Ok(o.q.as_slice().iter().zip(w.as_slice()).map(|(q, w)| q * w).sum())
        };
        let out = heads_forward(&heads, &teacher, &a, &a).unwrap();
        let (g, da) = heads_backward(&heads, &out, &w).unwrap();

        let numeric = finite_diff_grad(
            |flat| {
                let mut h = heads.clone();
                h.load_flat(flat)?;
                scalar(&h, &a)
            },
            &heads.flatten(),
            1e-6,
        )
        .unwrap();
        assert!(max_relative_error(&g.flatten(), &numeric).unwrap() < 1e-5);

        let numeric_a = finite_diff_grad(|a2| scalar(&heads, a2), &a, 1e-6).unwrap();
        assert!(max_relative_error(&da, &numeric_a).unwrap() < 1e-5);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut rng = Rng::new(1);
        let heads = HeadParams::init(8, &mut rng);
        let a = Matrix::zeros(2, 7);
        assert!(heads_forward(&heads, &heads.projector, &a, &a).is_err());
    }
}
