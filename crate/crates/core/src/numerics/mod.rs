//! Dense f64 linear algebra, Adam, the finite-difference oracle and a small PCA.

mod adam;
mod gradcheck;
mod matrix;
mod ops;
mod pca;
mod rng;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{finite_diff_grad, max_relative_error};
pub use matrix::{dot, norm, Matrix};
pub use ops::{
    cosine_similarity, log_sum_exp, normalize_rows, normalize_rows_backward, normalize_rows_masked, softmax_rows,
    NORM_FLOOR,
};
pub use pca::{pca_project_2d, Projection2d};
pub use rng::Rng;
