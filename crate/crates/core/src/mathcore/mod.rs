//! Dense linear algebra aliases, simplex primitives, small MLPs with exact
//! per-example Jacobians, rank statistics and seeded randomness.

mod mlp;
mod prob;
mod rng;
mod stats;

pub use mlp::{per_example_jacobian, Activation, Gradient, JacobianBlock, Layer, MlpModel, Trace};
pub use prob::{log_softmax, one_hot, softmax, ProbVector, SIMPLEX_TOL};
pub use rng::{derive_seed, normal_matrix, normal_vector, seeded, LabRng};
pub use stats::{mean, pearson, quantile, rank_average, spearman, variance, Correlation};

/// Column vector of `f64`.
pub type Vector = nalgebra::DVector<f64>;
/// Column-major dense matrix of `f64`.
pub type Matrix = nalgebra::DMatrix<f64>;

use crate::error::{LabError, Result};

pub(crate) fn ensure_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(LabError::Domain(format!("{what} contains non-finite entries")))
    }
}
