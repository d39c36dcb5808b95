//! Statistical kernels used by the effect-estimation and causal layers.
//!
//! Everything here is implemented from first principles (continued
//! fractions for the incomplete beta/gamma functions, Householder QR for
//! least squares) so results are bit-stable across platforms and can be
//! pinned in golden tests.

pub mod describe;
pub mod dist;
pub mod fdr;
pub mod hypothesis;
mod linalg;
pub mod regression;
pub mod special;

pub use describe::{mean, mean_ci, sample_variance};
pub use fdr::{bh_adjust, BhResult};
pub use hypothesis::{anova_f, welch_t_from_moments, welch_t_one_sided, Sided, TestResult};
pub use regression::{logistic_wald, ols_wald, Design, RegressionFit, RegressionModel};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatError {
    #[error("empty sample")]
    EmptySample,
    #[error("degenerate sample: {0}")]
    DegenerateSample(&'static str),
    #[error("design matrix is rank deficient")]
    RankDeficient,
    #[error("all labels identical")]
    AllSameLabel,
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
}

pub type Result<T> = std::result::Result<T, StatError>;
