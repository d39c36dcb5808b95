//! Treatment-effect estimation over pairwise action contrasts: datasets,
//! average and heterogeneous effects, honest causal forests, contextual
//! policies and the batch heterogeneity scan.

pub mod ate;
pub mod calibration;
pub mod context;
pub mod dataset;
pub mod forest;
pub mod linear;
pub mod policy;
pub mod scan;

pub use ate::{estimate_ate, AteResult};
pub use calibration::{calibration_test, rate_autoc, rate_test, CalibrationResult, RateResult, RateWeighting};
pub use context::{compute_context, ContextVector, HistoryIndex, FEATURE_NAMES, N_FEATURES};
pub use dataset::{build_treatment_dataset, build_treatment_dataset_with, TreatmentDataset, TreatmentSample};
pub use forest::{fit_cate_forest, predict_cate, tune_forest, CateModel, ForestConfig, Node, Tree};
pub use linear::{linear_hte_test, LinearHteOptions, MIN_PRESENCE};
pub use policy::{
    compare_policy_values, derive_contextual_policy, estimate_policy_value, ConstantPolicy, ContextualPolicy, Policy,
    PolicyValue,
};
pub use scan::{
    hte_scan, mab_contrasts, write_cb_csv, write_forest_csv, write_linear_csv, CbComparison, Contrast, ContrastResult,
    ForestTest, HteConfig, HteReport, LinearCell,
};

use thiserror::Error;

use crate::domain::ActionId;
use crate::outcomes::OutcomeError;

#[derive(Debug, Error)]
pub enum CausalError {
    #[error("treatment and control actions must differ")]
    InvalidContrast,
    #[error("action {0} is not in the question's action set")]
    UnknownAction(ActionId),
    #[error("an arm has no usable samples")]
    EmptyArm,
    #[error("degenerate sample: {0}")]
    DegenerateSample(&'static str),
    #[error("unknown covariate {0}")]
    UnknownCovariate(String),
    #[error("covariate {0} is missing in too many samples")]
    CovariateMissing(String),
    #[error("{n} samples, at least {needed} required")]
    InsufficientData { n: usize, needed: usize },
    #[error("feature names differ from the model's training features")]
    FeatureMismatch,
    #[error("no sample's logged action matches the policy")]
    NoMatchedSamples,
    #[error(transparent)]
    Outcome(#[from] OutcomeError),
    #[error(transparent)]
    Stat(#[from] statkit::StatError),
}
