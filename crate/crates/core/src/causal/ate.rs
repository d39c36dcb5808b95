//! Difference-in-means treatment effect under randomized assignment.

use serde::{Deserialize, Serialize};
use statkit::dist::normal_quantile;
use statkit::{mean, sample_variance};

use super::dataset::TreatmentDataset;
use super::CausalError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AteResult {
    pub tau_hat: f64,
    /// Welch standard error.
    pub se: f64,
    pub ci95: (f64, f64),
}

pub fn estimate_ate(td: &TreatmentDataset) -> Result<AteResult, CausalError> {
    let treat = td.arm_outcomes(1);
    let control = td.arm_outcomes(0);
    if treat.len() < 2 || control.len() < 2 {
        return Err(CausalError::DegenerateSample("each arm needs at least two samples"));
    }
    let tau_hat = mean(&treat).unwrap() - mean(&control).unwrap();
    let se = (sample_variance(&treat).unwrap() / treat.len() as f64
        + sample_variance(&control).unwrap() / control.len() as f64)
        .sqrt();
    let z = normal_quantile(0.975);
    Ok(AteResult { tau_hat, se, ci95: (tau_hat - z * se, tau_hat + z * se) })
}
