//! Linear interaction test for effect heterogeneity along one covariate:
//! y ~ b0 + bw w + bx x + bwx w x, logistic for binary outcomes.

use statkit::{logistic_wald, ols_wald, Design, RegressionFit};

use super::context::ContextVector;
use super::dataset::TreatmentDataset;
use super::CausalError;

/// Fraction of samples that must carry the covariate.
pub const MIN_PRESENCE: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LinearHteOptions {
    /// Scale the covariate to zero mean and unit variance first.
    pub standardize: bool,
}

pub fn linear_hte_test(
    td: &TreatmentDataset,
    covariate: &str,
    options: LinearHteOptions,
) -> Result<RegressionFit, CausalError> {
    let idx = ContextVector::index(covariate).ok_or_else(|| CausalError::UnknownCovariate(covariate.to_string()))?;
    let rows: Vec<(f64, f64, f64)> =
        td.samples.iter().filter(|s| s.x.present[idx]).map(|s| (s.w as f64, s.x.values[idx], s.y)).collect();
    if td.samples.is_empty() || (rows.len() as f64) < MIN_PRESENCE * td.samples.len() as f64 {
        return Err(CausalError::CovariateMissing(covariate.to_string()));
    }
    let mut x: Vec<f64> = rows.iter().map(|r| r.1).collect();
    if options.standardize {
        let mu = statkit::mean(&x).unwrap_or(0.0);
        let sd = statkit::sample_variance(&x).unwrap_or(0.0).sqrt();
        if sd > 0.0 {
            x.iter_mut().for_each(|v| *v = (*v - mu) / sd);
        }
    }
    let w: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.2).collect();
    let design = Design::from_columns(vec![
        ("intercept", vec![1.0; rows.len()]),
        ("w", w.clone()),
        ("x", x.clone()),
        ("wx", w.iter().zip(&x).map(|(a, b)| a * b).collect()),
    ])?;
    let fit = if td.binary { logistic_wald(&design, &y)? } else { ols_wald(&design, &y)? };
    Ok(fit)
}
