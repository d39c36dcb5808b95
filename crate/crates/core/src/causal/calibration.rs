//! Held-out checks that a fitted CATE model captures real heterogeneity:
//! the best-linear-predictor calibration test and the rank-weighted
//! average treatment effect.

use rand::seq::index;
use serde::{Deserialize, Serialize};
use statkit::dist::normal_sf;
use statkit::{mean, ols_wald, sample_variance, Design, Sided, TestResult};

use super::dataset::TreatmentDataset;
use super::forest::CateModel;
use super::CausalError;
use crate::rng::{stream_id, stream_rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    /// Coefficient on the mean-prediction regressor, 1 when the average
    /// effect is well calibrated. Absent when the mean prediction is 0.
    pub mean_coef: Option<f64>,
    /// Coefficient on the differential regressor; 1 when the spread of
    /// predictions is well calibrated, 0 when it carries no signal.
    pub differential_coef: f64,
    /// One-sided test that the differential coefficient exceeds 0.
    pub test: TestResult,
}

fn check_arms(td: &TreatmentDataset) -> Result<(), CausalError> {
    let (nt, nc) = td.arm_sizes();
    if nt < 2 || nc < 2 {
        return Err(CausalError::DegenerateSample("each arm needs at least two held-out samples"));
    }
    Ok(())
}

/// Regresses y minus its pooled mean on (w - e) mean(tau_hat) and
/// (w - e) (tau_hat - mean(tau_hat)) without intercept, with e the treated
/// share of the held-out samples.
pub fn calibration_test(model: &CateModel, td: &TreatmentDataset) -> Result<CalibrationResult, CausalError> {
    check_arms(td)?;
    let tau: Vec<f64> = td.samples.iter().map(|s| model.predict(&s.x)).collect();
    let tau_bar = mean(&tau).unwrap();
    let spread = tau.iter().map(|t| (t - tau_bar).abs()).fold(0.0, f64::max);
    if spread <= 1e-12 * tau_bar.abs().max(1.0) {
        return Ok(CalibrationResult {
            mean_coef: None,
            differential_coef: 0.0,
            test: TestResult::no_information(Sided::OneSidedGreater),
        });
    }
    let e = td.arm_sizes().0 as f64 / td.samples.len() as f64;
    let y: Vec<f64> = td.samples.iter().map(|s| s.y).collect();
    let y_bar = mean(&y).unwrap();
    let resid: Vec<f64> = y.iter().map(|v| v - y_bar).collect();
    let centered: Vec<f64> = td.samples.iter().map(|s| s.w as f64 - e).collect();
    let mut columns = Vec::new();
    if tau_bar != 0.0 {
        columns.push(("mean", centered.iter().map(|c| c * tau_bar).collect()));
    }
    columns.push(("differential", centered.iter().zip(&tau).map(|(c, t)| c * (t - tau_bar)).collect()));
    let fit = ols_wald(&Design::from_columns(columns)?, &resid)?;
    let i = fit.index("differential").unwrap();
    Ok(CalibrationResult {
        mean_coef: fit.coef("mean"),
        differential_coef: fit.coefficients[i],
        test: TestResult {
            statistic: fit.statistics[i],
            df: fit.df_resid,
            df2: None,
            p_value: fit.p_value_greater("differential").unwrap(),
            sided: Sided::OneSidedGreater,
        },
    })
}

/// Weighting of the targeting operator characteristic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateWeighting {
    /// Uniform weight over the treated fraction u.
    #[default]
    Autoc,
    /// Weight u.
    Qini,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateResult {
    pub estimate: f64,
    /// Half-sample bootstrap standard error.
    pub se: f64,
    /// One-sided normal test that the estimate exceeds 0; `df` is 0.
    pub test: TestResult,
}

pub const RATE_BOOTSTRAP_REPLICATES: usize = 200;

/// Rank weights for scores sorted in descending order, averaged within
/// tied runs. They sum to zero, so a constant shift of the scores' effect
/// cancels.
fn rank_weights(sorted_scores: &[f64], weighting: RateWeighting) -> Vec<f64> {
    let n = sorted_scores.len();
    let nf = n as f64;
    let mut raw = vec![0.0; n];
    match weighting {
        RateWeighting::Autoc => {
            let mut tail = 0.0;
            for j in (0..n).rev() {
                tail += 1.0 / (j + 1) as f64;
                raw[j] = tail - 1.0;
            }
        }
        RateWeighting::Qini => {
            for (j, r) in raw.iter_mut().enumerate() {
                *r = (nf - j as f64) / nf - (nf + 1.0) / (2.0 * nf);
            }
        }
    }
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && sorted_scores[end] == sorted_scores[start] {
            end += 1;
        }
        if end - start > 1 {
            let avg = raw[start..end].iter().sum::<f64>() / (end - start) as f64;
            raw[start..end].iter_mut().for_each(|r| *r = avg);
        }
        start = end;
    }
    raw
}

/// Weighted mean of inverse-propensity effect scores over the given
/// (score, gamma) pairs.
fn rate_estimate(pairs: &mut [(f64, f64)], weighting: RateWeighting) -> f64 {
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let scores: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let w = rank_weights(&scores, weighting);
    pairs.iter().zip(&w).map(|(p, w)| p.1 * w).sum::<f64>() / pairs.len() as f64
}

/// Rank-weighted average treatment effect of the model's predictions on
/// held-out data.
pub fn rate_test(
    model: &CateModel,
    td: &TreatmentDataset,
    weighting: RateWeighting,
    seed: u64,
) -> Result<RateResult, CausalError> {
    check_arms(td)?;
    let scores: Vec<f64> = td.samples.iter().map(|s| model.predict(&s.x)).collect();
    rate_from_scores(&scores, td, weighting, seed)
}

pub fn rate_autoc(model: &CateModel, td: &TreatmentDataset, seed: u64) -> Result<RateResult, CausalError> {
    rate_test(model, td, RateWeighting::Autoc, seed)
}

/// As [`rate_test`] with precomputed priority scores, one per sample.
pub fn rate_from_scores(
    scores: &[f64],
    td: &TreatmentDataset,
    weighting: RateWeighting,
    seed: u64,
) -> Result<RateResult, CausalError> {
    check_arms(td)?;
    if scores.iter().all(|&s| s == scores[0]) {
        return Ok(RateResult { estimate: 0.0, se: 0.0, test: TestResult::no_information(Sided::OneSidedGreater) });
    }
    let n = td.samples.len();
    let e = td.arm_sizes().0 as f64 / n as f64;
    let y_bar = td.samples.iter().map(|s| s.y).sum::<f64>() / n as f64;
    let gamma: Vec<f64> = td
        .samples
        .iter()
        .map(|s| {
            let r = s.y - y_bar;
            if s.w == 1 {
                r / e
            } else {
                -r / (1.0 - e)
            }
        })
        .collect();
    let mut pairs: Vec<(f64, f64)> = scores.iter().copied().zip(gamma.iter().copied()).collect();
    let estimate = rate_estimate(&mut pairs, weighting);

    let half = n / 2;
    let mut rng = stream_rng(seed, stream_id(&[0x5241_5445]));
    let reps: Vec<f64> = (0..RATE_BOOTSTRAP_REPLICATES)
        .map(|_| {
            let mut sub: Vec<(f64, f64)> =
                index::sample(&mut rng, n, half).into_iter().map(|i| (scores[i], gamma[i])).collect();
            rate_estimate(&mut sub, weighting)
        })
        .collect();
    // a half-sample without replacement varies around the full-sample
    // estimate with the full-sample variance, so no rescaling
    let se = sample_variance(&reps).unwrap_or(0.0).sqrt();
    let test = if se > 0.0 {
        let z = estimate / se;
        TestResult { statistic: z, df: 0.0, df2: None, p_value: normal_sf(z), sided: Sided::OneSidedGreater }
    } else {
        TestResult::no_information(Sided::OneSidedGreater)
    };
    Ok(RateResult { estimate, se, test })
}
