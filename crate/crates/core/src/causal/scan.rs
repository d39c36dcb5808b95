//! Batch heterogeneity scan over action contrasts and outcomes with
//! Benjamini-Hochberg control per test type and outcome.

use std::io::{self, Write};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statkit::{bh_adjust, TestResult};

use super::calibration::{calibration_test, rate_test, CalibrationResult, RateResult, RateWeighting};
use super::context::{HistoryIndex, FEATURE_NAMES};
use super::dataset::{build_treatment_dataset_with, TreatmentDataset};
use super::forest::{fit_cate_forest, ForestConfig};
use super::linear::{linear_hte_test, LinearHteOptions};
use super::policy::{
    compare_policy_values, derive_contextual_policy, estimate_policy_value, ConstantPolicy, PolicyValue,
};
use super::CausalError;
use crate::domain::{ActionId, QuestionId};
use crate::ingestion::FilteredDataset;
use crate::irt::ItemBank;
use crate::mab::MabPolicy;
use crate::outcomes::{Measure, RewardWeights};
use crate::rng::{stream_id, stream_rng};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Contrast {
    pub question_id: QuestionId,
    pub treat: ActionId,
    pub control: ActionId,
}

/// Every alternative action against the trained single-action choice.
pub fn mab_contrasts(policy: &MabPolicy, ds: &FilteredDataset) -> Vec<Contrast> {
    let mut out = Vec::new();
    for (q, entry) in &policy.entries {
        let Some(best) = &entry.action else { continue };
        for a in ds.actions(q) {
            if a != best {
                out.push(Contrast { question_id: q.clone(), treat: a.clone(), control: best.clone() });
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HteConfig {
    pub forest: ForestConfig,
    pub fdr_q: f64,
    pub covariates: Vec<String>,
    /// Standardize covariates before the linear tests.
    pub standardize: bool,
    pub rate_weighting: RateWeighting,
    pub weights: RewardWeights,
    pub seed: u64,
}

impl Default for HteConfig {
    fn default() -> Self {
        HteConfig {
            forest: ForestConfig::default(),
            fdr_q: 0.2,
            covariates: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            standardize: true,
            rate_weighting: RateWeighting::Autoc,
            weights: RewardWeights::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearCell {
    pub covariate: String,
    pub coef: Option<f64>,
    /// Two-sided Wald p-value of the interaction; absent when the test
    /// could not run.
    pub p_value: Option<f64>,
    pub detected: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CbComparison {
    pub contextual: PolicyValue,
    /// Value of always choosing the control action.
    pub baseline: PolicyValue,
    pub test: TestResult,
    /// Share of held-out samples the contextual policy treats.
    pub treated_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastResult {
    pub contrast: Contrast,
    pub outcome: Measure,
    pub n_treated: usize,
    pub n_control: usize,
    /// Set when the treatment dataset could not be built; nothing else ran.
    pub error: Option<String>,
    pub linear: Vec<LinearCell>,
    /// Set when the forest could not be fitted or tested.
    pub forest_error: Option<String>,
    pub calibration: Option<CalibrationResult>,
    pub calibration_detected: bool,
    pub rate: Option<RateResult>,
    pub rate_detected: bool,
    pub cb: Option<CbComparison>,
    pub cb_detected: bool,
}

impl ContrastResult {
    fn built(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HteReport {
    pub outcomes: Vec<Measure>,
    pub config: HteConfig,
    pub results: Vec<ContrastResult>,
    pub notes: Vec<String>,
}

/// Forest-based test rows of the report.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForestTest {
    Calibration,
    Rate,
    ContextualPolicy,
}

impl ForestTest {
    pub const ALL: [ForestTest; 3] = [ForestTest::Calibration, ForestTest::Rate, ForestTest::ContextualPolicy];

    pub fn name(self) -> &'static str {
        match self {
            ForestTest::Calibration => "calibration",
            ForestTest::Rate => "rate",
            ForestTest::ContextualPolicy => "cb_vs_mab",
        }
    }
}

impl HteReport {
    /// Contrasts whose treatment dataset was built for `outcome`.
    pub fn built(&self, outcome: Measure) -> usize {
        self.results.iter().filter(|r| r.outcome == outcome && r.built()).count()
    }

    fn proportion(&self, outcome: Measure, hit: impl Fn(&ContrastResult) -> bool) -> Option<f64> {
        let n = self.built(outcome);
        (n > 0).then(|| {
            self.results.iter().filter(|r| r.outcome == outcome && r.built() && hit(r)).count() as f64 / n as f64
        })
    }

    pub fn linear_proportion(&self, covariate: &str, outcome: Measure) -> Option<f64> {
        self.proportion(outcome, |r| r.linear.iter().any(|c| c.covariate == covariate && c.detected))
    }

    pub fn forest_proportion(&self, test: ForestTest, outcome: Measure) -> Option<f64> {
        self.proportion(outcome, |r| match test {
            ForestTest::Calibration => r.calibration_detected,
            ForestTest::Rate => r.rate_detected,
            ForestTest::ContextualPolicy => r.cb_detected,
        })
    }

    /// Discoveries over all tests in the report.
    pub fn detections(&self) -> usize {
        self.results
            .iter()
            .map(|r| {
                r.linear.iter().filter(|c| c.detected).count()
                    + r.calibration_detected as usize
                    + r.rate_detected as usize
                    + r.cb_detected as usize
            })
            .sum()
    }
}

fn held_out_split(td: &TreatmentDataset, seed: u64) -> (TreatmentDataset, TreatmentDataset) {
    let mut order: Vec<usize> = (0..td.samples.len()).collect();
    order.shuffle(&mut stream_rng(seed, 0));
    let cut = order.len() / 2;
    let pick = |ids: &[usize]| td.with_samples(ids.iter().map(|&i| td.samples[i]).collect());
    (pick(&order[..cut]), pick(&order[cut..]))
}

struct ForestOutcome {
    calibration: CalibrationResult,
    rate: RateResult,
    cb: CbComparison,
}

fn forest_tests(td: &TreatmentDataset, config: &HteConfig, seed: u64) -> Result<ForestOutcome, CausalError> {
    let (train, held) = held_out_split(td, seed);
    let model = fit_cate_forest(&train, config.forest, seed)?;
    let calibration = calibration_test(&model, &held)?;
    let rate = rate_test(&model, &held, config.rate_weighting, seed)?;
    let policy =
        derive_contextual_policy(model, td.question_id.clone(), td.treat_action.clone(), td.control_action.clone());
    let contextual = estimate_policy_value(&policy, &held)?;
    let baseline = estimate_policy_value(&ConstantPolicy::Control, &held)?;
    let test = compare_policy_values(&contextual, &baseline)?;
    let treated = held.samples.iter().filter(|s| policy.model.predict(&s.x) > 0.0).count();
    let treated_share = treated as f64 / held.samples.len() as f64;
    Ok(ForestOutcome { calibration, rate, cb: CbComparison { contextual, baseline, test, treated_share } })
}

fn run_one(
    history: &HistoryIndex<'_>,
    ds: &FilteredDataset,
    items: &ItemBank,
    contrast: &Contrast,
    outcome: Measure,
    config: &HteConfig,
    seed: u64,
) -> ContrastResult {
    let mut result = ContrastResult {
        contrast: contrast.clone(),
        outcome,
        n_treated: 0,
        n_control: 0,
        error: None,
        linear: Vec::new(),
        forest_error: None,
        calibration: None,
        calibration_detected: false,
        rate: None,
        rate_detected: false,
        cb: None,
        cb_detected: false,
    };
    let td = match build_treatment_dataset_with(
        history,
        &contrast.question_id,
        ds,
        &contrast.treat,
        &contrast.control,
        outcome,
        items,
        config.weights,
    ) {
        Ok(td) => td,
        Err(e) => {
            result.error = Some(e.to_string());
            return result;
        }
    };
    (result.n_treated, result.n_control) = td.arm_sizes();
    let options = LinearHteOptions { standardize: config.standardize };
    result.linear = config
        .covariates
        .iter()
        .map(|c| {
            let fit = linear_hte_test(&td, c, options).ok();
            LinearCell {
                covariate: c.clone(),
                coef: fit.as_ref().and_then(|f| f.coef("wx")),
                p_value: fit.as_ref().and_then(|f| f.p_value("wx")).filter(|p| p.is_finite()),
                detected: false,
            }
        })
        .collect();
    match forest_tests(&td, config, seed) {
        Ok(f) => {
            result.calibration = Some(f.calibration);
            result.rate = Some(f.rate);
            result.cb = Some(f.cb);
        }
        Err(e) => result.forest_error = Some(e.to_string()),
    }
    result
}

/// Marks discoveries by BH over the p-values selected by `get`, one family
/// per outcome.
fn adjust<F, S>(results: &mut [ContrastResult], outcome: Measure, q: f64, get: F, set: S)
where
    F: Fn(&ContrastResult) -> Vec<Option<f64>>,
    S: Fn(&mut ContrastResult, usize),
{
    let mut family = Vec::new();
    for (i, r) in results.iter().enumerate() {
        if r.outcome != outcome {
            continue;
        }
        for (j, p) in get(r).into_iter().enumerate() {
            if let Some(p) = p {
                family.push((i, j, p));
            }
        }
    }
    let p: Vec<f64> = family.iter().map(|f| f.2).collect();
    let bh = bh_adjust(&p, q);
    for (k, &(i, j, _)) in family.iter().enumerate() {
        if bh.rejected[k] {
            set(&mut results[i], j);
        }
    }
}

/// Runs the linear, forest and contextual-policy tests for every
/// contrast and outcome. Failures are recorded per contrast.
pub fn hte_scan(
    ds: &FilteredDataset,
    items: &ItemBank,
    contrasts: &[Contrast],
    outcomes: &[Measure],
    config: &HteConfig,
) -> HteReport {
    let history = HistoryIndex::new(&ds.history);
    let jobs: Vec<(usize, usize)> =
        (0..outcomes.len()).flat_map(|o| (0..contrasts.len()).map(move |c| (o, c))).collect();
    let mut results: Vec<ContrastResult> = jobs
        .par_iter()
        .map(|&(o, c)| {
            let seed = stream_id(&[config.seed, o as u64, c as u64]);
            run_one(&history, ds, items, &contrasts[c], outcomes[o], config, seed)
        })
        .collect();
    let q = config.fdr_q;
    for &m in outcomes {
        adjust(
            &mut results,
            m,
            q,
            |r| r.linear.iter().map(|c| c.p_value).collect(),
            |r, j| r.linear[j].detected = true,
        );
        adjust(
            &mut results,
            m,
            q,
            |r| vec![r.calibration.map(|c| c.test.p_value)],
            |r, _| r.calibration_detected = true,
        );
        adjust(&mut results, m, q, |r| vec![r.rate.map(|c| c.test.p_value)], |r, _| r.rate_detected = true);
        adjust(&mut results, m, q, |r| vec![r.cb.map(|c| c.test.p_value)], |r, _| r.cb_detected = true);
    }
    HteReport {
        outcomes: outcomes.to_vec(),
        config: config.clone(),
        results,
        notes: vec![
            "forest tests run on a held-out half of each contrast's samples".to_string(),
            "policy-value comparison treats the contextual and baseline matched sets as independent".to_string(),
            format!("covariates standardized before linear tests: {}", config.standardize),
        ],
    }
}

fn cell(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.3}")).unwrap_or_default()
}

fn header(out: &mut impl Write, first: &str, outcomes: &[Measure]) -> io::Result<()> {
    let labels: Vec<&str> = outcomes.iter().map(|m| m.label()).collect();
    writeln!(out, "{first},{}", labels.join(","))
}

/// Detection proportions, one row per covariate.
pub fn write_linear_csv(report: &HteReport, mut out: impl Write) -> io::Result<()> {
    header(&mut out, "covariate", &report.outcomes)?;
    for c in &report.config.covariates {
        let cells: Vec<String> = report.outcomes.iter().map(|&m| cell(report.linear_proportion(c, m))).collect();
        writeln!(out, "{c},{}", cells.join(","))?;
    }
    Ok(())
}

/// Detection proportions, one row per forest-based test.
pub fn write_forest_csv(report: &HteReport, mut out: impl Write) -> io::Result<()> {
    header(&mut out, "test", &report.outcomes)?;
    for t in ForestTest::ALL {
        let cells: Vec<String> = report.outcomes.iter().map(|&m| cell(report.forest_proportion(t, m))).collect();
        writeln!(out, "{},{}", t.name(), cells.join(","))?;
    }
    Ok(())
}

/// Per-contrast contextual versus single-action policy values.
pub fn write_cb_csv(report: &HteReport, mut out: impl Write) -> io::Result<()> {
    writeln!(
        out,
        "question_id,treat_action,control_action,outcome,v_contextual,se_contextual,n_contextual,v_mab,se_mab,n_mab,treated_share,t,p_value,detected"
    )?;
    let f = |v: f64| format!("{v:.6}");
    for r in &report.results {
        let Some(cb) = &r.cb else { continue };
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.contrast.question_id,
            r.contrast.treat,
            r.contrast.control,
            r.outcome.name(),
            f(cb.contextual.v_hat),
            f(cb.contextual.se),
            cb.contextual.n_matched,
            f(cb.baseline.v_hat),
            f(cb.baseline.se),
            cb.baseline.n_matched,
            f(cb.treated_share),
            f(cb.test.statistic),
            f(cb.test.p_value),
            r.cb_detected as u8,
        )?;
    }
    Ok(())
}
