//! Repeated k-fold offline evaluation, the reward-weight sweep and
//! significance-threshold tuning.
//!
//! Folds split practice sessions. A policy is trained on the training
//! folds and scored on the held-out exposures. Each held-out exposure gets
//! weight n_q * pi(logged action), the ratio of target to uniform logging
//! probability: a deterministic policy keeps exactly the exposures whose
//! logged action it would have chosen, and the random policy keeps all of
//! them at weight 1. Values are the self-normalized weighted means.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statkit::dist::normal_quantile;

use super::effects::{OutcomeTable, QuestionOutcomes};
use super::training::{arm_stats, choose, TrainingRule};
use super::MabError;
use crate::domain::ActionId;
use crate::outcomes::{Measure, RewardWeights};
use crate::rng::{stream_id, stream_rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyKind {
    Random,
    NoAssistance,
    Trained { rule: TrainingRule },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedPolicy {
    pub name: String,
    pub kind: PolicyKind,
}

impl NamedPolicy {
    pub fn new(name: impl Into<String>, kind: PolicyKind) -> Self {
        NamedPolicy { name: name.into(), kind }
    }

    pub fn random() -> Self {
        NamedPolicy::new("random", PolicyKind::Random)
    }

    pub fn no_assistance() -> Self {
        NamedPolicy::new("no_assistance", PolicyKind::NoAssistance)
    }

    pub fn argmax(measure: Measure) -> Self {
        NamedPolicy::new(measure.name(), PolicyKind::Trained { rule: TrainingRule::Argmax { target: measure } })
    }

    /// The policy-comparison table: both baselines, one argmax policy per
    /// headline measure, and the gated reward policy.
    pub fn standard_set(p_threshold: f64) -> Vec<NamedPolicy> {
        vec![
            NamedPolicy::random(),
            NamedPolicy::no_assistance(),
            NamedPolicy::argmax(Measure::ReattemptCorrect),
            NamedPolicy::argmax(Measure::StudentAbility),
            NamedPolicy::argmax(Measure::SessionSuccess),
            NamedPolicy::new("reward", PolicyKind::Trained { rule: TrainingRule::reward(p_threshold) }),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub repeats: usize,
    pub folds: usize,
    pub seed: u64,
    pub weights: RewardWeights,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { repeats: 20, folds: 5, seed: 0, weights: RewardWeights::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasureValue {
    /// Mean over repeats of the per-repeat estimate.
    pub mean: Option<f64>,
    /// Mean over repeats of the per-repeat 95% halfwidth.
    pub halfwidth: Option<f64>,
    /// Average number of matched held-out exposures per repeat.
    pub n: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyReport {
    pub name: String,
    pub kind: PolicyKind,
    pub measures: BTreeMap<Measure, MeasureValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub policies: Vec<PolicyReport>,
    pub config: EvalConfig,
    pub questions: usize,
    pub scoring: String,
}

impl EvalReport {
    pub fn policy(&self, name: &str) -> Option<&PolicyReport> {
        self.policies.iter().find(|p| p.name == name)
    }

    pub fn value(&self, name: &str, measure: Measure) -> Option<MeasureValue> {
        self.policy(name).and_then(|p| p.measures.get(&measure).copied())
    }
}

/// Weighted sums for one policy and measure within a repeat.
#[derive(Debug, Clone, Copy, Default)]
struct Acc {
    n: usize,
    sw: f64,
    swy: f64,
    sw2: f64,
    sw2y: f64,
    sw2y2: f64,
}

impl Acc {
    fn push(&mut self, w: f64, y: f64) {
        self.n += 1;
        self.sw += w;
        self.swy += w * y;
        self.sw2 += w * w;
        self.sw2y += w * w * y;
        self.sw2y2 += w * w * y * y;
    }

    fn estimate(&self, z: f64) -> Option<(f64, f64)> {
        if self.sw <= 0.0 {
            return None;
        }
        let mean = self.swy / self.sw;
        if self.n < 2 {
            return Some((mean, 0.0));
        }
        let ss = (self.sw2y2 - 2.0 * mean * self.sw2y + mean * mean * self.sw2).max(0.0);
        let n = self.n as f64;
        let var = ss / (self.sw * self.sw) * n / (n - 1.0);
        Some((mean, z * var.sqrt()))
    }
}

/// Action distribution of a policy on one question.
enum Decision {
    Fixed(ActionId),
    Uniform,
    Skip,
}

fn evaluate_repeat(
    questions: &[&QuestionOutcomes],
    policies: &[NamedPolicy],
    cfg: &EvalConfig,
    n_sessions: usize,
    repeat: usize,
) -> Vec<Vec<Acc>> {
    let mut order: Vec<usize> = (0..n_sessions).collect();
    order.shuffle(&mut stream_rng(cfg.seed, stream_id(&[repeat as u64])));
    let mut fold_of = vec![0usize; n_sessions];
    for (rank, &s) in order.iter().enumerate() {
        fold_of[s] = rank % cfg.folds;
    }
    let mut acc = vec![vec![Acc::default(); Measure::ALL.len()]; policies.len()];
    for fold in 0..cfg.folds {
        let train = |s: usize| fold_of[s] != fold;
        for qo in questions {
            if qo.actions.is_empty() {
                continue;
            }
            let n_q = qo.actions.len() as f64;
            let stats = arm_stats(qo, cfg.weights, train);
            let decisions: Vec<Decision> = policies
                .iter()
                .map(|p| match p.kind {
                    PolicyKind::Random => Decision::Uniform,
                    PolicyKind::NoAssistance => qo.baseline.clone().map_or(Decision::Skip, Decision::Fixed),
                    PolicyKind::Trained { rule } => {
                        choose(&stats, rule).map_or(Decision::Uniform, |(a, _)| Decision::Fixed(a))
                    }
                })
                .collect();
            for e in qo.exposures.iter().filter(|e| fold_of[e.session] == fold) {
                for (pi, d) in decisions.iter().enumerate() {
                    let w = match d {
                        Decision::Fixed(a) if *a == e.action => n_q,
                        Decision::Fixed(_) | Decision::Skip => continue,
                        Decision::Uniform => 1.0,
                    };
                    for m in Measure::ALL {
                        if let Some(y) = e.outcome.get_weighted(m, cfg.weights) {
                            acc[pi][m as usize].push(w, y);
                        }
                    }
                }
            }
        }
    }
    acc
}

/// Evaluates exactly the given policies on the table's eligible questions.
pub fn evaluate_policies(
    table: &OutcomeTable,
    policies: &[NamedPolicy],
    cfg: EvalConfig,
) -> Result<EvalReport, MabError> {
    if cfg.folds < 2 {
        return Err(MabError::InvalidFolds(cfg.folds));
    }
    if cfg.repeats == 0 {
        return Err(MabError::InvalidRepeats);
    }
    let questions: Vec<&QuestionOutcomes> = table.eligible().map(|(_, qo)| qo).collect();
    let per_repeat: Vec<Vec<Vec<Acc>>> = (0..cfg.repeats)
        .into_par_iter()
        .map(|r| evaluate_repeat(&questions, policies, &cfg, table.n_sessions, r))
        .collect();
    let z = normal_quantile(0.975);
    let policies = policies
        .iter()
        .enumerate()
        .map(|(pi, p)| {
            let measures = Measure::ALL
                .into_iter()
                .map(|m| {
                    let ests: Vec<(f64, f64)> =
                        per_repeat.iter().filter_map(|acc| acc[pi][m as usize].estimate(z)).collect();
                    let n = per_repeat.iter().map(|acc| acc[pi][m as usize].n as f64).sum::<f64>() / cfg.repeats as f64;
                    let value = if ests.is_empty() {
                        MeasureValue { mean: None, halfwidth: None, n }
                    } else {
                        let k = ests.len() as f64;
                        MeasureValue {
                            mean: Some(ests.iter().map(|e| e.0).sum::<f64>() / k),
                            halfwidth: Some(ests.iter().map(|e| e.1).sum::<f64>() / k),
                            n,
                        }
                    };
                    (m, value)
                })
                .collect();
            PolicyReport { name: p.name.clone(), kind: p.kind, measures }
        })
        .collect();
    Ok(EvalReport {
        policies,
        config: cfg,
        questions: questions.len(),
        scoring: "matched logged action, weighted by n_q * pi(action), self-normalized".into(),
    })
}

/// As [`evaluate_policies`], with the random and no-assistance baselines
/// prepended when absent.
pub fn offline_evaluate(
    table: &OutcomeTable,
    policies: &[NamedPolicy],
    cfg: EvalConfig,
) -> Result<EvalReport, MabError> {
    let mut all = Vec::with_capacity(policies.len() + 2);
    for base in [NamedPolicy::random(), NamedPolicy::no_assistance()] {
        if !policies.iter().any(|p| p.kind == base.kind) {
            all.push(base);
        }
    }
    all.extend(policies.iter().cloned());
    evaluate_policies(table, &all, cfg)
}

/// One evaluation per grid weight of the reward-argmax policy, ordered by w1.
pub fn pareto_sweep(table: &OutcomeTable, grid: &[f64], cfg: EvalConfig) -> Result<Vec<(f64, EvalReport)>, MabError> {
    let mut grid = grid.to_vec();
    grid.sort_by(f64::total_cmp);
    grid.into_iter()
        .map(|w1| {
            let weights = RewardWeights::new(w1)?;
            let report =
                offline_evaluate(table, &[NamedPolicy::argmax(Measure::Reward)], EvalConfig { weights, ..cfg })?;
            Ok((w1, report))
        })
        .collect()
}

/// {0, 0.1, ..., 1.0}
pub fn default_w1_grid() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

/// {0.01, 0.02, ..., 0.10}
pub fn default_p_grid() -> Vec<f64> {
    (1..=10).map(|i| i as f64 / 100.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub p_threshold: f64,
    pub measure: Measure,
    /// Cross-validated value of the target measure at every grid point.
    pub values: Vec<(f64, Option<f64>)>,
}

/// Grid value with the highest cross-validated gated-policy value on
/// `measure`; ties go to the smallest threshold. Every grid point shares
/// the same folds.
pub fn tune_p_threshold(
    table: &OutcomeTable,
    grid: &[f64],
    measure: Measure,
    cfg: EvalConfig,
) -> Result<TuneResult, MabError> {
    if grid.is_empty() {
        return Err(MabError::EmptyGrid);
    }
    let mut grid = grid.to_vec();
    grid.sort_by(f64::total_cmp);
    let policies: Vec<NamedPolicy> = grid
        .iter()
        .map(|&p| {
            NamedPolicy::new(
                format!("p={p}"),
                PolicyKind::Trained { rule: TrainingRule::ObjectiveSelection { target: measure, p_threshold: p } },
            )
        })
        .collect();
    let report = evaluate_policies(table, &policies, cfg)?;
    let values: Vec<(f64, Option<f64>)> =
        grid.iter().zip(&report.policies).map(|(&p, r)| (p, r.measures[&measure].mean)).collect();
    let mut best = (grid[0], f64::NEG_INFINITY);
    for &(p, v) in &values {
        if let Some(v) = v {
            if v > best.1 {
                best = (p, v);
            }
        }
    }
    Ok(TuneResult { p_threshold: best.0, measure, values })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

fn measure_header(measures: &[Measure]) -> String {
    measures.iter().map(|m| format!("{0}_mean,{0}_hw", m.name())).collect::<Vec<_>>().join(",")
}

fn measure_cells(p: &PolicyReport, measures: &[Measure]) -> String {
    measures
        .iter()
        .map(|m| {
            let v = p.measures.get(m);
            format!("{},{}", fmt_opt(v.and_then(|v| v.mean)), fmt_opt(v.and_then(|v| v.halfwidth)))
        })
        .collect::<Vec<_>>()
        .join(",")
}

/// Columns: policy, then `<measure>_mean,<measure>_hw` pairs.
pub fn write_eval_csv<W: Write>(report: &EvalReport, measures: &[Measure], mut out: W) -> std::io::Result<()> {
    writeln!(out, "policy,{}", measure_header(measures))?;
    for p in &report.policies {
        writeln!(out, "{},{}", p.name, measure_cells(p, measures))?;
    }
    Ok(())
}

/// Columns: w1, policy, then measure pairs; one block per grid point.
pub fn write_pareto_csv<W: Write>(
    sweep: &[(f64, EvalReport)],
    measures: &[Measure],
    mut out: W,
) -> std::io::Result<()> {
    writeln!(out, "w1,policy,{}", measure_header(measures))?;
    for (w1, report) in sweep {
        for p in &report.policies {
            writeln!(out, "{w1:.1},{},{}", p.name, measure_cells(p, measures))?;
        }
    }
    Ok(())
}
