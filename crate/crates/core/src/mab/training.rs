//! Per-question policy training with the Welch-gated objective selection.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use statkit::welch_t_from_moments;

use super::effects::{OutcomeTable, QuestionOutcomes};
use super::MabError;
use crate::domain::{ActionId, QuestionId};
use crate::outcomes::{Measure, RewardWeights};

/// Default significance threshold when tuning is skipped.
pub const DEFAULT_P_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Moments {
    n: usize,
    sum: f64,
    sumsq: f64,
}

impl Moments {
    fn push(&mut self, y: f64) {
        self.n += 1;
        self.sum += y;
        self.sumsq += y * y;
    }

    fn mean(&self) -> Option<f64> {
        (self.n > 0).then(|| self.sum / self.n as f64)
    }

    fn variance(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        let n = self.n as f64;
        ((self.sumsq - self.sum * self.sum / n) / (n - 1.0)).max(0.0)
    }
}

/// Per-action sufficient statistics for every measure.
#[derive(Debug, Clone)]
pub(crate) struct ArmStats {
    pub action: ActionId,
    moments: [Moments; Measure::ALL.len()],
}

impl ArmStats {
    fn get(&self, m: Measure) -> &Moments {
        &self.moments[m as usize]
    }
}

pub(crate) fn arm_stats(
    qo: &QuestionOutcomes,
    weights: RewardWeights,
    include: impl Fn(usize) -> bool,
) -> Vec<ArmStats> {
    let mut arms: Vec<ArmStats> = qo
        .actions
        .iter()
        .map(|a| ArmStats { action: a.clone(), moments: [Moments::default(); Measure::ALL.len()] })
        .collect();
    for e in qo.exposures.iter().filter(|e| include(e.session)) {
        let Some(arm) = arms.iter_mut().find(|a| a.action == e.action) else { continue };
        for m in Measure::ALL {
            if let Some(y) = e.outcome.get_weighted(m, weights) {
                arm.moments[m as usize].push(y);
            }
        }
    }
    arms
}

/// Objective a trained entry ended up optimizing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    Trained(Measure),
    /// Too little data; the serving layer samples uniformly.
    FallbackRandom,
}

impl Objective {
    pub fn name(self) -> &'static str {
        match self {
            Objective::Trained(Measure::Reward) => "combined_reward",
            Objective::Trained(m) => m.name(),
            Objective::FallbackRandom => "fallback_random",
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for Objective {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Objective {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let name = String::deserialize(d)?;
        match name.as_str() {
            "combined_reward" => Ok(Objective::Trained(Measure::Reward)),
            "fallback_random" => Ok(Objective::FallbackRandom),
            other => Measure::from_name(other)
                .filter(|m| *m != Measure::Reward)
                .map(Objective::Trained)
                .ok_or_else(|| serde::de::Error::custom(format!("unknown objective `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrainingRule {
    /// Take the target-measure argmax only if a one-sided Welch test says it
    /// beats the reattempt-correctness argmax on the target measure.
    ObjectiveSelection { target: Measure, p_threshold: f64 },
    /// Plain argmax of one measure.
    Argmax { target: Measure },
}

impl TrainingRule {
    pub fn reward(p_threshold: f64) -> Self {
        TrainingRule::ObjectiveSelection { target: Measure::Reward, p_threshold }
    }
}

fn argmax(arms: &[ArmStats], m: Measure) -> Option<&ArmStats> {
    arms.iter()
        .filter_map(|a| a.get(m).mean().map(|mu| (a, mu)))
        .max_by(|(a, x), (b, y)| x.total_cmp(y).then_with(|| b.action.cmp(&a.action)))
        .map(|(a, _)| a)
}

/// Applies `rule` to per-action statistics; `None` when no action has data.
pub(crate) fn choose(arms: &[ArmStats], rule: TrainingRule) -> Option<(ActionId, Objective)> {
    match rule {
        TrainingRule::Argmax { target } => argmax(arms, target).map(|a| (a.action.clone(), Objective::Trained(target))),
        TrainingRule::ObjectiveSelection { target, p_threshold } => {
            let a_t = argmax(arms, target)?;
            let Some(a_c) = argmax(arms, Measure::ReattemptCorrect) else {
                return Some((a_t.action.clone(), Objective::Trained(target)));
            };
            if a_t.action == a_c.action {
                return Some((a_t.action.clone(), Objective::Trained(target)));
            }
            let moments = |a: &ArmStats| {
                let m = a.get(target);
                (m.mean().unwrap_or(0.0), m.variance(), m.n)
            };
            let p = welch_t_from_moments(moments(a_t), moments(a_c)).map(|r| r.p_value).unwrap_or(1.0);
            if p < p_threshold {
                Some((a_t.action.clone(), Objective::Trained(target)))
            } else {
                Some((a_c.action.clone(), Objective::Trained(Measure::ReattemptCorrect)))
            }
        }
    }
}

/// Objective-selection training of one question on the combined reward.
pub fn train_question_policy(
    question: &QuestionId,
    table: &OutcomeTable,
    weights: RewardWeights,
    p_threshold: f64,
) -> Result<(ActionId, Objective), MabError> {
    train_question_with_rule(question, table, weights, TrainingRule::reward(p_threshold))
}

pub fn train_question_with_rule(
    question: &QuestionId,
    table: &OutcomeTable,
    weights: RewardWeights,
    rule: TrainingRule,
) -> Result<(ActionId, Objective), MabError> {
    let qo = table.question(question)?;
    choose(&arm_stats(qo, weights, |_| true), rule).ok_or_else(|| MabError::NoSamples(question.clone()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyEntry {
    /// Chosen action; `None` for fallback entries.
    pub action: Option<ActionId>,
    pub objective: Objective,
    /// The question's full action set, sampled uniformly on fallback.
    pub actions: Vec<ActionId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub rule: TrainingRule,
    /// Significance threshold per target measure.
    pub p_thresholds: BTreeMap<Measure, f64>,
    pub config_hash: String,
    /// Latest log timestamp in the training data.
    pub timestamp: i64,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MabPolicy {
    pub entries: BTreeMap<QuestionId, PolicyEntry>,
    pub weights: RewardWeights,
    pub metadata: TrainingMetadata,
}

impl MabPolicy {
    pub fn trained_count(&self) -> usize {
        self.entries.values().filter(|e| e.action.is_some()).count()
    }

    pub fn action_for(&self, question: &QuestionId) -> Option<&ActionId> {
        self.entries.get(question).and_then(|e| e.action.as_ref())
    }
}

pub fn train_mab_policy(table: &OutcomeTable, weights: RewardWeights, p_threshold: f64) -> MabPolicy {
    train_mab_policy_with_rule(table, weights, TrainingRule::reward(p_threshold))
}

/// Trains every eligible question; ineligible ones get fallback entries.
pub fn train_mab_policy_with_rule(table: &OutcomeTable, weights: RewardWeights, rule: TrainingRule) -> MabPolicy {
    let entries = table
        .questions
        .iter()
        .map(|(q, qo)| {
            let chosen = if qo.eligible { choose(&arm_stats(qo, weights, |_| true), rule) } else { None };
            let (action, objective) = match chosen {
                Some((a, o)) => (Some(a), o),
                None => (None, Objective::FallbackRandom),
            };
            (q.clone(), PolicyEntry { action, objective, actions: qo.actions.clone() })
        })
        .collect();
    let mut p_thresholds = BTreeMap::new();
    if let TrainingRule::ObjectiveSelection { target, p_threshold } = rule {
        p_thresholds.insert(target, p_threshold);
    }
    let fingerprint = serde_json::json!({
        "rule": rule,
        "w1": weights.w1,
        "sessions": table.n_sessions,
        "questions": table.questions.keys().collect::<Vec<_>>(),
    });
    let config_hash = format!("{:016x}", crate::service::hash::fnv1a64(fingerprint.to_string().as_bytes()));
    MabPolicy {
        entries,
        weights,
        metadata: TrainingMetadata {
            rule,
            p_thresholds,
            config_hash,
            timestamp: table.max_timestamp,
            notes: vec![
                "ability: MAP estimate under a standard-normal prior".into(),
                "ties: lexicographically smallest action id".into(),
            ],
        },
    }
}
