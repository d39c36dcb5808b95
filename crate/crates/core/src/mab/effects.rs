//! Outcome tables and per-action effect estimates.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statkit::{anova_f, mean_ci, TestResult};

use super::MabError;
use crate::domain::{ActionId, Catalog, QuestionId};
use crate::ingestion::FilteredDataset;
use crate::irt::ItemBank;
use crate::outcomes::{
    compute_outcomes_with_ability, session_ability, Measure, OutcomeOptions, OutcomeVector, RewardWeights,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredExposure {
    /// Index into the dataset's kept sessions.
    pub session: usize,
    pub position: u32,
    pub action: ActionId,
    pub outcome: OutcomeVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionOutcomes {
    pub actions: Vec<ActionId>,
    pub exposures: Vec<ScoredExposure>,
    pub eligible: bool,
    /// The question's no-assistance action, when known.
    pub baseline: Option<ActionId>,
}

impl QuestionOutcomes {
    pub fn samples(&self, action: &ActionId, measure: Measure, weights: RewardWeights) -> Vec<f64> {
        self.exposures
            .iter()
            .filter(|e| &e.action == action)
            .filter_map(|e| e.outcome.get_weighted(measure, weights))
            .collect()
    }
}

/// Outcome vectors for every indexed exposure, computed once per dataset.
/// Rewards are recomputed from the stored components under whatever
/// weights the caller supplies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeTable {
    pub questions: BTreeMap<QuestionId, QuestionOutcomes>,
    pub n_sessions: usize,
    /// Latest record timestamp in the kept sessions.
    pub max_timestamp: i64,
}

impl OutcomeTable {
    pub fn build(ds: &FilteredDataset, items: &ItemBank, options: OutcomeOptions) -> Result<Self, MabError> {
        Self::build_inner(ds, items, options, None)
    }

    /// As [`OutcomeTable::build`], also resolving each question's
    /// no-assistance baseline from the catalog.
    pub fn build_with_catalog(
        ds: &FilteredDataset,
        items: &ItemBank,
        options: OutcomeOptions,
        catalog: &Catalog,
    ) -> Result<Self, MabError> {
        Self::build_inner(ds, items, options, Some(catalog))
    }

    fn build_inner(
        ds: &FilteredDataset,
        items: &ItemBank,
        options: OutcomeOptions,
        catalog: Option<&Catalog>,
    ) -> Result<Self, MabError> {
        let abilities: Vec<f64> =
            ds.sessions.par_iter().map(|s| session_ability(s, items).map(|a| a.theta)).collect::<Result<_, _>>()?;
        let mut questions = BTreeMap::new();
        for (q, actions) in &ds.action_sets {
            let exposures = ds
                .exposures(q)
                .iter()
                .map(|e| {
                    let outcome = compute_outcomes_with_ability(
                        &ds.sessions[e.session],
                        e.position,
                        abilities[e.session],
                        RewardWeights::default(),
                        options,
                    )?;
                    Ok(ScoredExposure { session: e.session, position: e.position, action: e.action.clone(), outcome })
                })
                .collect::<Result<Vec<_>, MabError>>()?;
            let baseline = catalog.and_then(|c| c.no_assistance_action(q)).cloned();
            questions.insert(
                q.clone(),
                QuestionOutcomes {
                    actions: actions.clone(),
                    exposures,
                    eligible: ds.eligible_questions.contains(q),
                    baseline,
                },
            );
        }
        let max_timestamp = ds.sessions.iter().flat_map(|s| &s.records).map(|r| r.timestamp).max().unwrap_or(0);
        Ok(OutcomeTable { questions, n_sessions: ds.sessions.len(), max_timestamp })
    }

    pub fn question(&self, q: &QuestionId) -> Result<&QuestionOutcomes, MabError> {
        self.questions.get(q).ok_or_else(|| MabError::UnknownQuestion(q.clone()))
    }

    pub fn eligible(&self) -> impl Iterator<Item = (&QuestionId, &QuestionOutcomes)> {
        self.questions.iter().filter(|(_, o)| o.eligible)
    }

    /// Copy restricted to `keep`; other questions are dropped.
    pub fn restrict(&self, keep: &BTreeSet<QuestionId>) -> OutcomeTable {
        OutcomeTable {
            questions: self
                .questions
                .iter()
                .filter(|(q, _)| keep.contains(*q))
                .map(|(q, o)| (q.clone(), o.clone()))
                .collect(),
            n_sessions: self.n_sessions,
            max_timestamp: self.max_timestamp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasureSummary {
    /// Exposures with this measure present.
    pub n: usize,
    pub mean: Option<f64>,
    pub halfwidth: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub action_id: ActionId,
    pub n: usize,
    pub measures: BTreeMap<Measure, MeasureSummary>,
}

impl EffectEstimate {
    pub fn mean(&self, measure: Measure) -> Option<f64> {
        self.measures.get(&measure).and_then(|m| m.mean)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionEffectSummary {
    pub question_id: QuestionId,
    pub estimates: Vec<EffectEstimate>,
    /// Largest minus smallest action mean.
    pub effect_gap: BTreeMap<Measure, f64>,
    /// Within-action pooled variance.
    pub pooled_variance: BTreeMap<Measure, f64>,
}

pub fn summarize(samples: &[f64]) -> MeasureSummary {
    match mean_ci(samples, 0.95) {
        Ok((mean, hw)) => MeasureSummary { n: samples.len(), mean: Some(mean), halfwidth: Some(hw) },
        Err(_) => MeasureSummary { n: 0, mean: None, halfwidth: None },
    }
}

pub fn estimate_action_effects(
    question: &QuestionId,
    table: &OutcomeTable,
    weights: RewardWeights,
) -> Result<QuestionEffectSummary, MabError> {
    let qo = table.question(question)?;
    let mut estimates = Vec::with_capacity(qo.actions.len());
    let mut effect_gap = BTreeMap::new();
    let mut pooled_variance = BTreeMap::new();
    let mut per_measure: BTreeMap<Measure, Vec<Vec<f64>>> = BTreeMap::new();
    for a in &qo.actions {
        let n = qo.exposures.iter().filter(|e| &e.action == a).count();
        let mut measures = BTreeMap::new();
        for m in Measure::ALL {
            let s = qo.samples(a, m, weights);
            measures.insert(m, summarize(&s));
            per_measure.entry(m).or_default().push(s);
        }
        estimates.push(EffectEstimate { action_id: a.clone(), n, measures });
    }
    for (m, groups) in per_measure {
        let means: Vec<f64> = groups.iter().filter_map(|g| statkit::mean(g)).collect();
        if let (Some(hi), Some(lo)) = (means.iter().copied().reduce(f64::max), means.iter().copied().reduce(f64::min)) {
            effect_gap.insert(m, hi - lo);
        }
        let (ss, df) = groups.iter().filter(|g| g.len() >= 2).fold((0.0, 0usize), |(ss, df), g| {
            let mu = statkit::mean(g).unwrap();
            (ss + g.iter().map(|y| (y - mu).powi(2)).sum::<f64>(), df + g.len() - 1)
        });
        if df > 0 {
            pooled_variance.insert(m, ss / df as f64);
        }
    }
    Ok(QuestionEffectSummary { question_id: question.clone(), estimates, effect_gap, pooled_variance })
}

/// Convenience wrapper computing the outcome table first.
pub fn estimate_action_effects_from_dataset(
    question: &QuestionId,
    ds: &FilteredDataset,
    items: &ItemBank,
    weights: RewardWeights,
) -> Result<QuestionEffectSummary, MabError> {
    if !ds.action_sets.contains_key(question) {
        return Err(MabError::UnknownQuestion(question.clone()));
    }
    let table = OutcomeTable::build(ds, items, OutcomeOptions::default())?;
    estimate_action_effects(question, &table, weights)
}

/// One-way ANOVA across the question's actions on one measure.
pub fn anova_screen(
    question: &QuestionId,
    table: &OutcomeTable,
    measure: Measure,
    weights: RewardWeights,
) -> Result<TestResult, MabError> {
    let qo = table.question(question)?;
    let groups: Vec<Vec<f64>> =
        qo.actions.iter().map(|a| qo.samples(a, measure, weights)).filter(|g| g.len() >= 2).collect();
    Ok(anova_f(&groups)?)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// CSV with columns question_id, action_id, n, then `<measure>_mean,
/// <measure>_hw` pairs in `measures` order. Missing values are empty cells.
pub fn write_effects_csv<W: Write>(
    summaries: &[QuestionEffectSummary],
    measures: &[Measure],
    mut out: W,
) -> std::io::Result<()> {
    let mut header = vec!["question_id".to_string(), "action_id".into(), "n".into()];
    for m in measures {
        header.push(format!("{}_mean", m.name()));
        header.push(format!("{}_hw", m.name()));
    }
    writeln!(out, "{}", header.join(","))?;
    for s in summaries {
        for e in &s.estimates {
            let mut row = vec![s.question_id.to_string(), e.action_id.to_string(), e.n.to_string()];
            for m in measures {
                let ms = e.measures.get(m);
                row.push(fmt_opt(ms.and_then(|x| x.mean)));
                row.push(fmt_opt(ms.and_then(|x| x.halfwidth)));
            }
            writeln!(out, "{}", row.join(","))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::fixtures::{assisted, record, session};
    use crate::domain::IrtItem;
    use crate::ingestion::{preprocess, PreprocessConfig};

    pub(crate) fn items_for(ds: &FilteredDataset) -> ItemBank {
        ds.sessions
            .iter()
            .flat_map(|s| &s.records)
            .map(|r| (r.question_id.clone(), IrtItem::new(1.0, 0.0, 0.0).unwrap()))
            .collect()
    }

    fn dataset(outcomes: &[(&str, bool)]) -> FilteredDataset {
        let sessions = outcomes
            .iter()
            .enumerate()
            .map(|(i, (action, second))| {
                let id = format!("s{i:03}");
                session(&id, vec![record(&id, 1, "q0", true), assisted(&id, 2, "qx", action, *second)])
            })
            .collect();
        preprocess(
            sessions,
            PreprocessConfig { min_questions_per_session: 1, min_samples_per_action: 1, first_attempt_only: true },
        )
    }

    #[test]
    fn hand_counted_means() {
        let ds = dataset(&[("A", true), ("A", true), ("A", false), ("A", true), ("B", false), ("B", true)]);
        let table = OutcomeTable::build(&ds, &items_for(&ds), OutcomeOptions::default()).unwrap();
        let s = estimate_action_effects(&"qx".into(), &table, RewardWeights::default()).unwrap();
        let a = &s.estimates[0];
        assert_eq!(a.action_id.as_str(), "A");
        assert_eq!(a.n, 4);
        assert_eq!(a.mean(Measure::ReattemptCorrect), Some(0.75));
        assert!((s.effect_gap[&Measure::ReattemptCorrect] - 0.25).abs() < 1e-12);
        assert!(a.measures[&Measure::FutureCorrectRate].mean.is_none());
    }

    #[test]
    fn unobserved_action_has_no_means() {
        let ds = dataset(&[("A", true), ("A", false)]);
        let mut table = OutcomeTable::build(&ds, &items_for(&ds), OutcomeOptions::default()).unwrap();
        table.questions.get_mut(&QuestionId::new("qx")).unwrap().actions.push("Z".into());
        let s = estimate_action_effects(&"qx".into(), &table, RewardWeights::default()).unwrap();
        assert_eq!(s.estimates[1].n, 0);
        assert!(s.estimates[1].mean(Measure::Reward).is_none());
    }

    #[test]
    fn unknown_question() {
        let ds = dataset(&[("A", true)]);
        let table = OutcomeTable::build(&ds, &items_for(&ds), OutcomeOptions::default()).unwrap();
        assert!(matches!(
            estimate_action_effects(&"nope".into(), &table, RewardWeights::default()),
            Err(MabError::UnknownQuestion(_))
        ));
    }

    #[test]
    fn identical_groups_give_null_anova() {
        let ds = dataset(&[("A", true), ("A", false), ("B", true), ("B", false)]);
        let table = OutcomeTable::build(&ds, &items_for(&ds), OutcomeOptions::default()).unwrap();
        let r = anova_screen(&"qx".into(), &table, Measure::ReattemptCorrect, RewardWeights::default()).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn csv_layout() {
        let ds = dataset(&[("A", true), ("B", false)]);
        let table = OutcomeTable::build(&ds, &items_for(&ds), OutcomeOptions::default()).unwrap();
        let s = estimate_action_effects(&"qx".into(), &table, RewardWeights::default()).unwrap();
        let mut buf = Vec::new();
        write_effects_csv(&[s], &Measure::HEADLINE, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            "question_id,action_id,n,reward_mean,reward_hw,reattempt_correct_mean,reattempt_correct_hw,\
             student_ability_mean,student_ability_hw,session_success_mean,session_success_hw"
        );
        assert!(lines[1].starts_with("qx,A,1,"));
        assert_eq!(lines.len(), 3);
    }
}
