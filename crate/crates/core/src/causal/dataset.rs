//! Treatment/control samples for one pairwise action contrast.

use serde::{Deserialize, Serialize};

use super::context::{compute_context, ContextVector, HistoryIndex};
use super::CausalError;
use crate::domain::{ActionId, QuestionId};
use crate::ingestion::FilteredDataset;
use crate::irt::ItemBank;
use crate::outcomes::{compute_outcomes_with_ability, session_ability, Measure, OutcomeOptions, RewardWeights};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreatmentSample {
    pub x: ContextVector,
    /// 1 for the treatment action, 0 for the control action.
    pub w: u8,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreatmentDataset {
    pub question_id: QuestionId,
    pub treat_action: ActionId,
    pub control_action: ActionId,
    pub outcome_name: String,
    /// Outcome takes values in {0, 1}; selects logistic linear tests.
    pub binary: bool,
    pub samples: Vec<TreatmentSample>,
}

impl TreatmentDataset {
    pub fn arm(&self, w: u8) -> impl Iterator<Item = &TreatmentSample> {
        self.samples.iter().filter(move |s| s.w == w)
    }

    pub fn arm_outcomes(&self, w: u8) -> Vec<f64> {
        self.arm(w).map(|s| s.y).collect()
    }

    pub fn arm_sizes(&self) -> (usize, usize) {
        let treated = self.samples.iter().filter(|s| s.w == 1).count();
        (treated, self.samples.len() - treated)
    }

    /// Same metadata with a subset of samples.
    pub fn with_samples(&self, samples: Vec<TreatmentSample>) -> TreatmentDataset {
        TreatmentDataset { samples, ..self.without_samples() }
    }

    fn without_samples(&self) -> TreatmentDataset {
        TreatmentDataset {
            question_id: self.question_id.clone(),
            treat_action: self.treat_action.clone(),
            control_action: self.control_action.clone(),
            outcome_name: self.outcome_name.clone(),
            binary: self.binary,
            samples: Vec::new(),
        }
    }
}

pub fn build_treatment_dataset(
    question: &QuestionId,
    ds: &FilteredDataset,
    treat: &ActionId,
    control: &ActionId,
    outcome: Measure,
    items: &ItemBank,
    weights: RewardWeights,
) -> Result<TreatmentDataset, CausalError> {
    let history = HistoryIndex::new(&ds.history);
    build_treatment_dataset_with(&history, question, ds, treat, control, outcome, items, weights)
}

/// As [`build_treatment_dataset`] with a prebuilt history index.
#[allow(clippy::too_many_arguments)]
pub fn build_treatment_dataset_with(
    history: &HistoryIndex<'_>,
    question: &QuestionId,
    ds: &FilteredDataset,
    treat: &ActionId,
    control: &ActionId,
    outcome: Measure,
    items: &ItemBank,
    weights: RewardWeights,
) -> Result<TreatmentDataset, CausalError> {
    if treat == control {
        return Err(CausalError::InvalidContrast);
    }
    let actions = ds.actions(question);
    for a in [treat, control] {
        if !actions.contains(a) {
            return Err(CausalError::UnknownAction(a.clone()));
        }
    }
    let mut samples = Vec::new();
    for e in ds.exposures(question) {
        let w = if &e.action == treat {
            1
        } else if &e.action == control {
            0
        } else {
            continue;
        };
        let session = &ds.sessions[e.session];
        let ability = session_ability(session, items)?.theta;
        let ov = compute_outcomes_with_ability(session, e.position, ability, weights, OutcomeOptions::default())?;
        let Some(y) = ov.get_weighted(outcome, weights) else { continue };
        let x = compute_context(&history.prior(session), session, e.position, items);
        samples.push(TreatmentSample { x, w, y });
    }
    let td = TreatmentDataset {
        question_id: question.clone(),
        treat_action: treat.clone(),
        control_action: control.clone(),
        outcome_name: outcome.name().to_string(),
        binary: outcome.is_binary(),
        samples,
    };
    let (nt, nc) = td.arm_sizes();
    if nt == 0 || nc == 0 {
        return Err(CausalError::EmptyArm);
    }
    Ok(td)
}
