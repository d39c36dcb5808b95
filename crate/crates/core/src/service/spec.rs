//! Policy specification files, hash-based policy assignment and the pure
//! decision function shared by the server and the simulator.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::hash::{bucket, fnv1a64_parts, BUCKETS};
use crate::causal::{CateModel, ContextVector};
use crate::domain::{ActionId, Catalog, ConceptId, QuestionId, SessionId};
use crate::ingestion::FilteredDataset;
use crate::mab::MabPolicy;

/// Newest spec format this build reads.
pub const SPEC_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpecEntry {
    /// Uniform over `actions`.
    Random {
        actions: Vec<ActionId>,
    },
    Fixed {
        action: ActionId,
    },
    /// `treat` where the model predicts a positive effect, else `control`.
    Contextual {
        treat: ActionId,
        control: ActionId,
        model: CateModel,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySpecFile {
    pub spec_version: u32,
    pub policy_id: String,
    pub algorithm: String,
    pub implementation_version: String,
    pub concepts: BTreeMap<ConceptId, BTreeMap<QuestionId, SpecEntry>>,
}

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("cannot parse policy spec: {0}")]
    Parse(String),
    #[error("spec version {found} is newer than supported version {supported}")]
    VersionMismatch { found: u32, supported: u32 },
    #[error("invalid policy spec: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PolicySpecFile {
    pub fn new(policy_id: impl Into<String>, algorithm: impl Into<String>) -> Self {
        PolicySpecFile {
            spec_version: SPEC_VERSION,
            policy_id: policy_id.into(),
            algorithm: algorithm.into(),
            implementation_version: env!("CARGO_PKG_VERSION").to_string(),
            concepts: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, concept: ConceptId, question: QuestionId, entry: SpecEntry) {
        self.concepts.entry(concept).or_default().insert(question, entry);
    }

    pub fn entry(&self, concept: &ConceptId, question: &QuestionId) -> Option<&SpecEntry> {
        self.concepts.get(concept)?.get(question)
    }

    /// Uniform-random entries for every question with assistance actions.
    pub fn uniform_random(policy_id: impl Into<String>, catalog: &Catalog) -> Self {
        let mut spec = PolicySpecFile::new(policy_id, "uniform_random");
        for q in catalog.questions.values().filter(|q| !q.action_ids.is_empty()) {
            spec.insert(q.concept_id.clone(), q.id.clone(), SpecEntry::Random { actions: q.action_ids.clone() });
        }
        spec
    }

    /// Fixed entries for trained questions and random entries for
    /// fallback questions. `concept_of` places each question.
    pub fn from_mab(
        policy_id: impl Into<String>,
        policy: &MabPolicy,
        concept_of: &BTreeMap<QuestionId, ConceptId>,
    ) -> Self {
        let mut spec = PolicySpecFile::new(policy_id, "mab_objective_selection");
        for (q, entry) in &policy.entries {
            let Some(concept) = concept_of.get(q) else { continue };
            let e = match &entry.action {
                Some(a) => SpecEntry::Fixed { action: a.clone() },
                None => SpecEntry::Random { actions: entry.actions.clone() },
            };
            spec.insert(concept.clone(), q.clone(), e);
        }
        spec
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        if self.spec_version > SPEC_VERSION {
            return Err(SpecError::VersionMismatch { found: self.spec_version, supported: SPEC_VERSION });
        }
        if self.policy_id.is_empty() {
            return Err(SpecError::Invalid("empty policy_id".into()));
        }
        for (concept, entries) in &self.concepts {
            for (q, e) in entries {
                let bad = match e {
                    SpecEntry::Random { actions } => actions.is_empty(),
                    SpecEntry::Contextual { treat, control, model } => treat == control || model.trees.is_empty(),
                    SpecEntry::Fixed { .. } => false,
                };
                if bad {
                    return Err(SpecError::Invalid(format!("entry for {concept}/{q}")));
                }
            }
        }
        Ok(())
    }

    pub fn from_reader(mut input: impl Read) -> Result<Self, SpecError> {
        let mut text = String::new();
        input.read_to_string(&mut text)?;
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| SpecError::Parse(e.to_string()))?;
        if let Some(v) = value.get("spec_version").and_then(|v| v.as_u64()) {
            if v > SPEC_VERSION as u64 {
                return Err(SpecError::VersionMismatch { found: v as u32, supported: SPEC_VERSION });
            }
        }
        let spec: PolicySpecFile = serde_json::from_value(value).map_err(|e| SpecError::Parse(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }
}

/// Parses and validates the spec at `path`.
pub fn load_policy_spec(path: impl AsRef<Path>) -> Result<PolicySpecFile, SpecError> {
    PolicySpecFile::from_reader(std::fs::File::open(path)?)
}

/// Concept of every question seen in the dataset's sessions.
pub fn question_concepts(ds: &FilteredDataset) -> BTreeMap<QuestionId, ConceptId> {
    let mut out = BTreeMap::new();
    for s in ds.sessions.iter().chain(&ds.history) {
        for r in &s.records {
            out.entry(r.question_id.clone()).or_insert_with(|| s.concept_id.clone());
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentConfig {
    /// Policy ids with positive weights summing to 1, in bucket order.
    pub policies: Vec<(String, f64)>,
}

impl AssignmentConfig {
    pub fn single(policy_id: impl Into<String>) -> Self {
        AssignmentConfig { policies: vec![(policy_id.into(), 1.0)] }
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        if self.policies.is_empty() {
            return Err(SpecError::Invalid("assignment lists no policies".into()));
        }
        if self.policies.iter().any(|(_, w)| w.is_nan() || *w <= 0.0) {
            return Err(SpecError::Invalid("assignment weights must be positive".into()));
        }
        let total: f64 = self.policies.iter().map(|p| p.1).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(SpecError::Invalid(format!("assignment weights sum to {total}")));
        }
        Ok(())
    }
}

/// Policy for a session: its bucket against cumulative weight boundaries.
pub fn assign_policy<'a>(session_id: &str, cfg: &'a AssignmentConfig) -> &'a str {
    let b = bucket(session_id);
    let mut cum = 0.0;
    for (id, w) in &cfg.policies {
        cum += w;
        if b < (cum * BUCKETS as f64).round() as u64 {
            return id;
        }
    }
    &cfg.policies.last().expect("validated assignment is non-empty").0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub session_id: SessionId,
    pub concept_id: ConceptId,
    pub question_id: QuestionId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<ContextVector>,
    /// Candidate actions, used when the spec has no entry for the question.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub actions: Vec<ActionId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub action_id: ActionId,
    pub policy_id: String,
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecisionError {
    #[error("policy {0} is assigned but not loaded")]
    SpecNotLoaded(String),
    #[error("question {0} is unknown and the query lists no actions")]
    NoActions(QuestionId),
}

/// Replayable uniform pick keyed by session and question.
pub fn hashed_choice<'a>(session: &SessionId, question: &QuestionId, actions: &'a [ActionId]) -> &'a ActionId {
    let h = fnv1a64_parts(&[session.as_str().as_bytes(), question.as_str().as_bytes()]);
    let i = ((h as u128 * actions.len() as u128) >> 64) as usize;
    &actions[i]
}

/// Immutable serving state: loaded specs plus the assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub specs: BTreeMap<String, PolicySpecFile>,
    pub assignment: AssignmentConfig,
}

impl Snapshot {
    pub fn new(specs: Vec<PolicySpecFile>, assignment: AssignmentConfig) -> Result<Self, SpecError> {
        assignment.validate()?;
        let specs: BTreeMap<String, PolicySpecFile> = specs.into_iter().map(|s| (s.policy_id.clone(), s)).collect();
        for (id, _) in &assignment.policies {
            if !specs.contains_key(id) {
                return Err(SpecError::Invalid(format!("assigned policy {id} has no spec")));
            }
        }
        Ok(Snapshot { specs, assignment })
    }

    pub fn decide(&self, query: &Query) -> Result<Decision, DecisionError> {
        let policy_id = assign_policy(query.session_id.as_str(), &self.assignment);
        let spec = self.specs.get(policy_id).ok_or_else(|| DecisionError::SpecNotLoaded(policy_id.to_string()))?;
        let decision = |action: &ActionId, fallback: bool| Decision {
            action_id: action.clone(),
            policy_id: policy_id.to_string(),
            fallback,
        };
        match spec.entry(&query.concept_id, &query.question_id) {
            Some(SpecEntry::Fixed { action }) => Ok(decision(action, false)),
            Some(SpecEntry::Random { actions }) => {
                Ok(decision(hashed_choice(&query.session_id, &query.question_id, actions), false))
            }
            Some(SpecEntry::Contextual { treat, control, model }) => match &query.context {
                Some(x) => Ok(decision(if model.predict(x) > 0.0 { treat } else { control }, false)),
                None => Ok(decision(control, true)),
            },
            None if query.actions.is_empty() => Err(DecisionError::NoActions(query.question_id.clone())),
            None => Ok(decision(hashed_choice(&query.session_id, &query.question_id, &query.actions), true)),
        }
    }
}
