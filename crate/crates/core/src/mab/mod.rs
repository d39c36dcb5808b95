//! Per-action effect estimation, bandit policy training and offline
//! policy evaluation.

pub mod effects;
pub mod evaluation;
pub mod training;

pub use effects::{
    anova_screen, estimate_action_effects, estimate_action_effects_from_dataset, write_effects_csv, EffectEstimate,
    MeasureSummary, OutcomeTable, QuestionEffectSummary, QuestionOutcomes, ScoredExposure,
};
pub use evaluation::{
    default_p_grid, default_w1_grid, evaluate_policies, offline_evaluate, pareto_sweep, tune_p_threshold,
    write_eval_csv, write_pareto_csv, EvalConfig, EvalReport, MeasureValue, NamedPolicy, PolicyKind, PolicyReport,
    TuneResult,
};
pub use training::{
    train_mab_policy, train_mab_policy_with_rule, train_question_policy, train_question_with_rule, MabPolicy,
    Objective, PolicyEntry, TrainingMetadata, TrainingRule, DEFAULT_P_THRESHOLD,
};

use thiserror::Error;

use crate::domain::QuestionId;
use crate::outcomes::OutcomeError;

#[derive(Debug, Error)]
pub enum MabError {
    #[error("unknown question {0}")]
    UnknownQuestion(QuestionId),
    #[error("question {0} has no samples to train on")]
    NoSamples(QuestionId),
    #[error("cross validation needs at least 2 folds, got {0}")]
    InvalidFolds(usize),
    #[error("cross validation needs at least one repeat")]
    InvalidRepeats,
    #[error("empty threshold grid")]
    EmptyGrid,
    #[error(transparent)]
    Outcome(#[from] OutcomeError),
    #[error(transparent)]
    Stat(#[from] statkit::StatError),
}
