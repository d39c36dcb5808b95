//! Synthetic students and worlds with known ground truth.

pub mod experiment;
pub mod session;
pub mod synthetic;
pub mod world;

use thiserror::Error;

use crate::domain::{ActionId, ConceptId};
use crate::service::DecisionError;

pub use experiment::{run_experiment, session_plan, Experiment};
pub use session::{is_weekend, simulate_session, ExposureTrace, SessionPlan, SimulatedSession};
pub use world::{
    clamp_prob, generate_world, true_cate, ActionEffectSpec, Scenario, StudentProfile, World, WorldConfig,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid world config: {0}")]
    Config(String),
    #[error("concept {0} has no questions")]
    EmptyConcept(ConceptId),
    #[error("no student with index {0}")]
    UnknownStudent(usize),
    #[error("no effect spec for action {0}")]
    UnknownAction(ActionId),
    #[error(transparent)]
    Decision(#[from] DecisionError),
}
