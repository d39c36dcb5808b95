//! Policy serving: hash-based assignment, dispatch and decision logging.

pub mod hash;
pub mod serve;
pub mod spec;

pub use serve::{DecisionLog, DecisionRecord, Server};
pub use spec::{
    assign_policy, hashed_choice, load_policy_spec, question_concepts, AssignmentConfig, Decision, DecisionError,
    PolicySpecFile, Query, Snapshot, SpecEntry, SpecError, SPEC_VERSION,
};
