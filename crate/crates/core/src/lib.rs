//! Feedback-policy optimization for tutoring-style decision problems.

pub mod causal;
pub mod domain;
pub mod ingestion;
pub mod irt;
pub mod mab;
pub mod outcomes;
pub mod rng;
pub mod service;
pub mod simulator;
