//! Contextual policies derived from a CATE model and their direct-method
//! values on randomized data.

use serde::{Deserialize, Serialize};
use statkit::{mean, sample_variance, welch_t_from_moments, Sided, StatError, TestResult};

use super::context::ContextVector;
use super::dataset::TreatmentDataset;
use super::forest::CateModel;
use super::CausalError;
use crate::domain::{ActionId, QuestionId};

/// A binary treatment rule over contexts.
pub trait Policy {
    /// True when the policy picks the treatment action at `x`.
    fn treats(&self, x: &ContextVector) -> bool;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextualPolicy {
    pub question_id: QuestionId,
    pub treat_action: ActionId,
    /// The single-action policy's choice, used whenever the model
    /// predicts no benefit.
    pub control_action: ActionId,
    pub model: CateModel,
}

impl ContextualPolicy {
    pub fn action(&self, x: &ContextVector) -> &ActionId {
        if self.treats(x) {
            &self.treat_action
        } else {
            &self.control_action
        }
    }
}

impl Policy for ContextualPolicy {
    fn treats(&self, x: &ContextVector) -> bool {
        self.model.predict(x) > 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstantPolicy {
    Treat,
    Control,
}

impl Policy for ConstantPolicy {
    fn treats(&self, _: &ContextVector) -> bool {
        matches!(self, ConstantPolicy::Treat)
    }
}

pub fn derive_contextual_policy(
    model: CateModel,
    question_id: QuestionId,
    treat: ActionId,
    control: ActionId,
) -> ContextualPolicy {
    ContextualPolicy { question_id, treat_action: treat, control_action: control, model }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyValue {
    pub v_hat: f64,
    pub se: f64,
    pub n_matched: usize,
}

impl PolicyValue {
    fn variance(&self) -> f64 {
        self.se * self.se * self.n_matched as f64
    }
}

/// Mean outcome over samples whose logged arm equals the policy's
/// decision, with standard error sd / sqrt(n).
pub fn estimate_policy_value(policy: &impl Policy, td: &TreatmentDataset) -> Result<PolicyValue, CausalError> {
    let matched: Vec<f64> = td.samples.iter().filter(|s| (s.w == 1) == policy.treats(&s.x)).map(|s| s.y).collect();
    let Some(v_hat) = mean(&matched) else { return Err(CausalError::NoMatchedSamples) };
    let se = sample_variance(&matched).map(|v| (v / matched.len() as f64).sqrt()).unwrap_or(0.0);
    Ok(PolicyValue { v_hat, se, n_matched: matched.len() })
}

/// One-sided Welch test of v(contextual) > v(baseline), treating the two
/// matched sets as independent. Zero variance in both gives p = 1.
pub fn compare_policy_values(contextual: &PolicyValue, baseline: &PolicyValue) -> Result<TestResult, CausalError> {
    match welch_t_from_moments(
        (contextual.v_hat, contextual.variance(), contextual.n_matched),
        (baseline.v_hat, baseline.variance(), baseline.n_matched),
    ) {
        Ok(t) => Ok(t),
        Err(StatError::DegenerateSample("zero pooled variance")) => {
            Ok(TestResult::no_information(Sided::OneSidedGreater))
        }
        Err(e) => Err(e.into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::causal::forest::{fit_cate_forest, ForestConfig, Tree};
    use crate::causal::testutil::{synthetic, td_from};
    use crate::simulator::synthetic::oracle_values;

    struct Oracle;

    impl Policy for Oracle {
        fn treats(&self, x: &ContextVector) -> bool {
            x.values[0] > 0.0
        }
    }

    fn policy(effect: f64) -> ContextualPolicy {
        derive_contextual_policy(CateModel::from_trees(vec![Tree::leaf(effect)]), "q".into(), "T".into(), "C".into())
    }

    #[test]
    fn constant_policies_match_arms() {
        let td = td_from(&[1.0, 1.0, 0.0, 1.0], &[0.0, 1.0, 0.0]);
        let treat = estimate_policy_value(&ConstantPolicy::Treat, &td).unwrap();
        let control = estimate_policy_value(&ConstantPolicy::Control, &td).unwrap();
        assert_eq!((treat.v_hat, treat.n_matched), (0.75, 4));
        assert!((control.v_hat - 1.0 / 3.0).abs() < 1e-12);
        assert!(matches!(
            estimate_policy_value(&ConstantPolicy::Treat, &td_from(&[], &[1.0])),
            Err(CausalError::NoMatchedSamples)
        ));
    }

    #[test]
    fn signed_models_reduce_to_constant_policies() {
        let td = synthetic(|x| x, 300, 2);
        for s in &td.samples {
            assert!(policy(0.2).treats(&s.x));
            assert!(!policy(-0.2).treats(&s.x));
            assert_eq!(policy(0.2).action(&s.x).as_str(), "T");
        }
        let pos = estimate_policy_value(&policy(0.2), &td).unwrap();
        assert_eq!(pos, estimate_policy_value(&ConstantPolicy::Treat, &td).unwrap());
    }

    #[test]
    fn sign_changing_model_makes_both_decisions() {
        let td = synthetic(|x| x, 3000, 5);
        let model = fit_cate_forest(&td, ForestConfig::default().with_trees(30), 1).unwrap();
        let p = derive_contextual_policy(model, "q".into(), "T".into(), "C".into());
        let grid: Vec<bool> =
            (-8..=8).map(|i| p.treats(&ContextVector::default().with("stud_ability", i as f64 / 8.0))).collect();
        assert!(!grid[0] && grid[16]);
    }

    #[test]
    fn identical_values_give_half() {
        let v = PolicyValue { v_hat: 0.4, se: 0.01, n_matched: 100 };
        let t = compare_policy_values(&v, &v).unwrap();
        assert_eq!(t.statistic, 0.0);
        assert!((t.p_value - 0.5).abs() < 1e-12);
        let flat = PolicyValue { v_hat: 0.4, se: 0.0, n_matched: 100 };
        assert_eq!(compare_policy_values(&flat, &flat).unwrap().p_value, 1.0);
    }

    #[test]
    fn oracle_rule_beats_constants() {
        let td = synthetic(|x| x, 5000, 8);
        let oracle = estimate_policy_value(&Oracle, &td).unwrap();
        let best = [ConstantPolicy::Treat, ConstantPolicy::Control]
            .iter()
            .map(|p| estimate_policy_value(p, &td).unwrap().v_hat)
            .fold(f64::MIN, f64::max);
        let (constant, ideal) = oracle_values(|x| x);
        assert!(oracle.v_hat - best >= 0.5 * (ideal - constant), "{} vs {}", oracle.v_hat, best);
    }
}
