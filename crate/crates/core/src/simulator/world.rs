//! Ground-truth worlds: question banks with 3PL items, assistance actions
//! with known effects on second-attempt success, and a student population.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::causal::ContextVector;
use crate::domain::{
    ActionId, ActionKind, AssistanceAction, Catalog, ConceptId, IrtItem, Question, QuestionId, QuestionType,
};
use crate::rng::{stream_id, stream_rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// No action changes anything.
    Null,
    /// Constant uplift per action.
    Homogeneous,
    /// Constant uplift plus a slope in the student's ability estimate.
    HeterogeneousLinear,
    /// One action per question whose effect is a slope through zero.
    SignChanging,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub scenario: Scenario,
    pub n_concepts: usize,
    pub questions_per_concept: usize,
    pub n_students: usize,
    /// Share of true-false questions (no reattempt, no actions).
    pub true_false_share: f64,
    /// Added to every item difficulty; calibrates overall correctness.
    pub difficulty_shift: f64,
    /// Population second-attempt success without assistance.
    pub second_attempt_base: f64,
    /// Slope of a student's second-attempt base rate in true ability.
    pub second_attempt_ability_slope: f64,
    pub hint_propensity: f64,
    /// Added to first-attempt success after a hint request.
    pub hint_uplift: f64,
    /// Upper end of the uniform draw of constant uplifts.
    pub max_uplift: f64,
    /// Lead of each question's best action over the runner-up.
    pub best_gap: f64,
    /// Half-width of the uniform draw of ability slopes.
    pub heterogeneity: f64,
    /// Ability slope of the sign-changing action.
    pub sign_change_slope: f64,
    /// Share of questions with a reattempt/ability trade-off action.
    pub tradeoff_share: f64,
    /// Reattempt uplift the trade-off action gives up against the best.
    pub tradeoff_cost: f64,
    /// First-attempt uplift on later questions after the trade-off action.
    pub transfer_uplift: f64,
    pub teacher_assigned_rate: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            scenario: Scenario::Homogeneous,
            n_concepts: 4,
            questions_per_concept: 12,
            n_students: 1000,
            true_false_share: 0.1,
            difficulty_shift: -0.3,
            second_attempt_base: 0.3,
            second_attempt_ability_slope: 0.05,
            hint_propensity: 0.1,
            hint_uplift: 0.1,
            max_uplift: 0.3,
            best_gap: 0.1,
            heterogeneity: 0.2,
            sign_change_slope: 0.4,
            tradeoff_share: 0.0,
            tradeoff_cost: 0.1,
            transfer_uplift: 0.25,
            teacher_assigned_rate: 0.3,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let err = |m: &str| Err(SimError::Config(m.to_string()));
        if self.n_concepts == 0 || self.questions_per_concept == 0 || self.n_students == 0 {
            return err("counts must be positive");
        }
        let probs = [
            self.true_false_share,
            self.second_attempt_base,
            self.hint_propensity,
            self.tradeoff_share,
            self.teacher_assigned_rate,
        ];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return err("shares and rates must lie in [0, 1]");
        }
        if !(self.max_uplift >= 0.0 && self.best_gap >= 0.0 && self.heterogeneity >= 0.0) {
            return err("effect magnitudes must be non-negative");
        }
        Ok(())
    }
}

/// Effect of one action on second-attempt success:
/// gamma0 + sum gamma[f] x[f], plus a transfer bump to later first attempts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionEffectSpec {
    pub action_id: ActionId,
    pub gamma0: f64,
    pub gamma: BTreeMap<String, f64>,
    pub transfer: f64,
}

impl ActionEffectSpec {
    pub fn none(action_id: ActionId) -> Self {
        ActionEffectSpec { action_id, gamma0: 0.0, gamma: BTreeMap::new(), transfer: 0.0 }
    }

    /// Unclamped uplift at `x`; absent features contribute 0.
    pub fn uplift(&self, x: &ContextVector) -> f64 {
        self.gamma0 + self.gamma.iter().map(|(f, g)| g * x.get(f).unwrap_or(0.0)).sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudentProfile {
    pub true_theta: f64,
    pub base_second_attempt_rate: f64,
    /// Median first-attempt response time in seconds.
    pub rt_median_s: f64,
    /// Log-scale spread of response times.
    pub rt_shape: f64,
    pub hint_propensity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub config: WorldConfig,
    pub seed: u64,
    pub catalog: Catalog,
    pub effects: BTreeMap<ActionId, ActionEffectSpec>,
    pub students: Vec<StudentProfile>,
    pub concepts: Vec<ConceptId>,
}

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(0.01, 0.99)
}

const TYPE_WEIGHTS: [(QuestionType, f64); 4] = [
    (QuestionType::MultipleChoice, 0.6),
    (QuestionType::SelectAll, 0.1),
    (QuestionType::FillBlank, 0.15),
    (QuestionType::ShortAnswer, 0.15),
];

fn draw_type<R: Rng>(rng: &mut R, tf_share: f64) -> QuestionType {
    if rng.random_bool(tf_share) {
        return QuestionType::TrueFalse;
    }
    let u: f64 = rng.random();
    let mut cum = 0.0;
    for (t, w) in TYPE_WEIGHTS {
        cum += w;
        if u < cum {
            return t;
        }
    }
    QuestionType::ShortAnswer
}

/// Four actions per reattemptable question: hint, paragraph, a
/// type-specific action, and no assistance.
fn action_kinds(qtype: QuestionType) -> Vec<ActionKind> {
    let special = match qtype {
        QuestionType::MultipleChoice | QuestionType::SelectAll => ActionKind::RemoveDistractor,
        _ => ActionKind::FirstLetter,
    };
    vec![ActionKind::Hint, ActionKind::Paragraph, special, ActionKind::NoAssistance]
}

fn kind_name(kind: ActionKind) -> &'static str {
    match kind {
        ActionKind::Hint => "hint",
        ActionKind::Paragraph => "paragraph",
        ActionKind::Vocabulary => "vocabulary",
        ActionKind::RemoveDistractor => "remove_distractor",
        ActionKind::FirstLetter => "first_letter",
        ActionKind::NoAssistance => "no_assistance",
    }
}

/// Effects for one question's assisting actions (no-assistance excluded).
fn draw_effects<R: Rng>(rng: &mut R, cfg: &WorldConfig, actions: &[(ActionId, ActionKind)]) -> Vec<ActionEffectSpec> {
    let assisting: Vec<&(ActionId, ActionKind)> = actions.iter().filter(|a| a.1 != ActionKind::NoAssistance).collect();
    let mut specs: Vec<ActionEffectSpec> = assisting.iter().map(|a| ActionEffectSpec::none(a.0.clone())).collect();
    if cfg.scenario == Scenario::Null {
        return specs;
    }
    for s in specs.iter_mut() {
        s.gamma0 = rng.random_range(0.0..=cfg.max_uplift);
    }
    // the best action leads every other action, including no assistance, by best_gap
    let best = (0..specs.len()).max_by(|&a, &b| specs[a].gamma0.total_cmp(&specs[b].gamma0)).unwrap();
    let runner_up = specs.iter().enumerate().filter(|(i, _)| *i != best).map(|(_, s)| s.gamma0).fold(0.0, f64::max);
    specs[best].gamma0 = specs[best].gamma0.max(runner_up + cfg.best_gap);
    match cfg.scenario {
        Scenario::HeterogeneousLinear => {
            for s in specs.iter_mut() {
                let g = rng.random_range(-cfg.heterogeneity..=cfg.heterogeneity);
                s.gamma.insert("stud_ability".into(), g);
            }
        }
        Scenario::SignChanging => {
            let i = rng.random_range(0..specs.len());
            specs[i].gamma0 = 0.0;
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            specs[i].gamma.insert("stud_ability".into(), sign * cfg.sign_change_slope);
        }
        _ => {}
    }
    if rng.random_bool(cfg.tradeoff_share) {
        let best = (0..specs.len()).max_by(|&a, &b| specs[a].gamma0.total_cmp(&specs[b].gamma0)).unwrap();
        let other = (0..specs.len()).filter(|&i| i != best).collect::<Vec<_>>();
        if let Some(&i) = other.choose(rng) {
            specs[i].gamma0 = (specs[best].gamma0 - cfg.tradeoff_cost).max(0.0);
            specs[i].transfer = cfg.transfer_uplift;
        }
    }
    specs
}

/// Deterministic in (config, seed).
pub fn generate_world(config: &WorldConfig, seed: u64) -> Result<World, SimError> {
    config.validate()?;
    let mut rng = stream_rng(seed, stream_id(&[1]));
    let a_dist = LogNormal::new(0.0, 0.25).expect("valid lognormal");
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
    let mut questions = Vec::new();
    let mut actions = Vec::new();
    let mut effects = BTreeMap::new();
    let concepts: Vec<ConceptId> = (0..config.n_concepts).map(|c| ConceptId::new(format!("c{c:02}"))).collect();
    for concept in &concepts {
        for k in 0..config.questions_per_concept {
            let id = QuestionId::new(format!("{concept}-q{k:02}"));
            let qtype = draw_type(&mut rng, config.true_false_share);
            let c = if qtype.is_choice() { 0.2 } else { 0.0 };
            let item = IrtItem::new(a_dist.sample(&mut rng), std_normal.sample(&mut rng) + config.difficulty_shift, c)
                .expect("drawn item parameters are valid");
            let mut ids = Vec::new();
            if qtype.allows_reattempt() {
                let qa: Vec<(ActionId, ActionKind)> = action_kinds(qtype)
                    .into_iter()
                    .map(|kind| (ActionId::new(format!("{id}-{}", kind_name(kind))), kind))
                    .collect();
                for spec in draw_effects(&mut rng, config, &qa) {
                    effects.insert(spec.action_id.clone(), spec);
                }
                for (aid, kind) in qa {
                    effects.entry(aid.clone()).or_insert_with(|| ActionEffectSpec::none(aid.clone()));
                    actions.push(AssistanceAction {
                        id: aid.clone(),
                        question_id: id.clone(),
                        kind,
                        content: String::new(),
                    });
                    ids.push(aid);
                }
            }
            questions.push(Question { id, concept_id: concept.clone(), qtype, item, action_ids: ids });
        }
    }
    let catalog = Catalog::new(questions, actions).map_err(|e| SimError::Config(e.to_string()))?;
    let mut srng = stream_rng(seed, stream_id(&[2]));
    let students = (0..config.n_students)
        .map(|_| {
            let theta: f64 = std_normal.sample(&mut srng);
            StudentProfile {
                true_theta: theta,
                base_second_attempt_rate: (config.second_attempt_base + config.second_attempt_ability_slope * theta)
                    .clamp(0.05, 0.95),
                rt_median_s: (20f64.ln() + 0.3 * std_normal.sample(&mut srng)).exp(),
                rt_shape: 0.5,
                hint_propensity: config.hint_propensity,
            }
        })
        .collect();
    Ok(World { config: config.clone(), seed, catalog, effects, students, concepts })
}

impl World {
    pub fn effect(&self, action: &ActionId) -> Result<&ActionEffectSpec, SimError> {
        self.effects.get(action).ok_or_else(|| SimError::UnknownAction(action.clone()))
    }

    /// Second-attempt success probability for a student's base rate.
    pub fn second_attempt_probability(&self, base: f64, action: &ActionId, x: &ContextVector) -> Result<f64, SimError> {
        Ok(clamp_prob(base + self.effect(action)?.uplift(x)))
    }

    /// Action with the largest uplift at `x`, ties to the smallest id.
    pub fn best_action(&self, question: &QuestionId, x: &ContextVector) -> Option<&ActionId> {
        let q = self.catalog.question(question)?;
        let mut best: Option<(&ActionId, f64)> = None;
        for a in &q.action_ids {
            let u = self.effects.get(a).map_or(0.0, |e| e.uplift(x));
            if best.is_none_or(|b| u > b.1) {
                best = Some((a, u));
            }
        }
        best.map(|b| b.0)
    }
}

/// Uplift of `action` over no assistance on second-attempt success at `x`,
/// using the population base rate.
pub fn true_cate(world: &World, action: &ActionId, x: &ContextVector) -> Result<f64, SimError> {
    let base = world.config.second_attempt_base;
    Ok(world.second_attempt_probability(base, action, x)? - clamp_prob(base))
}
