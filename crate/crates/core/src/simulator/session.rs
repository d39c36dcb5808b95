//! One practice session: Goldilocks sequencing, first attempt, policy
//! query on an incorrect reattemptable answer, second attempt.

use std::collections::HashSet;

use rand::Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use super::world::{clamp_prob, World};
use super::SimError;
use crate::causal::{compute_context, ContextVector};
use crate::domain::{
    ActionId, ConceptId, InteractionRecord, PracticeSession, Question, QuestionId, SessionId, StudentId,
};
use crate::irt::{estimate_ability_from, p_correct, select_next_question, ItemBank};
use crate::outcomes::SESSION_SUCCESS_CORRECT;
use crate::service::{Query, Snapshot};

/// Where and when a session happens.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionPlan {
    pub session_id: SessionId,
    pub student_id: StudentId,
    /// Index into the world's student population.
    pub student: usize,
    pub concept: ConceptId,
    pub attempt_index: u32,
    /// UTC epoch seconds of the first question.
    pub start: i64,
}

/// Ground truth behind one assistance exposure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureTrace {
    pub session_id: SessionId,
    pub question_id: QuestionId,
    pub position: u32,
    pub policy_id: String,
    pub fallback: bool,
    /// Context the effect was evaluated at.
    pub context: ContextVector,
    pub action: ActionId,
    /// Second-attempt success probability under each available action.
    pub p_second: Vec<(ActionId, f64)>,
}

impl ExposureTrace {
    /// Expected second-attempt success under a uniformly random action.
    pub fn uniform_value(&self) -> f64 {
        self.p_second.iter().map(|p| p.1).sum::<f64>() / self.p_second.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedSession {
    pub session: PracticeSession,
    pub traces: Vec<ExposureTrace>,
}

/// Saturday or Sunday in UTC.
pub fn is_weekend(ts: i64) -> bool {
    let weekday = (ts.div_euclid(86_400) + 3).rem_euclid(7);
    weekday >= 5
}

fn lognormal(median: f64, shape: f64) -> LogNormal<f64> {
    LogNormal::new(median.ln(), shape).expect("valid lognormal")
}

/// Transfer bump on a first attempt from earlier assisted questions in
/// the session, halving every three questions.
fn transfer_bump(world: &World, session: &PracticeSession, position: u32) -> f64 {
    session
        .records
        .iter()
        .filter_map(|r| {
            let a = r.shown_action_id.as_ref()?;
            let t = world.effects.get(a)?.transfer;
            let k = (position - r.position) as f64;
            Some(t * 0.5f64.powf((k - 1.0) / 3.0))
        })
        .sum()
}

/// Simulates one session. `history` holds the student's earlier sessions
/// and `items` the catalog's item bank.
pub fn simulate_session<R: Rng>(
    world: &World,
    plan: &SessionPlan,
    policy: &Snapshot,
    history: &[&PracticeSession],
    items: &ItemBank,
    rng: &mut R,
) -> Result<SimulatedSession, SimError> {
    let pool: Vec<Question> = world.catalog.questions_for_concept(&plan.concept).cloned().collect();
    if pool.is_empty() {
        return Err(SimError::EmptyConcept(plan.concept.clone()));
    }
    let student = world.students.get(plan.student).ok_or(SimError::UnknownStudent(plan.student))?;
    let first_rt = lognormal(student.rt_median_s, student.rt_shape);
    let second_rt = lognormal(0.7 * student.rt_median_s, student.rt_shape);
    let view_rt = lognormal(10.0, 0.5);

    let mut session = PracticeSession {
        session_id: plan.session_id.clone(),
        student_id: plan.student_id.clone(),
        concept_id: plan.concept.clone(),
        records: Vec::new(),
        confidence_end: None,
        teacher_assigned: rng.random_bool(world.config.teacher_assigned_rate),
        started_on_weekend: is_weekend(plan.start),
        attempt_index_for_concept: plan.attempt_index,
    };
    let mut traces = Vec::new();
    let mut answered = HashSet::new();
    let mut responses = Vec::new();
    let mut clock = plan.start as f64;
    let mut correct = 0;

    let mut theta_hat = 0.0;
    while correct < SESSION_SUCCESS_CORRECT {
        let Some(q) = select_next_question(theta_hat, &pool, &answered) else { break };
        answered.insert(q.id.clone());
        let position = session.records.len() as u32 + 1;
        let hint = rng.random_bool(student.hint_propensity);
        let mut p1 = p_correct(student.true_theta, &q.item) + transfer_bump(world, &session, position);
        if hint {
            p1 += world.config.hint_uplift;
        }
        let first_correct = rng.random_bool(clamp_prob(p1));
        let rt: f64 = first_rt.sample(rng);
        session.records.push(InteractionRecord {
            session_id: plan.session_id.clone(),
            student_id: plan.student_id.clone(),
            question_id: q.id.clone(),
            position,
            hint_requested_before_first: hint,
            first_correct,
            first_response_time_s: rt,
            shown_action_id: None,
            second_correct: None,
            second_response_time_s: None,
            assist_view_time_s: None,
            timestamp: clock.round() as i64,
        });
        clock += rt;
        responses.push((q.item, first_correct));
        theta_hat = estimate_ability_from(&responses, theta_hat).theta;

        if !first_correct && q.qtype.allows_reattempt() && !q.action_ids.is_empty() {
            let x = compute_context(history, &session, position, items);
            let decision = policy.decide(&Query {
                session_id: plan.session_id.clone(),
                concept_id: plan.concept.clone(),
                question_id: q.id.clone(),
                context: Some(x),
                actions: q.action_ids.clone(),
            })?;
            let base = student.base_second_attempt_rate;
            let p_second = q
                .action_ids
                .iter()
                .map(|a| Ok((a.clone(), world.second_attempt_probability(base, a, &x)?)))
                .collect::<Result<Vec<_>, SimError>>()?;
            let p2 = world.second_attempt_probability(base, &decision.action_id, &x)?;
            let second = rng.random_bool(p2);
            let view: f64 = view_rt.sample(rng);
            let rt2: f64 = second_rt.sample(rng);
            clock += view + rt2;
            let r = session.records.last_mut().unwrap();
            r.shown_action_id = Some(decision.action_id.clone());
            r.second_correct = Some(second);
            r.assist_view_time_s = Some(view);
            r.second_response_time_s = Some(rt2);
            traces.push(ExposureTrace {
                session_id: plan.session_id.clone(),
                question_id: q.id.clone(),
                position,
                policy_id: decision.policy_id,
                fallback: decision.fallback,
                context: x,
                action: decision.action_id,
                p_second,
            });
        }
        if session.records.last().unwrap().eventually_correct() {
            correct += 1;
        }
    }

    let n = session.records.len() as f64;
    let rate = session.records.iter().filter(|r| r.first_correct).count() as f64 / n;
    let noisy = (rate + Normal::new(0.0, 0.15).expect("valid normal").sample(rng)).clamp(0.0, 0.999);
    session.confidence_end = Some(1 + (3.0 * noisy) as u8);
    Ok(SimulatedSession { session, traces })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{ActionKind, AssistanceAction, Catalog, IrtItem, QuestionType};
    use crate::rng::stream_rng;
    use crate::service::{AssignmentConfig, PolicySpecFile};
    use crate::simulator::world::{generate_world, ActionEffectSpec, Scenario, WorldConfig};

    fn setup(world: &World) -> (Snapshot, ItemBank) {
        let spec = PolicySpecFile::uniform_random("random", &world.catalog);
        (Snapshot::new(vec![spec], AssignmentConfig::single("random")).unwrap(), world.catalog.items())
    }

    fn plan(world: &World, student: usize, id: &str) -> SessionPlan {
        SessionPlan {
            session_id: SessionId::new(id),
            student_id: StudentId::new(format!("s{student}")),
            student,
            concept: world.concepts[0].clone(),
            attempt_index: 1,
            start: 1_700_000_000,
        }
    }

    #[test]
    fn weekend_from_timestamp() {
        // 1970-01-01 was a Thursday; 2023-11-18 a Saturday
        assert!(!is_weekend(0));
        assert!(is_weekend(2 * 86_400));
        assert!(is_weekend(1_700_265_600));
        assert!(!is_weekend(1_700_000_000));
    }

    #[test]
    fn replay_is_identical() {
        let w = generate_world(&WorldConfig { n_students: 5, ..WorldConfig::default() }, 3).unwrap();
        let (snap, items) = setup(&w);
        let p = plan(&w, 1, "sess");
        let a = simulate_session(&w, &p, &snap, &[], &items, &mut stream_rng(9, 0)).unwrap();
        let b = simulate_session(&w, &p, &snap, &[], &items, &mut stream_rng(9, 0)).unwrap();
        assert_eq!(a, b);
        assert!(crate::domain::validate_session(a.session).is_ok());
    }

    #[test]
    fn strong_student_succeeds() {
        let cfg = WorldConfig { n_students: 1, difficulty_shift: -1.0, ..WorldConfig::default() };
        let mut w = generate_world(&cfg, 4).unwrap();
        w.students[0].true_theta = 4.0;
        let (snap, items) = setup(&w);
        let successes = (0..200)
            .filter(|&s| {
                let out = simulate_session(&w, &plan(&w, 0, "x"), &snap, &[], &items, &mut stream_rng(s, 1)).unwrap();
                out.session.records.iter().filter(|r| r.eventually_correct()).count() >= SESSION_SUCCESS_CORRECT
            })
            .count();
        assert!(successes >= 198, "{successes}");
    }

    #[test]
    fn exhausted_pool_of_three() {
        let mut w =
            generate_world(&WorldConfig { scenario: Scenario::Null, n_students: 1, ..WorldConfig::default() }, 5)
                .unwrap();
        let concept = w.concepts[0].clone();
        let mut questions = Vec::new();
        let mut actions = Vec::new();
        for k in 0..3 {
            let id = QuestionId::new(format!("hard{k}"));
            let action = ActionId::new(format!("hard{k}-none"));
            actions.push(AssistanceAction {
                id: action.clone(),
                question_id: id.clone(),
                kind: ActionKind::NoAssistance,
                content: String::new(),
            });
            w.effects.insert(action.clone(), ActionEffectSpec::none(action.clone()));
            questions.push(Question {
                id,
                concept_id: concept.clone(),
                qtype: QuestionType::FillBlank,
                item: IrtItem::new(1.0, 0.0, 0.0).unwrap(),
                action_ids: vec![action],
            });
        }
        w.catalog = Catalog::new(questions, actions).unwrap();
        w.students[0].base_second_attempt_rate = 0.0;
        w.students[0].true_theta = -20.0;
        w.students[0].hint_propensity = 0.0;
        let (snap, items) = setup(&w);
        let out = simulate_session(&w, &plan(&w, 0, "x"), &snap, &[], &items, &mut stream_rng(1, 1)).unwrap();
        assert_eq!(out.session.records.len(), 3);
        assert!(out.session.records.iter().all(|r| !r.eventually_correct() && r.second_correct.is_some()));
    }

    #[test]
    fn empty_concept_is_an_error() {
        let w = generate_world(&WorldConfig { n_students: 1, ..WorldConfig::default() }, 5).unwrap();
        let (snap, items) = setup(&w);
        let mut p = plan(&w, 0, "x");
        p.concept = ConceptId::new("missing");
        let err = simulate_session(&w, &p, &snap, &[], &items, &mut stream_rng(1, 1)).unwrap_err();
        assert!(matches!(err, SimError::EmptyConcept(_)));
    }
}
