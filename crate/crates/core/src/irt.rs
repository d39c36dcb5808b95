//! Three-parameter logistic item response model.
//!
//! Ability is estimated by MAP under a standard-normal prior. With a
//! guessing floor c > 0 the log-likelihood is not log-concave, so the
//! Newton iteration starts from the best point of a coarse grid and falls
//! back to Fisher scoring (plus step halving) where the Hessian is not
//! safely negative.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::domain::{IrtItem, Question, QuestionId, QuestionType};

pub type ItemBank = HashMap<QuestionId, IrtItem>;

/// Ability estimates are clamped to [-THETA_BOUND, THETA_BOUND].
pub const THETA_BOUND: f64 = 4.0;
const NEWTON_TOL: f64 = 1e-6;
const NEWTON_MAX_ITER: usize = 50;
const SINGULAR_HESSIAN: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbilityEstimate {
    pub theta: f64,
    pub n_responses: usize,
    pub converged: bool,
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// c + (1 - c) / (1 + exp(-a (theta - b)))
pub fn p_correct(theta: f64, item: &IrtItem) -> f64 {
    item.c + (1.0 - item.c) * logistic(item.a * (theta - item.b))
}

/// d p_correct / d theta.
pub fn p_correct_derivative(theta: f64, item: &IrtItem) -> f64 {
    let s = logistic(item.a * (theta - item.b));
    (1.0 - item.c) * item.a * s * (1.0 - s)
}

fn response_terms(theta: f64, item: &IrtItem, correct: bool) -> (f64, f64, f64) {
    let z = item.a * (theta - item.b);
    let s = logistic(z);
    let a = item.a;
    if correct {
        let p = item.c + (1.0 - item.c) * s;
        let dp = (1.0 - item.c) * a * s * (1.0 - s);
        let d2p = dp * a * (1.0 - 2.0 * s);
        (p.ln(), dp / p, (d2p * p - dp * dp) / (p * p))
    } else {
        // ln(1 - p) = ln(1 - c) + ln(1 - s)
        let ln_q = (1.0 - item.c).ln() + if z > 0.0 { -z - (-z).exp().ln_1p() } else { -z.exp().ln_1p() };
        (ln_q, -a * s, -a * a * s * (1.0 - s))
    }
}

/// Log posterior (up to a constant) under a N(0, 1) prior.
pub fn log_posterior(theta: f64, responses: &[(IrtItem, bool)]) -> f64 {
    responses.iter().map(|(item, y)| response_terms(theta, item, *y).0).sum::<f64>() - 0.5 * theta * theta
}

/// Analytic derivative of [`log_posterior`].
pub fn log_posterior_gradient(theta: f64, responses: &[(IrtItem, bool)]) -> f64 {
    responses.iter().map(|(item, y)| response_terms(theta, item, *y).1).sum::<f64>() - theta
}

fn derivatives(theta: f64, responses: &[(IrtItem, bool)]) -> (f64, f64, f64) {
    let mut value = -0.5 * theta * theta;
    let mut grad = -theta;
    let mut hess = -1.0;
    for (item, y) in responses {
        let (v, g, h) = response_terms(theta, item, *y);
        value += v;
        grad += g;
        hess += h;
    }
    (value, grad, hess)
}

fn fisher_information(theta: f64, responses: &[(IrtItem, bool)]) -> f64 {
    1.0 + responses
        .iter()
        .map(|(item, _)| {
            let p = p_correct(theta, item);
            let dp = p_correct_derivative(theta, item);
            dp * dp / (p * (1.0 - p))
        })
        .sum::<f64>()
}

/// MAP ability from first-attempt responses. Empty input returns the prior mean.
pub fn estimate_ability(responses: &[(IrtItem, bool)]) -> AbilityEstimate {
    if responses.is_empty() {
        return AbilityEstimate { theta: 0.0, n_responses: 0, converged: true };
    }
    let start = (-8..=8)
        .map(|k| k as f64 * 0.5)
        .map(|t| (t, log_posterior(t, responses)))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(t, _)| t)
        .unwrap_or(0.0);
    estimate_ability_from(responses, start)
}

/// Newton refinement from `start` without the global grid search; used for
/// incremental updates where the previous estimate is a good start.
pub fn estimate_ability_from(responses: &[(IrtItem, bool)], start: f64) -> AbilityEstimate {
    if responses.is_empty() {
        return AbilityEstimate { theta: 0.0, n_responses: 0, converged: true };
    }
    let mut theta = start.clamp(-THETA_BOUND, THETA_BOUND);
    let mut converged = false;
    for _ in 0..NEWTON_MAX_ITER {
        let (value, grad, hess) = derivatives(theta, responses);
        let step = if hess < -SINGULAR_HESSIAN { -grad / hess } else { grad / fisher_information(theta, responses) };
        let mut scale = 1.0;
        let mut next = (theta + step).clamp(-THETA_BOUND, THETA_BOUND);
        while log_posterior(next, responses) < value && scale > 1e-8 {
            scale *= 0.5;
            next = (theta + scale * step).clamp(-THETA_BOUND, THETA_BOUND);
        }
        let delta = next - theta;
        theta = next;
        if delta.abs() < NEWTON_TOL {
            converged = true;
            break;
        }
    }
    AbilityEstimate { theta, n_responses: responses.len(), converged }
}

/// Goldilocks sequencing: the unanswered question whose difficulty is
/// closest to `theta`, preferring non-true-false questions, ties broken by
/// smallest id. `None` once the pool is exhausted.
pub fn select_next_question<'a>(
    theta: f64,
    pool: &'a [Question],
    answered: &HashSet<QuestionId>,
) -> Option<&'a Question> {
    pool.iter().filter(|q| !answered.contains(&q.id)).min_by(|x, y| {
        let tf = |q: &Question| q.qtype == QuestionType::TrueFalse;
        tf(x).cmp(&tf(y)).then((x.item.b - theta).abs().total_cmp(&(y.item.b - theta).abs())).then(x.id.cmp(&y.id))
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct ItemLine {
    question_id: QuestionId,
    a: f64,
    b: f64,
    c: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum ItemFileError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Reads the item parameter file (JSONL with keys question_id, a, b, c).
pub fn read_item_file<R: BufRead>(input: R) -> Result<ItemBank, ItemFileError> {
    let mut bank = ItemBank::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ItemLine =
            serde_json::from_str(&line).map_err(|e| ItemFileError::Parse { line: i + 1, reason: e.to_string() })?;
        let item = IrtItem::new(parsed.a, parsed.b, parsed.c)
            .map_err(|e| ItemFileError::Parse { line: i + 1, reason: e.to_string() })?;
        bank.insert(parsed.question_id, item);
    }
    Ok(bank)
}

pub fn write_item_file<W: Write>(bank: &ItemBank, mut out: W) -> std::io::Result<()> {
    let mut ids: Vec<&QuestionId> = bank.keys().collect();
    ids.sort();
    for id in ids {
        let item = bank[id];
        let line = ItemLine { question_id: id.clone(), a: item.a, b: item.b, c: item.c };
        writeln!(out, "{}", serde_json::to_string(&line).expect("item line serializes"))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::ConceptId;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn item(a: f64, b: f64, c: f64) -> IrtItem {
        IrtItem::new(a, b, c).unwrap()
    }

    #[test]
    fn midpoint_and_saturation() {
        assert!((p_correct(0.0, &item(1.0, 0.0, 0.2)) - 0.6).abs() < 1e-15);
        assert!((p_correct(60.0, &item(1.0, 0.0, 0.2)) - 1.0).abs() < 1e-15);
        assert!((p_correct(-60.0, &item(1.0, 0.0, 0.2)) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn evaluated_point() {
        // 0.2 + 0.8 / (1 + e^-1.5) from a scalar calculator
        let got = p_correct(1.0, &item(1.5, 0.0, 0.2));
        assert!((got - 0.854_059_580_954_915).abs() < 1e-14);
    }

    #[test]
    fn empty_responses_give_prior_mean() {
        let est = estimate_ability(&[]);
        assert_eq!(est.theta, 0.0);
        assert!(est.converged);
    }

    #[test]
    fn all_correct_is_positive() {
        let responses: Vec<_> = (0..10).map(|_| (item(1.0, 0.0, 0.2), true)).collect();
        let est = estimate_ability(&responses);
        assert!(est.theta > 0.0 && est.converged);
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let it = item(rng.random_range(0.3..2.5), rng.random_range(-3.0..3.0), rng.random_range(0.0..0.5));
            let theta = rng.random_range(-4.0..4.0);
            let h = 1e-5;
            let fd = (p_correct(theta + h, &it) - p_correct(theta - h, &it)) / (2.0 * h);
            let analytic = p_correct_derivative(theta, &it);
            assert!(analytic > 0.0);
            assert!((fd - analytic).abs() <= 1e-6 * analytic.abs().max(1e-3), "{fd} vs {analytic}");
        }
    }

    #[test]
    fn posterior_gradient_vanishes_at_estimate() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let responses: Vec<_> = (0..rng.random_range(1..25))
                .map(|_| (item(rng.random_range(0.5..2.0), rng.random_range(-2.0..2.0), 0.2), rng.random_bool(0.6)))
                .collect();
            let est = estimate_ability(&responses);
            let h = 1e-5;
            let fd = (log_posterior(est.theta + h, &responses) - log_posterior(est.theta - h, &responses)) / (2.0 * h);
            let analytic = log_posterior_gradient(est.theta, &responses);
            assert!((fd - analytic).abs() < 1e-6);
            if est.theta.abs() < THETA_BOUND {
                assert!(analytic.abs() < 1e-5);
            }
        }
    }

    fn question(id: &str, b: f64, qtype: QuestionType) -> Question {
        Question {
            id: id.into(),
            concept_id: ConceptId::new("c"),
            qtype,
            item: item(1.0, b, 0.0),
            action_ids: if qtype == QuestionType::TrueFalse { vec![] } else { vec!["a".into()] },
        }
    }

    #[test]
    fn goldilocks_selection() {
        let pool = vec![
            question("q1", -1.0, QuestionType::MultipleChoice),
            question("q2", 0.1, QuestionType::FillBlank),
            question("q3", 2.0, QuestionType::MultipleChoice),
        ];
        let none = HashSet::new();
        assert_eq!(select_next_question(0.0, &pool, &none).unwrap().id.as_str(), "q2");
        let all: HashSet<QuestionId> = pool.iter().map(|q| q.id.clone()).collect();
        assert!(select_next_question(0.0, &pool, &all).is_none());
    }

    #[test]
    fn non_true_false_preferred() {
        let pool =
            vec![question("tf", 0.0, QuestionType::TrueFalse), question("mc", 3.0, QuestionType::MultipleChoice)];
        let mut answered = HashSet::new();
        assert_eq!(select_next_question(0.0, &pool, &answered).unwrap().id.as_str(), "mc");
        answered.insert(QuestionId::new("mc"));
        assert_eq!(select_next_question(0.0, &pool, &answered).unwrap().id.as_str(), "tf");
    }

    #[test]
    fn ties_break_on_id() {
        let pool =
            vec![question("qb", 0.5, QuestionType::MultipleChoice), question("qa", -0.5, QuestionType::MultipleChoice)];
        assert_eq!(select_next_question(0.0, &pool, &HashSet::new()).unwrap().id.as_str(), "qa");
    }

    #[test]
    fn item_file_round_trip() {
        let mut bank = ItemBank::new();
        bank.insert("q1".into(), item(1.2, -0.3, 0.2));
        bank.insert("q0".into(), item(0.8, 1.1, 0.0));
        let mut buf = Vec::new();
        write_item_file(&bank, &mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("{\"question_id\":\"q0\""));
        assert_eq!(read_item_file(&buf[..]).unwrap(), bank);
        assert!(matches!(
            read_item_file(&b"{\"question_id\":\"q\",\"a\":-1,\"b\":0,\"c\":0}\n"[..]),
            Err(ItemFileError::Parse { line: 1, .. })
        ));
    }

    fn response_strategy() -> impl Strategy<Value = Vec<(IrtItem, bool)>> {
        prop::collection::vec(((0.3f64..2.5), (-3.0f64..3.0), (0.0f64..0.35), any::<bool>()), 0..20)
            .prop_map(|v| v.into_iter().map(|(a, b, c, y)| (item(a, b, c), y)).collect())
    }

    proptest! {
        #[test]
        fn extra_correct_never_lowers_estimate(
            responses in response_strategy(), a in 0.3f64..2.5, b in -3.0f64..3.0, c in 0.0f64..0.35,
        ) {
            let base = estimate_ability(&responses).theta;
            let mut more = responses.clone();
            more.push((item(a, b, c), true));
            prop_assert!(estimate_ability(&more).theta >= base - 1e-6);
            let mut less = responses;
            less.push((item(a, b, c), false));
            prop_assert!(estimate_ability(&less).theta <= base + 1e-6);
        }
    }
}
