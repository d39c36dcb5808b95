//! Learning-outcome measures for one assistance exposure and the combined
//! reward that mixes reattempt correctness with end-of-session ability.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{IrtItem, PracticeSession, QuestionId};
use crate::irt::{estimate_ability, AbilityEstimate, ItemBank};

/// Per-question response times are capped here before averaging.
pub const RESPONSE_TIME_CAP_S: f64 = 60.0;
/// Correct responses needed to complete a practice session.
pub const SESSION_SUCCESS_CORRECT: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    /// Weight on reattempt correctness; ability gets 1 - w1.
    pub w1: f64,
}

impl RewardWeights {
    pub fn new(w1: f64) -> Result<Self, OutcomeError> {
        if (0.0..=1.0).contains(&w1) {
            Ok(RewardWeights { w1 })
        } else {
            Err(OutcomeError::InvalidWeight(w1))
        }
    }
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights { w1: 0.4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeOptions {
    /// Whether a correct reattempt counts toward the ten-correct completion rule.
    pub count_reattempts_toward_success: bool,
}

impl Default for OutcomeOptions {
    fn default() -> Self {
        OutcomeOptions { count_reattempts_toward_success: true }
    }
}

/// w1 * reattempt + (1 - w1) * ability. Linear, so it commutes with averaging.
pub fn combined_reward(reattempt: f64, ability: f64, weights: RewardWeights) -> f64 {
    weights.w1 * reattempt + (1.0 - weights.w1) * ability
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    Reward,
    ReattemptCorrect,
    StudentAbility,
    SessionSuccess,
    FutureCorrectRate,
    NextQuestionCorrect,
    FutureResponseTime,
    Confidence,
}

impl Measure {
    pub const ALL: [Measure; 8] = [
        Measure::Reward,
        Measure::ReattemptCorrect,
        Measure::StudentAbility,
        Measure::SessionSuccess,
        Measure::FutureCorrectRate,
        Measure::NextQuestionCorrect,
        Measure::FutureResponseTime,
        Measure::Confidence,
    ];

    /// The four measures reported in the summary tables.
    pub const HEADLINE: [Measure; 4] =
        [Measure::Reward, Measure::ReattemptCorrect, Measure::StudentAbility, Measure::SessionSuccess];

    pub fn name(self) -> &'static str {
        match self {
            Measure::Reward => "reward",
            Measure::ReattemptCorrect => "reattempt_correct",
            Measure::StudentAbility => "student_ability",
            Measure::SessionSuccess => "session_success",
            Measure::FutureCorrectRate => "future_correct_rate",
            Measure::NextQuestionCorrect => "next_question_correct",
            Measure::FutureResponseTime => "future_response_time_s",
            Measure::Confidence => "confidence",
        }
    }

    /// Column header used in the tabular reports.
    pub fn label(self) -> &'static str {
        match self {
            Measure::Reward => "Reward",
            Measure::ReattemptCorrect => "Reatt. Cor.",
            Measure::StudentAbility => "Stud. Abil.",
            Measure::SessionSuccess => "Sess. Succ.",
            Measure::FutureCorrectRate => "Fut. Cor. Rate",
            Measure::NextQuestionCorrect => "Next Quest. Cor.",
            Measure::FutureResponseTime => "Fut. Resp. Time",
            Measure::Confidence => "Confidence",
        }
    }

    pub fn is_binary(self) -> bool {
        matches!(self, Measure::ReattemptCorrect | Measure::SessionSuccess | Measure::NextQuestionCorrect)
    }

    pub fn from_name(name: &str) -> Option<Measure> {
        Measure::ALL.into_iter().find(|m| m.name() == name)
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeVector {
    pub reattempt_correct: f64,
    pub student_ability: f64,
    pub session_success: f64,
    pub future_correct_rate: Option<f64>,
    pub next_question_correct: Option<f64>,
    pub future_response_time_s: Option<f64>,
    pub confidence: Option<f64>,
    pub reward: f64,
}

impl OutcomeVector {
    pub fn get(&self, measure: Measure) -> Option<f64> {
        match measure {
            Measure::Reward => Some(self.reward),
            Measure::ReattemptCorrect => Some(self.reattempt_correct),
            Measure::StudentAbility => Some(self.student_ability),
            Measure::SessionSuccess => Some(self.session_success),
            Measure::FutureCorrectRate => self.future_correct_rate,
            Measure::NextQuestionCorrect => self.next_question_correct,
            Measure::FutureResponseTime => self.future_response_time_s,
            Measure::Confidence => self.confidence,
        }
    }

    /// Value of `measure` with the reward recomputed under `weights`.
    pub fn get_weighted(&self, measure: Measure, weights: RewardWeights) -> Option<f64> {
        match measure {
            Measure::Reward => Some(combined_reward(self.reattempt_correct, self.student_ability, weights)),
            m => self.get(m),
        }
    }

    pub fn with_weights(mut self, weights: RewardWeights) -> Self {
        self.reward = combined_reward(self.reattempt_correct, self.student_ability, weights);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OutcomeError {
    #[error("no record at position {0}")]
    FocalMissing(u32),
    #[error("record at position {0} received no assistance")]
    FocalNotAssisted(u32),
    #[error("no item parameters for question {0}")]
    UnknownItem(QuestionId),
    #[error("reward weight {0} outside [0, 1]")]
    InvalidWeight(f64),
}

/// End-of-session ability from every first attempt in the session.
pub fn session_ability(session: &PracticeSession, items: &ItemBank) -> Result<AbilityEstimate, OutcomeError> {
    let responses = first_attempts(session.records.iter(), items)?;
    Ok(estimate_ability(&responses))
}

pub(crate) fn first_attempts<'a>(
    records: impl Iterator<Item = &'a crate::domain::InteractionRecord>,
    items: &ItemBank,
) -> Result<Vec<(IrtItem, bool)>, OutcomeError> {
    records
        .map(|r| {
            items
                .get(&r.question_id)
                .map(|item| (*item, r.first_correct))
                .ok_or_else(|| OutcomeError::UnknownItem(r.question_id.clone()))
        })
        .collect()
}

pub fn compute_outcomes(
    session: &PracticeSession,
    focal: u32,
    items: &ItemBank,
    weights: RewardWeights,
    options: OutcomeOptions,
) -> Result<OutcomeVector, OutcomeError> {
    let ability = session_ability(session, items)?.theta;
    compute_outcomes_with_ability(session, focal, ability, weights, options)
}

/// As [`compute_outcomes`] with a precomputed end-of-session ability, so
/// callers scoring several exposures of one session estimate it once.
pub fn compute_outcomes_with_ability(
    session: &PracticeSession,
    focal: u32,
    ability: f64,
    weights: RewardWeights,
    options: OutcomeOptions,
) -> Result<OutcomeVector, OutcomeError> {
    let record = session.record_at(focal).ok_or(OutcomeError::FocalMissing(focal))?;
    if record.shown_action_id.is_none() {
        return Err(OutcomeError::FocalNotAssisted(focal));
    }
    let reattempt = if record.second_correct == Some(true) { 1.0 } else { 0.0 };

    let corrects = session
        .records
        .iter()
        .filter(|r| r.first_correct || (options.count_reattempts_toward_success && r.second_correct == Some(true)))
        .count();
    let session_success = if corrects >= SESSION_SUCCESS_CORRECT { 1.0 } else { 0.0 };

    let future: Vec<_> = session.records.iter().filter(|r| r.position > focal).collect();
    let (future_correct_rate, future_response_time_s) = if future.is_empty() {
        (None, None)
    } else {
        let n = future.len() as f64;
        let correct = future.iter().filter(|r| r.first_correct).count() as f64;
        let time = future.iter().map(|r| r.first_response_time_s.min(RESPONSE_TIME_CAP_S)).sum::<f64>();
        (Some(correct / n), Some(time / n))
    };
    let next_question_correct = session.record_at(focal + 1).map(|r| if r.first_correct { 1.0 } else { 0.0 });

    Ok(OutcomeVector {
        reattempt_correct: reattempt,
        student_ability: ability,
        session_success,
        future_correct_rate,
        next_question_correct,
        future_response_time_s,
        confidence: session.confidence_end.map(f64::from),
        reward: combined_reward(reattempt, ability, weights),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::fixtures::{assisted, record, session};
    use crate::domain::InteractionRecord;
    use proptest::prelude::*;

    fn bank(n: usize) -> ItemBank {
        (0..n).map(|i| (QuestionId::new(format!("q{i}")), IrtItem::new(1.0, 0.0, 0.2).unwrap())).collect()
    }

    #[test]
    fn reward_reproduces_figure_rows() {
        let w = RewardWeights::default();
        // (reattempt, ability, printed reward)
        let rows = [
            (0.313, -0.167, 0.025),
            (0.693, 0.195, 0.394),
            (0.255, -0.219, -0.029),
            (0.774, 0.088, 0.363),
            (0.259, -0.228, -0.033),
        ];
        for (r, a, printed) in rows {
            assert!((combined_reward(r, a, w) - printed).abs() <= 0.001, "{r} {a}");
        }
        assert_eq!(combined_reward(1.0, 0.0, RewardWeights::new(0.7).unwrap()), 0.7);
    }

    #[test]
    fn last_record_has_empty_future() {
        let s = session("s", vec![record("s", 1, "q0", true), assisted("s", 2, "q1", "a", false)]);
        let o = compute_outcomes(&s, 2, &bank(2), RewardWeights::default(), OutcomeOptions::default()).unwrap();
        assert_eq!(o.future_correct_rate, None);
        assert_eq!(o.next_question_correct, None);
        assert_eq!(o.future_response_time_s, None);
        assert_eq!(o.reattempt_correct, 0.0);
    }

    #[test]
    fn future_rate_over_later_first_attempts() {
        // 12 records, focal at 3, positions 4..=12 have 6 of 9 correct
        let mut recs: Vec<InteractionRecord> = vec![record("s", 1, "q0", true), record("s", 2, "q1", false)];
        recs.push(assisted("s", 3, "q2", "a", true));
        for (i, correct) in [true, true, false, true, false, true, true, false, true].into_iter().enumerate() {
            let mut r = record("s", 4 + i as u32, &format!("q{}", 3 + i), correct);
            r.first_response_time_s = 30.0 + 10.0 * i as f64;
            recs.push(r);
        }
        let s = session("s", recs);
        let o = compute_outcomes(&s, 3, &bank(12), RewardWeights::default(), OutcomeOptions::default()).unwrap();
        assert!((o.future_correct_rate.unwrap() - 6.0 / 9.0).abs() < 1e-12);
        assert_eq!(o.next_question_correct, Some(1.0));
        // times 30..110 capped at 60: 30,40,50,60,60,60,60,60,60
        assert!((o.future_response_time_s.unwrap() - 480.0 / 9.0).abs() < 1e-12);
        assert_eq!(o.confidence, Some(2.0));
    }

    #[test]
    fn reattempt_completes_session() {
        let mut recs: Vec<_> = (0..9).map(|i| record("s", i + 1, &format!("q{i}"), true)).collect();
        recs.push(assisted("s", 10, "q9", "a", true));
        let s = session("s", recs);
        let items = bank(10);
        let o = compute_outcomes(&s, 10, &items, RewardWeights::default(), OutcomeOptions::default()).unwrap();
        assert_eq!(o.session_success, 1.0);
        let strict = OutcomeOptions { count_reattempts_toward_success: false };
        assert_eq!(compute_outcomes(&s, 10, &items, RewardWeights::default(), strict).unwrap().session_success, 0.0);
    }

    #[test]
    fn focal_must_be_assisted() {
        let s = session("s", vec![record("s", 1, "q0", false)]);
        let err = compute_outcomes(&s, 1, &bank(1), RewardWeights::default(), OutcomeOptions::default());
        assert_eq!(err, Err(OutcomeError::FocalNotAssisted(1)));
        let err = compute_outcomes(&s, 5, &bank(1), RewardWeights::default(), OutcomeOptions::default());
        assert_eq!(err, Err(OutcomeError::FocalMissing(5)));
    }

    #[test]
    fn ability_uses_all_first_attempts() {
        let s = session(
            "s",
            vec![assisted("s", 1, "q0", "a", true), record("s", 2, "q1", true), record("s", 3, "q2", true)],
        );
        let items = bank(3);
        let o = compute_outcomes(&s, 1, &items, RewardWeights::default(), OutcomeOptions::default()).unwrap();
        let expect = estimate_ability(&[
            (items[&QuestionId::new("q0")], false),
            (items[&QuestionId::new("q1")], true),
            (items[&QuestionId::new("q2")], true),
        ]);
        assert_eq!(o.student_ability, expect.theta);
    }

    proptest! {
        #[test]
        fn mean_reward_equals_reward_of_means(
            samples in prop::collection::vec((0u8..2, -4.0f64..4.0), 1..60), w1 in 0.0f64..=1.0,
        ) {
            let w = RewardWeights::new(w1).unwrap();
            let n = samples.len() as f64;
            let mean_reward = samples.iter().map(|(r, a)| combined_reward(*r as f64, *a, w)).sum::<f64>() / n;
            let mean_r = samples.iter().map(|(r, _)| *r as f64).sum::<f64>() / n;
            let mean_a = samples.iter().map(|(_, a)| *a).sum::<f64>() / n;
            prop_assert!((mean_reward - combined_reward(mean_r, mean_a, w)).abs() < 1e-12);
        }

        #[test]
        fn reward_strictly_increasing(r in 0.0f64..1.0, a in -4.0f64..4.0, d in 0.001f64..1.0, w1 in 0.01f64..0.99) {
            let w = RewardWeights::new(w1).unwrap();
            prop_assert!(combined_reward(r + d, a, w) > combined_reward(r, a, w));
            prop_assert!(combined_reward(r, a + d, w) > combined_reward(r, a, w));
        }

        #[test]
        fn success_invariant_to_which_records_are_correct(
            flags in prop::collection::vec(any::<bool>(), 12), perm_seed in any::<u64>(),
        ) {
            use rand::{seq::SliceRandom, SeedableRng};
            let build = |flags: &[bool]| {
                let mut recs: Vec<_> = flags.iter().enumerate()
                    .map(|(i, &c)| record("s", i as u32 + 2, &format!("q{}", i + 1), c)).collect();
                recs.insert(0, assisted("s", 1, "q0", "a", false));
                session("s", recs)
            };
            let mut shuffled = flags.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(perm_seed));
            let items = bank(13);
            let a = compute_outcomes(&build(&flags), 1, &items, RewardWeights::default(), OutcomeOptions::default()).unwrap();
            let b = compute_outcomes(&build(&shuffled), 1, &items, RewardWeights::default(), OutcomeOptions::default()).unwrap();
            prop_assert_eq!(a.session_success, b.session_success);
        }
    }
}
