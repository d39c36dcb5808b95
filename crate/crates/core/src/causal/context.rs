//! Student context features observed at the moment an assistance decision
//! is made.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::domain::{InteractionRecord, PracticeSession, StudentId};
use crate::irt::{estimate_ability, ItemBank};
use crate::outcomes::SESSION_SUCCESS_CORRECT;

pub const N_FEATURES: usize = 20;

pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "stud_ability",
    "resp_time",
    "prev_resp_cor",
    "quest_num",
    "cor_rate",
    "assigned",
    "confidence",
    "weekend",
    "num_sess_total",
    "num_quest_total",
    "num_assist_total",
    "avg_quest_num",
    "avg_sess_succ",
    "avg_1st_cor",
    "avg_2nd_cor",
    "avg_1st_assists",
    "avg_2nd_assists",
    "med_1st_resp_time",
    "med_2nd_resp_time",
    "med_assist_time",
];

/// Feature values with a presence mask; absent features hold 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContextVector {
    pub values: [f64; N_FEATURES],
    pub present: [bool; N_FEATURES],
}

impl Default for ContextVector {
    fn default() -> Self {
        ContextVector { values: [0.0; N_FEATURES], present: [false; N_FEATURES] }
    }
}

impl ContextVector {
    pub fn index(name: &str) -> Option<usize> {
        FEATURE_NAMES.iter().position(|n| *n == name)
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        Self::index(name).filter(|&i| self.present[i]).map(|i| self.values[i])
    }

    pub fn set(&mut self, name: &str, value: f64) {
        let i = Self::index(name).unwrap_or_else(|| panic!("unknown feature {name}"));
        self.values[i] = value;
        self.present[i] = true;
    }

    pub fn with(mut self, name: &str, value: f64) -> Self {
        self.set(name, value);
        self
    }

    fn set_opt(&mut self, name: &str, value: Option<f64>) {
        if let Some(v) = value {
            self.set(name, v);
        }
    }

    /// Values followed by the presence indicators as 0/1, the layout the
    /// forest splits on.
    pub fn forest_features(&self) -> Vec<f64> {
        self.values.iter().copied().chain(self.present.iter().map(|&p| if p { 1.0 } else { 0.0 })).collect()
    }

    pub fn forest_feature_names() -> Vec<String> {
        FEATURE_NAMES.iter().map(|n| n.to_string()).chain(FEATURE_NAMES.iter().map(|n| format!("has_{n}"))).collect()
    }
}

/// Each student's sessions ordered by start time.
#[derive(Debug, Clone, Default)]
pub struct HistoryIndex<'a> {
    by_student: HashMap<&'a StudentId, Vec<(i64, &'a PracticeSession)>>,
}

impl<'a> HistoryIndex<'a> {
    pub fn new(sessions: impl IntoIterator<Item = &'a PracticeSession>) -> Self {
        let mut by_student: HashMap<&StudentId, Vec<(i64, &PracticeSession)>> = HashMap::new();
        for s in sessions {
            if let Some(ts) = s.start_timestamp() {
                by_student.entry(&s.student_id).or_default().push((ts, s));
            }
        }
        for v in by_student.values_mut() {
            v.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.session_id.cmp(&b.1.session_id)));
        }
        HistoryIndex { by_student }
    }

    /// The student's sessions that started strictly before `session`.
    pub fn prior(&self, session: &PracticeSession) -> Vec<&'a PracticeSession> {
        let Some(start) = session.start_timestamp() else { return Vec::new() };
        self.by_student
            .get(&session.student_id)
            .map(|v| v.iter().take_while(|(ts, _)| *ts < start).map(|(_, s)| *s).collect())
            .unwrap_or_default()
    }
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

fn rate<'r>(
    records: impl Iterator<Item = &'r InteractionRecord>,
    pred: impl Fn(&InteractionRecord) -> bool,
) -> Option<f64> {
    let (hits, n) = records.fold((0usize, 0usize), |(h, n), r| (h + pred(r) as usize, n + 1));
    (n > 0).then(|| hits as f64 / n as f64)
}

/// Context at the first attempt of the record at `focal`. Only records
/// before the focal one and sessions in `history` contribute, so the
/// vector is available when the decision is made.
pub fn compute_context(
    history: &[&PracticeSession],
    session: &PracticeSession,
    focal: u32,
    items: &ItemBank,
) -> ContextVector {
    let mut x = ContextVector::default();
    let before: Vec<&InteractionRecord> = session.records.iter().filter(|r| r.position < focal).collect();
    let responses: Vec<_> =
        before.iter().filter_map(|r| items.get(&r.question_id).map(|it| (*it, r.first_correct))).collect();
    x.set("stud_ability", estimate_ability(&responses).theta);
    if let Some(r) = session.record_at(focal) {
        x.set("resp_time", r.first_response_time_s);
    }
    x.set_opt("prev_resp_cor", before.last().map(|r| if r.first_correct { 1.0 } else { 0.0 }));
    x.set("quest_num", focal as f64);
    x.set_opt("cor_rate", rate(before.iter().copied(), |r| r.first_correct));
    x.set("assigned", if session.teacher_assigned { 1.0 } else { 0.0 });
    x.set("weekend", if session.started_on_weekend { 1.0 } else { 0.0 });
    x.set_opt("confidence", history.iter().rev().find_map(|s| s.confidence_end).map(f64::from));

    if history.is_empty() {
        return x;
    }
    let past = || history.iter().flat_map(|s| s.records.iter());
    let n_sess = history.len() as f64;
    x.set("num_sess_total", n_sess);
    x.set("num_quest_total", past().count() as f64);
    x.set("num_assist_total", past().filter(|r| r.is_assisted()).count() as f64);
    x.set("avg_quest_num", past().count() as f64 / n_sess);
    let successes = history
        .iter()
        .filter(|s| s.records.iter().filter(|r| r.eventually_correct()).count() >= SESSION_SUCCESS_CORRECT)
        .count();
    x.set("avg_sess_succ", successes as f64 / n_sess);
    x.set_opt("avg_1st_cor", rate(past(), |r| r.first_correct));
    x.set_opt("avg_2nd_cor", rate(past().filter(|r| r.is_assisted()), |r| r.second_correct == Some(true)));
    x.set_opt("avg_1st_assists", rate(past(), |r| r.hint_requested_before_first));
    x.set_opt("avg_2nd_assists", rate(past(), |r| r.is_assisted()));
    x.set_opt("med_1st_resp_time", median(past().map(|r| r.first_response_time_s).collect()));
    x.set_opt("med_2nd_resp_time", median(past().filter_map(|r| r.second_response_time_s).collect()));
    x.set_opt("med_assist_time", median(past().filter_map(|r| r.assist_view_time_s).collect()));
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::fixtures::{assisted, record, session};
    use crate::domain::{IrtItem, QuestionId};

    fn items() -> ItemBank {
        (0..20).map(|i| (QuestionId::new(format!("q{i}")), IrtItem::new(1.0, 0.0, 0.0).unwrap())).collect()
    }

    #[test]
    fn first_question_of_first_session() {
        let s = session("s1", vec![assisted("s1", 1, "q1", "A", true)]);
        let x = compute_context(&[], &s, 1, &items());
        assert_eq!(x.get("quest_num"), Some(1.0));
        assert_eq!(x.get("stud_ability"), Some(0.0));
        assert_eq!(x.get("cor_rate"), None);
        assert_eq!(x.get("prev_resp_cor"), None);
        for name in &FEATURE_NAMES[8..] {
            assert_eq!(x.get(name), None, "{name}");
        }
    }

    #[test]
    fn within_session_counts() {
        let s = session(
            "s1",
            vec![
                record("s1", 1, "q1", true),
                assisted("s1", 2, "q2", "A", false),
                record("s1", 3, "q3", true),
                assisted("s1", 4, "q4", "A", true),
            ],
        );
        let x = compute_context(&[], &s, 4, &items());
        assert!((x.get("cor_rate").unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(x.get("prev_resp_cor"), Some(1.0));
        assert_eq!(x.get("quest_num"), Some(4.0));
        assert!(x.get("stud_ability").unwrap() > 0.0);
    }

    #[test]
    fn history_aggregates() {
        let mk = |id: &str, n: u32, ts: i64| {
            let mut s = session(id, (1..=n).map(|p| record(id, p, &format!("q{p}"), p % 2 == 0)).collect());
            for r in s.records.iter_mut() {
                r.timestamp += ts;
            }
            s
        };
        let mut h1 = mk("h1", 8, 0);
        h1.confidence_end = Some(1);
        let mut h2 = mk("h2", 12, 1000);
        h2.confidence_end = Some(3);
        let mut cur = mk("cur", 3, 5000);
        cur.records[2] = assisted("cur", 3, "q3", "A", true);
        cur.records[2].timestamp += 5000;
        let index = HistoryIndex::new([&h2, &cur, &h1]);
        let prior = index.prior(&cur);
        assert_eq!(prior.len(), 2);
        let x = compute_context(&prior, &cur, 3, &items());
        assert_eq!(x.get("avg_quest_num"), Some(10.0));
        assert_eq!(x.get("num_sess_total"), Some(2.0));
        assert_eq!(x.get("num_quest_total"), Some(20.0));
        assert_eq!(x.get("confidence"), Some(3.0));
        assert_eq!(x.get("avg_1st_cor"), Some(0.5));
        assert_eq!(x.get("avg_sess_succ"), Some(0.0));
        assert_eq!(x.get("avg_2nd_cor"), None);
        assert!(index.prior(&h1).is_empty());
    }

    #[test]
    fn forest_layout() {
        let x = ContextVector::default().with("weekend", 1.0);
        let f = x.forest_features();
        assert_eq!(f.len(), 2 * N_FEATURES);
        assert_eq!(f[7], 1.0);
        assert_eq!(f[N_FEATURES + 7], 1.0);
        assert_eq!(f[N_FEATURES], 0.0);
        assert_eq!(ContextVector::forest_feature_names()[N_FEATURES + 7], "has_weekend");
    }
}
