//! Newline-delimited JSON log parsing and the preprocessing filters that
//! turn raw sessions into an analysis dataset.
//!
//! Filters, in order:
//! 1. drop sessions answering fewer than `min_questions_per_session`
//!    distinct questions (true-false questions count);
//! 2. drop repeat attempts at a concept when `first_attempt_only`;
//! 3. keep the session but exclude exposures where the student asked for
//!    a hint before the first attempt;
//! 4. mark a question eligible when every action in its set has at least
//!    `min_samples_per_action` exposures.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    validate_session, ActionId, Catalog, ConceptId, InteractionRecord, PracticeSession, QuestionId, SessionId,
    StudentId, ValidationError,
};

/// One log line. Session-level fields repeat on every line of a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogLine {
    pub session_id: SessionId,
    pub student_id: StudentId,
    pub concept_id: ConceptId,
    pub question_id: QuestionId,
    pub position: u32,
    pub hint_requested: bool,
    pub first_correct: bool,
    pub first_rt_s: f64,
    pub shown_action_id: Option<ActionId>,
    pub second_correct: Option<bool>,
    pub second_rt_s: Option<f64>,
    pub assist_view_s: Option<f64>,
    pub ts: i64,
    pub attempt_index: u32,
    pub assigned: bool,
    pub weekend: bool,
    pub confidence_end: Option<u8>,
}

impl LogLine {
    pub fn from_record(session: &PracticeSession, r: &InteractionRecord) -> Self {
        LogLine {
            session_id: r.session_id.clone(),
            student_id: r.student_id.clone(),
            concept_id: session.concept_id.clone(),
            question_id: r.question_id.clone(),
            position: r.position,
            hint_requested: r.hint_requested_before_first,
            first_correct: r.first_correct,
            first_rt_s: r.first_response_time_s,
            shown_action_id: r.shown_action_id.clone(),
            second_correct: r.second_correct,
            second_rt_s: r.second_response_time_s,
            assist_view_s: r.assist_view_time_s,
            ts: r.timestamp,
            attempt_index: session.attempt_index_for_concept,
            assigned: session.teacher_assigned,
            weekend: session.started_on_weekend,
            confidence_end: session.confidence_end,
        }
    }

    fn into_record(self) -> InteractionRecord {
        InteractionRecord {
            session_id: self.session_id,
            student_id: self.student_id,
            question_id: self.question_id,
            position: self.position,
            hint_requested_before_first: self.hint_requested,
            first_correct: self.first_correct,
            first_response_time_s: self.first_rt_s,
            shown_action_id: self.shown_action_id,
            second_correct: self.second_correct,
            second_response_time_s: self.second_rt_s,
            assist_view_time_s: self.assist_view_s,
            timestamp: self.ts,
        }
    }
}

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: session {session_id} disagrees on `{field}` with its earlier lines")]
    InconsistentSession { line: usize, session_id: SessionId, field: &'static str },
    #[error("session {session_id}: {source}")]
    Validation { session_id: SessionId, source: ValidationError },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

struct SessionHeader {
    student_id: StudentId,
    concept_id: ConceptId,
    attempt_index: u32,
    assigned: bool,
    weekend: bool,
    confidence_end: Option<u8>,
}

/// Parses a log stream into validated sessions, in order of first appearance,
/// each with its records sorted by position.
pub fn parse_log_stream<R: BufRead>(input: R) -> Result<Vec<PracticeSession>, ParseError> {
    let mut order: Vec<SessionId> = Vec::new();
    let mut groups: HashMap<SessionId, (SessionHeader, Vec<InteractionRecord>)> = HashMap::new();
    for (i, line) in input.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: LogLine =
            serde_json::from_str(&line).map_err(|e| ParseError::Malformed { line: line_no, reason: e.to_string() })?;
        match groups.get_mut(&parsed.session_id) {
            Some((header, records)) => {
                let mismatch = if header.student_id != parsed.student_id {
                    Some("student_id")
                } else if header.concept_id != parsed.concept_id {
                    Some("concept_id")
                } else if header.attempt_index != parsed.attempt_index {
                    Some("attempt_index")
                } else if header.assigned != parsed.assigned {
                    Some("assigned")
                } else if header.weekend != parsed.weekend {
                    Some("weekend")
                } else if header.confidence_end != parsed.confidence_end {
                    Some("confidence_end")
                } else {
                    None
                };
                if let Some(field) = mismatch {
                    return Err(ParseError::InconsistentSession {
                        line: line_no,
                        session_id: parsed.session_id,
                        field,
                    });
                }
                records.push(parsed.into_record());
            }
            None => {
                let header = SessionHeader {
                    student_id: parsed.student_id.clone(),
                    concept_id: parsed.concept_id.clone(),
                    attempt_index: parsed.attempt_index,
                    assigned: parsed.assigned,
                    weekend: parsed.weekend,
                    confidence_end: parsed.confidence_end,
                };
                order.push(parsed.session_id.clone());
                groups.insert(parsed.session_id.clone(), (header, vec![parsed.into_record()]));
            }
        }
    }
    order
        .into_iter()
        .map(|sid| {
            let (header, mut records) = groups.remove(&sid).expect("grouped session");
            records.sort_by_key(|r| r.position);
            let session = PracticeSession {
                session_id: sid.clone(),
                student_id: header.student_id,
                concept_id: header.concept_id,
                records,
                confidence_end: header.confidence_end,
                teacher_assigned: header.assigned,
                started_on_weekend: header.weekend,
                attempt_index_for_concept: header.attempt_index,
            };
            validate_session(session).map_err(|source| ParseError::Validation { session_id: sid, source })
        })
        .collect()
}

/// Writes sessions in the log format, one line per record.
pub fn write_log_stream<'a, W: Write>(
    sessions: impl IntoIterator<Item = &'a PracticeSession>,
    mut out: W,
) -> std::io::Result<()> {
    for s in sessions {
        for r in &s.records {
            let line = serde_json::to_string(&LogLine::from_record(s, r)).expect("log line serializes");
            out.write_all(line.as_bytes())?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub min_questions_per_session: usize,
    pub min_samples_per_action: usize,
    pub first_attempt_only: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig { min_questions_per_session: 5, min_samples_per_action: 100, first_attempt_only: true }
    }
}

/// Location of one assistance exposure inside a [`FilteredDataset`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExposureRef {
    /// Index into `FilteredDataset::sessions`.
    pub session: usize,
    pub position: u32,
    pub action: ActionId,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    pub input_sessions: usize,
    /// Filter 1: fewer distinct answered questions than the minimum.
    pub too_short: usize,
    /// Filter 2: not the student's first attempt at the concept.
    pub not_first_attempt: usize,
    pub kept_sessions: usize,
    /// Assisted records inside kept sessions.
    pub assisted_records: usize,
    /// Filter 3: exposures preceded by a hint request.
    pub hint_excluded: usize,
    /// Exposures whose action is outside the question's declared action set.
    pub unknown_action: usize,
    pub indexed_exposures: usize,
    pub questions_with_exposures: usize,
    /// Filter 4.
    pub eligible_questions: usize,
    pub ineligible_questions: usize,
    /// Filter 1 counts true-false questions as answered questions.
    pub length_counts_true_false: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilteredDataset {
    /// Sessions surviving filters 1-2, sorted by session id.
    pub sessions: Vec<PracticeSession>,
    /// Every input session (sorted by session id); the source of
    /// student history for context features.
    pub history: Vec<PracticeSession>,
    pub exposure_index: BTreeMap<QuestionId, Vec<ExposureRef>>,
    /// Candidate action set per question: declared by the catalog, or the
    /// observed actions when preprocessing without one.
    pub action_sets: BTreeMap<QuestionId, Vec<ActionId>>,
    pub eligible_questions: BTreeSet<QuestionId>,
    pub filter_report: FilterReport,
    pub config: PreprocessConfig,
}

impl FilteredDataset {
    pub fn exposures(&self, question: &QuestionId) -> &[ExposureRef] {
        self.exposure_index.get(question).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn actions(&self, question: &QuestionId) -> &[ActionId] {
        self.action_sets.get(question).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn exposure_count(&self, question: &QuestionId, action: &ActionId) -> usize {
        self.exposures(question).iter().filter(|e| &e.action == action).count()
    }
}

/// Applies the filters, inferring each question's action set from the
/// actions observed in the logs.
pub fn preprocess(sessions: Vec<PracticeSession>, cfg: PreprocessConfig) -> FilteredDataset {
    preprocess_inner(sessions, None, cfg)
}

/// Applies the filters against the catalog's declared action sets, so an
/// action that never appears in the logs makes its question ineligible.
pub fn preprocess_with_catalog(
    sessions: Vec<PracticeSession>,
    catalog: &Catalog,
    cfg: PreprocessConfig,
) -> FilteredDataset {
    preprocess_inner(sessions, Some(catalog), cfg)
}

fn preprocess_inner(
    mut sessions: Vec<PracticeSession>,
    catalog: Option<&Catalog>,
    cfg: PreprocessConfig,
) -> FilteredDataset {
    let min_questions = cfg.min_questions_per_session.max(1);
    let min_samples = cfg.min_samples_per_action.max(1);
    sessions.sort_by(|a, b| a.session_id.cmp(&b.session_id));
    let mut report =
        FilterReport { input_sessions: sessions.len(), length_counts_true_false: true, ..FilterReport::default() };

    let mut kept = Vec::new();
    for s in &sessions {
        if s.answered_questions() < min_questions {
            report.too_short += 1;
        } else if cfg.first_attempt_only && s.attempt_index_for_concept > 1 {
            report.not_first_attempt += 1;
        } else {
            kept.push(s.clone());
        }
    }
    report.kept_sessions = kept.len();

    let mut exposure_index: BTreeMap<QuestionId, Vec<ExposureRef>> = BTreeMap::new();
    for (si, s) in kept.iter().enumerate() {
        for r in &s.records {
            let Some(action) = &r.shown_action_id else { continue };
            report.assisted_records += 1;
            if r.hint_requested_before_first {
                report.hint_excluded += 1;
                continue;
            }
            if let Some(cat) = catalog {
                let declared = cat.question(&r.question_id).is_some_and(|q| q.action_ids.contains(action));
                if !declared {
                    report.unknown_action += 1;
                    continue;
                }
            }
            exposure_index.entry(r.question_id.clone()).or_default().push(ExposureRef {
                session: si,
                position: r.position,
                action: action.clone(),
            });
        }
    }
    report.indexed_exposures = exposure_index.values().map(Vec::len).sum();
    report.questions_with_exposures = exposure_index.len();

    let action_sets: BTreeMap<QuestionId, Vec<ActionId>> = match catalog {
        Some(cat) => cat
            .questions
            .values()
            .filter(|q| !q.action_ids.is_empty())
            .map(|q| (q.id.clone(), q.action_ids.clone()))
            .collect(),
        None => exposure_index
            .iter()
            .map(|(q, exps)| {
                let set: BTreeSet<&ActionId> = exps.iter().map(|e| &e.action).collect();
                (q.clone(), set.into_iter().cloned().collect())
            })
            .collect(),
    };

    let mut eligible = BTreeSet::new();
    for (q, actions) in &action_sets {
        let exps = exposure_index.get(q).map(Vec::as_slice).unwrap_or(&[]);
        let mut counts: HashMap<&ActionId, usize> = HashMap::new();
        for e in exps {
            *counts.entry(&e.action).or_default() += 1;
        }
        if !actions.is_empty() && actions.iter().all(|a| counts.get(a).copied().unwrap_or(0) >= min_samples) {
            eligible.insert(q.clone());
        }
    }
    report.eligible_questions = eligible.len();
    report.ineligible_questions = action_sets.len() - eligible.len();

    FilteredDataset {
        sessions: kept,
        history: sessions,
        exposure_index,
        action_sets,
        eligible_questions: eligible,
        filter_report: report,
        config: cfg,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::fixtures::{assisted, record, session};
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    fn line(session: &str, position: u32, question: &str) -> String {
        format!(
            r#"{{"session_id":"{session}","student_id":"u1","concept_id":"c1","question_id":"{question}","position":{position},"hint_requested":false,"first_correct":true,"first_rt_s":4.5,"shown_action_id":null,"second_correct":null,"second_rt_s":null,"assist_view_s":null,"ts":1700000000,"attempt_index":1,"assigned":false,"weekend":false,"confidence_end":null}}"#
        )
    }

    #[test]
    fn empty_stream() {
        assert!(parse_log_stream(&b""[..]).unwrap().is_empty());
    }

    #[test]
    fn groups_and_orders_records() {
        let text = format!("{}\n{}\n", line("s1", 2, "qb"), line("s1", 1, "qa"));
        let sessions = parse_log_stream(text.as_bytes()).unwrap();
        assert_eq!(sessions.len(), 1);
        let positions: Vec<u32> = sessions[0].records.iter().map(|r| r.position).collect();
        assert_eq!(positions, vec![1, 2]);
        assert_eq!(sessions[0].records[0].question_id.as_str(), "qa");
    }

    #[test]
    fn missing_field_reports_line() {
        let broken = line("s1", 3, "qc").replace(r#""first_correct":true,"#, "");
        let text = format!("{}\n{}\n{}\n", line("s1", 1, "qa"), line("s1", 2, "qb"), broken);
        match parse_log_stream(text.as_bytes()) {
            Err(ParseError::Malformed { line, reason }) => {
                assert_eq!(line, 3);
                assert!(reason.contains("missing field `first_correct`"), "{reason}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_key_and_inconsistent_session_rejected() {
        let extra = line("s1", 1, "qa").replace("\"ts\"", "\"bogus\":1,\"ts\"");
        assert!(matches!(parse_log_stream(extra.as_bytes()), Err(ParseError::Malformed { line: 1, .. })));
        let other_concept = line("s1", 2, "qb").replace("\"c1\"", "\"c2\"");
        let text = format!("{}\n{}\n", line("s1", 1, "qa"), other_concept);
        assert!(matches!(
            parse_log_stream(text.as_bytes()),
            Err(ParseError::InconsistentSession { line: 2, field: "concept_id", .. })
        ));
    }

    #[test]
    fn validation_errors_carry_session() {
        let text = format!("{}\n{}\n", line("s9", 1, "qa"), line("s9", 2, "qa"));
        match parse_log_stream(text.as_bytes()) {
            Err(ParseError::Validation { session_id, source }) => {
                assert_eq!(session_id.as_str(), "s9");
                assert_eq!(source, ValidationError::DuplicateQuestion("qa".into()));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    fn long_session(id: &str, n: u32, action: &str) -> PracticeSession {
        let mut recs: Vec<_> = (1..n).map(|p| record(id, p, &format!("q{p}"), true)).collect();
        recs.push(assisted(id, n, "qx", action, true));
        session(id, recs)
    }

    #[test]
    fn short_sessions_dropped() {
        let ds = preprocess(vec![long_session("s1", 4, "a")], PreprocessConfig::default());
        assert_eq!(ds.filter_report.too_short, 1);
        assert!(ds.sessions.is_empty());
    }

    #[test]
    fn hint_exposure_excluded_session_kept() {
        let mut s = long_session("s1", 6, "a");
        s.records[5].hint_requested_before_first = true;
        let cfg = PreprocessConfig { min_samples_per_action: 1, ..PreprocessConfig::default() };
        let ds = preprocess(vec![s], cfg);
        assert_eq!(ds.sessions.len(), 1);
        assert_eq!(ds.filter_report.hint_excluded, 1);
        assert!(ds.exposure_index.is_empty());
    }

    #[test]
    fn repeat_attempts_dropped() {
        let mut s = long_session("s1", 6, "a");
        s.attempt_index_for_concept = 2;
        let ds = preprocess(vec![s.clone()], PreprocessConfig::default());
        assert_eq!(ds.filter_report.not_first_attempt, 1);
        let relaxed = PreprocessConfig { first_attempt_only: false, ..PreprocessConfig::default() };
        assert_eq!(preprocess(vec![s], relaxed).sessions.len(), 1);
    }

    #[test]
    fn eligibility_requires_every_action() {
        let mut sessions = Vec::new();
        for i in 0..120 {
            sessions.push(long_session(&format!("a{i:03}"), 6, "A"));
        }
        for i in 0..80 {
            sessions.push(long_session(&format!("b{i:03}"), 6, "B"));
        }
        let ds = preprocess(sessions, PreprocessConfig::default());
        assert_eq!(ds.exposure_count(&"qx".into(), &"A".into()), 120);
        assert!(!ds.eligible_questions.contains(&QuestionId::new("qx")));
        assert_eq!(ds.filter_report.ineligible_questions, 1);
    }

    fn random_sessions(seed: u64) -> Vec<PracticeSession> {
        use rand::Rng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..30)
            .map(|i| {
                let id = format!("s{i:02}");
                let n = rng.random_range(1..9u32);
                let recs = (1..=n)
                    .map(|p| {
                        let q = format!("q{}", rng.random_range(0..3) * 10 + p);
                        if rng.random_bool(0.5) {
                            let mut r = assisted(&id, p, &q, ["A", "B"][rng.random_range(0..2)], rng.random_bool(0.5));
                            r.hint_requested_before_first = rng.random_bool(0.2);
                            r
                        } else {
                            record(&id, p, &q, rng.random_bool(0.6))
                        }
                    })
                    .collect();
                let mut s = session(&id, recs);
                s.attempt_index_for_concept = rng.random_range(1..3);
                s
            })
            .collect()
    }

    proptest! {
        #[test]
        fn shuffle_invariance(seed in any::<u64>(), shuffle_seed in any::<u64>()) {
            let sessions = random_sessions(seed);
            let mut shuffled = sessions.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(shuffle_seed));
            let cfg = PreprocessConfig { min_questions_per_session: 3, min_samples_per_action: 2, first_attempt_only: true };
            prop_assert_eq!(preprocess(sessions, cfg), preprocess(shuffled, cfg));
        }

        #[test]
        fn exposure_totals_bounded(seed in any::<u64>()) {
            let ds = preprocess(random_sessions(seed), PreprocessConfig { min_questions_per_session: 2, min_samples_per_action: 1, first_attempt_only: false });
            let assisted: usize = ds.sessions.iter().flat_map(|s| &s.records).filter(|r| r.is_assisted()).count();
            let hinted: usize = ds.sessions.iter().flat_map(|s| &s.records).filter(|r| r.is_assisted() && r.hint_requested_before_first).count();
            prop_assert!(ds.filter_report.indexed_exposures <= assisted);
            prop_assert_eq!(ds.filter_report.indexed_exposures == assisted, hinted == 0);
        }

        #[test]
        fn permissive_config_keeps_all_exposures(seed in any::<u64>()) {
            let mut sessions = random_sessions(seed);
            for s in sessions.iter_mut() {
                for r in s.records.iter_mut() { r.hint_requested_before_first = false; }
            }
            let cfg = PreprocessConfig { min_questions_per_session: 1, min_samples_per_action: 1, first_attempt_only: false };
            let ds = preprocess(sessions.clone(), cfg);
            let mut expected: Vec<(String, u32, String)> = sessions.iter().flat_map(|s| s.records.iter())
                .filter_map(|r| r.shown_action_id.as_ref().map(|a| (r.session_id.to_string(), r.position, a.to_string())))
                .collect();
            let mut got: Vec<(String, u32, String)> = ds.exposure_index.values().flatten()
                .map(|e| (ds.sessions[e.session].session_id.to_string(), e.position, e.action.to_string()))
                .collect();
            expected.sort();
            got.sort();
            prop_assert_eq!(got, expected);
        }
    }

    #[test]
    fn write_then_parse_round_trips() {
        let sessions = random_sessions(5);
        let mut buf = Vec::new();
        write_log_stream(&sessions, &mut buf).unwrap();
        assert_eq!(parse_log_stream(&buf[..]).unwrap(), sessions);
    }
}
