//! Vocabulary shared by every layer: identifiers, questions, assistance
//! actions, interaction records and practice sessions.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

macro_rules! opaque_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(try_from = "String", into = "String")]
        pub struct $name(String);

        impl $name {
            /// Panics on an empty identifier; use `try_from` for untrusted input.
            pub fn new(id: impl Into<String>) -> Self {
                let id = id.into();
                assert!(!id.is_empty(), concat!(stringify!($name), " must be non-empty"));
                $name(id)
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl TryFrom<String> for $name {
            type Error = EmptyIdentifier;

            fn try_from(id: String) -> Result<Self, Self::Error> {
                if id.is_empty() {
                    Err(EmptyIdentifier(stringify!($name)))
                } else {
                    Ok($name(id))
                }
            }
        }

        impl From<$name> for String {
            fn from(id: $name) -> String {
                id.0
            }
        }

        impl From<&str> for $name {
            fn from(id: &str) -> Self {
                $name::new(id)
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }
    };
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0} must be non-empty")]
pub struct EmptyIdentifier(&'static str);

opaque_id!(ActionId);
opaque_id!(QuestionId);
opaque_id!(SessionId);
opaque_id!(StudentId);
opaque_id!(ConceptId);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionType {
    MultipleChoice,
    SelectAll,
    FillBlank,
    ShortAnswer,
    TrueFalse,
}

impl QuestionType {
    pub const ALL: [QuestionType; 5] = [
        QuestionType::MultipleChoice,
        QuestionType::SelectAll,
        QuestionType::FillBlank,
        QuestionType::ShortAnswer,
        QuestionType::TrueFalse,
    ];

    /// Questions with a fixed option list (and hence a guessing floor).
    pub fn is_choice(self) -> bool {
        matches!(self, QuestionType::MultipleChoice | QuestionType::SelectAll | QuestionType::TrueFalse)
    }

    /// True-false questions cannot be reattempted.
    pub fn allows_reattempt(self) -> bool {
        self != QuestionType::TrueFalse
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Hint,
    Paragraph,
    Vocabulary,
    RemoveDistractor,
    FirstLetter,
    NoAssistance,
}

impl ActionKind {
    pub fn compatible_with(self, qtype: QuestionType) -> bool {
        match self {
            ActionKind::RemoveDistractor => {
                matches!(qtype, QuestionType::MultipleChoice | QuestionType::SelectAll)
            }
            ActionKind::FirstLetter => matches!(qtype, QuestionType::FillBlank | QuestionType::ShortAnswer),
            _ => qtype.allows_reattempt(),
        }
    }
}

/// 3PL item parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IrtItem {
    /// Discrimination, > 0.
    pub a: f64,
    /// Difficulty.
    pub b: f64,
    /// Guessing floor in [0, 1).
    pub c: f64,
}

impl IrtItem {
    pub fn new(a: f64, b: f64, c: f64) -> Result<Self, DomainError> {
        let item = IrtItem { a, b, c };
        item.validate()?;
        Ok(item)
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        if !(self.a > 0.0 && self.a.is_finite()) || !self.b.is_finite() || !(0.0..1.0).contains(&self.c) {
            return Err(DomainError::InvalidItem { a: self.a, b: self.b, c: self.c });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub id: QuestionId,
    pub concept_id: ConceptId,
    pub qtype: QuestionType,
    pub item: IrtItem,
    /// The candidate action set; empty for true-false questions.
    pub action_ids: Vec<ActionId>,
}

impl Question {
    pub fn validate(&self) -> Result<(), DomainError> {
        self.item.validate()?;
        match (self.qtype.allows_reattempt(), self.action_ids.is_empty()) {
            (true, true) => return Err(DomainError::NoActions(self.id.clone())),
            (false, false) => return Err(DomainError::ActionsOnTrueFalse(self.id.clone())),
            _ => {}
        }
        let mut seen = BTreeSet::new();
        for a in &self.action_ids {
            if !seen.insert(a) {
                return Err(DomainError::DuplicateAction(a.clone()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssistanceAction {
    pub id: ActionId,
    pub question_id: QuestionId,
    pub kind: ActionKind,
    #[serde(default)]
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DomainError {
    #[error("invalid IRT item (a={a}, b={b}, c={c})")]
    InvalidItem { a: f64, b: f64, c: f64 },
    #[error("question {0} allows reattempts but has no actions")]
    NoActions(QuestionId),
    #[error("true-false question {0} lists assistance actions")]
    ActionsOnTrueFalse(QuestionId),
    #[error("duplicate action id {0}")]
    DuplicateAction(ActionId),
    #[error("action {action} ({kind:?}) is not allowed on a {qtype:?} question")]
    IncompatibleAction { action: ActionId, kind: ActionKind, qtype: QuestionType },
    #[error("action {0} is not defined")]
    UnknownAction(ActionId),
    #[error("action {action} belongs to question {owner}, not {question}")]
    ForeignAction { action: ActionId, owner: QuestionId, question: QuestionId },
}

/// Question bank plus assistance content, keyed by id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    pub questions: BTreeMap<QuestionId, Question>,
    pub actions: BTreeMap<ActionId, AssistanceAction>,
}

impl Catalog {
    pub fn new(questions: Vec<Question>, actions: Vec<AssistanceAction>) -> Result<Self, DomainError> {
        let catalog = Catalog {
            questions: questions.into_iter().map(|q| (q.id.clone(), q)).collect(),
            actions: actions.into_iter().map(|a| (a.id.clone(), a)).collect(),
        };
        catalog.validate()?;
        Ok(catalog)
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        for q in self.questions.values() {
            q.validate()?;
            for a in &q.action_ids {
                let action = self.actions.get(a).ok_or_else(|| DomainError::UnknownAction(a.clone()))?;
                if action.question_id != q.id {
                    return Err(DomainError::ForeignAction {
                        action: a.clone(),
                        owner: action.question_id.clone(),
                        question: q.id.clone(),
                    });
                }
                if !action.kind.compatible_with(q.qtype) {
                    return Err(DomainError::IncompatibleAction {
                        action: a.clone(),
                        kind: action.kind,
                        qtype: q.qtype,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn question(&self, id: &QuestionId) -> Option<&Question> {
        self.questions.get(id)
    }

    pub fn action_kind(&self, id: &ActionId) -> Option<ActionKind> {
        self.actions.get(id).map(|a| a.kind)
    }

    /// The no-assistance action of a question, if its action set has one.
    pub fn no_assistance_action(&self, question: &QuestionId) -> Option<&ActionId> {
        self.questions.get(question)?.action_ids.iter().find(|a| self.action_kind(a) == Some(ActionKind::NoAssistance))
    }

    pub fn items(&self) -> crate::irt::ItemBank {
        self.questions.iter().map(|(id, q)| (id.clone(), q.item)).collect()
    }

    pub fn questions_for_concept<'a>(&'a self, concept: &'a ConceptId) -> impl Iterator<Item = &'a Question> + 'a {
        self.questions.values().filter(move |q| &q.concept_id == concept)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub session_id: SessionId,
    pub student_id: StudentId,
    pub question_id: QuestionId,
    /// 1-based question number within the session.
    pub position: u32,
    pub hint_requested_before_first: bool,
    pub first_correct: bool,
    pub first_response_time_s: f64,
    pub shown_action_id: Option<ActionId>,
    pub second_correct: Option<bool>,
    pub second_response_time_s: Option<f64>,
    pub assist_view_time_s: Option<f64>,
    /// UTC epoch seconds.
    pub timestamp: i64,
}

impl InteractionRecord {
    pub fn is_assisted(&self) -> bool {
        self.shown_action_id.is_some()
    }

    /// Correct on either attempt.
    pub fn eventually_correct(&self) -> bool {
        self.first_correct || self.second_correct == Some(true)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PracticeSession {
    pub session_id: SessionId,
    pub student_id: StudentId,
    pub concept_id: ConceptId,
    pub records: Vec<InteractionRecord>,
    /// Self-reported confidence (1..=3) at session end.
    pub confidence_end: Option<u8>,
    pub teacher_assigned: bool,
    pub started_on_weekend: bool,
    /// 1 for the student's first practice attempt on this concept.
    pub attempt_index_for_concept: u32,
}

impl PracticeSession {
    pub fn start_timestamp(&self) -> Option<i64> {
        self.records.iter().map(|r| r.timestamp).min()
    }

    pub fn record_at(&self, position: u32) -> Option<&InteractionRecord> {
        self.records.iter().find(|r| r.position == position)
    }

    pub fn answered_questions(&self) -> usize {
        self.records.iter().map(|r| &r.question_id).collect::<BTreeSet<_>>().len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ValidationError {
    #[error("question {0} appears more than once in the session")]
    DuplicateQuestion(QuestionId),
    #[error("position {position} is not strictly increasing (or not 1-based)")]
    OrderViolation { position: u32 },
    #[error("record at position {position} has a second attempt but no shown action")]
    OrphanSecondAttempt { position: u32 },
    #[error("record at position {position} shows an action but has no second attempt")]
    MissingSecondAttempt { position: u32 },
    #[error("record at position {position} shows assistance after a correct first attempt")]
    AssistanceOnCorrect { position: u32 },
    #[error("record at position {position} belongs to another session or student")]
    ForeignRecord { position: u32 },
    #[error("record at position {position} has an invalid time value")]
    InvalidTime { position: u32 },
    #[error("confidence {0} outside 1..=3")]
    InvalidConfidence(u8),
    #[error("attempt index must be positive")]
    InvalidAttemptIndex,
}

/// Checks every record-level and session-level invariant, returning the
/// session unchanged or the first violation found (in record order).
pub fn validate_session(raw: PracticeSession) -> Result<PracticeSession, ValidationError> {
    if let Some(c) = raw.confidence_end {
        if !(1..=3).contains(&c) {
            return Err(ValidationError::InvalidConfidence(c));
        }
    }
    if raw.attempt_index_for_concept == 0 {
        return Err(ValidationError::InvalidAttemptIndex);
    }
    let mut last_position = 0u32;
    let mut seen = BTreeSet::new();
    for r in &raw.records {
        let position = r.position;
        if r.session_id != raw.session_id || r.student_id != raw.student_id {
            return Err(ValidationError::ForeignRecord { position });
        }
        if position <= last_position {
            return Err(ValidationError::OrderViolation { position });
        }
        last_position = position;
        if !seen.insert(&r.question_id) {
            return Err(ValidationError::DuplicateQuestion(r.question_id.clone()));
        }
        match (&r.shown_action_id, r.second_correct) {
            (None, Some(_)) => return Err(ValidationError::OrphanSecondAttempt { position }),
            (Some(_), None) => return Err(ValidationError::MissingSecondAttempt { position }),
            _ => {}
        }
        if r.shown_action_id.is_some() && r.first_correct {
            return Err(ValidationError::AssistanceOnCorrect { position });
        }
        let times = [Some(r.first_response_time_s), r.second_response_time_s, r.assist_view_time_s];
        if times.iter().flatten().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(ValidationError::InvalidTime { position });
        }
    }
    Ok(raw)
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn record(session: &str, position: u32, question: &str, first_correct: bool) -> InteractionRecord {
        InteractionRecord {
            session_id: session.into(),
            student_id: "stu".into(),
            question_id: question.into(),
            position,
            hint_requested_before_first: false,
            first_correct,
            first_response_time_s: 12.0,
            shown_action_id: None,
            second_correct: None,
            second_response_time_s: None,
            assist_view_time_s: None,
            timestamp: 1_700_000_000 + position as i64 * 30,
        }
    }

    pub fn assisted(session: &str, position: u32, question: &str, action: &str, second: bool) -> InteractionRecord {
        InteractionRecord {
            shown_action_id: Some(action.into()),
            second_correct: Some(second),
            second_response_time_s: Some(8.0),
            assist_view_time_s: Some(5.0),
            ..record(session, position, question, false)
        }
    }

    pub fn session(id: &str, records: Vec<InteractionRecord>) -> PracticeSession {
        PracticeSession {
            session_id: id.into(),
            student_id: "stu".into(),
            concept_id: "c1".into(),
            records,
            confidence_end: Some(2),
            teacher_assigned: false,
            started_on_weekend: false,
            attempt_index_for_concept: 1,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn valid_session_passes_unchanged() {
        let s = session("s1", vec![record("s1", 1, "q1", true), assisted("s1", 2, "q2", "a1", true)]);
        assert_eq!(validate_session(s.clone()), Ok(s));
    }

    #[test]
    fn orphan_second_attempt_reported_with_position() {
        let mut bad = record("s1", 2, "q2", false);
        bad.second_correct = Some(true);
        let s = session("s1", vec![record("s1", 1, "q1", true), bad]);
        assert_eq!(validate_session(s), Err(ValidationError::OrphanSecondAttempt { position: 2 }));
    }

    #[test]
    fn duplicate_question_named() {
        let s = session("s1", vec![record("s1", 1, "q7", true), record("s1", 2, "q7", false)]);
        assert_eq!(validate_session(s), Err(ValidationError::DuplicateQuestion("q7".into())));
    }

    #[test]
    fn assistance_on_correct_and_order() {
        let mut r = assisted("s1", 1, "q1", "a", true);
        r.first_correct = true;
        assert_eq!(validate_session(session("s1", vec![r])), Err(ValidationError::AssistanceOnCorrect { position: 1 }));
        let s = session("s1", vec![record("s1", 2, "q1", true), record("s1", 2, "q2", true)]);
        assert_eq!(validate_session(s), Err(ValidationError::OrderViolation { position: 2 }));
    }

    #[test]
    fn empty_identifiers_rejected_on_deserialize() {
        assert!(serde_json::from_str::<QuestionId>("\"\"").is_err());
        assert_eq!(serde_json::from_str::<QuestionId>("\"q1\"").unwrap(), QuestionId::new("q1"));
    }

    #[test]
    fn question_invariants() {
        let q = Question {
            id: "q".into(),
            concept_id: "c".into(),
            qtype: QuestionType::TrueFalse,
            item: IrtItem::new(1.0, 0.0, 0.2).unwrap(),
            action_ids: vec!["a".into()],
        };
        assert!(matches!(q.validate(), Err(DomainError::ActionsOnTrueFalse(_))));
        let q = Question { qtype: QuestionType::MultipleChoice, action_ids: vec!["a".into(), "a".into()], ..q };
        assert!(matches!(q.validate(), Err(DomainError::DuplicateAction(_))));
        assert!(IrtItem::new(0.0, 0.0, 0.2).is_err());
        assert!(IrtItem::new(1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn action_kind_compatibility() {
        assert!(ActionKind::RemoveDistractor.compatible_with(QuestionType::SelectAll));
        assert!(!ActionKind::RemoveDistractor.compatible_with(QuestionType::FillBlank));
        assert!(ActionKind::FirstLetter.compatible_with(QuestionType::ShortAnswer));
        assert!(!ActionKind::FirstLetter.compatible_with(QuestionType::MultipleChoice));
        assert!(!ActionKind::Hint.compatible_with(QuestionType::TrueFalse));
    }

    fn valid_session_strategy() -> impl Strategy<Value = PracticeSession> {
        prop::collection::vec((any::<bool>(), any::<bool>(), any::<bool>(), 0.0f64..120.0), 1..15).prop_map(|rows| {
            let records = rows
                .into_iter()
                .enumerate()
                .map(|(i, (first, assist, second, rt))| {
                    let pos = i as u32 + 1;
                    let q = format!("q{i}");
                    let mut r = if !first && assist {
                        assisted("s", pos, &q, "act", second)
                    } else {
                        record("s", pos, &q, first)
                    };
                    r.first_response_time_s = rt;
                    r
                })
                .collect();
            session("s", records)
        })
    }

    #[derive(Debug, Clone, Copy)]
    enum Mutation {
        DuplicateQuestion,
        BreakOrder,
        OrphanSecond,
        AssistCorrect,
        DropSecond,
        NegativeTime,
        ForeignStudent,
    }

    proptest! {
        #[test]
        fn validation_is_idempotent(s in valid_session_strategy()) {
            let once = validate_session(s).unwrap();
            prop_assert_eq!(validate_session(once.clone()).unwrap(), once);
        }

        #[test]
        fn single_field_violations_are_caught(
            s in valid_session_strategy(),
            which in 0usize..7,
            idx in any::<prop::sample::Index>(),
        ) {
            let mutation = [
                Mutation::DuplicateQuestion, Mutation::BreakOrder, Mutation::OrphanSecond,
                Mutation::AssistCorrect, Mutation::DropSecond, Mutation::NegativeTime,
                Mutation::ForeignStudent,
            ][which];
            let mut s = s;
            let i = idx.index(s.records.len());
            match mutation {
                Mutation::DuplicateQuestion => {
                    if s.records.len() < 2 { return Ok(()); }
                    let j = if i == 0 { 1 } else { i - 1 };
                    s.records[i].question_id = s.records[j].question_id.clone();
                }
                Mutation::BreakOrder => {
                    if i == 0 { s.records[0].position = 0; } else { s.records[i].position = s.records[i - 1].position; }
                }
                Mutation::OrphanSecond => {
                    s.records[i].shown_action_id = None;
                    s.records[i].second_correct = Some(true);
                }
                Mutation::AssistCorrect => {
                    s.records[i] = assisted("s", s.records[i].position, s.records[i].question_id.as_str(), "act", true);
                    s.records[i].first_correct = true;
                }
                Mutation::DropSecond => {
                    s.records[i] = assisted("s", s.records[i].position, s.records[i].question_id.as_str(), "act", true);
                    s.records[i].second_correct = None;
                }
                Mutation::NegativeTime => s.records[i].first_response_time_s = -1.0,
                Mutation::ForeignStudent => s.records[i].student_id = "other".into(),
            }
            prop_assert!(validate_session(s).is_err(), "{:?} not caught", mutation);
        }
    }
}
