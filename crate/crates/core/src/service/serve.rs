//! Request loop over newline-delimited JSON with atomic spec reloads and
//! an append-only decision log.

use std::collections::BTreeMap;
use std::io::{self, BufRead, BufReader, Write};
use std::net::TcpListener;
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};

use super::spec::{load_policy_spec, Decision, DecisionError, Query, Snapshot, SpecError};
use crate::causal::ContextVector;
use crate::domain::{ActionId, ConceptId, QuestionId, SessionId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub session_id: SessionId,
    pub question_id: QuestionId,
    pub policy_id: String,
    pub action_id: ActionId,
    pub fallback: bool,
    /// Logical clock: the record's position in the log.
    pub timestamp: u64,
}

/// Append-only decision sink; appends are serialized by one lock, which
/// also guards the optional JSONL mirror.
#[derive(Default)]
pub struct DecisionLog {
    inner: Mutex<LogInner>,
}

#[derive(Default)]
struct LogInner {
    records: Vec<DecisionRecord>,
    sink: Option<Box<dyn Write + Send>>,
}

impl DecisionLog {
    pub fn with_sink(sink: Box<dyn Write + Send>) -> Self {
        DecisionLog { inner: Mutex::new(LogInner { records: Vec::new(), sink: Some(sink) }) }
    }

    pub fn append(&self, query: &Query, decision: &Decision) -> io::Result<()> {
        let mut inner = self.inner.lock().expect("decision log lock");
        let record = DecisionRecord {
            session_id: query.session_id.clone(),
            question_id: query.question_id.clone(),
            policy_id: decision.policy_id.clone(),
            action_id: decision.action_id.clone(),
            fallback: decision.fallback,
            timestamp: inner.records.len() as u64,
        };
        if let Some(sink) = inner.sink.as_mut() {
            serde_json::to_writer(&mut *sink, &record)?;
            sink.write_all(b"\n")?;
            sink.flush()?;
        }
        inner.records.push(record);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("decision log lock").records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn records(&self) -> Vec<DecisionRecord> {
        self.inner.lock().expect("decision log lock").records.clone()
    }
}

/// Wire form of a query; the context is a map from feature name to value.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Request {
    session_id: SessionId,
    concept_id: ConceptId,
    question_id: QuestionId,
    #[serde(default)]
    context: Option<BTreeMap<String, f64>>,
    #[serde(default)]
    actions: Vec<ActionId>,
}

impl Request {
    fn into_query(self) -> Result<Query, String> {
        let context = match self.context {
            None => None,
            Some(map) => {
                let mut x = ContextVector::default();
                for (name, v) in map {
                    if ContextVector::index(&name).is_none() {
                        return Err(format!("unknown context feature {name}"));
                    }
                    x.set(&name, v);
                }
                Some(x)
            }
        };
        Ok(Query {
            session_id: self.session_id,
            concept_id: self.concept_id,
            question_id: self.question_id,
            context,
            actions: self.actions,
        })
    }
}

#[derive(Serialize)]
struct ErrorResponse<'a> {
    error: &'a str,
    reason: String,
}

pub struct Server {
    state: RwLock<Arc<Snapshot>>,
    log: DecisionLog,
}

impl Server {
    pub fn new(snapshot: Snapshot, log: DecisionLog) -> Self {
        Server { state: RwLock::new(Arc::new(snapshot)), log }
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.state.read().expect("state lock").clone()
    }

    /// Installs a new snapshot; queries in flight finish on the old one.
    pub fn reload(&self, snapshot: Snapshot) {
        *self.state.write().expect("state lock") = Arc::new(snapshot);
    }

    /// Replaces one policy's spec from a file. On any error the current
    /// snapshot stays active.
    pub fn reload_spec_file(&self, path: impl AsRef<Path>) -> Result<(), SpecError> {
        let spec = load_policy_spec(path)?;
        let current = self.snapshot();
        let mut specs: Vec<_> = current.specs.values().filter(|s| s.policy_id != spec.policy_id).cloned().collect();
        specs.push(spec);
        self.reload(Snapshot::new(specs, current.assignment.clone())?);
        Ok(())
    }

    pub fn log(&self) -> &DecisionLog {
        &self.log
    }

    /// Decides against one consistent snapshot and logs the decision.
    pub fn get_action(&self, query: &Query) -> Result<Decision, DecisionError> {
        let decision = self.snapshot().decide(query)?;
        // a failing mirror must not fail the request; the in-memory log keeps the record
        let _ = self.log.append(query, &decision);
        Ok(decision)
    }

    /// One response line for one request line.
    pub fn handle_line(&self, line: &str) -> String {
        let query = match serde_json::from_str::<Request>(line) {
            Ok(r) => r.into_query(),
            Err(e) => Err(e.to_string()),
        };
        let body = match query {
            Err(reason) => serde_json::to_string(&ErrorResponse { error: "parse", reason }),
            Ok(q) => match self.get_action(&q) {
                Ok(d) => serde_json::to_string(&d),
                Err(e) => serde_json::to_string(&ErrorResponse { error: "decision", reason: e.to_string() }),
            },
        };
        body.expect("responses serialize")
    }

    /// Serves one stream until end of input; blank lines are skipped.
    pub fn serve_lines(&self, input: impl BufRead, mut output: impl Write) -> io::Result<()> {
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            writeln!(output, "{}", self.handle_line(&line))?;
            output.flush()?;
        }
        Ok(())
    }

    /// Accepts connections forever, one thread per connection.
    pub fn serve_tcp(self: Arc<Self>, listener: TcpListener) -> io::Result<()> {
        for stream in listener.incoming() {
            let stream = stream?;
            let server = Arc::clone(&self);
            std::thread::spawn(move || {
                let reader = match stream.try_clone() {
                    Ok(s) => BufReader::new(s),
                    Err(_) => return,
                };
                let _ = server.serve_lines(reader, stream);
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::service::spec::{AssignmentConfig, PolicySpecFile, SpecEntry};

    fn spec(id: &str, action: &str) -> PolicySpecFile {
        let mut s = PolicySpecFile::new(id, "test");
        for q in 0..20 {
            s.insert("c".into(), QuestionId::new(format!("q{q}")), SpecEntry::Fixed { action: action.into() });
        }
        s
    }

    fn server(id: &str, action: &str) -> Server {
        Server::new(
            Snapshot::new(vec![spec(id, action)], AssignmentConfig::single(id)).unwrap(),
            DecisionLog::default(),
        )
    }

    #[test]
    fn responses_and_errors() {
        let s = server("mab", "hint_2");
        let ok = s.handle_line(r#"{"session_id":"s1","concept_id":"c","question_id":"q3"}"#);
        assert_eq!(ok, r#"{"action_id":"hint_2","policy_id":"mab","fallback":false}"#);
        let bad = s.handle_line("{oops");
        assert!(bad.starts_with(r#"{"error":"parse","reason":"#));
        let feature = s.handle_line(r#"{"session_id":"s1","concept_id":"c","question_id":"q3","context":{"nope":1}}"#);
        assert!(feature.contains("unknown context feature"));
        let none = s.handle_line(r#"{"session_id":"s1","concept_id":"c","question_id":"zz"}"#);
        assert!(none.starts_with(r#"{"error":"decision""#));
        assert_eq!(s.log().len(), 1);
    }

    #[test]
    fn stream_survives_malformed_lines() {
        let s = server("mab", "a");
        let input = "{bad\n\n{\"session_id\":\"s\",\"concept_id\":\"c\",\"question_id\":\"q1\"}\n";
        let mut out = Vec::new();
        s.serve_lines(input.as_bytes(), &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.lines().nth(1).unwrap().contains("\"a\""));
    }

    #[test]
    fn corrupted_reload_keeps_previous_spec() {
        let s = server("mab", "a");
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("spec.json");
        std::fs::write(&path, "{ truncated").unwrap();
        assert!(matches!(s.reload_spec_file(&path), Err(SpecError::Parse(_))));
        std::fs::write(&path, spec("mab", "b").to_json()).unwrap();
        s.reload_spec_file(&path).unwrap();
        let q = Query {
            session_id: "s".into(),
            concept_id: "c".into(),
            question_id: "q1".into(),
            context: None,
            actions: vec![],
        };
        assert_eq!(s.get_action(&q).unwrap().action_id.as_str(), "b");
    }

    #[test]
    fn reload_under_load_is_atomic() {
        let s = Arc::new(server("A", "a"));
        let snaps = [
            Snapshot::new(vec![spec("A", "a")], AssignmentConfig::single("A")).unwrap(),
            Snapshot::new(vec![spec("B", "b")], AssignmentConfig::single("B")).unwrap(),
        ];
        std::thread::scope(|scope| {
            for t in 0..4 {
                let s = Arc::clone(&s);
                scope.spawn(move || {
                    for i in 0..2000 {
                        let line =
                            format!(r#"{{"session_id":"s{t}-{i}","concept_id":"c","question_id":"q{}"}}"#, i % 20);
                        let d: Decision = serde_json::from_str(&s.handle_line(&line)).unwrap();
                        assert_eq!(d.policy_id.to_lowercase(), d.action_id.as_str());
                    }
                });
            }
            for i in 0..500 {
                s.reload(snaps[i % 2].clone());
            }
        });
        assert_eq!(s.log().len(), 8000);
    }
}
