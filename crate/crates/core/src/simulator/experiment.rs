//! Many sessions under a policy mix, emitted in the log format.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;

use super::session::{simulate_session, ExposureTrace, SessionPlan, SimulatedSession};
use super::world::World;
use super::SimError;
use crate::domain::{PracticeSession, SessionId, StudentId};
use crate::ingestion::write_log_stream;
use crate::rng::{stream_id, stream_rng};
use crate::service::Snapshot;

/// Start time of session 0 (a Tuesday).
pub const START_EPOCH_S: i64 = 1_700_000_000;
/// Gap between consecutive session starts.
pub const SESSION_SPACING_S: i64 = 600;

#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    /// Sessions in index order.
    pub sessions: Vec<PracticeSession>,
    /// Exposure ground truth, in session order.
    pub traces: Vec<ExposureTrace>,
}

impl Experiment {
    pub fn write_log<W: Write>(&self, out: W) -> std::io::Result<()> {
        write_log_stream(&self.sessions, out)
    }

    pub fn exposures(&self) -> usize {
        self.traces.len()
    }
}

/// Session `i` practices concept `i mod C` for student `(i / C) mod S`;
/// the attempt index counts the student's passes over the concepts.
pub fn session_plan(world: &World, seed: u64, i: usize) -> SessionPlan {
    let c = world.concepts.len();
    let s = world.students.len();
    let student = (i / c) % s;
    SessionPlan {
        session_id: SessionId::new(format!("{seed:x}-{i:07}")),
        student_id: StudentId::new(format!("stu{student:06}")),
        student,
        concept: world.concepts[i % c].clone(),
        attempt_index: (i / (c * s)) as u32 + 1,
        start: START_EPOCH_S + i as i64 * SESSION_SPACING_S,
    }
}

/// Simulates `n_sessions` sessions, each assigned a policy by the
/// snapshot's session hash. Students run in parallel, each student's
/// sessions in order so later sessions see earlier ones as history.
pub fn run_experiment(world: &World, policy: &Snapshot, n_sessions: usize, seed: u64) -> Result<Experiment, SimError> {
    let items = world.catalog.items();
    let mut by_student: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let plans: Vec<SessionPlan> = (0..n_sessions).map(|i| session_plan(world, seed, i)).collect();
    for (i, p) in plans.iter().enumerate() {
        by_student.entry(p.student).or_default().push(i);
    }
    let groups: Vec<Vec<usize>> = by_student.into_values().collect();
    let results: Vec<Vec<(usize, SimulatedSession)>> = groups
        .par_iter()
        .map(|idx| {
            let mut done: Vec<(usize, SimulatedSession)> = Vec::with_capacity(idx.len());
            for &i in idx {
                let history: Vec<&PracticeSession> = done.iter().map(|(_, s)| &s.session).collect();
                let mut rng = stream_rng(seed, stream_id(&[i as u64]));
                let out = simulate_session(world, &plans[i], policy, &history, &items, &mut rng)?;
                done.push((i, out));
            }
            Ok(done)
        })
        .collect::<Result<_, SimError>>()?;
    let mut all: Vec<(usize, SimulatedSession)> = results.into_iter().flatten().collect();
    all.sort_by_key(|(i, _)| *i);
    let mut sessions = Vec::with_capacity(all.len());
    let mut traces = Vec::new();
    for (_, s) in all {
        sessions.push(s.session);
        traces.extend(s.traces);
    }
    Ok(Experiment { sessions, traces })
}
