//! Execution records: action events, traces and run metadata.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::digest::sha256_hex;
use crate::env::action::ActionCommand;
use crate::env::page::{ActionOutcome, OutcomeStatus, PageSnapshot};
use crate::env::{EnvError, Environment};
use crate::workflow::{TaskSpec, VariationKind};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionEvent {
    pub step_index: usize,
    pub command: ActionCommand,
    pub status: OutcomeStatus,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extracted: Option<String>,
    pub snapshot_before: String,
    pub snapshot_after: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Success,
    Failure,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub task: TaskSpec,
    /// None for the original task.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variation: Option<VariationKind>,
    pub policy_name: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
    #[serde(default)]
    pub rationale: String,
    /// Why the policy stopped early, when it did.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abort_reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    pub trace_ref: String,
}

/// Snapshot reference: digest of the canonical snapshot JSON.
pub fn snapshot_ref(snap: &PageSnapshot) -> String {
    sha256_hex(snap.canonical_json().as_bytes())
}

/// Applies commands to an environment while recording every event and
/// every distinct snapshot.
#[derive(Debug, Clone, Default)]
pub struct TraceLog {
    pub events: Vec<ActionEvent>,
    pub snapshots: BTreeMap<String, PageSnapshot>,
    current: Option<PageSnapshot>,
    /// Every command applied, including ones whose events were discarded.
    pub commands: Vec<ActionCommand>,
    pub answer: Option<String>,
}

impl TraceLog {
    pub fn start(initial: PageSnapshot) -> Self {
        let mut log = TraceLog::default();
        log.observe(initial);
        log
    }

    /// Rebuilds a log from stored events and snapshots. The current state is
    /// the last event's after-snapshot (or `initial` for an empty trace).
    pub fn from_parts(events: Vec<ActionEvent>, snapshots: BTreeMap<String, PageSnapshot>, initial: Option<String>, answer: Option<String>) -> Option<Self> {
        let current_ref = events.last().map(|e| e.snapshot_after.clone()).or(initial)?;
        let current = snapshots.get(&current_ref)?.clone();
        let commands = events.iter().map(|e| e.command.clone()).collect();
        Some(TraceLog { events, snapshots, current: Some(current), commands, answer })
    }

    /// Reference of the state before the first event.
    pub fn initial_ref(&self) -> Option<String> {
        match self.events.first() {
            Some(e) => Some(e.snapshot_before.clone()),
            None => self.current.as_ref().map(snapshot_ref),
        }
    }

    fn observe(&mut self, snap: PageSnapshot) -> String {
        let r = snapshot_ref(&snap);
        self.snapshots.entry(r.clone()).or_insert_with(|| snap.clone());
        self.current = Some(snap);
        r
    }

    pub fn current(&self) -> &PageSnapshot {
        self.current.as_ref().expect("trace log started with a snapshot")
    }

    pub fn apply(&mut self, env: &mut dyn Environment, cmd: &ActionCommand) -> Result<ActionOutcome, EnvError> {
        let before = snapshot_ref(self.current());
        let out = env.apply(cmd)?;
        let after = self.observe(out.after.clone());
        self.commands.push(cmd.clone());
        if let (ActionCommand::Answer { text }, true) = (cmd, out.status.is_ok()) {
            self.answer = Some(text.clone());
        }
        self.events.push(ActionEvent {
            step_index: self.events.len(),
            command: cmd.clone(),
            status: out.status.clone(),
            message: out.message.clone(),
            extracted: out.extracted.clone(),
            snapshot_before: before,
            snapshot_after: after,
        });
        Ok(out)
    }

    pub fn snapshot(&self, r: &str) -> Option<&PageSnapshot> {
        self.snapshots.get(r)
    }

    /// The last `n` distinct states, oldest first; padded by repeating the
    /// earliest when the run is shorter.
    pub fn final_refs(&self, n: usize) -> Vec<String> {
        let mut refs: Vec<String> = self.events.iter().map(|e| e.snapshot_after.clone()).collect();
        if let Some(first) = self.events.first() {
            refs.insert(0, first.snapshot_before.clone());
        } else if let Some(cur) = &self.current {
            refs.push(snapshot_ref(cur));
        }
        let mut out: Vec<String> = refs.iter().rev().take(n).rev().cloned().collect();
        while out.len() < n && !out.is_empty() {
            out.insert(0, out[0].clone());
        }
        out
    }
}

/// Everything a finished run produced.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub record: RunRecord,
    pub log: TraceLog,
}

impl RunArtifacts {
    pub fn events(&self) -> &[ActionEvent] {
        &self.log.events
    }

    pub fn final_snapshot(&self) -> &PageSnapshot {
        self.log.current()
    }
}
