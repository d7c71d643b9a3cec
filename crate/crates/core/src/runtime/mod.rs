//! Guarded execution: condition checks, bounded fallback retries, pausing
//! for user guidance and resuming from checkpoints.

pub mod guidance;
pub mod machine;

use serde::{Deserialize, Serialize};

use crate::agent::AgentProfile;
use crate::env::action::{ActionCommand, InstructionError};
use crate::env::page::PageSnapshot;
use crate::env::screenshot::render_png;
use crate::env::{EnvError, EnvSpec};
use crate::gateway::{parse_yes_no, vars, Gateway, ImageRef};
use crate::trace::snapshot_ref;
use crate::workflow::slots::SlotError;
use crate::workflow::{ConditionCheck, EvidenceRef, GuidanceNote, TaskSpec};

pub use guidance::{build_notification, integrate_guidance, GuidanceError};
pub use machine::{decline, resume, run_guarded, GuardedRun, Outcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckMode {
    /// Structured predicates are evaluated directly; the model answers the rest.
    PredicateFirst,
    ModelOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunPolicy {
    pub max_retries: u32,
    pub check_mode: CheckMode,
    pub pause_on_exhaustion: bool,
}

impl Default for RunPolicy {
    fn default() -> Self {
        RunPolicy { max_retries: 3, check_mode: CheckMode::PredicateFirst, pause_on_exhaustion: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvaluatedBy {
    Predicate,
    ModelQa,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckVerdict {
    pub check_id: String,
    pub passed: bool,
    pub explanation: String,
    pub snapshot_ref: String,
    pub evaluated_by: EvaluatedBy,
}

/// Snapshot as an image the model can look at.
pub fn snapshot_image(snap: &PageSnapshot) -> ImageRef {
    ImageRef { digest: snap.screenshot_ref.clone(), png: Some(std::sync::Arc::new(render_png(snap))) }
}

pub fn evaluate_check(
    check: &ConditionCheck,
    snap: &PageSnapshot,
    task_text: &str,
    action_text: &str,
    gateway: &Gateway,
    mode: CheckMode,
) -> CheckVerdict {
    let verdict = |passed, explanation: String, by| CheckVerdict {
        check_id: check.check_id.clone(),
        passed,
        explanation,
        snapshot_ref: snapshot_ref(snap),
        evaluated_by: by,
    };
    if let (Some(p), CheckMode::PredicateFirst) = (&check.predicate, mode) {
        let e = p.evaluate(snap);
        return verdict(e.passed, e.explanation, EvaluatedBy::Predicate);
    }
    let v = vars(&[("task", task_text), ("action", action_text), ("check", &check.nl_text)]);
    match gateway.ask("condition_check_qa", &v, vec![snapshot_image(snap)]) {
        Ok(reply) => match parse_yes_no(&reply.text) {
            Ok(yn) => {
                let why = if yn.explanation.is_empty() {
                    if yn.verdict { "the model confirmed the condition" } else { "the model rejected the condition" }.to_string()
                } else {
                    yn.explanation
                };
                verdict(yn.verdict, why, EvaluatedBy::ModelQa)
            }
            Err(_) => verdict(false, "unparseable verdict".into(), EvaluatedBy::ModelQa),
        },
        Err(e) => verdict(false, format!("condition could not be checked: {e}"), EvaluatedBy::ModelQa),
    }
}

/// One try at a unit: optional fallback, checks and the unit's commands.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub attempt: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback_id: Option<String>,
    pub verdicts: Vec<CheckVerdict>,
    /// Trace event range [first, end).
    pub first_event: usize,
    pub end_event: usize,
    pub messages: Vec<String>,
    pub passed: bool,
    /// What stopped the attempt: a check id or the failed command.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_at: Option<FailurePoint>,
    pub snapshot_ref: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FailurePoint {
    Check { check_id: String, nl_text: String, explanation: String },
    Action { command: ActionCommand, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitLog {
    pub unit: usize,
    pub attempts: Vec<AttemptRecord>,
}

impl UnitLog {
    pub fn retries(&self) -> usize {
        self.attempts.len().saturating_sub(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunOutcome {
    Completed,
    FailedAfterGuidanceDeclined,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunReport {
    pub run_id: String,
    pub workflow_id: String,
    pub version: u32,
    pub outcome: RunOutcome,
    /// Verdict log; a unit visited again after resume gets a second entry.
    pub units: Vec<UnitLog>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    pub final_snapshot_refs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abort_reason: Option<String>,
}

impl RunReport {
    pub fn max_attempts(&self) -> usize {
        self.units.iter().map(|u| u.attempts.len()).max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MachineState {
    Running,
    AwaitingGuidance,
    Completed,
    Aborted,
}

/// Everything needed to rebuild the browser session of a paused run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRef {
    pub site: String,
    pub seed: u64,
    pub env: EnvSpec,
    pub commands: Vec<ActionCommand>,
    pub snapshot_ref: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub run_id: String,
    pub workflow_id: String,
    pub version: u32,
    pub unit: usize,
    pub state: MachineState,
    pub session: SessionRef,
    pub created_clock: u64,
    pub task: TaskSpec,
    pub policy: RunPolicy,
    pub agent: AgentProfile,
    pub units_done: Vec<UnitLog>,
    #[serde(default)]
    pub resumes: u32,
}

impl Checkpoint {
    pub fn resumable(&self) -> bool {
        self.state == MachineState::AwaitingGuidance
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Where {
    pub unit: usize,
    pub action: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub check_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserNotification {
    pub run_id: String,
    #[serde(rename = "where")]
    pub where_: Where,
    pub why: String,
    pub what: String,
    pub how: Vec<String>,
    pub attempts: Vec<EvidenceRef>,
    /// Snapshot the run paused on.
    pub snapshot_ref: String,
}

/// Progress events of a guarded run, in the order they happen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum RunEvent {
    UnitStarted { unit: usize, action_text: String },
    CheckEvaluated { unit: usize, verdict: CheckVerdict },
    ActionApplied { unit: usize, step_index: usize, command: ActionCommand, status: String, message: String },
    RetryStarted {
        unit: usize,
        attempt: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        fallback_id: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        nl_text: Option<String>,
    },
    AttemptFinished { unit: usize, record: AttemptRecord },
    Paused { unit: usize },
    NotificationReady { notification: UserNotification },
    GuidanceApplied { workflow_id: String, version: u32, note: GuidanceNote },
    Resumed { unit: usize, version: u32 },
    Finished { outcome: RunOutcome },
}

impl RunEvent {
    pub fn kind(&self) -> &'static str {
        match self {
            RunEvent::UnitStarted { .. } => "UnitStarted",
            RunEvent::CheckEvaluated { .. } => "CheckEvaluated",
            RunEvent::ActionApplied { .. } => "ActionApplied",
            RunEvent::RetryStarted { .. } => "RetryStarted",
            RunEvent::AttemptFinished { .. } => "AttemptFinished",
            RunEvent::Paused { .. } => "Paused",
            RunEvent::NotificationReady { .. } => "NotificationReady",
            RunEvent::GuidanceApplied { .. } => "GuidanceApplied",
            RunEvent::Resumed { .. } => "Resumed",
            RunEvent::Finished { .. } => "Finished",
        }
    }
}

/// Rebuilds the per-unit verdict log from an event sequence.
pub fn verdict_log<'a>(events: impl IntoIterator<Item = &'a RunEvent>) -> Vec<UnitLog> {
    let mut out: Vec<UnitLog> = vec![];
    for ev in events {
        match ev {
            RunEvent::UnitStarted { unit, .. } => out.push(UnitLog { unit: *unit, attempts: vec![] }),
            RunEvent::AttemptFinished { unit, record } => match out.last_mut() {
                Some(u) if u.unit == *unit => u.attempts.push(record.clone()),
                _ => out.push(UnitLog { unit: *unit, attempts: vec![record.clone()] }),
            },
            _ => {}
        }
    }
    out
}

pub type EventSink<'a> = &'a mut dyn FnMut(RunEvent);

/// A sink that drops everything.
pub fn no_events() -> impl FnMut(RunEvent) {
    |_| {}
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RuntimeError {
    #[error(transparent)]
    Slot(#[from] SlotError),
    #[error("unit {0}: {1}")]
    Instruction(usize, InstructionError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("run is not waiting for guidance")]
    NotAwaitingGuidance,
    #[error("workflow version {0} is not newer than the checkpoint; pass force to resume anyway")]
    VersionUnchanged(u32),
    #[error("checkpoint can't be restored: {0}")]
    StaleCheckpoint(String),
    #[error("workflow {got} does not match checkpoint workflow {expected}")]
    WorkflowMismatch { expected: String, got: String },
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::backend::{Script, Scripted};
    use crate::workflow::samples::check;
    use crate::workflow::{Phase, Predicate};

    fn blank() -> PageSnapshot {
        PageSnapshot {
            url: "https://x.sim/".into(),
            title: "x".into(),
            elements: vec![],
            overlays: vec![],
            screenshot_ref: "s".into(),
            clock: 0,
        }
    }

    #[test]
    fn predicate_first() {
        let c = check("c", Phase::Pre, "Before clicking, ensure no pop-up", Some(Predicate::NoOverlay));
        let v = evaluate_check(&c, &blank(), "t", "a", &Gateway::sim(), CheckMode::PredicateFirst);
        assert!(v.passed);
        assert_eq!(v.evaluated_by, EvaluatedBy::Predicate);
    }

    #[test]
    fn model_qa_no() {
        let mut script = Script::default();
        script.defaults.insert("condition_check_qa".into(), "No - the button is disabled".into());
        let gw = Gateway::new(Scripted::new(script));
        let c = check("c", Phase::Pre, "Before clicking, ensure the button is enabled", None);
        let v = evaluate_check(&c, &blank(), "t", "a", &gw, CheckMode::PredicateFirst);
        assert!(!v.passed);
        assert_eq!(v.evaluated_by, EvaluatedBy::ModelQa);
        assert!(v.explanation.contains("disabled"));
    }

    #[test]
    fn unparseable() {
        let mut script = Script::default();
        script.defaults.insert("condition_check_qa".into(), "perhaps".into());
        let gw = Gateway::new(Scripted::new(script));
        let c = check("c", Phase::Pre, "x", Some(Predicate::NoOverlay));
        let v = evaluate_check(&c, &blank(), "t", "a", &gw, CheckMode::ModelOnly);
        assert_eq!((v.passed, v.explanation.as_str()), (false, "unparseable verdict"));
    }
}
