//! Guarded runs backed by the store: checkpoints, notifications, guidance
//! and resumption, with a sequenced event log per run.

use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::env::EnvError;
use crate::gateway::Gateway;
use crate::runtime::guidance::{integrate_guidance, GuidanceError};
use crate::runtime::machine::RunSetup;
use crate::runtime::{decline, resume, run_guarded, Checkpoint, MachineState, Outcome, RunEvent, RunReport, RuntimeError};
use crate::store::{Store, StoreError};
use crate::workflow::{GuidanceNote, WorkflowDoc};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventEnvelope {
    pub run_id: String,
    pub sequence: u64,
    pub timestamp_ms: u64,
    #[serde(flatten)]
    pub event: RunEvent,
}

/// Ordered events of one run; sequence numbers start at 0.
#[derive(Debug, Clone, Default)]
pub struct EventLog {
    pub run_id: String,
    pub events: Vec<EventEnvelope>,
}

impl EventLog {
    pub fn new(run_id: &str) -> Self {
        EventLog { run_id: run_id.to_string(), events: vec![] }
    }

    pub fn load(store: &Store, run_id: &str) -> Self {
        EventLog { run_id: run_id.to_string(), events: store.load_events(run_id).unwrap_or_default() }
    }

    pub fn push(&mut self, event: RunEvent) -> &EventEnvelope {
        let timestamp_ms = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0);
        let sequence = self.events.len() as u64;
        self.events.push(EventEnvelope { run_id: self.run_id.clone(), sequence, timestamp_ms, event });
        self.events.last().expect("just pushed")
    }

    pub fn after(&self, sequence: Option<u64>) -> &[EventEnvelope] {
        let from = sequence.map(|s| s as usize + 1).unwrap_or(0).min(self.events.len());
        &self.events[from..]
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error(transparent)]
    Guidance(#[from] GuidanceError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// Where a stored guarded run stands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStatus {
    pub run_id: String,
    pub state: MachineState,
    pub workflow_id: String,
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<RunReport>,
}

pub fn status(store: &Store, run_id: &str) -> Result<RunStatus, SessionError> {
    let report = store.load_run_report(run_id).ok();
    match (store.load_checkpoint(run_id), report) {
        (Ok(cp), report) => Ok(RunStatus {
            run_id: run_id.into(),
            state: cp.state,
            workflow_id: cp.workflow_id.clone(),
            version: report.as_ref().map(|r| r.version).unwrap_or(cp.version),
            unit: cp.resumable().then_some(cp.unit),
            report,
        }),
        (Err(_), Some(r)) => Ok(RunStatus {
            run_id: run_id.into(),
            state: if r.outcome == crate::runtime::RunOutcome::Completed { MachineState::Completed } else { MachineState::Aborted },
            workflow_id: r.workflow_id.clone(),
            version: r.version,
            unit: None,
            report: Some(r),
        }),
        (Err(e), None) => Err(e.into()),
    }
}

/// The checkpoint of a run that can take guidance. A run that finished
/// without ever pausing is not awaiting guidance rather than unknown.
fn paused(store: &Store, run_id: &str) -> Result<Checkpoint, SessionError> {
    match store.load_checkpoint(run_id) {
        Ok(cp) if cp.resumable() => Ok(cp),
        Ok(_) => Err(RuntimeError::NotAwaitingGuidance.into()),
        Err(StoreError::NotFound(_)) if store.load_run_report(run_id).is_ok() => Err(RuntimeError::NotAwaitingGuidance.into()),
        Err(e) => Err(e.into()),
    }
}

/// Writes whatever the run ended with and records the follow-up events.
fn persist(store: &Store, outcome: &Outcome, log: &mut EventLog, notify: &mut dyn FnMut(&EventEnvelope)) -> Result<(), SessionError> {
    match outcome {
        Outcome::Paused { checkpoint, notification } => {
            store.save_checkpoint(checkpoint)?;
            store.save_notification(notification)?;
            notify(log.push(RunEvent::NotificationReady { notification: notification.clone() }));
        }
        Outcome::Finished(report) => {
            store.save_run_report(report)?;
            if let Ok(mut cp) = store.load_checkpoint(&report.run_id) {
                cp.state = if report.outcome == crate::runtime::RunOutcome::Completed {
                    MachineState::Completed
                } else {
                    MachineState::Aborted
                };
                store.save_checkpoint(&cp)?;
            }
        }
    }
    store.save_events(&log.run_id, &log.events)?;
    Ok(())
}

/// Starts a guarded run and persists its outcome.
pub fn start(
    store: &Store,
    setup: RunSetup,
    workflow: &WorkflowDoc,
    gateway: &Gateway,
    notify: &mut dyn FnMut(&EventEnvelope),
) -> Result<Outcome, SessionError> {
    let mut log = EventLog::new(&setup.run_id);
    let mut env = setup.env.open(&setup.task.site)?;
    let run = {
        let mut sink = |e: RunEvent| notify(log.push(e));
        run_guarded(setup, workflow, env.as_mut(), gateway, &mut sink)
    };
    env.close();
    let run = run?;
    persist(store, &run.outcome, &mut log, notify)?;
    Ok(run.outcome)
}

/// Turns guidance into a new workflow version for a paused run.
pub fn guide(
    store: &Store,
    run_id: &str,
    text: &str,
    target_unit: Option<usize>,
    gateway: &Gateway,
    notify: &mut dyn FnMut(&EventEnvelope),
) -> Result<(WorkflowDoc, GuidanceNote), SessionError> {
    let cp = paused(store, run_id)?;
    let current = store.load_workflow(&cp.workflow_id, None)?;
    let unit = target_unit.unwrap_or(cp.unit);
    let (doc, note) = integrate_guidance(&current, run_id, text, unit, Some(&cp.task.bindings), gateway)?;
    store.save_workflow(&doc)?;
    let mut log = EventLog::load(store, run_id);
    notify(log.push(RunEvent::GuidanceApplied { workflow_id: doc.workflow_id.clone(), version: doc.version, note: note.clone() }));
    store.save_events(run_id, &log.events)?;
    Ok((doc, note))
}

/// Continues a paused run with the latest version of its workflow.
pub fn resume_run(
    store: &Store,
    run_id: &str,
    force: bool,
    gateway: &Gateway,
    notify: &mut dyn FnMut(&EventEnvelope),
) -> Result<Outcome, SessionError> {
    let cp = paused(store, run_id)?;
    let workflow = store.load_workflow(&cp.workflow_id, None)?;
    let mut log = EventLog::load(store, run_id);
    let mut env = cp.session.env.open(&cp.session.site)?;
    let run = {
        let mut sink = |e: RunEvent| notify(log.push(e));
        resume(&cp, &workflow, force, env.as_mut(), gateway, &mut sink)
    };
    env.close();
    let run = run?;
    persist(store, &run.outcome, &mut log, notify)?;
    Ok(run.outcome)
}

/// Ends a paused run without guidance.
pub fn decline_run(store: &Store, run_id: &str, notify: &mut dyn FnMut(&EventEnvelope)) -> Result<RunReport, SessionError> {
    let cp = paused(store, run_id)?;
    let finals = vec![cp.session.snapshot_ref.clone(); 3];
    let report = decline(&cp, finals)?;
    let mut log = EventLog::load(store, run_id);
    notify(log.push(RunEvent::Finished { outcome: report.outcome }));
    persist(store, &Outcome::Finished(report.clone()), &mut log, notify)?;
    Ok(report)
}
