//! The per-unit state machine behind guarded runs.

use crate::agent::{AgentProfile, SimSurfer};
use crate::digest::{derive_seed, tag_word};
use crate::env::action::{parse_instructions, ActionCommand, Instruction};
use crate::env::{EnvSpec, Environment};
use crate::gateway::Gateway;
use crate::trace::{snapshot_ref, TraceLog};
use crate::workflow::rewrite::bind;
use crate::workflow::{ConditionCheck, Origin, StepUnit, TaskSpec, WorkflowDoc};

use super::{
    build_notification, evaluate_check, AttemptRecord, Checkpoint, CheckVerdict, EventSink, FailurePoint,
    MachineState, RunEvent, RunOutcome, RunPolicy, RunReport, RuntimeError, SessionRef, UnitLog,
    UserNotification,
};

/// Fixed inputs of one guarded run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSetup {
    pub run_id: String,
    pub task: TaskSpec,
    pub seed: u64,
    pub env: EnvSpec,
    pub policy: RunPolicy,
    pub agent: AgentProfile,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Finished(RunReport),
    Paused { checkpoint: Checkpoint, notification: UserNotification },
}

#[derive(Debug, Clone)]
pub struct GuardedRun {
    pub outcome: Outcome,
    pub log: TraceLog,
}

impl GuardedRun {
    /// The answer accepted into the report, if the run completed.
    pub fn accepted_answer(&self) -> Option<&str> {
        match &self.outcome {
            Outcome::Finished(r) if r.outcome == RunOutcome::Completed => r.answer.as_deref(),
            _ => None,
        }
    }
}

struct Machine<'a, 'b> {
    setup: RunSetup,
    doc: WorkflowDoc,
    plans: Vec<Vec<Instruction>>,
    task_text: String,
    gateway: &'a Gateway,
    sink: EventSink<'b>,
    agent: SimSurfer,
    log: TraceLog,
    units: Vec<UnitLog>,
    resumes: u32,
}

fn prepare(workflow: &WorkflowDoc, task: &TaskSpec) -> Result<(WorkflowDoc, Vec<Vec<Instruction>>), RuntimeError> {
    let doc = bind(workflow, &task.bindings)?;
    let plans = doc
        .units
        .iter()
        .map(|u| parse_instructions(&u.action_text).map_err(|e| RuntimeError::Instruction(u.index, e)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((doc, plans))
}

/// Runs a workflow from its first unit on a freshly reset session.
pub fn run_guarded(
    setup: RunSetup,
    workflow: &WorkflowDoc,
    env: &mut dyn Environment,
    gateway: &Gateway,
    sink: EventSink<'_>,
) -> Result<GuardedRun, RuntimeError> {
    let (doc, plans) = prepare(workflow, &setup.task)?;
    let initial = env.reset(setup.seed)?;
    let mut m = Machine {
        task_text: setup.task.render(),
        agent: SimSurfer::new(setup.agent, setup.seed),
        setup,
        doc,
        plans,
        gateway,
        sink,
        log: TraceLog::start(initial),
        units: vec![],
        resumes: 0,
    };
    let outcome = m.run(env, 0)?;
    Ok(GuardedRun { outcome, log: m.log })
}

/// Continues a paused run with an updated workflow.
///
/// The session is rebuilt by replaying every recorded command and must land
/// on the exact snapshot the run paused on.
pub fn resume(
    checkpoint: &Checkpoint,
    workflow: &WorkflowDoc,
    force: bool,
    env: &mut dyn Environment,
    gateway: &Gateway,
    sink: EventSink<'_>,
) -> Result<GuardedRun, RuntimeError> {
    if !checkpoint.resumable() {
        return Err(RuntimeError::NotAwaitingGuidance);
    }
    if workflow.workflow_id != checkpoint.workflow_id {
        return Err(RuntimeError::WorkflowMismatch {
            expected: checkpoint.workflow_id.clone(),
            got: workflow.workflow_id.clone(),
        });
    }
    if workflow.version <= checkpoint.version && !force {
        return Err(RuntimeError::VersionUnchanged(workflow.version));
    }
    let (doc, plans) = prepare(workflow, &checkpoint.task)?;
    if doc.units.len() <= checkpoint.unit {
        return Err(RuntimeError::StaleCheckpoint(format!("workflow has no unit {}", checkpoint.unit)));
    }
    let session = &checkpoint.session;
    let initial = env.reset(session.seed).map_err(|e| RuntimeError::StaleCheckpoint(e.to_string()))?;
    let mut log = TraceLog::start(initial);
    for cmd in &session.commands {
        log.apply(env, cmd).map_err(|e| RuntimeError::StaleCheckpoint(e.to_string()))?;
    }
    let now = snapshot_ref(log.current());
    if now != session.snapshot_ref {
        return Err(RuntimeError::StaleCheckpoint(format!(
            "replayed session ended on {now}, expected {}",
            session.snapshot_ref
        )));
    }
    let agent_seed = derive_seed(&[session.seed, tag_word("resume"), workflow.version as u64]);
    let setup = RunSetup {
        run_id: checkpoint.run_id.clone(),
        task: checkpoint.task.clone(),
        seed: session.seed,
        env: session.env.clone(),
        policy: checkpoint.policy,
        agent: checkpoint.agent,
    };
    let mut m = Machine {
        task_text: setup.task.render(),
        agent: SimSurfer::new(setup.agent, agent_seed),
        setup,
        doc,
        plans,
        gateway,
        sink,
        log,
        units: checkpoint.units_done.clone(),
        resumes: checkpoint.resumes + 1,
    };
    (m.sink)(RunEvent::Resumed { unit: checkpoint.unit, version: workflow.version });
    let outcome = m.run(env, checkpoint.unit)?;
    Ok(GuardedRun { outcome, log: m.log })
}

/// Ends a paused run because the user chose not to help.
pub fn decline(checkpoint: &Checkpoint, final_snapshot_refs: Vec<String>) -> Result<RunReport, RuntimeError> {
    if !checkpoint.resumable() {
        return Err(RuntimeError::NotAwaitingGuidance);
    }
    Ok(RunReport {
        run_id: checkpoint.run_id.clone(),
        workflow_id: checkpoint.workflow_id.clone(),
        version: checkpoint.version,
        outcome: RunOutcome::FailedAfterGuidanceDeclined,
        units: checkpoint.units_done.clone(),
        answer: None,
        final_snapshot_refs,
        abort_reason: Some(format!("guidance declined at unit {}", checkpoint.unit)),
    })
}

fn trim_fallback(steps: &[ActionCommand], plan: &[Instruction]) -> Vec<ActionCommand> {
    let own: Vec<ActionCommand> = plan.iter().map(Instruction::lead_command).collect();
    let mut out = steps.to_vec();
    while out.len() > 1 && out.last().is_some_and(|c| own.contains(c)) {
        out.pop();
    }
    out
}

impl Machine<'_, '_> {
    fn report(&self, outcome: RunOutcome, abort_reason: Option<String>) -> RunReport {
        RunReport {
            run_id: self.setup.run_id.clone(),
            workflow_id: self.doc.workflow_id.clone(),
            version: self.doc.version,
            outcome,
            units: self.units.clone(),
            answer: if outcome == RunOutcome::Completed { self.log.answer.clone() } else { None },
            final_snapshot_refs: self.log.final_refs(3),
            abort_reason,
        }
    }

    fn finish(&mut self, outcome: RunOutcome, reason: Option<String>) -> super::Outcome {
        (self.sink)(RunEvent::Finished { outcome });
        Outcome::Finished(self.report(outcome, reason))
    }

    fn run(&mut self, env: &mut dyn Environment, start: usize) -> Result<Outcome, RuntimeError> {
        for u in start..self.doc.units.len() {
            (self.sink)(RunEvent::UnitStarted { unit: u, action_text: self.doc.units[u].action_text.clone() });
            self.units.push(UnitLog { unit: u, attempts: vec![] });
            let mut passed = false;
            for k in 0..=self.setup.policy.max_retries {
                let rec = match self.attempt(env, u, k) {
                    Ok(rec) => rec,
                    Err(e) => return Ok(self.finish(RunOutcome::Aborted, Some(e.to_string()))),
                };
                passed = rec.passed;
                (self.sink)(RunEvent::AttemptFinished { unit: u, record: rec.clone() });
                self.units.last_mut().expect("unit log pushed").attempts.push(rec);
                if passed {
                    break;
                }
            }
            if passed {
                continue;
            }
            let tries = self.setup.policy.max_retries + 1;
            if !self.setup.policy.pause_on_exhaustion {
                return Ok(self.finish(RunOutcome::Aborted, Some(format!("unit {u} failed after {tries} attempts"))));
            }
            return Ok(self.pause(u));
        }
        Ok(self.finish(RunOutcome::Completed, None))
    }

    fn pause(&mut self, u: usize) -> Outcome {
        let ulog = self.units.last().expect("paused unit has a log").clone();
        let snap = self.log.current().clone();
        let notification = build_notification(
            &self.setup.run_id,
            &self.doc.units[u],
            &ulog,
            &self.task_text,
            &snap,
            &self.log,
            self.gateway,
        );
        let checkpoint = Checkpoint {
            run_id: self.setup.run_id.clone(),
            workflow_id: self.doc.workflow_id.clone(),
            version: self.doc.version,
            unit: u,
            state: MachineState::AwaitingGuidance,
            session: SessionRef {
                site: self.setup.task.site.clone(),
                seed: self.setup.seed,
                env: self.setup.env.clone(),
                commands: self.log.commands.clone(),
                snapshot_ref: snapshot_ref(&snap),
            },
            created_clock: snap.clock,
            task: self.setup.task.clone(),
            policy: self.setup.policy,
            agent: self.setup.agent,
            units_done: self.units.clone(),
            resumes: self.resumes,
        };
        (self.sink)(RunEvent::Paused { unit: u });
        Outcome::Paused { checkpoint, notification }
    }

    fn choose_fallback(&self, u: usize, k: u32) -> Option<(String, String, Option<Vec<ActionCommand>>)> {
        let unit = &self.doc.units[u];
        let mut list = unit.fallbacks_by_rank();
        // Newest guidance first, then the learned fallbacks in rank order.
        list.sort_by_key(|f| match f.origin {
            Origin::UserGuidance => (0, u32::MAX - f.rank),
            _ => (1, f.rank),
        });
        let f = list.get((k as usize).min(list.len()).checked_sub(1)?)?;
        Some((f.fallback_id.clone(), f.nl_text.clone(), f.command.as_ref().map(|c| c.steps.clone())))
    }

    fn emit_actions(&mut self, u: usize, from: usize) {
        for ev in self.log.events[from..].to_vec() {
            (self.sink)(RunEvent::ActionApplied {
                unit: u,
                step_index: ev.step_index,
                command: ev.command,
                status: ev.status.name().into(),
                message: ev.message,
            });
        }
    }

    fn check_all(&mut self, u: usize, checks: &[ConditionCheck], verdicts: &mut Vec<CheckVerdict>) -> Option<FailurePoint> {
        let action = self.doc.units[u].action_text.clone();
        for c in checks {
            let v = evaluate_check(c, self.log.current(), &self.task_text, &action, self.gateway, self.setup.policy.check_mode);
            (self.sink)(RunEvent::CheckEvaluated { unit: u, verdict: v.clone() });
            let failed = (!v.passed).then(|| FailurePoint::Check {
                check_id: c.check_id.clone(),
                nl_text: c.nl_text.clone(),
                explanation: v.explanation.clone(),
            });
            verdicts.push(v);
            if failed.is_some() {
                return failed;
            }
        }
        None
    }

    fn attempt(&mut self, env: &mut dyn Environment, u: usize, k: u32) -> Result<AttemptRecord, RuntimeError> {
        let first = self.log.events.len();
        let unit: StepUnit = self.doc.units[u].clone();
        let plan = self.plans[u].clone();
        let mut fallback_id = None;
        if k > 0 {
            let mut cmds = vec![];
            let chosen = self.choose_fallback(u, k);
            (self.sink)(RunEvent::RetryStarted {
                unit: u,
                attempt: k,
                fallback_id: chosen.as_ref().map(|c| c.0.clone()),
                nl_text: chosen.as_ref().map(|c| c.1.clone()),
            });
            if let Some((id, _, steps)) = chosen {
                fallback_id = Some(id);
                cmds = trim_fallback(&steps.unwrap_or_default(), &plan);
            }
            if cmds.is_empty() {
                cmds.push(ActionCommand::CaptureState);
            }
            for cmd in cmds {
                let from = self.log.events.len();
                self.agent.execute(env, &mut self.log, &cmd)?;
                self.emit_actions(u, from);
            }
        }
        let mut verdicts = vec![];
        let mut failed_at = self.check_all(u, &unit.pre_checks, &mut verdicts);
        if failed_at.is_none() {
            for instr in plan.iter() {
                let from = self.log.events.len();
                let done = self.agent.perform(env, &mut self.log, instr)?;
                self.emit_actions(u, from);
                if !done.is_ok() {
                    failed_at = Some(FailurePoint::Action { command: instr.lead_command(), message: done.message });
                    break;
                }
            }
            if failed_at.is_none() {
                failed_at = self.check_all(u, &unit.post_checks, &mut verdicts);
            }
        }
        let end = self.log.events.len();
        Ok(AttemptRecord {
            attempt: k,
            fallback_id,
            verdicts,
            first_event: first,
            end_event: end,
            messages: self.log.events[first..end].iter().map(|e| e.message.clone()).collect(),
            passed: failed_at.is_none(),
            failed_at,
            snapshot_ref: snapshot_ref(self.log.current()),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::action::ActionCommand as C;

    #[test]
    fn trims_commands_the_unit_repeats() {
        let plan: Vec<Instruction> = vec![C::Click { target: "Search".into() }.into()];
        let steps = vec![C::Click { target: "No thanks".into() }, C::Click { target: "Search".into() }];
        assert_eq!(trim_fallback(&steps, &plan), vec![C::Click { target: "No thanks".into() }]);
        assert_eq!(trim_fallback(&steps[1..], &plan).len(), 1);
    }
}
