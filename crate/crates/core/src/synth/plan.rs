//! Step skeletons learned from a successful trace.

use serde::{Deserialize, Serialize};

use crate::env::action::{ActionCommand, Instruction};
use crate::trace::{ActionEvent, RunArtifacts, TraceLog};
use crate::workflow::Predicate;

use super::SynthError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanStep {
    /// Page the step's commands are issued on.
    pub page_key: String,
    pub instructions: Vec<Instruction>,
    /// Trace events the step was built from.
    pub source_events: Vec<usize>,
    /// Field values the step is expected to leave behind.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub expected: Vec<Predicate>,
}

impl PlanStep {
    pub fn lead_commands(&self) -> Vec<ActionCommand> {
        self.instructions.iter().map(Instruction::lead_command).collect()
    }

    pub fn targets(&self) -> Vec<&str> {
        self.instructions
            .iter()
            .filter_map(|i| match i {
                Instruction::Command(c) => c.target(),
                Instruction::AnswerFrom { answer_from } => Some(answer_from.as_str()),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanSkeleton {
    pub source_run: String,
    pub steps: Vec<PlanStep>,
}

/// Page key of the state an event was issued on.
pub fn event_page(log: &TraceLog, ev: &ActionEvent) -> String {
    log.snapshot(&ev.snapshot_before).map(|s| s.page_key()).unwrap_or_default()
}

/// Incidental commands: scrolling, waiting and closing pop-ups.
pub fn is_incidental(log: &TraceLog, ev: &ActionEvent) -> bool {
    match &ev.command {
        ActionCommand::Scroll { .. } | ActionCommand::CaptureState | ActionCommand::WebSearch { .. } => true,
        ActionCommand::Click { .. } => log.snapshot(&ev.snapshot_before).is_some_and(|s| !s.overlays.is_empty()),
        _ => false,
    }
}

/// Major steps of a run: one per successful, non-incidental command. A read
/// followed by an answer becomes one "answer with the value of" step.
pub fn learn_plan(run: &RunArtifacts) -> Result<PlanSkeleton, SynthError> {
    let log = &run.log;
    let kept: Vec<(usize, &ActionEvent)> = log
        .events
        .iter()
        .enumerate()
        .filter(|(_, e)| e.status.is_ok() && !is_incidental(log, e))
        .collect();
    if kept.is_empty() {
        return Err(SynthError::EmptyTrace(run.record.run_id.clone()));
    }
    let mut steps: Vec<PlanStep> = vec![];
    let mut i = 0;
    while i < kept.len() {
        let (idx, ev) = kept[i];
        let page = event_page(log, ev);
        let mut source = vec![idx];
        let instr = match (&ev.command, kept.get(i + 1)) {
            (ActionCommand::ReadText { target }, Some((next_idx, next)))
                if matches!(&next.command, ActionCommand::Answer { text } if Some(text) == ev.extracted.as_ref()) =>
            {
                source.push(*next_idx);
                i += 1;
                Instruction::AnswerFrom { answer_from: target.clone() }
            }
            (cmd, _) => Instruction::Command(cmd.clone()),
        };
        i += 1;
        let expected = match &ev.command {
            ActionCommand::TypeText { target, text } => Some(Predicate::FieldValue { target: target.clone(), value: text.clone() }),
            ActionCommand::Select { target, option } => Some(Predicate::FieldValue { target: target.clone(), value: option.clone() }),
            _ => None,
        };
        steps.push(PlanStep { page_key: page, instructions: vec![instr], source_events: source, expected: expected.into_iter().collect() });
    }
    Ok(PlanSkeleton { source_run: run.record.run_id.clone(), steps })
}
