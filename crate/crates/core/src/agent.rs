//! SimSurfer: the stand-in web agent that carries out controlled-language
//! instructions with configurable imperfection.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::digest::{derive_seed, tag_word};
use crate::env::action::{ActionCommand, Direction, Instruction};
use crate::env::page::{ActionOutcome, OutcomeStatus, PageSnapshot, Unresolved};
use crate::env::{EnvError, Environment};
use crate::trace::TraceLog;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentProfile {
    /// Chance that a typed text loses its last character or a select
    /// picks the neighbouring option.
    pub slip_rate: f64,
    /// Chance of trying a sensible fix (dismiss, scroll, wait) after a
    /// failed command before repeating it.
    pub recover_rate: f64,
    /// Chance of skipping a step when working from the bare task.
    pub omit_rate: f64,
}

impl Default for AgentProfile {
    fn default() -> Self {
        AgentProfile { slip_rate: 0.08, recover_rate: 0.5, omit_rate: 0.1 }
    }
}

impl AgentProfile {
    /// Does exactly what it is told and nothing else.
    pub fn literal() -> Self {
        AgentProfile { slip_rate: 0.0, recover_rate: 0.0, omit_rate: 0.0 }
    }
}

/// Result of carrying out one instruction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Performed {
    pub status: OutcomeStatus,
    pub message: String,
}

impl Performed {
    pub fn is_ok(&self) -> bool {
        self.status.is_ok()
    }
}

pub struct SimSurfer {
    profile: AgentProfile,
    rng: ChaCha8Rng,
}

impl SimSurfer {
    pub fn new(profile: AgentProfile, seed: u64) -> Self {
        SimSurfer { profile, rng: ChaCha8Rng::seed_from_u64(derive_seed(&[seed, tag_word("agent")])) }
    }

    pub fn profile(&self) -> AgentProfile {
        self.profile
    }

    pub fn omits(&mut self) -> bool {
        self.profile.omit_rate > 0.0 && self.rng.random::<f64>() < self.profile.omit_rate
    }

    fn slip(&mut self, cmd: &ActionCommand, snap: &PageSnapshot) -> ActionCommand {
        if self.profile.slip_rate <= 0.0 || self.rng.random::<f64>() >= self.profile.slip_rate {
            return cmd.clone();
        }
        match cmd {
            ActionCommand::TypeText { target, text } if text.chars().count() > 1 => {
                let mut t = text.clone();
                t.pop();
                ActionCommand::TypeText { target: target.clone(), text: t }
            }
            ActionCommand::Select { target, option } => {
                let Some(el) = snap.find_visible(target) else { return cmd.clone() };
                let Some(i) = el.options.iter().position(|o| o.eq_ignore_ascii_case(option)) else {
                    return cmd.clone();
                };
                let other = el.options[(i + 1) % el.options.len()].clone();
                ActionCommand::Select { target: target.clone(), option: other }
            }
            _ => cmd.clone(),
        }
    }

    /// A plausible corrective command for a failure, if the agent spots one.
    fn remedy(&mut self, cmd: &ActionCommand, out: &ActionOutcome) -> Option<ActionCommand> {
        if self.profile.recover_rate <= 0.0 || self.rng.random::<f64>() >= self.profile.recover_rate {
            return None;
        }
        let snap = &out.after;
        match &out.status {
            OutcomeStatus::Intercepted { overlay_id } => {
                let id = format!("{overlay_id}-dismiss");
                let el = snap.elements.iter().find(|e| e.element_id == id)?;
                Some(ActionCommand::Click { target: el.label.clone() })
            }
            OutcomeStatus::Timeout => Some(ActionCommand::CaptureState),
            OutcomeStatus::ElementNotFound => {
                let target = cmd.target()?;
                match snap.resolve(target) {
                    Err(Unresolved::OutOfView) => Some(ActionCommand::Scroll { direction: Direction::Down, amount: 1 }),
                    _ => None,
                }
            }
            _ => None,
        }
    }

    /// Runs one command: on failure, maybe fixes things, then repeats once.
    pub fn execute(&mut self, env: &mut dyn Environment, log: &mut TraceLog, cmd: &ActionCommand) -> Result<ActionOutcome, EnvError> {
        let noisy = self.slip(cmd, log.current());
        let out = log.apply(env, &noisy)?;
        if out.status.is_ok() || matches!(cmd, ActionCommand::Answer { .. } | ActionCommand::VisitUrl { .. }) {
            return Ok(out);
        }
        if let Some(fix) = self.remedy(cmd, &out) {
            log.apply(env, &fix)?;
        }
        let again = self.slip(cmd, log.current());
        log.apply(env, &again)
    }

    pub fn perform(&mut self, env: &mut dyn Environment, log: &mut TraceLog, instr: &Instruction) -> Result<Performed, EnvError> {
        match instr {
            Instruction::Command(cmd) => {
                let out = self.execute(env, log, cmd)?;
                Ok(Performed { status: out.status, message: out.message })
            }
            Instruction::AnswerFrom { answer_from } => {
                let read = self.execute(env, log, &ActionCommand::ReadText { target: answer_from.clone() })?;
                if !read.status.is_ok() {
                    return Ok(Performed { status: read.status, message: read.message });
                }
                let text = read.extracted.unwrap_or_default();
                let out = log.apply(env, &ActionCommand::Answer { text })?;
                Ok(Performed { status: out.status, message: out.message })
            }
        }
    }
}
