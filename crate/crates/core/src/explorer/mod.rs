//! Running tasks many times under a policy, and the ledgers that result.

pub mod variations;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{AgentProfile, SimSurfer};
use crate::digest::{content_id, derive_seed};
use crate::env::action::{parse_instructions, ActionCommand, Instruction};
use crate::env::page::OutcomeStatus;
use crate::env::sim::catalog;
use crate::env::{EnvError, EnvSpec, Environment};
use crate::gateway::Gateway;
use crate::judge::{judge_model, judge_sim, JudgeDecision};
use crate::runtime::machine::RunSetup;
use crate::runtime::{no_events, run_guarded, Outcome, RunPolicy, RunReport};
use crate::trace::{Label, RunArtifacts, RunRecord, TraceLog};
use crate::workflow::rewrite::bind;
use crate::workflow::{TaskSpec, VariationKind, WorkflowDoc};

pub use variations::{gen_variations, gen_variations_model, AbsentAxis, Variation, VariationError, Variations};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplorationConfig {
    pub runs_per_task: usize,
    pub max_steps_per_run: usize,
    /// Worker threads; 1 runs everything in order on the calling thread.
    pub parallelism: usize,
    pub base_seed: u64,
    pub agent: AgentProfile,
}

impl Default for ExplorationConfig {
    fn default() -> Self {
        ExplorationConfig { runs_per_task: 5, max_steps_per_run: 40, parallelism: 4, base_seed: 0, agent: AgentProfile::default() }
    }
}

impl ExplorationConfig {
    /// Seed of run `i` of task `j`.
    pub fn seed(&self, task_index: usize, run_index: usize) -> u64 {
        derive_seed(&[self.base_seed, task_index as u64, run_index as u64])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Policy {
    /// The agent works from the task text alone.
    TaskOnly,
    /// Replays a recorded command list verbatim; any failure aborts.
    TraceReplay { source_run: String, commands: Vec<ActionCommand> },
    /// Follows a step list with slots, without checks or fallbacks.
    PlanGuided { steps: Vec<String> },
    Guarded { workflow: Box<WorkflowDoc>, policy: RunPolicy },
}

impl Policy {
    pub fn name(&self) -> &'static str {
        match self {
            Policy::TaskOnly => "task_only",
            Policy::TraceReplay { .. } => "trace_replay",
            Policy::PlanGuided { .. } => "plan_guided",
            Policy::Guarded { .. } => "guarded",
        }
    }

    /// Replay policy from the successful commands of a recorded run.
    pub fn replay_of(run: &RunArtifacts) -> Policy {
        let commands = run
            .events()
            .iter()
            .filter(|e| e.status == OutcomeStatus::Ok)
            .map(|e| e.command.clone())
            .collect();
        Policy::TraceReplay { source_run: run.record.run_id.clone(), commands }
    }

    pub fn plan_of(workflow: &WorkflowDoc) -> Policy {
        Policy::PlanGuided { steps: workflow.units.iter().map(|u| u.action_text.clone()).collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PolicyError {
    #[error("no scripted solution for family {0}")]
    NoSolution(String),
    #[error("plan step can't be used: {0}")]
    BadPlan(String),
    #[error(transparent)]
    Env(#[from] EnvError),
}

#[derive(Debug, Clone)]
pub struct ExecuteOptions<'a> {
    pub max_steps: usize,
    pub agent: AgentProfile,
    pub gateway: &'a Gateway,
    pub env_spec: &'a EnvSpec,
}

pub fn run_id_for(task: &TaskSpec, policy: &str, seed: u64) -> String {
    let task_json = serde_json::to_string(task).expect("task serializes");
    content_id("run", &[policy, &task_json, &seed.to_string()])
}

fn record(run_id: String, task: &TaskSpec, policy: &Policy, seed: u64, log: &TraceLog) -> RunRecord {
    RunRecord {
        trace_ref: format!("families/{}/runs/{run_id}/trace.jsonl", task.family_id),
        run_id,
        task: task.clone(),
        variation: None,
        policy_name: policy.name().into(),
        seed,
        label: None,
        rationale: String::new(),
        abort_reason: None,
        answer: log.answer.clone(),
    }
}

fn bound_plan(steps: &[String], task: &TaskSpec) -> Result<Vec<Instruction>, PolicyError> {
    let mut out = vec![];
    for s in steps {
        let bound = crate::workflow::slots::bind_text(s, &task.bindings).map_err(|e| PolicyError::BadPlan(e.to_string()))?;
        out.extend(parse_instructions(&bound).map_err(|e| PolicyError::BadPlan(e.to_string()))?);
    }
    Ok(out)
}

/// Executes one run. The label is left unset for the judge.
pub fn execute_task(
    task: &TaskSpec,
    env: &mut dyn Environment,
    policy: &Policy,
    seed: u64,
    opts: &ExecuteOptions<'_>,
) -> Result<(RunArtifacts, Option<RunReport>), PolicyError> {
    let run_id = run_id_for(task, policy.name(), seed);
    if let Policy::Guarded { workflow, policy: run_policy } = policy {
        let setup = RunSetup {
            run_id: run_id.clone(),
            task: task.clone(),
            seed,
            env: opts.env_spec.clone(),
            policy: RunPolicy { pause_on_exhaustion: false, ..*run_policy },
            agent: opts.agent,
        };
        let mut sink = no_events();
        let run = run_guarded(setup, workflow, env, opts.gateway, &mut sink).map_err(|e| PolicyError::BadPlan(e.to_string()))?;
        let mut rec = record(run_id, task, policy, seed, &run.log);
        rec.answer = run.accepted_answer().map(str::to_string);
        let report = match run.outcome {
            Outcome::Finished(r) => r,
            Outcome::Paused { .. } => unreachable!("pausing is disabled for unattended runs"),
        };
        rec.abort_reason = report.abort_reason.clone();
        return Ok((RunArtifacts { record: rec, log: run.log }, Some(report)));
    }
    let initial = env.reset(seed)?;
    let mut log = TraceLog::start(initial);
    let mut agent = SimSurfer::new(opts.agent, seed);
    let mut abort = None;
    match policy {
        Policy::TaskOnly => {
            let family = catalog::family(&task.family_id).ok_or_else(|| PolicyError::NoSolution(task.family_id.clone()))?;
            for instr in family.solution_for(&task.bindings) {
                if log.events.len() >= opts.max_steps {
                    break;
                }
                if agent.omits() {
                    continue;
                }
                agent.perform(env, &mut log, &instr)?;
            }
        }
        Policy::PlanGuided { steps } => {
            for instr in bound_plan(steps, task)? {
                if log.events.len() >= opts.max_steps {
                    break;
                }
                agent.perform(env, &mut log, &instr)?;
            }
        }
        Policy::TraceReplay { source_run, commands } => {
            for cmd in commands {
                if log.events.len() >= opts.max_steps {
                    break;
                }
                let out = log.apply(env, cmd)?;
                if !out.status.is_ok() {
                    abort = Some(format!("replay of {source_run} diverged: {}", out.message));
                    break;
                }
            }
        }
        Policy::Guarded { .. } => unreachable!(),
    }
    let mut rec = record(run_id, task, policy, seed, &log);
    rec.abort_reason = abort;
    Ok((RunArtifacts { record: rec, log }, None))
}

/// How run outcomes are decided.
#[derive(Debug, Clone, Copy)]
pub enum JudgeMode<'a> {
    /// Site goal oracle; only for simulated sites.
    Oracle,
    Model(&'a Gateway),
}

/// Sets the label and rationale. Aborted runs stay aborted whatever the judge says.
pub fn judge_run(run: &mut RunArtifacts, mode: JudgeMode<'_>) -> JudgeDecision {
    let rec = &run.record;
    let decision = match mode {
        JudgeMode::Oracle => judge_sim(&rec.run_id, &rec.task, run.log.current(), rec.answer.as_deref()),
        JudgeMode::Model(gw) => {
            let finals: Vec<_> = run
                .log
                .final_refs(3)
                .iter()
                .filter_map(|r| run.log.snapshot(r))
                .map(crate::runtime::snapshot_image)
                .collect();
            judge_model(&rec.run_id, &rec.task.render(), &finals, rec.answer.as_deref(), gw)
        }
    }
    .unwrap_or_else(|e| JudgeDecision {
        run_id: rec.run_id.clone(),
        success: false,
        rationale: e.to_string(),
        judged_by: crate::judge::JudgedBy::Oracle,
    });
    let abort_reason = rec.abort_reason.clone();
    let label = match (&abort_reason, decision.success) {
        (Some(_), _) => Label::Aborted,
        (None, true) => Label::Success,
        (None, false) => Label::Failure,
    };
    run.record.label = Some(label);
    run.record.rationale = match &abort_reason {
        Some(reason) => format!("aborted: {reason}"),
        None => decision.rationale.clone(),
    };
    decision
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub task: TaskSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variation: Option<VariationKind>,
    pub successes: usize,
    pub failures: usize,
    pub aborted: usize,
    pub total: usize,
    pub run_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunLedger {
    pub family_id: String,
    pub rows: Vec<LedgerRow>,
    pub successful: Vec<String>,
    pub failed: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub absent_axes: Vec<AbsentAxis>,
}

impl RunLedger {
    pub fn total(&self) -> usize {
        self.rows.iter().map(|r| r.total).sum()
    }

    pub fn successes(&self) -> usize {
        self.rows.iter().map(|r| r.successes).sum()
    }

    /// Builds the ledger from labelled runs, grouped by task in first-seen order.
    pub fn from_runs(family_id: &str, runs: &[RunArtifacts], absent_axes: Vec<AbsentAxis>) -> Self {
        let mut rows: Vec<LedgerRow> = vec![];
        let (mut successful, mut failed) = (vec![], vec![]);
        for run in runs {
            let rec = &run.record;
            let row = match rows.iter().position(|r| r.task == rec.task) {
                Some(i) => &mut rows[i],
                None => {
                    rows.push(LedgerRow {
                        task: rec.task.clone(),
                        variation: rec.variation,
                        successes: 0,
                        failures: 0,
                        aborted: 0,
                        total: 0,
                        run_ids: vec![],
                    });
                    rows.last_mut().expect("just pushed")
                }
            };
            row.total += 1;
            row.run_ids.push(rec.run_id.clone());
            match rec.label {
                Some(Label::Success) => {
                    row.successes += 1;
                    successful.push(rec.run_id.clone());
                }
                Some(Label::Aborted) => {
                    row.aborted += 1;
                    failed.push(rec.run_id.clone());
                }
                _ => {
                    row.failures += 1;
                    failed.push(rec.run_id.clone());
                }
            }
        }
        RunLedger { family_id: family_id.to_string(), rows, successful, failed, absent_axes }
    }
}

#[derive(Debug, Clone)]
pub struct Exploration {
    pub ledger: RunLedger,
    pub runs: Vec<RunArtifacts>,
}

impl Exploration {
    pub fn run(&self, run_id: &str) -> Option<&RunArtifacts> {
        self.runs.iter().find(|r| r.record.run_id == run_id)
    }
}

/// Maps jobs in parallel (or in order when `parallelism` is 1), preserving order.
pub fn par_map<J: Sync, T: Send>(jobs: &[J], parallelism: usize, f: impl Fn(&J) -> T + Sync + Send) -> Vec<T> {
    if parallelism <= 1 {
        return jobs.iter().map(f).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(parallelism).build() {
        Ok(pool) => pool.install(|| jobs.par_iter().map(&f).collect()),
        Err(_) => jobs.iter().map(f).collect(),
    }
}

/// Executes the original task and its variations `runs_per_task` times each
/// with the task-only policy, judges every run and builds the ledger.
pub fn explore_family(
    original: &TaskSpec,
    variations: &Variations,
    config: &ExplorationConfig,
    env_spec: &EnvSpec,
    gateway: &Gateway,
    judge: JudgeMode<'_>,
) -> Exploration {
    let mut tasks: Vec<(Option<VariationKind>, TaskSpec)> = vec![(None, original.clone())];
    tasks.extend(variations.items.iter().map(|v| (Some(v.kind), v.task.clone())));
    let jobs: Vec<(usize, usize)> =
        (0..tasks.len()).flat_map(|j| (0..config.runs_per_task).map(move |i| (j, i))).collect();
    let opts = ExecuteOptions { max_steps: config.max_steps_per_run, agent: config.agent, gateway, env_spec };
    let results: Vec<RunArtifacts> = par_map(&jobs, config.parallelism, |&(j, i)| {
        let (variation, task) = &tasks[j];
        let seed = config.seed(j, i);
        let outcome = env_spec
            .open(&task.site)
            .map_err(PolicyError::from)
            .and_then(|mut env| {
                let r = execute_task(task, env.as_mut(), &Policy::TaskOnly, seed, &opts);
                env.close();
                r
            });
        let mut run = match outcome {
            Ok((run, _)) => run,
            Err(e) => failed_start(task, seed, &e.to_string()),
        };
        run.record.variation = *variation;
        judge_run(&mut run, judge);
        run
    });
    let ledger = RunLedger::from_runs(&original.family_id, &results, variations.absent.clone());
    Exploration { ledger, runs: results }
}

/// Record for a run whose environment could not even start.
pub fn failed_start(task: &TaskSpec, seed: u64, reason: &str) -> RunArtifacts {
    let run_id = run_id_for(task, "task_only", seed);
    let blank = crate::env::page::PageSnapshot {
        url: crate::env::sim::BLANK_URL.into(),
        title: String::new(),
        elements: vec![],
        overlays: vec![],
        screenshot_ref: String::new(),
        clock: 0,
    };
    let log = TraceLog::start(blank);
    let mut rec = record(run_id, task, &Policy::TaskOnly, seed, &log);
    rec.abort_reason = Some(reason.to_string());
    RunArtifacts { record: rec, log }
}

/// Groups runs by task text for quick lookups.
pub fn runs_by_task(runs: &[RunArtifacts]) -> BTreeMap<String, Vec<&RunArtifacts>> {
    let mut out: BTreeMap<String, Vec<&RunArtifacts>> = BTreeMap::new();
    for r in runs {
        out.entry(r.record.task.render()).or_default().push(r);
    }
    out
}

/// Binds a workflow for a task, as the plan-guided baseline sees it.
pub fn plan_text(workflow: &WorkflowDoc, task: &TaskSpec) -> Result<Vec<String>, PolicyError> {
    let doc = bind(workflow, &task.bindings).map_err(|e| PolicyError::BadPlan(e.to_string()))?;
    Ok(doc.units.iter().map(|u| u.action_text.clone()).collect())
}
