//! The four-condition benchmark: explore, synthesize, then run every
//! condition over the same (task, seed) grid.

use serde::{Deserialize, Serialize};

use crate::digest::{derive_seed, tag_word};
use crate::env::sim::catalog;
use crate::env::EnvSpec;
use crate::explorer::{
    execute_task, explore_family, failed_start, gen_variations, judge_run, par_map, ExecuteOptions, Exploration,
    ExplorationConfig, JudgeMode, Policy, PolicyError,
};
use crate::gateway::Gateway;
use crate::judge::report::{bench_report, BenchReport, CellRuns, ReportError, RunOutcome, CONDITIONS};
use crate::runtime::{RunPolicy, RunReport};
use crate::synth::{synth_family, Synthesis, SynthError};
use crate::trace::{Label, RunArtifacts};
use crate::workflow::{TaskSpec, VariationKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    /// Families to run; empty means every bundled family.
    pub families: Vec<String>,
    pub seeds_per_task: usize,
    pub base_seed: u64,
    pub exploration: ExplorationConfig,
    pub env: EnvSpec,
    pub policy: RunPolicy,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            families: vec![],
            seeds_per_task: 10,
            base_seed: 0,
            exploration: ExplorationConfig { runs_per_task: 10, ..ExplorationConfig::default() },
            env: EnvSpec::default(),
            policy: RunPolicy::default(),
        }
    }
}

impl BenchConfig {
    /// Evaluation seeds never coincide with exploration seeds.
    pub fn seed(&self, task_index: usize, run_index: usize) -> u64 {
        derive_seed(&[self.base_seed, tag_word("bench"), task_index as u64, run_index as u64])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BenchError {
    #[error("unknown family {0}")]
    UnknownFamily(String),
    #[error(transparent)]
    Report(#[from] ReportError),
}

#[derive(Debug)]
pub struct FamilyBench {
    pub family_id: String,
    pub exploration: Exploration,
    pub synthesis: Result<Synthesis, SynthError>,
    /// Every evaluation run, grouped by condition in table order.
    pub runs: Vec<(String, Vec<RunArtifacts>)>,
    /// Execution reports of the guarded runs that got started.
    pub reports: Vec<RunReport>,
}

#[derive(Debug)]
pub struct BenchOutcome {
    pub report: BenchReport,
    pub families: Vec<FamilyBench>,
}

impl BenchOutcome {
    pub fn cells(&self) -> Vec<CellRuns> {
        self.families
            .iter()
            .flat_map(|f| {
                f.runs.iter().map(|(cond, runs)| CellRuns {
                    family: f.family_id.clone(),
                    condition: cond.clone(),
                    runs: runs.iter().map(outcome_of).collect(),
                })
            })
            .collect()
    }
}

fn outcome_of(run: &RunArtifacts) -> RunOutcome {
    RunOutcome { task: run.record.task.render(), seed: run.record.seed, success: run.record.label == Some(Label::Success) }
}

/// Shortest successful exploration run for this task, else for the family.
fn replay_source<'a>(exploration: &'a Exploration, task: &TaskSpec) -> Option<&'a RunArtifacts> {
    let ok = |r: &&RunArtifacts| r.record.label == Some(Label::Success);
    let shortest = |it: Vec<&'a RunArtifacts>| it.into_iter().min_by_key(|r| r.log.events.len());
    shortest(exploration.runs.iter().filter(ok).filter(|r| r.record.task == *task).collect())
        .or_else(|| shortest(exploration.runs.iter().filter(ok).collect()))
}

fn policy_for(condition: &str, task: &TaskSpec, exploration: &Exploration, synthesis: &Result<Synthesis, SynthError>, run_policy: RunPolicy) -> Result<Policy, String> {
    match condition {
        "task_only" => Ok(Policy::TaskOnly),
        "trace_replay" => replay_source(exploration, task).map(Policy::replay_of).ok_or_else(|| "no successful run to replay".to_string()),
        "plan_guided" => synthesis.as_ref().map(|s| Policy::plan_of(&s.workflow)).map_err(|e| e.to_string()),
        _ => synthesis
            .as_ref()
            .map(|s| Policy::Guarded { workflow: Box::new(s.workflow.clone()), policy: run_policy })
            .map_err(|e| e.to_string()),
    }
}

pub fn bench_family(family_id: &str, config: &BenchConfig, gateway: &Gateway) -> Result<FamilyBench, BenchError> {
    let family = catalog::family(family_id).ok_or_else(|| BenchError::UnknownFamily(family_id.to_string()))?;
    let original = family.original_task();
    let variations = gen_variations(&original, None).map_err(|_| BenchError::UnknownFamily(family_id.to_string()))?;
    let exploration = explore_family(&original, &variations, &config.exploration, &config.env, gateway, JudgeMode::Oracle);
    let synthesis = synth_family(&exploration.ledger, &exploration.runs);
    let mut tasks: Vec<(Option<VariationKind>, TaskSpec)> = vec![(None, original.clone())];
    tasks.extend(variations.items.iter().map(|v| (Some(v.kind), v.task.clone())));
    let opts = ExecuteOptions {
        max_steps: config.exploration.max_steps_per_run,
        agent: config.exploration.agent,
        gateway,
        env_spec: &config.env,
    };
    let mut runs = vec![];
    let mut reports = vec![];
    for condition in CONDITIONS {
        let jobs: Vec<(usize, usize)> = (0..tasks.len()).flat_map(|j| (0..config.seeds_per_task).map(move |i| (j, i))).collect();
        let done = par_map(&jobs, config.exploration.parallelism, |&(j, i)| {
            let (variation, task) = &tasks[j];
            let seed = config.seed(j, i);
            let outcome = policy_for(condition, task, &exploration, &synthesis, config.policy).and_then(|policy| {
                config
                    .env
                    .open(&task.site)
                    .map_err(PolicyError::from)
                    .and_then(|mut env| {
                        let r = execute_task(task, env.as_mut(), &policy, seed, &opts);
                        env.close();
                        r
                    })
                    .map_err(|e| e.to_string())
            });
            let (mut run, report) = match outcome {
                Ok(pair) => pair,
                Err(reason) => {
                    let mut r = failed_start(task, seed, &reason);
                    r.record.policy_name = condition.to_string();
                    (r, None)
                }
            };
            run.record.variation = *variation;
            judge_run(&mut run, JudgeMode::Oracle);
            (run, report)
        });
        let (done, done_reports): (Vec<_>, Vec<_>) = done.into_iter().unzip();
        reports.extend(done_reports.into_iter().flatten());
        runs.push((condition.to_string(), done));
    }
    Ok(FamilyBench { family_id: family_id.to_string(), exploration, synthesis, runs, reports })
}

pub fn run_bench(bench_id: &str, config: &BenchConfig, gateway: &Gateway) -> Result<BenchOutcome, BenchError> {
    let ids: Vec<String> = if config.families.is_empty() {
        catalog::families().iter().map(|f| f.family_id.clone()).collect()
    } else {
        config.families.clone()
    };
    let families = ids.iter().map(|id| bench_family(id, config, gateway)).collect::<Result<Vec<_>, _>>()?;
    let mut outcome = BenchOutcome { report: bench_report(bench_id, &[])?, families };
    outcome.report = bench_report(bench_id, &outcome.cells())?;
    Ok(outcome)
}
