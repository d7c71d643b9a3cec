//! Operations shared by the command line and the HTTP service. Each one
//! loads from the store, calls into the engine and saves what it produced.

use std::fmt;
use std::path::PathBuf;

use guardweave_core::agent::AgentProfile;
use guardweave_core::bench::{run_bench, BenchConfig, BenchError, BenchOutcome};
use guardweave_core::digest::content_id;
use guardweave_core::env::sim::catalog;
use guardweave_core::env::EnvSpec;
use guardweave_core::explorer::{
    explore_family, gen_variations, gen_variations_model, ExplorationConfig, JudgeMode, RunLedger, VariationError, Variations,
};
use guardweave_core::gateway::Gateway;
use guardweave_core::runtime::machine::RunSetup;
use guardweave_core::runtime::{RunPolicy, RuntimeError};
use guardweave_core::session::SessionError;
use guardweave_core::store::{Store, StoreError};
use guardweave_core::synth::{synth_family, SynthError, SynthesisReport};
use guardweave_core::workflow::slots::Bindings;
use guardweave_core::workflow::{TaskSpec, WorkflowDoc};
use serde::{Deserialize, Serialize};

use crate::config::Config;

/// Error with a stable kind string; the service maps it to a status code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AppError {
    NotFound(String),
    Conflict { kind: String, message: String },
    Invalid { kind: String, message: String },
    Internal(String),
}

impl AppError {
    pub fn kind(&self) -> &str {
        match self {
            AppError::NotFound(_) => "NotFound",
            AppError::Conflict { kind, .. } | AppError::Invalid { kind, .. } => kind,
            AppError::Internal(_) => "Internal",
        }
    }

    pub fn invalid(kind: &str, message: impl fmt::Display) -> Self {
        AppError::Invalid { kind: kind.into(), message: message.to_string() }
    }

    pub fn message(&self) -> String {
        match self {
            AppError::NotFound(m) | AppError::Internal(m) => m.clone(),
            AppError::Conflict { message, .. } | AppError::Invalid { message, .. } => message.clone(),
        }
    }
}

impl fmt::Display for AppError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind(), self.message())
    }
}

impl std::error::Error for AppError {}

/// Name of an enum variant, from its `Debug` form.
fn variant<E: fmt::Debug>(e: &E) -> String {
    let d = format!("{e:?}");
    d.split(|c: char| !c.is_alphanumeric()).next().unwrap_or("Error").to_string()
}

impl From<StoreError> for AppError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NotFound(_) => AppError::NotFound(e.to_string()),
            _ => AppError::Internal(e.to_string()),
        }
    }
}

impl From<RuntimeError> for AppError {
    fn from(e: RuntimeError) -> Self {
        match e {
            RuntimeError::NotAwaitingGuidance | RuntimeError::VersionUnchanged(_) => {
                AppError::Conflict { kind: variant(&e), message: e.to_string() }
            }
            RuntimeError::Env(_) | RuntimeError::StaleCheckpoint(_) => AppError::Internal(e.to_string()),
            _ => AppError::Invalid { kind: variant(&e), message: e.to_string() },
        }
    }
}

impl From<SessionError> for AppError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::Store(e) => e.into(),
            SessionError::Runtime(e) => e.into(),
            SessionError::Guidance(e) => AppError::Invalid { kind: variant(&e), message: e.to_string() },
            SessionError::Env(e) => AppError::Internal(e.to_string()),
        }
    }
}

impl From<SynthError> for AppError {
    fn from(e: SynthError) -> Self {
        AppError::Invalid { kind: variant(&e), message: e.to_string() }
    }
}

impl From<VariationError> for AppError {
    fn from(e: VariationError) -> Self {
        AppError::Invalid { kind: variant(&e), message: e.to_string() }
    }
}

impl From<BenchError> for AppError {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::UnknownFamily(_) => AppError::NotFound(e.to_string()),
            BenchError::Report(_) => AppError::Invalid { kind: variant(&e), message: e.to_string() },
        }
    }
}

pub type AppResult<T> = Result<T, AppError>;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExploreParams {
    pub runs: Option<usize>,
    pub parallel: Option<usize>,
    pub seed: Option<u64>,
    pub max_steps: Option<usize>,
    pub env: Option<EnvSpec>,
    pub agent: Option<AgentProfile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExploreSummary {
    pub family_id: String,
    pub total: usize,
    pub successes: usize,
    pub ledger_path: PathBuf,
    pub ledger: RunLedger,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthSummary {
    pub family_id: String,
    pub workflow_id: String,
    pub version: u32,
    pub workflow_path: PathBuf,
    pub report: SynthesisReport,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunRequest {
    pub workflow_id: String,
    pub version: Option<u32>,
    pub bindings: Option<Bindings>,
    pub env: Option<EnvSpec>,
    pub policy: Option<RunPolicy>,
    pub seed: Option<u64>,
    pub agent: Option<AgentProfile>,
    pub run_id: Option<String>,
}

pub struct App {
    pub store: Store,
    pub gateway: Gateway,
    pub config: Config,
}

impl App {
    pub fn open(config: Config) -> anyhow::Result<Self> {
        let store = Store::open(&config.store_path)?;
        let gateway = config.gateway()?;
        Ok(App { store, gateway, config })
    }

    pub fn with_parts(store: Store, gateway: Gateway, config: Config) -> Self {
        App { store, gateway, config }
    }

    pub fn register_family(&self, task: &TaskSpec) -> AppResult<String> {
        let dangling = task.dangling_slots();
        if !dangling.is_empty() {
            return Err(AppError::invalid("UnboundSlot", format!("task has unbound slots: {}", dangling.join(", "))));
        }
        if task.family_id.is_empty() {
            return Err(AppError::invalid("MissingFamily", "task has no family_id"));
        }
        self.store.save_task(task)?;
        Ok(task.family_id.clone())
    }

    /// The stored task of a family, else the bundled family's original task.
    pub fn task(&self, family_id: &str) -> AppResult<TaskSpec> {
        match self.store.load_task(family_id) {
            Ok(t) => Ok(t),
            Err(StoreError::NotFound(_)) => match catalog::family(family_id) {
                Some(f) => {
                    let task = f.original_task();
                    self.store.save_task(&task)?;
                    Ok(task)
                }
                None => Err(AppError::NotFound(format!("no family {family_id}"))),
            },
            Err(e) => Err(e.into()),
        }
    }

    /// Bundled axes when the family has them, else the model's proposals.
    pub fn variations(&self, task: &TaskSpec) -> AppResult<Variations> {
        if catalog::family(&task.family_id).is_some() {
            Ok(gen_variations(task, None)?)
        } else {
            Ok(gen_variations_model(task, &self.gateway)?)
        }
    }

    pub fn explore(&self, family_id: &str, params: &ExploreParams) -> AppResult<ExploreSummary> {
        let task = self.task(family_id)?;
        let variations = self.variations(&task)?;
        let defaults = ExplorationConfig::default();
        let config = ExplorationConfig {
            runs_per_task: params.runs.unwrap_or(defaults.runs_per_task),
            max_steps_per_run: params.max_steps.unwrap_or(defaults.max_steps_per_run),
            parallelism: params.parallel.unwrap_or(self.config.parallelism),
            base_seed: params.seed.unwrap_or(defaults.base_seed),
            agent: params.agent.unwrap_or(defaults.agent),
        };
        let env = params.env.clone().unwrap_or_default();
        let judge = if env.is_sim() && catalog::site(&task.site).is_some() {
            JudgeMode::Oracle
        } else {
            JudgeMode::Model(&self.gateway)
        };
        let ex = explore_family(&task, &variations, &config, &env, &self.gateway, judge);
        for run in &ex.runs {
            self.store.save_run(run)?;
        }
        let ledger_path = self.store.save_ledger(&ex.ledger)?;
        Ok(ExploreSummary {
            family_id: family_id.to_string(),
            total: ex.ledger.total(),
            successes: ex.ledger.successes(),
            ledger_path,
            ledger: ex.ledger,
        })
    }

    pub fn synthesize(&self, family_id: &str) -> AppResult<SynthSummary> {
        let (ledger, runs) = self.store.load_exploration(family_id)?;
        let synthesis = synth_family(&ledger, &runs)?;
        self.store.save_synthesis_report(&synthesis.report)?;
        let workflow_path = self.store.save_workflow(&synthesis.workflow)?;
        Ok(SynthSummary {
            family_id: family_id.to_string(),
            workflow_id: synthesis.workflow.workflow_id.clone(),
            version: synthesis.workflow.version,
            workflow_path,
            report: synthesis.report,
        })
    }

    pub fn workflow(&self, workflow_id: &str, version: Option<u32>) -> AppResult<WorkflowDoc> {
        Ok(self.store.load_workflow(workflow_id, version)?)
    }

    /// Resolves a run request into a setup and the workflow it will follow.
    /// `in_use` reports ids taken by runs that have not stored anything yet.
    pub fn prepare_run(&self, req: &RunRequest, in_use: &dyn Fn(&str) -> bool) -> AppResult<(RunSetup, WorkflowDoc)> {
        let run_exists = |id: &str| in_use(id) || self.store.load_checkpoint(id).is_ok() || self.store.load_run_report(id).is_ok();
        let workflow = self.workflow(&req.workflow_id, req.version)?;
        let mut task = self.task(&workflow.family_id)?;
        if let Some(b) = &req.bindings {
            task.bindings.extend(b.iter().map(|(k, v)| (k.clone(), v.clone())));
            if let Some(site) = b.get("website") {
                task.site = site.clone();
            }
        }
        let dangling = task.dangling_slots();
        if !dangling.is_empty() {
            return Err(AppError::invalid("UnboundSlot", format!("task has unbound slots: {}", dangling.join(", "))));
        }
        let seed = req.seed.unwrap_or(0);
        let env = req.env.clone().unwrap_or_default();
        let policy = req.policy.unwrap_or_default();
        let run_id = match &req.run_id {
            Some(id) if run_exists(id) => {
                return Err(AppError::Conflict { kind: "RunExists".into(), message: format!("run {id} already exists") })
            }
            Some(id) => id.clone(),
            None => {
                let parts = [
                    workflow.workflow_id.clone(),
                    workflow.version.to_string(),
                    serde_json::to_string(&task).expect("task serializes"),
                    seed.to_string(),
                    serde_json::to_string(&env).expect("env serializes"),
                    serde_json::to_string(&policy).expect("policy serializes"),
                ];
                let refs: Vec<&str> = parts.iter().map(String::as_str).collect();
                let base = content_id("grun", &refs);
                let mut id = base.clone();
                let mut n = 2;
                while run_exists(&id) {
                    id = format!("{base}-{n}");
                    n += 1;
                }
                id
            }
        };
        let setup = RunSetup { run_id, task, seed, env, policy, agent: req.agent.unwrap_or_default() };
        Ok((setup, workflow))
    }

    pub fn bench(&self, bench_id: &str, config: &BenchConfig) -> AppResult<(BenchOutcome, PathBuf)> {
        let outcome = run_bench(bench_id, config, &self.gateway)?;
        let path = self.store.save_bench_report(&outcome.report)?;
        Ok((outcome, path))
    }
}
