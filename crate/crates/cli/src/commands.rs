//! Command-line interface.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use guardweave_core::agent::AgentProfile;
use guardweave_core::bench::BenchConfig;
use guardweave_core::env::adapter::AdapterSpec;
use guardweave_core::env::sim::catalog;
use guardweave_core::env::EnvSpec;
use guardweave_core::runtime::{Outcome, RunEvent, RunPolicy, UserNotification};
use guardweave_core::session::{self, EventEnvelope};
use guardweave_core::workflow::format;
use guardweave_core::workflow::slots::Bindings;
use guardweave_core::workflow::TaskSpec;
use serde_json::{json, Value};

use crate::app::{App, AppError, ExploreParams, RunRequest};
use crate::config::{Config, Overrides};
use crate::service::{serve, Service};

#[derive(Debug, Parser)]
#[command(name = "guardweave", version, about = "Explore web tasks, synthesize guarded workflows and run them")]
pub struct Cli {
    /// Config file; defaults to ./guardweave.toml when present.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub store: Option<PathBuf>,
    /// scripted[:script.json], replay:<cassette>, record:<cassette> or remote.
    #[arg(long, global = true)]
    pub backend: Option<String>,
    #[arg(long, global = true)]
    pub model_api_base: Option<String>,
    /// Print results as JSON.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct EnvArgs {
    /// sim:<site> or adapter:<http-url | command line>.
    #[arg(long)]
    pub env: Option<String>,
    /// Turn off the site's own fault injection.
    #[arg(long)]
    pub no_faults: bool,
    /// An agent that never slips, omits or improvises.
    #[arg(long)]
    pub literal: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the original task of a bundled family.
    Task { family: String },
    /// List the variations of a task.
    Variations { task_file: PathBuf },
    /// Run the task and its variations and record a labelled ledger.
    Explore {
        task_file: PathBuf,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        parallel: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        max_steps: Option<usize>,
        #[command(flatten)]
        env: EnvArgs,
    },
    /// Build a workflow from a family's exploration.
    Synth { family: String },
    /// Execute a workflow under the guarded runtime.
    Run {
        workflow_file: PathBuf,
        /// JSON object of slot values.
        #[arg(long)]
        bindings: Option<PathBuf>,
        /// JSON run policy file.
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long)]
        max_retries: Option<u32>,
        /// Abort instead of pausing for guidance.
        #[arg(long)]
        no_pause: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        run_id: Option<String>,
        #[command(flatten)]
        env: EnvArgs,
    },
    /// Give guidance to a paused run.
    Guide {
        run_id: String,
        text: String,
        #[arg(long)]
        unit: Option<usize>,
        /// Only record the new workflow version.
        #[arg(long)]
        no_resume: bool,
    },
    /// Resume a paused run with the newest workflow version.
    Resume {
        run_id: String,
        #[arg(long)]
        force: bool,
    },
    /// End a paused run without guidance.
    Decline { run_id: String },
    /// Show where a guarded run stands.
    Status { run_id: String },
    /// Run the four-condition benchmark described by a grid file.
    Bench {
        grid_file: PathBuf,
        /// Report id; defaults to the grid file's stem.
        #[arg(long)]
        id: Option<String>,
    },
    /// Start the HTTP service.
    Serve {
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        no_auto_resume: bool,
    },
    /// Serve a simulated site over the adapter protocol.
    Adapter {
        #[arg(long, default_value = "skyfare.sim")]
        site: String,
        /// Listen on this address instead of stdio.
        #[arg(long)]
        http: Option<SocketAddr>,
        #[arg(long)]
        no_faults: bool,
    },
}

/// What a command produced: a JSON value and its human rendering.
pub struct Output {
    pub json: Value,
    pub text: String,
}

fn out(json: Value, text: impl Into<String>) -> Output {
    Output { json, text: text.into() }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| anyhow!("{}: {e}", path.display()))
}

pub fn parse_env(arg: &EnvArgs, task: Option<&mut TaskSpec>) -> anyhow::Result<EnvSpec> {
    let mut spec = if arg.no_faults { EnvSpec::fault_free() } else { EnvSpec::default() };
    match arg.env.as_deref().map(|e| e.split_once(':').unwrap_or((e, ""))) {
        None => {}
        Some(("sim", site)) => {
            if catalog::site(site).is_none() {
                bail!("unknown simulated site {site:?}; bundled: {}", catalog::site_ids().join(", "));
            }
            if let Some(task) = task {
                task.site = site.to_string();
                if task.bindings.contains_key("website") {
                    task.bindings.insert("website".into(), site.to_string());
                }
            }
        }
        Some(("adapter", addr)) if addr.starts_with("http://") || addr.starts_with("https://") => {
            spec.adapter = Some(AdapterSpec::Http { url: addr.to_string() });
        }
        Some(("adapter", cmd)) if !cmd.trim().is_empty() => {
            let mut words = cmd.split_whitespace().map(str::to_string);
            let command = words.next().expect("non-empty command");
            spec.adapter = Some(AdapterSpec::Stdio { command, args: words.collect() });
        }
        Some(_) => bail!("--env must be sim:<site> or adapter:<address>"),
    }
    Ok(spec)
}

fn agent(arg: &EnvArgs) -> AgentProfile {
    if arg.literal {
        AgentProfile::literal()
    } else {
        AgentProfile::default()
    }
}

pub fn render_notification(n: &UserNotification) -> String {
    let mut s = format!("Run {} paused at unit {}: {}\n", n.run_id, n.where_.unit, n.where_.action);
    if let Some(c) = &n.where_.check_id {
        s += &format!("  check: {c}\n");
    }
    s += &format!("Why:  {}\nWhat: {}\nHow:\n", n.why, n.what);
    for h in &n.how {
        s += &format!("  - {h}\n");
    }
    s
}

fn event_text(e: &EventEnvelope) -> Option<String> {
    match &e.event {
        RunEvent::UnitStarted { unit, action_text } => Some(format!("[{unit}] {action_text}")),
        RunEvent::CheckEvaluated { unit, verdict } if !verdict.passed => {
            Some(format!("[{unit}]   check {} failed: {}", verdict.check_id, verdict.explanation))
        }
        RunEvent::RetryStarted { unit, attempt, nl_text, .. } => {
            Some(format!("[{unit}]   retry {attempt}{}", nl_text.as_ref().map(|t| format!(": {t}")).unwrap_or_default()))
        }
        RunEvent::Resumed { unit, version } => Some(format!("[{unit}] resumed with workflow version {version}")),
        RunEvent::Finished { outcome } => Some(format!("finished: {outcome:?}")),
        _ => None,
    }
}

fn outcome_output(run_id: &str, outcome: &Outcome) -> Output {
    match outcome {
        Outcome::Finished(r) => {
            let mut text = format!("Run {run_id}: {:?}", r.outcome);
            if let Some(a) = &r.answer {
                text += &format!("\nAnswer: {a}");
            }
            if let Some(why) = &r.abort_reason {
                text += &format!("\nReason: {why}");
            }
            out(json!({"run_id": run_id, "outcome": outcome}), text)
        }
        Outcome::Paused { notification, .. } => {
            let text = format!(
                "{}\nReply with: guardweave guide {run_id} \"<what to do>\"",
                render_notification(notification).trim_end()
            );
            out(json!({"run_id": run_id, "outcome": outcome}), text)
        }
    }
}

/// Prints progress lines unless the output is JSON.
fn progress(json: bool) -> impl FnMut(&EventEnvelope) {
    move |e| {
        if !json {
            if let Some(t) = event_text(e) {
                eprintln!("{t}");
            }
        }
    }
}

pub fn execute(cli: Cli) -> anyhow::Result<Output> {
    let mut flags = Overrides { store_path: cli.store.clone(), backend: cli.backend.clone(), model_api_base: cli.model_api_base.clone(), ..Default::default() };
    if let Command::Serve { port, no_auto_resume } = &cli.command {
        flags.port = *port;
        if *no_auto_resume {
            flags.auto_resume = Some(false);
        }
    }
    let config = Config::load(cli.config.as_deref(), flags)?;
    let json = cli.json;
    match cli.command {
        Command::Task { family } => {
            let f = catalog::family(&family).ok_or_else(|| AppError::NotFound(format!("no bundled family {family}")))?;
            let task = f.original_task();
            let text = serde_json::to_string_pretty(&task)?;
            Ok(out(serde_json::to_value(&task)?, text))
        }
        Command::Variations { task_file } => {
            let task: TaskSpec = read_json(&task_file)?;
            let app = App::open(config)?;
            let v = app.variations(&task)?;
            let mut text = String::new();
            for item in &v.items {
                text += &format!("{:<10} <{}> {}\n", item.kind.as_str(), item.slot, item.task.render());
            }
            for a in &v.absent {
                text += &format!("{:<10} absent: {}\n", a.kind.as_str(), a.reason);
            }
            Ok(out(serde_json::to_value(&v)?, text.trim_end()))
        }
        Command::Explore { task_file, runs, parallel, seed, max_steps, env } => {
            let mut task: TaskSpec = read_json(&task_file)?;
            let spec = parse_env(&env, Some(&mut task))?;
            let app = App::open(config)?;
            let family = app.register_family(&task)?;
            let params = ExploreParams { runs, parallel, seed, max_steps, env: Some(spec), agent: Some(agent(&env)) };
            let s = app.explore(&family, &params)?;
            let text = format!("{}\n{} runs, {} successful", s.ledger_path.display(), s.total, s.successes);
            Ok(out(serde_json::to_value(&s)?, text))
        }
        Command::Synth { family } => {
            let app = App::open(config)?;
            let s = app.synthesize(&family)?;
            let text = format!(
                "{}\nworkflow {} v{}: {} findings, {} recoveries",
                s.workflow_path.display(),
                s.workflow_id,
                s.version,
                s.report.findings.len(),
                s.report.recoveries.len()
            );
            Ok(out(serde_json::to_value(&s)?, text))
        }
        Command::Run { workflow_file, bindings, policy, max_retries, no_pause, seed, run_id, env } => {
            let bytes = std::fs::read(&workflow_file).with_context(|| format!("reading {}", workflow_file.display()))?;
            let doc = format::parse(&bytes)?;
            let bindings: Option<Bindings> = bindings.as_deref().map(read_json).transpose()?;
            let mut policy: RunPolicy = policy.as_deref().map(read_json).transpose()?.unwrap_or_default();
            if let Some(n) = max_retries {
                policy.max_retries = n;
            }
            if no_pause {
                policy.pause_on_exhaustion = false;
            }
            let app = App::open(config)?;
            if app.store.load_workflow(&doc.workflow_id, Some(doc.version)).is_err() {
                app.store.save_workflow(&doc)?;
            }
            let mut task = app.task(&doc.family_id)?;
            let spec = parse_env(&env, Some(&mut task))?;
            let mut b = bindings.unwrap_or_default();
            if task.site != app.task(&doc.family_id)?.site {
                b.entry("website".into()).or_insert(task.site.clone());
            }
            let req = RunRequest {
                workflow_id: doc.workflow_id.clone(),
                version: Some(doc.version),
                bindings: Some(b),
                env: Some(spec),
                policy: Some(policy),
                seed: Some(seed),
                agent: Some(agent(&env)),
                run_id,
            };
            let (setup, workflow) = app.prepare_run(&req, &|_| false)?;
            let id = setup.run_id.clone();
            let outcome = session::start(&app.store, setup, &workflow, &app.gateway, &mut progress(json)).map_err(AppError::from)?;
            Ok(outcome_output(&id, &outcome))
        }
        Command::Guide { run_id, text, unit, no_resume } => {
            let app = App::open(config)?;
            let (doc, note) = session::guide(&app.store, &run_id, &text, unit, &app.gateway, &mut progress(json)).map_err(AppError::from)?;
            let mut summary = format!("workflow {} is now v{} ({} new items)", doc.workflow_id, doc.version, note.parsed_into.len());
            let mut value = json!({"workflow_id": doc.workflow_id, "version": doc.version, "note": note});
            if !no_resume && app.config.auto_resume {
                let outcome = session::resume_run(&app.store, &run_id, false, &app.gateway, &mut progress(json)).map_err(AppError::from)?;
                let o = outcome_output(&run_id, &outcome);
                summary = format!("{summary}\n{}", o.text);
                value["resumed"] = o.json;
            }
            Ok(out(value, summary))
        }
        Command::Resume { run_id, force } => {
            let app = App::open(config)?;
            let outcome = session::resume_run(&app.store, &run_id, force, &app.gateway, &mut progress(json)).map_err(AppError::from)?;
            Ok(outcome_output(&run_id, &outcome))
        }
        Command::Decline { run_id } => {
            let app = App::open(config)?;
            let report = session::decline_run(&app.store, &run_id, &mut progress(json)).map_err(AppError::from)?;
            Ok(out(serde_json::to_value(&report)?, format!("Run {run_id}: {:?}", report.outcome)))
        }
        Command::Status { run_id } => {
            let app = App::open(config)?;
            let st = session::status(&app.store, &run_id).map_err(AppError::from)?;
            let mut text = format!("Run {run_id}: {:?} (workflow {} v{})", st.state, st.workflow_id, st.version);
            if let Ok(n) = app.store.load_notification(&run_id) {
                if st.unit.is_some() {
                    text = format!("{text}\n{}", render_notification(&n).trim_end());
                }
            }
            Ok(out(serde_json::to_value(&st)?, text))
        }
        Command::Bench { grid_file, id } => {
            let grid: BenchConfig = read_json(&grid_file)?;
            let bench_id = id.unwrap_or_else(|| grid_file.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "bench".into()));
            let app = App::open(config)?;
            let (outcome, path) = app.bench(&bench_id, &grid)?;
            let text = format!("{}\n{}", path.display(), outcome.report.markdown().trim_end());
            Ok(out(json!({"bench_id": bench_id, "path": path, "report": outcome.report}), text))
        }
        Command::Serve { .. } => {
            let addr = SocketAddr::from(([127, 0, 0, 1], config.port));
            let app = App::open(config)?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(serve(Service::new(app), addr))?;
            Ok(out(json!({"stopped": true}), "stopped"))
        }
        Command::Adapter { site, http, no_faults } => {
            match http {
                Some(addr) => tokio::runtime::Runtime::new()?.block_on(crate::adapter::serve_http(&site, !no_faults, addr))?,
                None => crate::adapter::serve_stdio(&site, !no_faults)?,
            }
            Ok(out(Value::Null, ""))
        }
    }
}

/// Kind and message of an error for display and JSON output.
pub fn describe(e: &anyhow::Error) -> (String, String) {
    match e.downcast_ref::<AppError>() {
        Some(a) => (a.kind().to_string(), a.message()),
        None => ("Error".to_string(), format!("{e:#}")),
    }
}
