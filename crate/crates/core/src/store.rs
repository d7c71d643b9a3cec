//! Plain-file artifact store. Every write goes to a temporary file first and
//! is renamed into place.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::env::screenshot::render_png;
use crate::explorer::RunLedger;
use crate::judge::report::BenchReport;
use crate::runtime::{Checkpoint, RunReport, UserNotification};
use crate::synth::SynthesisReport;
use crate::trace::{ActionEvent, RunArtifacts, RunRecord, TraceLog};
use crate::workflow::format::{parse, serialize};
use crate::workflow::{TaskSpec, WorkflowDoc};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("not found: {0}")]
    NotFound(String),
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> StoreError {
    StoreError::Io { path: path.display().to_string(), message: e.to_string() }
}

fn parse_err(path: &Path, e: impl std::fmt::Display) -> StoreError {
    StoreError::Parse { path: path.display().to_string(), message: e.to_string() }
}

/// Stored alongside `run.json` so a trace can be rebuilt exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct TraceMeta {
    initial: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
    /// Also write a PNG next to every stored snapshot.
    pub screenshots: bool,
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| io_err(&root, e))?;
        Ok(Store { root, screenshots: true })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write_atomic(&self, rel: impl AsRef<Path>, bytes: &[u8]) -> Result<PathBuf, StoreError> {
        let path = self.root.join(rel);
        let dir = path.parent().expect("store paths have a parent");
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("file");
        static NEXT: AtomicU64 = AtomicU64::new(0);
        let tmp = dir.join(format!(".{name}.{}.{}.tmp", std::process::id(), NEXT.fetch_add(1, Ordering::Relaxed)));
        let mut f = fs::File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
        f.write_all(bytes).and_then(|_| f.sync_all()).map_err(|e| io_err(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| io_err(&path, e))?;
        Ok(path)
    }

    fn write_json<T: Serialize>(&self, rel: impl AsRef<Path>, value: &T) -> Result<PathBuf, StoreError> {
        let mut bytes = serde_json::to_vec_pretty(value).expect("artifact serializes");
        bytes.push(b'\n');
        self.write_atomic(rel, &bytes)
    }

    fn read(&self, rel: impl AsRef<Path>) -> Result<Vec<u8>, StoreError> {
        let path = self.root.join(rel);
        match fs::read(&path) {
            Ok(b) => Ok(b),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(StoreError::NotFound(path.display().to_string())),
            Err(e) => Err(io_err(&path, e)),
        }
    }

    fn read_json<T: DeserializeOwned>(&self, rel: impl AsRef<Path>) -> Result<T, StoreError> {
        let rel = rel.as_ref();
        let bytes = self.read(rel)?;
        serde_json::from_slice(&bytes).map_err(|e| parse_err(&self.root.join(rel), e))
    }

    fn list_dirs(&self, rel: impl AsRef<Path>) -> Vec<String> {
        let Ok(rd) = fs::read_dir(self.root.join(rel)) else { return vec![] };
        let mut out: Vec<String> = rd
            .filter_map(Result::ok)
            .filter(|e| e.path().is_dir())
            .filter_map(|e| e.file_name().to_str().map(str::to_string))
            .collect();
        out.sort();
        out
    }

    fn family_dir(family: &str) -> PathBuf {
        PathBuf::from("families").join(family)
    }

    fn run_dir(family: &str, run_id: &str) -> PathBuf {
        Self::family_dir(family).join("runs").join(run_id)
    }

    pub fn save_task(&self, task: &TaskSpec) -> Result<PathBuf, StoreError> {
        self.write_json(Self::family_dir(&task.family_id).join("task.json"), task)
    }

    pub fn load_task(&self, family: &str) -> Result<TaskSpec, StoreError> {
        self.read_json(Self::family_dir(family).join("task.json"))
    }

    pub fn families(&self) -> Vec<String> {
        self.list_dirs("families")
    }

    pub fn save_run(&self, run: &RunArtifacts) -> Result<PathBuf, StoreError> {
        let dir = Self::run_dir(&run.record.task.family_id, &run.record.run_id);
        let mut trace = Vec::new();
        for ev in &run.log.events {
            serde_json::to_writer(&mut trace, ev).expect("event serializes");
            trace.push(b'\n');
        }
        self.write_atomic(dir.join("trace.jsonl"), &trace)?;
        for (r, snap) in &run.log.snapshots {
            let json = dir.join("snapshots").join(format!("{r}.json"));
            if !self.root.join(&json).exists() {
                self.write_atomic(&json, snap.canonical_json().as_bytes())?;
            }
            if self.screenshots {
                let png = dir.join("snapshots").join(format!("{r}.png"));
                if !self.root.join(&png).exists() {
                    self.write_atomic(&png, &render_png(snap))?;
                }
            }
        }
        self.write_json(dir.join("trace_meta.json"), &TraceMeta { initial: run.log.initial_ref() })?;
        self.write_json(dir.join("run.json"), &run.record)
    }

    pub fn load_run(&self, family: &str, run_id: &str) -> Result<RunArtifacts, StoreError> {
        let dir = Self::run_dir(family, run_id);
        let record: RunRecord = self.read_json(dir.join("run.json"))?;
        let trace_path = dir.join("trace.jsonl");
        let text = String::from_utf8(self.read(&trace_path)?).map_err(|e| parse_err(&trace_path, e))?;
        let mut events: Vec<ActionEvent> = vec![];
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            events.push(serde_json::from_str(line).map_err(|e| parse_err(&self.root.join(&trace_path), e))?);
        }
        let meta: TraceMeta = self.read_json(dir.join("trace_meta.json"))?;
        let mut snapshots = BTreeMap::new();
        let snap_dir = self.root.join(&dir).join("snapshots");
        if let Ok(rd) = fs::read_dir(&snap_dir) {
            for entry in rd.filter_map(Result::ok) {
                let p = entry.path();
                if p.extension().and_then(|e| e.to_str()) != Some("json") {
                    continue;
                }
                let bytes = fs::read(&p).map_err(|e| io_err(&p, e))?;
                let snap = serde_json::from_slice(&bytes).map_err(|e| parse_err(&p, e))?;
                let r = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
                snapshots.insert(r, snap);
            }
        }
        let log = TraceLog::from_parts(events, snapshots, meta.initial, record.answer.clone())
            .ok_or_else(|| parse_err(&self.root.join(&dir), "trace refers to a missing snapshot"))?;
        Ok(RunArtifacts { record, log })
    }

    pub fn run_ids(&self, family: &str) -> Vec<String> {
        self.list_dirs(Self::family_dir(family).join("runs"))
    }

    pub fn save_ledger(&self, ledger: &RunLedger) -> Result<PathBuf, StoreError> {
        self.write_json(Self::family_dir(&ledger.family_id).join("ledger.json"), ledger)
    }

    pub fn load_ledger(&self, family: &str) -> Result<RunLedger, StoreError> {
        self.read_json(Self::family_dir(family).join("ledger.json"))
    }

    /// The ledger and every run it lists.
    pub fn load_exploration(&self, family: &str) -> Result<(RunLedger, Vec<RunArtifacts>), StoreError> {
        let ledger = self.load_ledger(family)?;
        let runs = ledger
            .rows
            .iter()
            .flat_map(|r| r.run_ids.iter())
            .map(|id| self.load_run(family, id))
            .collect::<Result<Vec<_>, _>>()?;
        Ok((ledger, runs))
    }

    pub fn save_synthesis_report(&self, report: &SynthesisReport) -> Result<PathBuf, StoreError> {
        self.write_json(Self::family_dir(&report.family_id).join("synthesis_report.json"), report)
    }

    pub fn load_synthesis_report(&self, family: &str) -> Result<SynthesisReport, StoreError> {
        self.read_json(Self::family_dir(family).join("synthesis_report.json"))
    }

    pub fn save_workflow(&self, doc: &WorkflowDoc) -> Result<PathBuf, StoreError> {
        let rel = PathBuf::from("workflows").join(&doc.workflow_id).join(format!("v{}.json", doc.version));
        self.write_atomic(rel, &serialize(doc))
    }

    pub fn workflow_versions(&self, workflow_id: &str) -> Vec<u32> {
        let Ok(rd) = fs::read_dir(self.root.join("workflows").join(workflow_id)) else { return vec![] };
        let mut out: Vec<u32> = rd
            .filter_map(Result::ok)
            .filter_map(|e| {
                let name = e.file_name().to_str()?.to_string();
                name.strip_prefix('v')?.strip_suffix(".json")?.parse().ok()
            })
            .collect();
        out.sort_unstable();
        out
    }

    /// A given version, or the latest when `version` is None.
    pub fn load_workflow(&self, workflow_id: &str, version: Option<u32>) -> Result<WorkflowDoc, StoreError> {
        let v = match version {
            Some(v) => v,
            None => *self
                .workflow_versions(workflow_id)
                .last()
                .ok_or_else(|| StoreError::NotFound(format!("workflow {workflow_id}")))?,
        };
        let rel = PathBuf::from("workflows").join(workflow_id).join(format!("v{v}.json"));
        let bytes = self.read(&rel)?;
        parse(&bytes).map_err(|e| parse_err(&self.root.join(&rel), e.to_string()))
    }

    pub fn workflow_ids(&self) -> Vec<String> {
        self.list_dirs("workflows")
    }

    fn guarded_dir(run_id: &str) -> PathBuf {
        PathBuf::from("runs").join(run_id)
    }

    pub fn save_checkpoint(&self, cp: &Checkpoint) -> Result<PathBuf, StoreError> {
        self.write_json(Self::guarded_dir(&cp.run_id).join("checkpoint.json"), cp)
    }

    pub fn load_checkpoint(&self, run_id: &str) -> Result<Checkpoint, StoreError> {
        self.read_json(Self::guarded_dir(run_id).join("checkpoint.json"))
    }

    pub fn save_notification(&self, n: &UserNotification) -> Result<PathBuf, StoreError> {
        self.write_json(Self::guarded_dir(&n.run_id).join("notification.json"), n)
    }

    pub fn load_notification(&self, run_id: &str) -> Result<UserNotification, StoreError> {
        self.read_json(Self::guarded_dir(run_id).join("notification.json"))
    }

    pub fn save_run_report(&self, r: &RunReport) -> Result<PathBuf, StoreError> {
        self.write_json(Self::guarded_dir(&r.run_id).join("report.json"), r)
    }

    pub fn load_run_report(&self, run_id: &str) -> Result<RunReport, StoreError> {
        self.read_json(Self::guarded_dir(run_id).join("report.json"))
    }

    /// Rewrites a run's event log (JSON lines).
    pub fn save_events<T: Serialize>(&self, run_id: &str, events: &[T]) -> Result<PathBuf, StoreError> {
        let mut out = Vec::new();
        for ev in events {
            serde_json::to_writer(&mut out, ev).expect("event serializes");
            out.push(b'\n');
        }
        self.write_atomic(Self::guarded_dir(run_id).join("events.jsonl"), &out)
    }

    pub fn load_events<T: DeserializeOwned>(&self, run_id: &str) -> Result<Vec<T>, StoreError> {
        let rel = Self::guarded_dir(run_id).join("events.jsonl");
        let text = String::from_utf8(self.read(&rel)?).map_err(|e| parse_err(&rel, e))?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| parse_err(&self.root.join(&rel), e)))
            .collect()
    }

    pub fn guarded_run_ids(&self) -> Vec<String> {
        self.list_dirs("runs")
    }

    pub fn save_bench_report(&self, report: &BenchReport) -> Result<PathBuf, StoreError> {
        let dir = PathBuf::from("reports").join(&report.bench_id);
        self.write_atomic(dir.join("summary.csv"), report.csv().as_bytes())?;
        self.write_atomic(dir.join("summary.md"), report.markdown().as_bytes())?;
        self.write_json(dir.join("report.json"), report)?;
        Ok(self.root.join(dir))
    }

    pub fn load_bench_report(&self, bench_id: &str) -> Result<BenchReport, StoreError> {
        self.read_json(PathBuf::from("reports").join(bench_id).join("report.json"))
    }
}
