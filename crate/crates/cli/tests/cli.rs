//! The `guardweave` binary: subcommands, exit codes and JSON output.

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_guardweave"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .env_remove("GUARDWEAVE_STORE")
        .env_remove("GUARDWEAVE_BACKEND")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_task(dir: &Path) {
    let o = run(dir, &["task", "flight-search"]);
    assert!(o.status.success());
    std::fs::write(dir.join("flight.task"), &o.stdout).unwrap();
}

#[test]
fn explore_synth_run() {
    let dir = tempfile::tempdir().unwrap();
    write_task(dir.path());
    let o = run(dir.path(), &["explore", "flight.task", "--runs", "5", "--seed", "7"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let ledger = stdout(&o).lines().next().unwrap().to_string();
    assert!(dir.path().join(&ledger).exists(), "{ledger}");
    assert!(ledger.ends_with("families/flight-search/ledger.json"));

    let o = run(dir.path(), &["--json", "synth", "flight-search"]);
    assert_eq!(o.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    let wf = v["workflow_path"].as_str().unwrap().to_string();

    let o = run(dir.path(), &["--json", "run", &wf, "--seed", "3", "--no-faults"]);
    assert_eq!(o.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["outcome"]["finished"]["outcome"], "completed");
    let run_id = v["run_id"].as_str().unwrap();

    let o = run(dir.path(), &["--json", "status", run_id]);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["state"], "completed");
    let o = run(dir.path(), &["--json", "guide", run_id, "Click \"OK\""]);
    assert_eq!(o.status.code(), Some(1));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["error"]["kind"], "NotAwaitingGuidance");
}

#[test]
fn zero_successes_is_a_domain_error() {
    let dir = tempfile::tempdir().unwrap();
    write_task(dir.path());
    let o = run(dir.path(), &["explore", "flight.task", "--runs", "1", "--env", "adapter:http://127.0.0.1:9"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("4 runs, 0 successful"), "{}", stdout(&o));
    let o = run(dir.path(), &["synth", "flight-search"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("NoSuccessfulRun"));
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for args in [&["frobnicate"][..], &["explore"], &["explore", "x.task", "--runs", "many"]] {
        let o = run(dir.path(), args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"), "{args:?}");
    }
    assert_eq!(run(dir.path(), &["--help"]).status.code(), Some(0));
    let o = run(dir.path(), &["explore", "missing.task"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn config_file_sets_store() {
    let dir = tempfile::tempdir().unwrap();
    write_task(dir.path());
    std::fs::write(dir.path().join("guardweave.toml"), "store_path = \"elsewhere\"\nparallelism = 1\n").unwrap();
    let o = run(dir.path(), &["explore", "flight.task", "--runs", "1"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(dir.path().join("elsewhere/families/flight-search/ledger.json").exists());
    let o = run(dir.path(), &["--store", "flagged", "explore", "flight.task", "--runs", "1"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(dir.path().join("flagged/families/flight-search/ledger.json").exists());
    std::fs::write(dir.path().join("guardweave.toml"), "store = 1\n").unwrap();
    assert_eq!(run(dir.path(), &["explore", "flight.task"]).status.code(), Some(1));
}

#[test]
fn bench_writes_report_files() {
    let dir = tempfile::tempdir().unwrap();
    let grid = r#"{"families": ["article-lookup"], "seeds_per_task": 2, "exploration": {"runs_per_task": 3}}"#;
    std::fs::write(dir.path().join("grid.json"), grid).unwrap();
    let o = run(dir.path(), &["--json", "bench", "grid.json"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["bench_id"], "grid");
    for f in ["summary.csv", "summary.md", "report.json"] {
        assert!(dir.path().join("guardweave-store/reports/grid").join(f).exists(), "{f}");
    }
    let o = run(dir.path(), &["bench", "grid.json", "--id", "b2"]);
    assert!(stdout(&o).contains("| family |"));
}
