use std::collections::BTreeSet;

use guardweave_core::env::sim::catalog;
use guardweave_core::env::EnvSpec;
use guardweave_core::explorer::{explore_family, gen_variations, Exploration, ExplorationConfig, JudgeMode};
use guardweave_core::gateway::Gateway;
use guardweave_core::store::Store;
use guardweave_core::synth::synth_family;
use guardweave_core::trace::{snapshot_ref, Label, RunArtifacts};
use guardweave_core::workflow::format::serialize;

fn explore(family: &str, runs: usize, parallelism: usize) -> Exploration {
    let task = catalog::family(family).unwrap().original_task();
    let vars = gen_variations(&task, None).unwrap();
    let config = ExplorationConfig { runs_per_task: runs, parallelism, base_seed: 42, ..Default::default() };
    explore_family(&task, &vars, &config, &EnvSpec::default(), &Gateway::sim(), JudgeMode::Oracle)
}

#[test]
fn four_tasks_at_five_runs_make_twenty() {
    for family in ["flight-search", "listing-scrape", "article-lookup"] {
        let ex = explore(family, 5, 4);
        let l = &ex.ledger;
        assert_eq!(l.rows.len(), 4, "{family}");
        assert_eq!(l.total(), 20);
        assert_eq!(ex.runs.len(), 20);
        assert!(ex.runs.iter().all(|r| r.record.label.is_some()));
        for row in &l.rows {
            assert_eq!(row.total, 5);
            assert_eq!(row.successes + row.failures + row.aborted, row.total);
            assert_eq!(row.run_ids.len(), row.total);
        }
        assert_eq!(l.successful.len() + l.failed.len(), l.total());
        assert_eq!(l.successes(), l.successful.len());
        let ids: BTreeSet<&String> = l.rows.iter().flat_map(|r| &r.run_ids).collect();
        assert_eq!(ids.len(), 20);
        let split: BTreeSet<&String> = l.successful.iter().chain(&l.failed).collect();
        assert_eq!(ids, split);
        let ok = ex.runs.iter().filter(|r| r.record.label == Some(Label::Success)).count();
        assert_eq!(ok, l.successes());
    }
}

fn fingerprint(ex: &Exploration) -> (String, Vec<String>, Vec<u8>) {
    let ledger = serde_json::to_string(&ex.ledger).unwrap();
    let traces = ex.runs.iter().map(|r| serde_json::to_string(r.events()).unwrap()).collect();
    let workflow = synth_family(&ex.ledger, &ex.runs).map(|s| serialize(&s.workflow)).unwrap_or_default();
    (ledger, traces, workflow)
}

#[test]
fn same_seed_same_everything() {
    let a = fingerprint(&explore("flight-search", 5, 4));
    let b = fingerprint(&explore("flight-search", 5, 1));
    assert_eq!(a, b);
    assert!(!a.2.is_empty());
}

fn replays_exactly(run: &RunArtifacts) {
    let mut env = EnvSpec::default().open(&run.record.task.site).unwrap();
    let mut prev = snapshot_ref(&env.reset(run.record.seed).unwrap());
    for e in run.events() {
        assert_eq!(prev, e.snapshot_before, "{} step {}", run.record.run_id, e.step_index);
        let out = env.apply(&e.command).unwrap();
        assert_eq!(out.status, e.status);
        prev = snapshot_ref(&out.after);
        assert_eq!(prev, e.snapshot_after, "{} step {}", run.record.run_id, e.step_index);
    }
}

#[test]
fn stored_traces_replay_to_the_same_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path()).unwrap();
    for family in ["flight-search", "listing-scrape", "article-lookup"] {
        let ex = explore(family, 5, 4);
        for run in &ex.runs {
            store.save_run(run).unwrap();
        }
        store.save_ledger(&ex.ledger).unwrap();
        let (ledger, runs) = store.load_exploration(family).unwrap();
        assert_eq!(ledger, ex.ledger);
        assert_eq!(runs.len(), 20);
        for run in &runs {
            replays_exactly(run);
        }
    }
}
