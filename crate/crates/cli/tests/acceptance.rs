//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Write};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};
use reqwest::blocking::Client;
use serde_json::{json, Value};

use guardweave_cli::adapter::{http_router, sim_server};
use guardweave_cli::app::App;
use guardweave_cli::config::Config;
use guardweave_cli::service::{router, Service};
use guardweave_core::agent::AgentProfile;
use guardweave_core::bench::{run_bench, BenchConfig, BenchOutcome};
use guardweave_core::env::action::ActionCommand;
use guardweave_core::env::protocol::normalize_ws;
use guardweave_core::env::sim::{catalog, FaultKind, FaultSpec};
use guardweave_core::env::EnvSpec;
use guardweave_core::explorer::{explore_family, gen_variations, ExplorationConfig, JudgeMode};
use guardweave_core::gateway::Gateway;
use guardweave_core::judge::{agreement, sr_summary, TaskRate};
use guardweave_core::runtime::RunEvent;
use guardweave_core::session::EventEnvelope;
use guardweave_core::store::Store;
use guardweave_core::synth::audit_provenance;
use guardweave_core::trace::{snapshot_ref, RunArtifacts};
use guardweave_core::workflow::format::{parse, serialize};
use guardweave_core::workflow::{
    CommandSeq, ConditionCheck, EvidenceRef, FallbackAction, Origin, Phase, Predicate, StepUnit, WorkflowDoc,
};

const UPLIFT_MIN_PP: f64 = 30.0;
const WALL_LIMIT: Duration = Duration::from_secs(120);
const MAX_RETRIES: u32 = 3;
const RUNS_PER_TASK: usize = 5;
const EXPECTED_RUNS: usize = 20;
const SR_MEAN: f64 = 60.0;
const SR_STD: f64 = 20.0;
const F1_REPORTED: f64 = 0.821;
const F1_TOL: f64 = 0.001;
const ROUND_TRIP_DOCS: u32 = 500;
const FAMILIES: [&str; 3] = ["article-lookup", "flight-search", "listing-scrape"];

type Verdict = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn pct(x: f64) -> f64 {
    x * 100.0
}

fn bench_config() -> BenchConfig {
    let mut c = BenchConfig::default();
    c.policy.max_retries = MAX_RETRIES;
    c
}

fn guard_uplift(b: &BenchOutcome, elapsed: Duration, again: &BenchOutcome) -> Verdict {
    let agg = &b.report.aggregate.cells;
    let uplift = pct(agg["guarded"].mean - agg["task_only"].mean);
    let mut detail = format!(
        "guarded {:.1}% vs task_only {:.1}% (+{uplift:.1}pp), wall {:.1}s",
        pct(agg["guarded"].mean),
        pct(agg["task_only"].mean),
        elapsed.as_secs_f64()
    );
    let mut ok = uplift >= UPLIFT_MIN_PP && elapsed < WALL_LIMIT;
    for row in &b.report.rows {
        let g = row.cells["guarded"].mean;
        for base in ["trace_replay", "plan_guided", "task_only"] {
            if g < row.cells[base].mean {
                ok = false;
                detail.push_str(&format!("; {} guarded below {base}", row.family));
            }
        }
    }
    let same = serde_json::to_string(&b.report).unwrap() == serde_json::to_string(&again.report).unwrap();
    if !same {
        ok = false;
        detail.push_str("; report differs between identical runs");
    }
    ensure(ok, detail)
}

fn retry_bound(b: &BenchOutcome) -> Verdict {
    let reports: Vec<_> = b.families.iter().flat_map(|f| &f.reports).collect();
    let max = reports.iter().map(|r| r.max_attempts()).max().unwrap_or(0);
    let bound = 1 + MAX_RETRIES as usize;
    ensure(max == bound, format!("max attempts per unit {max} over {} guarded runs (bound {bound})", reports.len()))
}

fn exploration_arithmetic() -> Verdict {
    let mut parts = vec![];
    let mut ok = true;
    for family in FAMILIES {
        let task = catalog::family(family).unwrap().original_task();
        let vars = gen_variations(&task, None).unwrap();
        let config = ExplorationConfig { runs_per_task: RUNS_PER_TASK, ..Default::default() };
        let ex = explore_family(&task, &vars, &config, &EnvSpec::default(), &Gateway::sim(), JudgeMode::Oracle);
        let l = &ex.ledger;
        let labelled = ex.runs.iter().filter(|r| r.record.label.is_some()).count();
        let rows_ok = l.rows.iter().all(|r| r.successes + r.failures + r.aborted == r.total && r.run_ids.len() == r.total);
        let ids: BTreeSet<&String> = l.rows.iter().flat_map(|r| &r.run_ids).collect();
        let split: BTreeSet<&String> = l.successful.iter().chain(&l.failed).collect();
        let conserved = rows_ok && ids == split && ids.len() == l.total() && l.successful.len() == l.successes();
        ok &= 1 + vars.items.len() == 4 && l.total() == EXPECTED_RUNS && labelled == EXPECTED_RUNS && conserved;
        parts.push(format!("{family} {}/{labelled} labelled, conserved={conserved}", l.total()));
    }
    ensure(ok, parts.join("; "))
}

fn provenance_closure(b: &BenchOutcome) -> Verdict {
    let mut violations = vec![];
    let mut guards = 0;
    for f in &b.families {
        let Ok(s) = &f.synthesis else { return Err(format!("{} did not synthesize", f.family_id)) };
        guards += s.workflow.units.iter().map(|u| u.checks().count() + u.fallbacks.len()).sum::<usize>();
        violations.extend(audit_provenance(&s.workflow, &f.exploration.ledger, &f.exploration.runs));
    }
    ensure(violations.is_empty() && guards > 0, format!("{} violations over {guards} guards", violations.len()))
}

fn matrices_matching_report() -> Vec<(u64, u64, u64, u64)> {
    let r3 = |x: f64| (x * 1000.0).round() / 1000.0;
    let mut out = vec![];
    for tp in 1..=45u64 {
        for fp in 0..=45 - tp {
            for fn_ in 0..=45 - tp - fp {
                let tn = 45 - tp - fp - fn_;
                let acc = (tp + tn) as f64 / 45.0;
                let p = tp as f64 / (tp + fp) as f64;
                let r = tp as f64 / (tp + fn_) as f64;
                if r3(acc) == 0.778 && r3(p) == 0.852 && r3(r) == 0.793 {
                    out.push((tp, fp, fn_, tn));
                }
            }
        }
    }
    out
}

fn metric_fidelity() -> Verdict {
    let rate = |t: &str, s| TaskRate { task: t.into(), successes: s, total: 5 };
    let sr = sr_summary(vec![rate("a", 4), rate("b", 2)]).map_err(|e| e.to_string())?;
    let x = [true, false, true, false, true];
    let id = agreement(&x, &x).map_err(|e| e.to_string())?;
    let found = matrices_matching_report();
    let [(tp, fp, fn_, tn)] = found[..] else { return Err(format!("{} matching matrices", found.len())) };
    let mut judge = vec![];
    let mut reference = vec![];
    for (n, j, r) in [(tp, true, true), (fp, true, false), (fn_, false, true), (tn, false, false)] {
        judge.extend(std::iter::repeat_n(j, n as usize));
        reference.extend(std::iter::repeat_n(r, n as usize));
    }
    let f1 = agreement(&judge, &reference).map_err(|e| e.to_string())?.f1;
    let ok = pct(sr.mean) == SR_MEAN
        && pct(sr.std) == SR_STD
        && id.accuracy == 1.0
        && id.kappa == 1.0
        && (f1 - F1_REPORTED).abs() <= F1_TOL;
    ensure(
        ok,
        format!(
            "sr {:.1}±{:.1}, identity acc {} kappa {}, f1 {f1:.4} from TP{tp} FP{fp} FN{fn_} TN{tn}",
            pct(sr.mean),
            pct(sr.std),
            id.accuracy,
            id.kappa
        ),
    )
}

fn survey() -> EnvSpec {
    let popup = FaultKind::Popup {
        at_clock: 5,
        chance: 1.0,
        overlay_id: "survey".into(),
        label: "Quick survey".into(),
        dismiss_label: "Close survey".into(),
        page: None,
    };
    EnvSpec { faults: false, extra_faults: vec![FaultSpec { kind: popup, seed: 1 }], adapter: None }
}

fn guidance_loop() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let config = Config { store_path: dir.path().into(), ..Config::default() };
    let app = App::with_parts(Store::open(dir.path()).unwrap(), Gateway::sim(), config);
    let rt = tokio::runtime::Runtime::new().unwrap();
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
    let addr = listener.local_addr().unwrap();
    let app_router = router(Service::new(app));
    rt.spawn(async move { axum::serve(listener, app_router).await.unwrap() });
    let client = Client::builder().timeout(Duration::from_secs(60)).build().unwrap();
    let url = |p: &str| format!("http://{addr}{p}");
    let post = |p: &str, body: Value| -> Result<Value, String> {
        let r = client.post(url(p)).json(&body).send().map_err(|e| e.to_string())?;
        let status = r.status();
        let v: Value = r.json().map_err(|e| e.to_string())?;
        ensure(status.is_success(), format!("POST {p}: {status} {v}")).map(|_| v)
    };
    let get = |p: &str| -> Result<Value, String> { client.get(url(p)).send().and_then(|r| r.json()).map_err(|e| e.to_string()) };

    let task = catalog::family("flight-search").unwrap().original_task();
    post("/v1/families", json!({"task": task}))?;
    let params = json!({"runs": 3, "parallel": 1, "env": EnvSpec::fault_free(), "agent": AgentProfile::literal()});
    post("/v1/families/flight-search/explore", params)?;
    let wf_id = post("/v1/families/flight-search/synthesize", json!({}))?["workflow_id"].as_str().unwrap().to_string();
    let v1: WorkflowDoc = serde_json::from_value(get(&format!("/v1/workflows/{wf_id}"))?).unwrap();
    let run = post("/v1/runs", json!({"workflow_id": wf_id, "env": survey(), "agent": AgentProfile::literal(), "seed": 7}))?;
    let run_id = run["run_id"].as_str().unwrap().to_string();

    let resp = client.get(url(&format!("/v1/runs/{run_id}/events"))).send().map_err(|e| e.to_string())?;
    let mut last = None;
    for line in BufReader::new(resp).lines() {
        let e: EventEnvelope = serde_json::from_str(&line.map_err(|e| e.to_string())?).unwrap();
        last = Some(e.sequence);
        match e.event {
            RunEvent::NotificationReady { .. } => break,
            RunEvent::Finished { .. } => return Err("run finished without pausing".into()),
            _ => {}
        }
    }
    let g = post(&format!("/v1/runs/{run_id}/guidance"), json!({"text": "Click \"Close survey\", then click \"Search\" again"}))?;
    let resp = client.get(url(&format!("/v1/runs/{run_id}/events?after={}", last.unwrap()))).send().map_err(|e| e.to_string())?;
    let kinds: Vec<String> = BufReader::new(resp)
        .lines()
        .map(|l| serde_json::from_str::<EventEnvelope>(&l.unwrap()).unwrap().event.kind().to_string())
        .collect();
    let mut view = get(&format!("/v1/runs/{run_id}"))?;
    for _ in 0..100 {
        if view["state"] != "running" {
            break;
        }
        std::thread::sleep(Duration::from_millis(20));
        view = get(&format!("/v1/runs/{run_id}"))?;
    }
    let v2: WorkflowDoc = serde_json::from_value(get(&format!("/v1/workflows/{wf_id}"))?).unwrap();
    let kept = v1.units.iter().zip(&v2.units).all(|(a, b)| {
        a.checks().all(|c| b.checks().any(|d| d == c)) && a.fallbacks.iter().all(|f| b.fallbacks.iter().any(|g| g == f))
    }) && v1.units.len() == v2.units.len();
    let user_fb = v2.units.iter().flat_map(|u| &u.fallbacks).any(|f| f.origin == Origin::UserGuidance);
    let outcome = view["state"].as_str().unwrap_or("none").to_string();
    let ok = g["version"] == v1.version + 1
        && g["resumed"] == true
        && kinds.first().map(String::as_str) == Some("GuidanceApplied")
        && kinds.get(1).map(String::as_str) == Some("Resumed")
        && outcome == "completed"
        && kept
        && user_fb;
    ensure(ok, format!("v{} -> v{}, outcome {outcome}, monotone={kept}, user fallback={user_fb}", v1.version, v2.version))
}

fn text() -> impl Strategy<Value = String> {
    "\\PC{0,12}"
}

fn command() -> impl Strategy<Value = ActionCommand> {
    prop_oneof![
        text().prop_map(|target| ActionCommand::Click { target }),
        (text(), text()).prop_map(|(target, text)| ActionCommand::TypeText { target, text }),
        text().prop_map(|text| ActionCommand::Answer { text }),
        Just(ActionCommand::CaptureState),
    ]
}

fn predicate() -> impl Strategy<Value = Option<Predicate>> {
    prop::option::of(prop_oneof![
        Just(Predicate::NoOverlay),
        (text(), text()).prop_map(|(target, value)| Predicate::FieldValue { target, value }),
        (text(), 0..5u32).prop_map(|(target, n)| Predicate::CountAtLeast { target, n }),
        text().prop_map(|target| Predicate::AllOf { all: vec![Predicate::Exists { target }, Predicate::NoOverlay] }),
    ])
}

fn origin() -> impl Strategy<Value = Origin> {
    prop_oneof![Just(Origin::Synthesized), Just(Origin::UserGuidance)]
}

fn unit() -> impl Strategy<Value = StepUnit> {
    let check = (any::<bool>(), text(), predicate(), origin(), prop::option::of(0..30usize)).prop_map(|(pre, nl_text, predicate, origin, ev)| {
        ConditionCheck {
            check_id: format!("chk-{:012x}", nl_text.len()),
            phase: if pre { Phase::Pre } else { Phase::Post },
            nl_text,
            predicate,
            origin,
            evidence: ev.map(|i| EvidenceRef::event("run-1", i)).into_iter().collect(),
            extra: Default::default(),
        }
    });
    let fb = (text(), prop::option::of(prop::collection::vec(command(), 1..3)), origin());
    (text(), prop::collection::vec(check, 0..3), prop::collection::vec(fb, 0..3)).prop_map(|(action_text, checks, fbs)| {
        let (pre_checks, post_checks) = checks.into_iter().partition(|c| c.phase == Phase::Pre);
        let fallbacks = fbs
            .into_iter()
            .enumerate()
            .map(|(i, (nl_text, steps, origin))| FallbackAction {
                fallback_id: format!("fb-{i:012x}"),
                rank: i as u32 + 1,
                nl_text,
                command: steps.map(|steps| CommandSeq { steps }),
                origin,
                evidence: vec![],
                extra: Default::default(),
            })
            .collect();
        StepUnit { index: 0, action_text, pre_checks, post_checks, fallbacks, extra: Default::default() }
    })
}

fn round_trips(b: &BenchOutcome) -> Verdict {
    let docs = (1..20u32, prop::collection::vec(unit(), 0..6), prop::option::of(text())).prop_map(|(version, units, note)| {
        let units = units.into_iter().enumerate().map(|(i, u)| StepUnit { index: i, ..u }).collect();
        let mut d = WorkflowDoc::new("wf-000000000000", "flight-search", units);
        d.version = version;
        if let Some(n) = note {
            d.extra.insert("x-note".into(), Value::from(n));
        }
        d
    });
    let mut runner = TestRunner::new(PropConfig { cases: ROUND_TRIP_DOCS, failure_persistence: None, ..PropConfig::default() });
    runner
        .run(&docs, |d| {
            let bytes = serialize(&d);
            let back = parse(&bytes).map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert_eq!(&back, &d);
            prop_assert_eq!(serialize(&back), bytes);
            Ok(())
        })
        .map_err(|e| format!("round trip: {e}"))?;
    for f in &b.families {
        if let Ok(s) = &f.synthesis {
            if parse(&serialize(&s.workflow)).ok().as_ref() != Some(&s.workflow) {
                return Err(format!("{} workflow does not round-trip", f.family_id));
            }
        }
    }
    Ok(format!("{ROUND_TRIP_DOCS} generated docs and {} synthesized docs round-trip", b.families.len()))
}

fn determinism(b: &BenchOutcome, again: &BenchOutcome) -> Verdict {
    let mut diffs = vec![];
    for (x, y) in b.families.iter().zip(&again.families) {
        if serde_json::to_string(&x.exploration.ledger).unwrap() != serde_json::to_string(&y.exploration.ledger).unwrap() {
            diffs.push(format!("{} ledger", x.family_id));
        }
        let wf = |f: &guardweave_core::bench::FamilyBench| f.synthesis.as_ref().map(|s| serialize(&s.workflow)).ok();
        if wf(x) != wf(y) {
            diffs.push(format!("{} workflow", x.family_id));
        }
        if x.reports != y.reports {
            diffs.push(format!("{} run reports", x.family_id));
        }
    }
    if b.report.csv() != again.report.csv() {
        diffs.push("bench report".into());
    }
    ensure(diffs.is_empty(), if diffs.is_empty() { "ledgers, workflows and reports identical".into() } else { diffs.join(", ") })
}

fn replay_matches(run: &RunArtifacts, env: &EnvSpec) -> Result<(), String> {
    let mut session = env.open(&run.record.task.site).map_err(|e| e.to_string())?;
    let mut prev = snapshot_ref(&session.reset(run.record.seed).map_err(|e| e.to_string())?);
    for e in run.events() {
        let out = session.apply(&e.command).map_err(|e| e.to_string())?;
        if prev != e.snapshot_before || out.status != e.status || snapshot_ref(&out.after) != e.snapshot_after {
            return Err(format!("{} diverges at step {}", run.record.run_id, e.step_index));
        }
        prev = e.snapshot_after.clone();
    }
    Ok(())
}

fn stored_replay(b: &BenchOutcome, env: &EnvSpec) -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path()).unwrap();
    for f in &b.families {
        for run in f.exploration.runs.iter().chain(f.runs.iter().flat_map(|(_, r)| r)) {
            store.save_run(run).map_err(|e| e.to_string())?;
        }
    }
    let mut n = 0;
    for f in &b.families {
        for id in store.run_ids(&f.family_id) {
            let run = store.load_run(&f.family_id, &id).map_err(|e| e.to_string())?;
            replay_matches(&run, env)?;
            n += 1;
        }
    }
    let expected: usize = b.families.iter().map(|f| f.exploration.runs.len() + f.runs.iter().map(|(_, r)| r.len()).sum::<usize>()).sum();
    ensure(n == expected, format!("{n} of {expected} stored traces replay exactly"))
}

/// (request, expected reply) pairs from a `> ` / `< ` transcript.
fn transcript() -> Vec<(String, String)> {
    let text = include_str!("fixtures/protocol/skyfare_session.txt");
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    lines.chunks(2).map(|p| (p[0][2..].to_string(), p[1][2..].to_string())).collect()
}

fn protocol_conformance() -> Verdict {
    let pairs = transcript();
    let mut child = Command::new(env!("CARGO_BIN_EXE_guardweave"))
        .args(["adapter", "--site", "skyfare.sim", "--no-faults"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| e.to_string())?;
    {
        let mut stdin = child.stdin.take().unwrap();
        for (req, _) in &pairs {
            writeln!(stdin, "{req}").unwrap();
        }
    }
    let out = child.wait_with_output().map_err(|e| e.to_string())?;
    let stdio: Vec<String> = String::from_utf8_lossy(&out.stdout).lines().map(str::to_string).collect();
    let stdio_ok = stdio.len() == pairs.len() && pairs.iter().zip(&stdio).all(|((_, want), got)| normalize_ws(got) == normalize_ws(want));

    let rt = tokio::runtime::Runtime::new().unwrap();
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
    let addr = listener.local_addr().unwrap();
    let r = http_router(sim_server("skyfare.sim", false).map_err(|e| e.to_string())?);
    rt.spawn(async move { axum::serve(listener, r).await.unwrap() });
    let client = Client::new();
    let http_ok = pairs.iter().all(|(req, want)| {
        let got = client.post(format!("http://{addr}/v1/act")).body(req.clone()).send().and_then(|r| r.text()).unwrap_or_default();
        normalize_ws(&got) == normalize_ws(want)
    });
    let errors = pairs.iter().filter(|(_, rep)| rep.contains("\"error\"")).count();
    ensure(stdio_ok && http_ok, format!("{} exchanges ({errors} error paths), stdio={stdio_ok} http={http_ok}", pairs.len()))
}

fn main() {
    let config = bench_config();
    let gw = Gateway::sim();
    let start = Instant::now();
    let bench = run_bench("acceptance", &config, &gw).expect("benchmark runs");
    let elapsed = start.elapsed();
    let again = run_bench("acceptance", &BenchConfig { exploration: ExplorationConfig { parallelism: 1, ..config.exploration.clone() }, ..config.clone() }, &gw)
        .expect("benchmark runs");

    let results: Vec<(&str, Verdict)> = vec![
        ("guard uplift", guard_uplift(&bench, elapsed, &again)),
        ("retry bound", retry_bound(&bench)),
        ("exploration arithmetic", exploration_arithmetic()),
        ("synthesis provenance closure", provenance_closure(&bench)),
        ("metric fidelity", metric_fidelity()),
        ("guidance loop", guidance_loop()),
        ("determinism", determinism(&bench, &again)),
        ("round trips", round_trips(&bench)),
        ("replay equality", stored_replay(&bench, &config.env)),
        ("protocol conformance", protocol_conformance()),
    ];
    let mut failed = 0;
    for (name, verdict) in &results {
        match verdict {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
