use guardweave_core::agent::AgentProfile;
use guardweave_core::env::sim::{catalog, FaultKind, FaultSpec};
use guardweave_core::env::EnvSpec;
use guardweave_core::explorer::{explore_family, gen_variations, ExplorationConfig, JudgeMode};
use guardweave_core::gateway::Gateway;
use guardweave_core::runtime::machine::RunSetup;
use guardweave_core::runtime::{verdict_log, MachineState, Outcome, RunEvent, RunOutcome, RunPolicy};
use guardweave_core::session::{self, EventEnvelope, SessionError};
use guardweave_core::store::Store;
use guardweave_core::synth::synth_family;
use guardweave_core::runtime::RuntimeError;
use guardweave_core::workflow::WorkflowDoc;

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

fn workflow() -> WorkflowDoc {
    let family = catalog::family("flight-search").unwrap();
    let task = family.original_task();
    let vars = gen_variations(&task, None).unwrap();
    let config = ExplorationConfig { runs_per_task: 3, parallelism: 1, agent: AgentProfile::literal(), ..Default::default() };
    let ex = explore_family(&task, &vars, &config, &EnvSpec::fault_free(), &Gateway::sim(), JudgeMode::Oracle);
    synth_family(&ex.ledger, &ex.runs).unwrap().workflow
}

#[test]
fn pause_guide_resume() {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path()).unwrap();
    let gw = Gateway::sim();
    let wf = workflow();
    store.save_workflow(&wf).unwrap();
    let task = catalog::family("flight-search").unwrap().original_task();
    let setup = RunSetup {
        run_id: "run-survey".into(),
        task,
        seed: 7,
        env: survey(),
        policy: RunPolicy::default(),
        agent: AgentProfile::literal(),
    };
    let mut seen: Vec<EventEnvelope> = vec![];
    let out = session::start(&store, setup, &wf, &gw, &mut |e| seen.push(e.clone())).unwrap();
    let Outcome::Paused { notification, .. } = out else { panic!("expected a pause") };
    assert_eq!(seen.last().unwrap().event.kind(), "NotificationReady");
    assert_eq!(store.load_notification("run-survey").unwrap(), notification);
    assert_eq!(session::status(&store, "run-survey").unwrap().state, MachineState::AwaitingGuidance);

    let (v2, _) = session::guide(&store, "run-survey", "Click \"Close survey\", then click \"Search\" again.", None, &gw, &mut |e| seen.push(e.clone())).unwrap();
    assert_eq!(v2.version, wf.version + 1);
    let out = session::resume_run(&store, "run-survey", false, &gw, &mut |e| seen.push(e.clone())).unwrap();
    let Outcome::Finished(report) = out else { panic!("paused again") };
    assert_eq!(report.outcome, RunOutcome::Completed, "{report:?}");
    assert_eq!(report.version, v2.version);

    let stored: Vec<EventEnvelope> = store.load_events("run-survey").unwrap();
    assert_eq!(stored, seen);
    assert!(stored.iter().enumerate().all(|(i, e)| e.sequence == i as u64));
    let events: Vec<RunEvent> = stored.into_iter().map(|e| e.event).collect();
    assert_eq!(verdict_log(&events), report.units);

    let again = session::guide(&store, "run-survey", "Click \"Close survey\".", None, &gw, &mut |_| {});
    assert!(matches!(again, Err(SessionError::Runtime(RuntimeError::NotAwaitingGuidance))));
    assert_eq!(session::status(&store, "run-survey").unwrap().state, MachineState::Completed);
}

#[test]
fn envelope_wire_shape() {
    let env = EventEnvelope { run_id: "r".into(), sequence: 3, timestamp_ms: 10, event: RunEvent::Paused { unit: 2 } };
    let v = serde_json::to_value(&env).unwrap();
    assert_eq!(v, serde_json::json!({"run_id": "r", "sequence": 3, "timestamp_ms": 10, "kind": "Paused", "payload": {"unit": 2}}));
    assert_eq!(serde_json::from_value::<EventEnvelope>(v).unwrap(), env);
}
