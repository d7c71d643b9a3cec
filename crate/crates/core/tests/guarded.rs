use proptest::prelude::*;
use serde_json::Map;

use guardweave_core::agent::AgentProfile;
use guardweave_core::env::action::{parse_instructions, ActionCommand, Direction, Instruction};
use guardweave_core::env::sim::{catalog, FaultKind, FaultSpec};
use guardweave_core::env::EnvSpec;
use guardweave_core::gateway::Gateway;
use guardweave_core::judge::judge_sim;
use guardweave_core::runtime::machine::{run_guarded, GuardedRun, RunSetup};
use guardweave_core::runtime::{verdict_log, FailurePoint, Outcome, RunEvent, RunOutcome, RunPolicy};
use guardweave_core::workflow::samples::{check, fallback};
use guardweave_core::workflow::{Phase, Predicate, StepUnit, WorkflowDoc};

const STEPS: [&str; 5] = [
    "Navigate to \"https://skyfare.sim/\"",
    "Type \"Boston\" into \"From\"",
    "Type \"Paris\" into \"To\"",
    "Click \"Search\"",
    "Answer with the value of \"Top fare\"",
];
const SEARCH: usize = 3;

fn doc() -> WorkflowDoc {
    let units = STEPS
        .iter()
        .enumerate()
        .map(|(index, text)| StepUnit { index, action_text: text.to_string(), pre_checks: vec![], post_checks: vec![], fallbacks: vec![], extra: Map::new() })
        .collect();
    let mut d = WorkflowDoc::new("wf-guarded-test", "flight-search", units);
    let search = &mut d.units[SEARCH];
    search.pre_checks.push(check(
        "chk-overlay",
        Phase::Pre,
        "Before clicking \"Search\", ensure no overlay is blocking the Search button",
        Some(Predicate::NoOverlay),
    ));
    search.fallbacks.push(fallback(
        "fb-dismiss",
        1,
        "Retry performing search by clicking \"No thanks\" then \"Search\"",
        vec![ActionCommand::Click { target: "No thanks".into() }],
    ));
    search.fallbacks.push(fallback(
        "fb-scroll",
        2,
        "Retry performing search after scrolling down",
        vec![ActionCommand::Scroll { direction: Direction::Down, amount: 1 }],
    ));
    d
}

/// Clock reading right before the Search click when the steps run on a
/// fault-free session: the popup must arm exactly there.
fn clock_before_search() -> u64 {
    let mut env = EnvSpec::fault_free().open("skyfare.sim").unwrap();
    env.reset(1).unwrap();
    for step in &STEPS[..SEARCH] {
        for i in parse_instructions(step).unwrap() {
            let Instruction::Command(c) = i else { unreachable!() };
            assert!(env.apply(&c).unwrap().status.is_ok());
        }
    }
    env.snapshot().unwrap().clock
}

fn popup(dismiss: &str) -> EnvSpec {
    let kind = FaultKind::Popup {
        at_clock: clock_before_search(),
        chance: 1.0,
        overlay_id: "newsletter".into(),
        label: "Get fare alerts by email".into(),
        dismiss_label: dismiss.into(),
        page: Some("home".into()),
    };
    EnvSpec { faults: false, extra_faults: vec![FaultSpec { kind, seed: 3 }], adapter: None }
}

fn run(env: EnvSpec, policy: RunPolicy, seed: u64) -> (GuardedRun, Vec<RunEvent>) {
    let task = catalog::family("flight-search").unwrap().original_task();
    let setup = RunSetup { run_id: "run-guarded".into(), task, seed, env: env.clone(), policy, agent: AgentProfile::literal() };
    let mut session = env.open("skyfare.sim").unwrap();
    let mut events = vec![];
    let out = run_guarded(setup, &doc(), session.as_mut(), &Gateway::sim(), &mut |e| events.push(e)).unwrap();
    (out, events)
}

#[test]
fn rank_one_fallback_clears_the_popup() {
    let (out, events) = run(popup("No thanks"), RunPolicy::default(), 1);
    let Outcome::Finished(report) = &out.outcome else { panic!("paused") };
    assert_eq!(report.outcome, RunOutcome::Completed);
    assert_eq!(verdict_log(&events), report.units);
    let retries: Vec<usize> = report.units.iter().map(|u| u.retries()).collect();
    assert_eq!(retries, [0, 0, 0, 1, 0]);
    let search = &report.units[SEARCH];
    assert_eq!(search.attempts[1].fallback_id.as_deref(), Some("fb-dismiss"));
    let first = &search.attempts[0];
    assert!(matches!(&first.failed_at, Some(FailurePoint::Check { check_id, .. }) if check_id == "chk-overlay"));

    // The predicate is false on the faulted snapshot and true once dismissed.
    let faulted = out.log.snapshot(&first.snapshot_ref).unwrap();
    assert!(!Predicate::NoOverlay.evaluate(faulted).passed);
    let cleared = out.log.snapshot(&search.attempts[1].snapshot_ref).unwrap();
    assert!(Predicate::NoOverlay.evaluate(cleared).passed);

    let task = catalog::family("flight-search").unwrap().original_task();
    let verdict = judge_sim("run-guarded", &task, out.log.current(), report.answer.as_deref()).unwrap();
    assert!(verdict.success, "{}", verdict.rationale);
}

#[test]
fn unfixable_popup_pauses_after_max_retries() {
    let (out, events) = run(popup("Close alerts"), RunPolicy::default(), 1);
    let Outcome::Paused { checkpoint, notification } = &out.outcome else { panic!("finished") };
    assert_eq!(checkpoint.unit, SEARCH);
    let ulog = verdict_log(&events).pop().unwrap();
    assert_eq!(ulog.unit, SEARCH);
    assert_eq!(ulog.attempts.len(), 1 + RunPolicy::default().max_retries as usize);
    assert!(ulog.attempts.iter().all(|a| !a.passed));

    let n = notification;
    assert_eq!(n.where_.unit, SEARCH);
    assert_eq!(n.where_.check_id.as_deref(), Some("chk-overlay"));
    assert!(n.why.contains("ensure no overlay is blocking the Search button"), "{}", n.why);
    for i in 1..=4 {
        assert!(n.what.contains(&format!("Attempt {i}")), "{}", n.what);
    }
    assert!(!n.what.contains("Attempt 5"));
    let d = doc();
    for fb in &d.units[SEARCH].fallbacks {
        assert!(n.how.iter().any(|h| h.contains(&fb.nl_text)), "{:?}", n.how);
    }
    assert!(n.how.iter().any(|h| h.contains("Close alerts")), "{:?}", n.how);
    assert_eq!(n.attempts.len(), 4);
    for (a, ev) in ulog.attempts.iter().zip(&n.attempts) {
        let i = ev.event_index.unwrap();
        assert_eq!(i + 1, a.end_event);
        assert!(i < out.log.events.len());
    }
    assert!(out.log.snapshot(&n.snapshot_ref).is_some());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn attempts_never_exceed_the_bound(max_retries in 0..5u32, seed in 0..1000u64, fixable in any::<bool>()) {
        let env = popup(if fixable { "No thanks" } else { "Close alerts" });
        let policy = RunPolicy { max_retries, pause_on_exhaustion: false, ..RunPolicy::default() };
        let (out, events) = run(env, policy, seed);
        let Outcome::Finished(report) = out.outcome else { panic!("paused with pausing off") };
        let bound = 1 + max_retries as usize;
        prop_assert!(report.max_attempts() <= bound);
        prop_assert_eq!(verdict_log(&events), report.units.clone());
        let search = &report.units[SEARCH];
        match (fixable && max_retries > 0, report.outcome) {
            (true, RunOutcome::Completed) => prop_assert_eq!(search.attempts.len(), 2),
            (false, RunOutcome::Aborted) => prop_assert_eq!(search.attempts.len(), bound),
            other => prop_assert!(false, "unexpected {:?}", other),
        }
    }
}
