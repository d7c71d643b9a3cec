//! HTTP API: families, exploration, synthesis, runs, the event stream and
//! the guidance loop.

use std::io::{BufRead, BufReader};
use std::net::SocketAddr;
use std::time::Duration;

use guardweave_cli::app::App;
use guardweave_cli::config::Config;
use guardweave_cli::service::{router, Service};
use guardweave_core::agent::AgentProfile;
use guardweave_core::env::sim::{catalog, FaultKind, FaultSpec};
use guardweave_core::env::EnvSpec;
use guardweave_core::gateway::Gateway;
use guardweave_core::runtime::{verdict_log, RunEvent, RunReport};
use guardweave_core::session::EventEnvelope;
use guardweave_core::store::Store;
use guardweave_core::workflow::{Origin, WorkflowDoc};
use reqwest::blocking::{Client, Response};
use reqwest::StatusCode;
use serde_json::{json, Value};

struct Server {
    addr: SocketAddr,
    client: Client,
    _rt: tokio::runtime::Runtime,
    _dir: tempfile::TempDir,
}

impl Server {
    fn start() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let config = Config { store_path: dir.path().into(), ..Config::default() };
        let app = App::with_parts(Store::open(dir.path()).unwrap(), Gateway::sim(), config);
        let rt = tokio::runtime::Runtime::new().unwrap();
        let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
        let addr = listener.local_addr().unwrap();
        let app_router = router(Service::new(app));
        rt.spawn(async move { axum::serve(listener, app_router).await.unwrap() });
        let client = Client::builder().timeout(Duration::from_secs(60)).build().unwrap();
        Server { addr, client, _rt: rt, _dir: dir }
    }

    fn url(&self, path: &str) -> String {
        format!("http://{}{path}", self.addr)
    }

    fn post(&self, path: &str, body: Value) -> Response {
        self.client.post(self.url(path)).json(&body).send().unwrap()
    }

    fn get(&self, path: &str) -> Response {
        self.client.get(self.url(path)).send().unwrap()
    }

    /// Reads the followed event stream until `stop` matches an event.
    fn events_until(&self, run_id: &str, after: Option<u64>, stop: impl Fn(&RunEvent) -> bool) -> Vec<EventEnvelope> {
        let q = after.map(|a| format!("?after={a}")).unwrap_or_default();
        let resp = self.get(&format!("/v1/runs/{run_id}/events{q}"));
        assert_eq!(resp.status(), StatusCode::OK);
        let mut out = vec![];
        for line in BufReader::new(resp).lines() {
            let e: EventEnvelope = serde_json::from_str(&line.unwrap()).unwrap();
            let done = stop(&e.event);
            out.push(e);
            if done {
                break;
            }
        }
        out
    }
}

fn error_kind(resp: Response) -> (StatusCode, String) {
    let status = resp.status();
    let body: Value = resp.json().unwrap();
    (status, body["error"]["kind"].as_str().unwrap().to_string())
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

/// Registers, explores fault-free and synthesizes the flight family.
fn synthesized(s: &Server) -> String {
    let task = catalog::family("flight-search").unwrap().original_task();
    let r = s.post("/v1/families", json!({"task": task}));
    assert_eq!(r.status(), StatusCode::CREATED);
    assert_eq!(r.json::<Value>().unwrap()["family_id"], "flight-search");
    let params = json!({"runs": 3, "parallel": 1, "env": EnvSpec::fault_free(), "agent": AgentProfile::literal()});
    let ex: Value = s.post("/v1/families/flight-search/explore", params).json().unwrap();
    assert_eq!(ex["total"], 12);
    let syn: Value = s.post("/v1/families/flight-search/synthesize", json!({})).json().unwrap();
    syn["workflow_id"].as_str().unwrap().to_string()
}

#[test]
fn guidance_loop_over_the_api() {
    let s = Server::start();
    let wf_id = synthesized(&s);
    let v1: WorkflowDoc = s.get(&format!("/v1/workflows/{wf_id}")).json().unwrap();
    let req = json!({"workflow_id": wf_id, "env": survey(), "agent": AgentProfile::literal(), "seed": 7});
    let r = s.post("/v1/runs", req);
    assert_eq!(r.status(), StatusCode::CREATED);
    let run_id = r.json::<Value>().unwrap()["run_id"].as_str().unwrap().to_string();

    let first = s.events_until(&run_id, None, |e| matches!(e, RunEvent::NotificationReady { .. }));
    let paused = first.iter().position(|e| matches!(e.event, RunEvent::Paused { .. })).expect("paused");
    assert_eq!(paused + 2, first.len());
    let view: Value = s.get(&format!("/v1/runs/{run_id}")).json().unwrap();
    assert_eq!(view["state"], "awaiting_guidance");
    let note: Value = s.get(&format!("/v1/runs/{run_id}/notification")).json().unwrap();
    for section in ["where", "why", "what", "how"] {
        assert!(!note[section].is_null(), "{section}");
    }
    let last = first.last().unwrap().sequence;
    let empty = s.get(&format!("/v1/runs/{run_id}/events?after={last}&follow=false"));
    assert_eq!(empty.text().unwrap(), "");

    let text = "Click \"Close survey\", then click \"Search\" again";
    let g = s.post(&format!("/v1/runs/{run_id}/guidance"), json!({"text": text}));
    assert_eq!(g.status(), StatusCode::OK);
    let g: Value = g.json().unwrap();
    assert_eq!(g["version"], v1.version + 1);
    assert_eq!(g["resumed"], true);

    let rest = s.events_until(&run_id, Some(last), |e| matches!(e, RunEvent::Finished { .. }));
    assert!(matches!(rest[0].event, RunEvent::GuidanceApplied { .. }));
    assert!(matches!(rest[1].event, RunEvent::Resumed { .. }));
    assert_eq!(rest[0].sequence, last + 1);

    let all: Vec<EventEnvelope> = first.into_iter().chain(rest).collect();
    assert!(all.windows(2).all(|w| w[1].sequence == w[0].sequence + 1));
    let mut view: Value = s.get(&format!("/v1/runs/{run_id}")).json().unwrap();
    for _ in 0..100 {
        if view["state"] != "running" {
            break;
        }
        std::thread::sleep(Duration::from_millis(20));
        view = s.get(&format!("/v1/runs/{run_id}")).json().unwrap();
    }
    assert_eq!(view["state"], "completed");
    let report: RunReport = serde_json::from_value(view["report"].clone()).unwrap();
    let events: Vec<RunEvent> = all.into_iter().map(|e| e.event).collect();
    assert_eq!(verdict_log(&events), report.units);

    let v2: WorkflowDoc = s.get(&format!("/v1/workflows/{wf_id}")).json().unwrap();
    assert_eq!(v2.version, v1.version + 1);
    for (old, new) in v1.units.iter().zip(&v2.units) {
        for c in old.checks() {
            assert!(new.checks().any(|n| n == c), "check {} kept", c.check_id);
        }
        for f in &old.fallbacks {
            assert!(new.fallbacks.contains(f), "fallback {} kept", f.fallback_id);
        }
    }
    assert!(v2.units.iter().flat_map(|u| &u.fallbacks).any(|f| f.origin == Origin::UserGuidance));

    let again = s.post(&format!("/v1/runs/{run_id}/guidance"), json!({"text": text}));
    assert_eq!(error_kind(again), (StatusCode::CONFLICT, "NotAwaitingGuidance".into()));
}

#[test]
fn error_statuses() {
    let s = Server::start();
    assert_eq!(error_kind(s.get("/v1/runs/nope")), (StatusCode::NOT_FOUND, "NotFound".into()));
    assert_eq!(error_kind(s.get("/v1/workflows/nope")).0, StatusCode::NOT_FOUND);
    assert_eq!(error_kind(s.get("/v1/reports/nope")).0, StatusCode::NOT_FOUND);
    assert_eq!(error_kind(s.post("/v1/runs/nope/guidance", json!({"text": "x"}))).0, StatusCode::NOT_FOUND);
    assert_eq!(error_kind(s.post("/v1/families", json!({"nope": 1}))).0, StatusCode::UNPROCESSABLE_ENTITY);
    let mut task = catalog::family("flight-search").unwrap().original_task();
    task.bindings.remove("cabin type");
    assert_eq!(error_kind(s.post("/v1/families", json!({"task": task}))), (StatusCode::UNPROCESSABLE_ENTITY, "UnboundSlot".into()));
    assert_eq!(error_kind(s.post("/v1/families/unknown/synthesize", json!({}))).0, StatusCode::NOT_FOUND);
    assert_eq!(error_kind(s.post("/v1/runs", json!({"workflow_id": 3}))).0, StatusCode::UNPROCESSABLE_ENTITY);
}

#[test]
fn guidance_while_running_or_empty() {
    let s = Server::start();
    let wf_id = synthesized(&s);
    let req = json!({"workflow_id": wf_id, "env": survey(), "agent": AgentProfile::literal(), "seed": 1, "run_id": "r-empty"});
    assert_eq!(s.post("/v1/runs", req.clone()).status(), StatusCode::CREATED);
    assert_eq!(error_kind(s.post("/v1/runs", req)), (StatusCode::CONFLICT, "RunExists".into()));
    s.events_until("r-empty", None, |e| matches!(e, RunEvent::NotificationReady { .. }));
    let r = s.post("/v1/runs/r-empty/guidance", json!({"text": "   "}));
    assert_eq!(error_kind(r), (StatusCode::UNPROCESSABLE_ENTITY, "Empty".into()));
    let d = s.post("/v1/runs/r-empty/decline", json!({}));
    assert_eq!(d.status(), StatusCode::OK);
    let after = s.post("/v1/runs/r-empty/guidance", json!({"text": "Click \"Close survey\""}));
    assert_eq!(error_kind(after).0, StatusCode::CONFLICT);
    let runs: Value = s.get("/v1/runs").json().unwrap();
    assert_eq!(runs["runs"], json!(["r-empty"]));
}
