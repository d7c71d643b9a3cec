//! HTTP API over the store, with a per-run event stream (JSON lines).
//!
//! Each run has one writer at a time: starting, guiding, resuming and
//! declining take the run's lock, and a busy run answers 409. Any number of
//! clients may follow the event stream.

use std::collections::HashMap;
use std::convert::Infallible;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex, RwLock};

use axum::body::{Body, Bytes};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use guardweave_core::runtime::{MachineState, RunEvent, RunReport};
use guardweave_core::session::{self, EventEnvelope, EventLog, RunStatus};
use guardweave_core::workflow::{GuidanceNote, TaskSpec};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::{watch, OwnedMutexGuard};

use crate::app::{App, AppError, ExploreParams, RunRequest};

pub struct ApiError(pub AppError);

impl From<AppError> for ApiError {
    fn from(e: AppError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            AppError::NotFound(_) => StatusCode::NOT_FOUND,
            AppError::Conflict { .. } => StatusCode::CONFLICT,
            AppError::Invalid { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            AppError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let body = json!({"error": {"kind": self.0.kind(), "message": self.0.message()}});
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Live state of one run as seen by the service.
struct RunHub {
    writer: Arc<tokio::sync::Mutex<()>>,
    events: RwLock<Vec<EventEnvelope>>,
    count: watch::Sender<usize>,
    failure: Mutex<Option<String>>,
}

impl RunHub {
    fn new(events: Vec<EventEnvelope>) -> Self {
        let (count, _) = watch::channel(events.len());
        RunHub { writer: Arc::new(tokio::sync::Mutex::new(())), events: RwLock::new(events), count, failure: Mutex::new(None) }
    }

    fn push(&self, e: &EventEnvelope) {
        let mut events = self.events.write().expect("event lock");
        events.push(e.clone());
        self.count.send_replace(events.len());
    }

    fn after(&self, from: usize) -> Vec<EventEnvelope> {
        let events = self.events.read().expect("event lock");
        events.get(from..).map(<[_]>::to_vec).unwrap_or_default()
    }

    fn fail(&self, message: String) {
        *self.failure.lock().expect("failure lock") = Some(message);
        self.count.send_modify(|_| {});
    }

    fn failure(&self) -> Option<String> {
        self.failure.lock().expect("failure lock").clone()
    }
}

pub struct Service {
    pub app: App,
    hubs: Mutex<HashMap<String, Arc<RunHub>>>,
}

impl Service {
    pub fn new(app: App) -> Arc<Self> {
        Arc::new(Service { app, hubs: Mutex::new(HashMap::new()) })
    }

    fn hub(&self, run_id: &str) -> ApiResult<Arc<RunHub>> {
        let mut hubs = self.hubs.lock().expect("hub lock");
        if let Some(h) = hubs.get(run_id) {
            return Ok(h.clone());
        }
        session::status(&self.app.store, run_id).map_err(AppError::from)?;
        let hub = Arc::new(RunHub::new(EventLog::load(&self.app.store, run_id).events));
        hubs.insert(run_id.to_string(), hub.clone());
        Ok(hub)
    }

    fn writer(&self, hub: &RunHub) -> ApiResult<OwnedMutexGuard<()>> {
        hub.writer.clone().try_lock_owned().map_err(|_| {
            ApiError(AppError::Conflict { kind: "NotAwaitingGuidance".into(), message: "run is executing".into() })
        })
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, AppError> + Send + 'static) -> ApiResult<T> {
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => r.map_err(ApiError),
        Err(e) => Err(ApiError(AppError::Internal(e.to_string()))),
    }
}

fn parse<T: DeserializeOwned + Default>(body: &Bytes) -> ApiResult<T> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(body).map_err(|e| ApiError(AppError::invalid("BadRequest", e)))
}

#[derive(Deserialize, Default)]
struct FamilyBody {
    task: Option<TaskSpec>,
}

async fn create_family(State(s): State<Arc<Service>>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let b: FamilyBody = parse(&body)?;
    let task = b.task.ok_or_else(|| AppError::invalid("BadRequest", "body needs a task"))?;
    let id = blocking(move || s.app.register_family(&task)).await?;
    Ok((StatusCode::CREATED, Json(json!({"family_id": id}))))
}

async fn explore(State(s): State<Arc<Service>>, Path(id): Path<String>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let params: ExploreParams = parse(&body)?;
    Ok(Json(blocking(move || s.app.explore(&id, &params)).await?))
}

async fn synthesize(State(s): State<Arc<Service>>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(blocking(move || s.app.synthesize(&id)).await?))
}

#[derive(Deserialize)]
struct VersionQuery {
    version: Option<u32>,
}

async fn get_workflow(State(s): State<Arc<Service>>, Path(id): Path<String>, Query(q): Query<VersionQuery>) -> ApiResult<impl IntoResponse> {
    Ok(Json(blocking(move || s.app.workflow(&id, q.version)).await?))
}

async fn list_runs(State(s): State<Arc<Service>>) -> impl IntoResponse {
    let mut ids = s.app.store.guarded_run_ids();
    ids.extend(s.hubs.lock().expect("hub lock").keys().cloned());
    ids.sort();
    ids.dedup();
    Json(json!({"runs": ids}))
}

async fn start_run(State(s): State<Arc<Service>>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let req: RunRequest = parse(&body)?;
    let svc = s.clone();
    let hub = Arc::new(RunHub::new(vec![]));
    let guard = s.writer(&hub)?;
    let h = hub.clone();
    // Prepared and registered under one lock so concurrent requests can't pick the same id.
    let (setup, workflow) = blocking(move || {
        let mut hubs = svc.hubs.lock().expect("hub lock");
        let prepared = svc.app.prepare_run(&req, &|id| hubs.contains_key(id))?;
        hubs.insert(prepared.0.run_id.clone(), h);
        Ok(prepared)
    })
    .await?;
    let run_id = setup.run_id.clone();
    tokio::task::spawn_blocking(move || {
        let _guard = guard;
        let r = session::start(&s.app.store, setup, &workflow, &s.app.gateway, &mut |e| hub.push(e));
        if let Err(e) = r {
            log::error!("run failed: {e}");
            hub.fail(e.to_string());
        }
    });
    Ok((StatusCode::CREATED, Json(json!({"run_id": run_id}))))
}

#[derive(Serialize)]
struct RunView {
    run_id: String,
    state: MachineState,
    #[serde(skip_serializing_if = "Option::is_none")]
    workflow_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    version: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    unit: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    report: Option<RunReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    events: usize,
}

async fn get_run(State(s): State<Arc<Service>>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    let hub = s.hub(&id)?;
    let busy = hub.writer.try_lock().is_err();
    let status: Option<RunStatus> = session::status(&s.app.store, &id).ok();
    let failure = hub.failure();
    let state = match (&status, busy, &failure) {
        (_, true, _) => MachineState::Running,
        (Some(st), _, _) => st.state,
        (None, _, Some(_)) => MachineState::Aborted,
        (None, _, None) => MachineState::Running,
    };
    let events = hub.events.read().expect("event lock").len();
    Ok(Json(RunView {
        run_id: id,
        state,
        workflow_id: status.as_ref().map(|s| s.workflow_id.clone()),
        version: status.as_ref().map(|s| s.version),
        unit: status.as_ref().and_then(|s| s.unit),
        report: status.and_then(|s| s.report),
        error: failure,
        events,
    }))
}

#[derive(Deserialize)]
struct EventsQuery {
    after: Option<u64>,
    #[serde(default = "yes")]
    follow: bool,
}

fn yes() -> bool {
    true
}

fn line(e: &EventEnvelope) -> Bytes {
    let mut s = serde_json::to_string(e).expect("event serializes");
    s.push('\n');
    Bytes::from(s)
}

/// Events as JSON lines, starting after `after`. With `follow` (the default)
/// the stream stays open for new events until the run finishes.
async fn events(State(s): State<Arc<Service>>, Path(id): Path<String>, Query(q): Query<EventsQuery>) -> ApiResult<Response> {
    let hub = s.hub(&id)?;
    let start = q.after.map(|a| a as usize + 1).unwrap_or(0);
    let ndjson = [(header::CONTENT_TYPE, "application/x-ndjson")];
    if !q.follow {
        let body: Vec<u8> = hub.after(start).iter().flat_map(|e| line(e).to_vec()).collect();
        return Ok((ndjson, body).into_response());
    }
    let rx = hub.count.subscribe();
    let stream = futures::stream::unfold((hub, rx, start, false), |(hub, mut rx, cursor, done)| async move {
        if done {
            return None;
        }
        loop {
            let fresh = hub.after(cursor);
            if !fresh.is_empty() {
                let finished = fresh.iter().any(|e| matches!(e.event, RunEvent::Finished { .. }));
                let chunk: Vec<u8> = fresh.iter().flat_map(|e| line(e).to_vec()).collect();
                let next = cursor + fresh.len();
                return Some((Ok::<Bytes, Infallible>(Bytes::from(chunk)), (hub, rx, next, finished)));
            }
            if hub.failure().is_some() || rx.changed().await.is_err() {
                return None;
            }
        }
    });
    Ok((ndjson, Body::from_stream(stream)).into_response())
}

async fn notification(State(s): State<Arc<Service>>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    s.hub(&id)?;
    Ok(Json(blocking(move || Ok(s.app.store.load_notification(&id)?)).await?))
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct GuidanceBody {
    text: String,
    target_unit: Option<usize>,
    auto_resume: Option<bool>,
}

#[derive(Serialize)]
struct GuidanceReply {
    workflow_id: String,
    version: u32,
    note: GuidanceNote,
    resumed: bool,
}

async fn guidance(State(s): State<Arc<Service>>, Path(id): Path<String>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let b: GuidanceBody = parse(&body)?;
    let hub = s.hub(&id)?;
    let guard = s.writer(&hub)?;
    let resume = b.auto_resume.unwrap_or(s.app.config.auto_resume);
    let (svc, h, rid) = (s.clone(), hub.clone(), id.clone());
    let (doc, note) = blocking(move || {
        Ok(session::guide(&svc.app.store, &rid, &b.text, b.target_unit, &svc.app.gateway, &mut |e| h.push(e))?)
    })
    .await?;
    if resume {
        tokio::task::spawn_blocking(move || {
            let _guard = guard;
            if let Err(e) = session::resume_run(&s.app.store, &id, false, &s.app.gateway, &mut |e| hub.push(e)) {
                log::error!("resume of {id} failed: {e}");
                hub.fail(e.to_string());
            }
        });
    }
    Ok(Json(GuidanceReply { workflow_id: doc.workflow_id, version: doc.version, note, resumed: resume }))
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct ResumeBody {
    force: bool,
}

async fn resume(State(s): State<Arc<Service>>, Path(id): Path<String>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let b: ResumeBody = parse(&body)?;
    let hub = s.hub(&id)?;
    let guard = s.writer(&hub)?;
    let outcome = blocking(move || {
        let _guard = guard;
        Ok(session::resume_run(&s.app.store, &id, b.force, &s.app.gateway, &mut |e| hub.push(e))?)
    })
    .await?;
    Ok(Json(outcome))
}

async fn decline(State(s): State<Arc<Service>>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    let hub = s.hub(&id)?;
    let guard = s.writer(&hub)?;
    let report = blocking(move || {
        let _guard = guard;
        Ok(session::decline_run(&s.app.store, &id, &mut |e| hub.push(e))?)
    })
    .await?;
    Ok(Json(report))
}

async fn get_report(State(s): State<Arc<Service>>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(blocking(move || Ok(s.app.store.load_bench_report(&id)?)).await?))
}

async fn not_found() -> ApiError {
    ApiError(AppError::NotFound("no such endpoint".into()))
}

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/v1/families", post(create_family))
        .route("/v1/families/{id}/explore", post(explore))
        .route("/v1/families/{id}/synthesize", post(synthesize))
        .route("/v1/workflows/{id}", get(get_workflow))
        .route("/v1/runs", post(start_run).get(list_runs))
        .route("/v1/runs/{id}", get(get_run))
        .route("/v1/runs/{id}/events", get(events))
        .route("/v1/runs/{id}/notification", get(notification))
        .route("/v1/runs/{id}/guidance", post(guidance))
        .route("/v1/runs/{id}/resume", post(resume))
        .route("/v1/runs/{id}/decline", post(decline))
        .route("/v1/reports/{id}", get(get_report))
        .fallback(not_found)
        .with_state(service)
}

pub async fn serve(service: Arc<Service>, addr: SocketAddr) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(service)).await?;
    Ok(())
}
