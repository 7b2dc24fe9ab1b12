//! Ground-station backend: start missions, steer them with instructions and
//! pause/resume/abort commands, and stream their state as server-sent events.
//!
//! Payload schemas are described in `docs/service-api.md`.

pub mod runtime;
pub mod snapshot;

use std::collections::HashMap;
use std::convert::Infallible;
use std::future::Future;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use coverage_pilot::grid::{generate_map, GridMap};
use coverage_pilot::mission::{default_max_steps, Mission, MissionConfig, MissionError};
use coverage_pilot::proposer::Proposer;
use futures::{Stream, StreamExt};
use serde_json::json;
use tokio::sync::{broadcast, oneshot, watch};

use runtime::{Command, MissionHandle, RunOptions};
use snapshot::{
    ControlAck, ControlRequest, ErrorBody, InstructionAck, InstructionRequest, MapSpec, StartRequest, StartResponse,
    StateSnapshot,
};

/// Environment variable holding the listen address.
pub const ADDR_ENV: &str = "COVERAGE_PILOT_ADDR";
pub const DEFAULT_ADDR: &str = "127.0.0.1:8080";

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub step_interval: Duration,
    /// Snapshots buffered per subscriber before it is resynchronised.
    pub stream_buffer: usize,
    pub mission: MissionConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self { step_interval: Duration::from_millis(250), stream_buffer: 256, mission: MissionConfig::default() }
    }
}

struct Inner {
    proposer: Arc<dyn Proposer>,
    config: ServiceConfig,
    missions: Mutex<HashMap<String, Arc<MissionHandle>>>,
    counter: AtomicU64,
    closing: watch::Sender<bool>,
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

impl AppState {
    pub fn new(proposer: Arc<dyn Proposer>, config: ServiceConfig) -> Self {
        let (closing, _) = watch::channel(false);
        Self {
            inner: Arc::new(Inner {
                proposer,
                config,
                missions: Mutex::new(HashMap::new()),
                counter: AtomicU64::new(0),
                closing,
            }),
        }
    }

    pub fn mission(&self, id: &str) -> Option<Arc<MissionHandle>> {
        self.inner.missions.lock().unwrap().get(id).cloned()
    }

    fn all(&self) -> Vec<Arc<MissionHandle>> {
        let mut all: Vec<_> = self.inner.missions.lock().unwrap().values().cloned().collect();
        all.sort_by(|a, b| a.id.cmp(&b.id));
        all
    }

    /// Writes a replay file for every mission that has not ended.
    pub fn checkpoint(&self, dir: &Path) -> std::io::Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        self.all().iter().filter(|m| !m.status().is_terminal()).map(|m| m.checkpoint(dir)).collect()
    }

    /// Ends every open stream and stops all mission threads.
    pub fn close(&self) {
        let _ = self.inner.closing.send(true);
        for m in self.all() {
            m.shutdown();
        }
    }

    pub fn start(&self, req: StartRequest) -> Result<StartResponse, ApiError> {
        let map = match &req.map {
            MapSpec::Generate { width, height, density, seed } => {
                if !(0.0..1.0).contains(density) {
                    return Err(ApiError::bad_request(format!("map.density: {density} outside [0, 1)")));
                }
                generate_map(*width, *height, *density, *seed)
            }
            MapSpec::File(file) => GridMap::from_file(file),
            MapSpec::Path(path) => GridMap::load(path),
        }
        .map_err(|e| ApiError::bad_request(format!("map: {e}")))?;
        if req.namespace.is_empty() || !req.namespace.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(ApiError::bad_request("namespace: use letters, digits and underscores"));
        }
        let mut config = req.config.unwrap_or(self.inner.config.mission);
        if let Some(p) = req.planner {
            config.planner = p;
        }
        let max_steps = req.max_steps.unwrap_or_else(|| default_max_steps(&map));
        let mission = Mission::launch(map, &req.instruction, self.inner.proposer.clone(), config, req.seed)
            .map_err(|e| match e {
                MissionError::Instruction(e) => ApiError::bad_request(format!("instruction: {e}")),
                MissionError::Config(e) => ApiError::bad_request(format!("config: {e}")),
                e => ApiError::bad_request(format!("map: {e}")),
            })?;

        let mut missions = self.inner.missions.lock().unwrap();
        let running: Vec<Arc<MissionHandle>> =
            missions.values().filter(|m| m.namespace == req.namespace && !m.status().is_terminal()).cloned().collect();
        if !running.is_empty() && !req.replace {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                format!("mission {} is still running in namespace {}; set replace to abort it", running[0].id, req.namespace),
            ));
        }
        for old in running {
            let (reply, _) = oneshot::channel();
            old.send(Command::Control { command: snapshot::ControlCommand::Abort, reply });
        }
        let n = self.inner.counter.fetch_add(1, Ordering::SeqCst) + 1;
        let id = format!("{}-{n}", req.namespace);
        let opts = RunOptions {
            step_interval: req.step_interval_ms.map(Duration::from_millis).unwrap_or(self.inner.config.step_interval),
            max_steps,
            buffer: self.inner.config.stream_buffer,
            seed: req.seed,
        };
        let handle = MissionHandle::spawn(id.clone(), req.namespace.clone(), mission, opts);
        let status = handle.status();
        missions.insert(id.clone(), handle);
        log::info!("started mission {id}");
        Ok(StartResponse { id, status })
    }
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, message: message.into() }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("no mission with id {id}"))
    }

    fn stopped(id: &str) -> Self {
        Self::new(StatusCode::GONE, format!("mission {id} is no longer running"))
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        Self::new(r.status(), r.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { error: self.message })).into_response()
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/", get(metadata))
        .route("/missions", post(start_mission))
        .route("/missions/{id}/instruction", post(post_instruction))
        .route("/missions/{id}/control", post(control))
        .route("/missions/{id}/state", get(current_state))
        .route("/missions/{id}/stream", get(stream_state))
        .with_state(state)
}

/// Serves until `shutdown` resolves, then closes open streams.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: AppState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let closer = state.clone();
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async move {
            shutdown.await;
            let _ = closer.inner.closing.send(true);
        })
        .await
}

async fn metadata(State(state): State<AppState>) -> Json<serde_json::Value> {
    let missions: Vec<_> = state.all().iter().map(|m| json!({ "id": m.id, "status": m.status() })).collect();
    Json(json!({
        "service": "coverage-pilot",
        "version": env!("CARGO_PKG_VERSION"),
        "endpoints": [
            "POST /missions",
            "POST /missions/{id}/instruction",
            "POST /missions/{id}/control",
            "GET /missions/{id}/state",
            "GET /missions/{id}/stream",
        ],
        "missions": missions,
    }))
}

async fn start_mission(
    State(state): State<AppState>,
    payload: Result<Json<StartRequest>, JsonRejection>,
) -> Result<(StatusCode, Json<StartResponse>), ApiError> {
    let Json(req) = payload?;
    let resp = tokio::task::spawn_blocking(move || state.start(req)).await.expect("start task")?;
    Ok((StatusCode::CREATED, Json(resp)))
}

async fn post_instruction(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    payload: Result<Json<InstructionRequest>, JsonRejection>,
) -> Result<Json<InstructionAck>, ApiError> {
    let mission = state.mission(&id).ok_or_else(|| ApiError::not_found(&id))?;
    let Json(req) = payload?;
    if req.text.trim().is_empty() {
        return Err(ApiError::bad_request("text: instruction must not be empty"));
    }
    let (reply, rx) = oneshot::channel();
    if !mission.send(Command::Instruction { text: req.text, reply }) {
        return Err(ApiError::stopped(&id));
    }
    match rx.await {
        Ok(Ok(ack)) => Ok(Json(ack)),
        Ok(Err(MissionError::Failed)) => Err(ApiError::new(StatusCode::CONFLICT, MissionError::Failed.to_string())),
        Ok(Err(e)) => Err(ApiError::bad_request(e.to_string())),
        Err(_) => Err(ApiError::stopped(&id)),
    }
}

async fn control(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    payload: Result<Json<ControlRequest>, JsonRejection>,
) -> Result<Json<ControlAck>, ApiError> {
    let mission = state.mission(&id).ok_or_else(|| ApiError::not_found(&id))?;
    let Json(req) = payload?;
    let (reply, rx) = oneshot::channel();
    if !mission.send(Command::Control { command: req.command, reply }) {
        return Err(ApiError::stopped(&id));
    }
    rx.await.map(Json).map_err(|_| ApiError::stopped(&id))
}

async fn current_state(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Json<StateSnapshot>, ApiError> {
    let mission = state.mission(&id).ok_or_else(|| ApiError::not_found(&id))?;
    Ok(Json(mission.hub.latest()))
}

#[derive(Debug, Clone, PartialEq)]
pub enum StreamItem {
    Snapshot(Box<StateSnapshot>),
    /// The subscriber fell behind by this many snapshots; the next item is
    /// the current snapshot.
    Resync(u64),
}

fn event(item: StreamItem) -> Event {
    match item {
        StreamItem::Snapshot(s) => {
            Event::default().event("snapshot").id(s.seq.to_string()).json_data(&s).expect("serializable")
        }
        StreamItem::Resync(missed) => {
            Event::default().event("resync").json_data(json!({ "missed": missed })).expect("serializable")
        }
    }
}

struct Subscription {
    mission: Arc<MissionHandle>,
    rx: broadcast::Receiver<StateSnapshot>,
    closing: watch::Receiver<bool>,
    pending: Vec<StreamItem>,
    last_seq: u64,
}

/// Current snapshot first, then every later snapshot in order. A subscriber
/// that falls behind the buffer gets a resync marker followed by the
/// current snapshot.
pub fn snapshot_stream(mission: Arc<MissionHandle>, closing: watch::Receiver<bool>) -> impl Stream<Item = StreamItem> {
    let (first, rx) = mission.hub.subscribe();
    let sub = Subscription { mission, rx, closing, last_seq: first.seq, pending: vec![StreamItem::Snapshot(Box::new(first))] };
    futures::stream::unfold(sub, |mut sub| async move {
        loop {
            if let Some(item) = sub.pending.pop() {
                return Some((item, sub));
            }
            if *sub.closing.borrow() {
                return None;
            }
            let next = tokio::select! {
                r = sub.rx.recv() => r,
                _ = sub.closing.changed() => return None,
            };
            match next {
                Ok(s) if s.seq > sub.last_seq => {
                    sub.last_seq = s.seq;
                    return Some((StreamItem::Snapshot(Box::new(s)), sub));
                }
                Ok(_) => {}
                Err(broadcast::error::RecvError::Lagged(missed)) => {
                    let (current, rx) = sub.mission.hub.subscribe();
                    sub.rx = rx;
                    sub.last_seq = current.seq;
                    // popped from the back: marker first, then the snapshot
                    sub.pending = vec![StreamItem::Snapshot(Box::new(current)), StreamItem::Resync(missed)];
                }
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    })
}

async fn stream_state(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let mission = state.mission(&id).ok_or_else(|| ApiError::not_found(&id))?;
    let stream = snapshot_stream(mission, state.inner.closing.subscribe()).map(|item| Ok(event(item)));
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}
