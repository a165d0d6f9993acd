//! Session-oriented JSON HTTP interface to the engine.
//!
//! | method | path | |
//! |---|---|---|
//! | POST | `/sessions` | `{dataset, route, mode, matcher?, seed?}` → 201 |
//! | GET | `/sessions/{id}/observation` | 409 once finished |
//! | POST | `/sessions/{id}/action` | `{bin}`; human sessions only |
//! | POST | `/sessions/{id}/step` | one engine step; policy-driven sessions only |
//! | GET | `/sessions/{id}/log` | step records and summary |
//! | GET | `/datasets` | |
//! | GET | `/datasets/{id}/routes` | |

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::action::{bin_center, bin_of_angle, select_edge, ScriptedPolicy, BINS};
use crate::dataset::Dataset;
use crate::engine::{AgentBundle, Episode, EpisodeConfig, Outcome, Registry, Scoring, StepRecord};
use crate::error::NavError;
use crate::instruction::attention_weights;

pub const DEFAULT_PORT: u16 = 8080;
pub const DEFAULT_TTL: Duration = Duration::from_secs(3600);
pub const HUMAN_MODE: &str = "human";

enum Driver {
    Human(Scoring),
    Agent(AgentBundle),
}

struct Session {
    id: String,
    dataset: String,
    mode: String,
    episode: Episode,
    driver: Driver,
    created_at: std::time::SystemTime,
    last_used: Instant,
    flushed: bool,
}

pub struct AppState {
    datasets: BTreeMap<String, Dataset>,
    registry: Registry,
    config: EpisodeConfig,
    sessions: Mutex<HashMap<String, Arc<tokio::sync::Mutex<Session>>>>,
    ttl: Duration,
    log_dir: Option<PathBuf>,
}

impl AppState {
    pub fn new(datasets: Vec<Dataset>) -> Self {
        AppState {
            datasets: datasets.into_iter().map(|d| (d.id.clone(), d)).collect(),
            registry: Registry::default(),
            config: EpisodeConfig::default(),
            sessions: Mutex::new(HashMap::new()),
            ttl: DEFAULT_TTL,
            log_dir: None,
        }
    }

    pub fn with_registry(mut self, registry: Registry) -> Self {
        self.registry = registry;
        self
    }

    pub fn with_config(mut self, config: EpisodeConfig) -> Self {
        self.config = config;
        self
    }

    pub fn with_ttl(mut self, ttl: Duration) -> Self {
        self.ttl = ttl;
        self
    }

    /// Finished episodes are written to `<dir>/<session id>.jsonl`.
    pub fn with_log_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.log_dir = Some(dir.into());
        self
    }

    pub fn session_count(&self) -> usize {
        self.sessions.lock().unwrap().len()
    }

    /// Drops sessions idle for longer than the TTL.
    pub fn evict_expired(&self) -> usize {
        let now = Instant::now();
        let mut map = self.sessions.lock().unwrap();
        let before = map.len();
        map.retain(|_, s| match s.try_lock() {
            Ok(s) => now.duration_since(s.last_used) <= self.ttl,
            // in use right now, so not idle
            Err(_) => true,
        });
        before - map.len()
    }

    fn session(&self, id: &str) -> Result<Arc<tokio::sync::Mutex<Session>>, ApiError> {
        self.sessions
            .lock()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown session '{id}'")))
    }

    fn flush(&self, session: &mut Session) {
        if session.flushed || !session.episode.is_finished() {
            return;
        }
        session.flushed = true;
        if let Some(dir) = &self.log_dir {
            let path = dir.join(format!("{}.jsonl", session.id));
            if let Err(e) = std::fs::create_dir_all(dir).and_then(|_| {
                std::fs::write(&path, session.episode.log().to_jsonl())
            }) {
                log::warn!("could not write {}: {e}", path.display());
            }
        }
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    outcome: Option<Outcome>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
            outcome: None,
        }
    }

    fn finished(outcome: Outcome) -> Self {
        ApiError {
            status: StatusCode::CONFLICT,
            message: format!("episode finished: {outcome}"),
            outcome: Some(outcome),
        }
    }
}

impl From<NavError> for ApiError {
    fn from(e: NavError) -> Self {
        let status = match e {
            NavError::UnknownName { .. } | NavError::InvalidConfig(_) => StatusCode::BAD_REQUEST,
            NavError::EpisodeFinished => StatusCode::CONFLICT,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.message });
        if let Some(o) = self.outcome {
            body["outcome"] = json!(o);
        }
        (self.status, Json(body)).into_response()
    }
}

#[derive(Debug, Deserialize)]
pub struct CreateRequest {
    pub dataset: String,
    pub route: String,
    pub mode: String,
    /// Matcher setup for policy-driven modes; human sessions always use the
    /// ground-truth matcher so the episode stops at the goal by itself.
    #[serde(default)]
    pub matcher: Option<String>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Deserialize)]
pub struct ActRequest {
    pub bin: i64,
}

#[derive(Debug, Serialize)]
struct PairView {
    landmark: String,
    direction: String,
}

fn join(tokens: &[crate::instruction::Token]) -> String {
    tokens.iter().map(|t| t.text.as_str()).collect::<Vec<_>>().join(" ")
}

fn observation(s: &Session) -> Result<Value, ApiError> {
    let ep = &s.episode;
    let graph = ep.graph();
    let node = ep.node();
    let heading = ep.heading();
    let edges = graph.out_edges(node);
    let mut bin_targets = Vec::with_capacity(BINS);
    for bin in 0..BINS {
        bin_targets.push(select_edge(graph, node, bin_center(bin), heading).ok().map(|e| e.to));
    }
    let mut occupied = [false; BINS];
    for e in edges {
        occupied[bin_of_angle(e.bearing - heading)] = true;
    }
    let instr = &ep.spec().instruction.instruction;
    let att = ep.attention();
    let mem = ep.memory();
    let png = mem.to_png()?;
    Ok(json!({
        "session_id": s.id,
        "dataset": s.dataset,
        "route_id": ep.route_id(),
        "mode": s.mode,
        "created_at_unix": s.created_at.duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        "node": node,
        "heading": heading,
        "available_edges": edges.iter().map(|e| json!({
            "to": e.to,
            "bearing": e.bearing,
            "relative_bin": bin_of_angle(e.bearing - heading),
        })).collect::<Vec<_>>(),
        "bins": (0..BINS).map(|b| json!({
            "bin": b,
            "has_edge": occupied[b],
            "moves_to": bin_targets[b],
        })).collect::<Vec<_>>(),
        "instruction": {
            "text": instr.raw_text(),
            "pairs": instr.pairs().iter().map(|p| PairView {
                landmark: join(&p.landmark),
                direction: join(&p.direction),
            }).collect::<Vec<_>>(),
            "eta": att.eta,
            "aimed_pair": if att.is_exhausted() { None } else { Some(att.aimed_pair()) },
            "attention_weights": attention_weights(att.eta, att.segments),
        },
        "memory": {
            "png_base64": base64::engine::general_purpose::STANDARD.encode(png),
            "scale_m_per_px": mem.scale(),
            "trace_length": mem.trace().len(),
        },
        "steps": ep.steps(),
        "max_steps": ep.config().max_steps,
        "traveled_m": ep.traveled(),
        "budget_m": ep.budget(),
        "outcome": ep.outcome(),
        "done": ep.is_finished(),
    }))
}

fn step_response(s: &Session, records: Vec<StepRecord>) -> Result<Json<Value>, ApiError> {
    Ok(Json(json!({
        "records": records,
        "outcome": s.episode.outcome(),
        "done": s.episode.is_finished(),
        "observation": observation(s)?,
    })))
}

async fn create_session(
    State(st): State<Arc<AppState>>,
    body: Result<Json<CreateRequest>, JsonRejection>,
) -> Result<(StatusCode, Json<Value>), ApiError> {
    let Json(req) = body?;
    st.evict_expired();
    let ds = st
        .datasets
        .get(&req.dataset)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown dataset '{}'", req.dataset)))?;
    let spec = ds
        .episodes
        .get(&req.route)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown route '{}'", req.route)))?;
    let mut episode = Episode::reset(Arc::clone(&ds.world), &req.route, spec.clone(), st.config)?;

    let driver = if req.mode == HUMAN_MODE {
        let scoring = st.registry.scoring("oracle")?;
        episode.set_labels(HUMAN_MODE, "oracle", req.seed);
        episode.step_without_action(&scoring)?;
        Driver::Human(scoring)
    } else {
        if !st.registry.has_policy(&req.mode) {
            return Err(ApiError::new(StatusCode::BAD_REQUEST, format!("invalid mode '{}'", req.mode)));
        }
        let matcher = req.matcher.as_deref().unwrap_or("oracle");
        let mut bundle = st.registry.bundle(&req.mode, matcher, req.seed)?;
        episode.begin(&mut bundle, req.seed);
        Driver::Agent(bundle)
    };

    let id = uuid::Uuid::new_v4().simple().to_string();
    let session = Session {
        id: id.clone(),
        dataset: req.dataset,
        mode: req.mode,
        episode,
        driver,
        created_at: std::time::SystemTime::now(),
        last_used: Instant::now(),
        flushed: false,
    };
    let obs = observation(&session)?;
    st.sessions
        .lock()
        .unwrap()
        .insert(id.clone(), Arc::new(tokio::sync::Mutex::new(session)));
    Ok((StatusCode::CREATED, Json(json!({ "session_id": id, "observation": obs }))))
}

async fn observe(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let handle = st.session(&id)?;
    let mut s = handle.lock().await;
    s.last_used = Instant::now();
    if s.episode.is_finished() {
        return Err(ApiError::finished(s.episode.outcome()));
    }
    Ok(Json(observation(&s)?))
}

async fn act(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<ActRequest>, JsonRejection>,
) -> Result<Json<Value>, ApiError> {
    let Json(req) = body?;
    let handle = st.session(&id)?;
    let mut guard = handle.lock().await;
    let s = &mut *guard;
    s.last_used = Instant::now();
    if s.episode.is_finished() {
        return Err(ApiError::finished(s.episode.outcome()));
    }
    let Driver::Human(scoring) = &s.driver else {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            format!("'{}' sessions are driven by their policy; use /step", s.mode),
        ));
    };
    if !(0..BINS as i64).contains(&req.bin) {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, format!("bin {} outside 0..=7", req.bin)));
    }
    let mut policy = ScriptedPolicy::new([req.bin as usize]);
    let mut records = vec![s.episode.step_with(&mut policy, scoring)?];
    if let Some(r) = s.episode.step_without_action(scoring)? {
        records.push(r);
    }
    st.flush(s);
    step_response(s, records)
}

async fn step(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let handle = st.session(&id)?;
    let mut guard = handle.lock().await;
    let s = &mut *guard;
    s.last_used = Instant::now();
    if s.episode.is_finished() {
        return Err(ApiError::finished(s.episode.outcome()));
    }
    let Driver::Agent(bundle) = &mut s.driver else {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "human sessions move through /action"));
    };
    let record = s.episode.step(bundle)?;
    st.flush(s);
    step_response(s, vec![record])
}

async fn get_log(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let handle = st.session(&id)?;
    let mut s = handle.lock().await;
    s.last_used = Instant::now();
    let log = s.episode.log();
    Ok(Json(json!({ "steps": log.steps, "summary": log.summary })))
}

async fn list_datasets(State(st): State<Arc<AppState>>) -> Json<Value> {
    Json(json!(st
        .datasets
        .values()
        .map(|d| json!({
            "id": d.id,
            "nodes": d.world.graph.node_count(),
            "routes": d.episodes.len(),
        }))
        .collect::<Vec<_>>()))
}

async fn list_routes(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let ds = st
        .datasets
        .get(&id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown dataset '{id}'")))?;
    Ok(Json(json!(ds
        .episodes
        .iter()
        .map(|(rid, ep)| json!({
            "id": rid,
            "pairs": ep.instruction.instruction.len(),
            "length_m": ep.route.total_length(),
            "nodes": ep.route.node_ids().len(),
            "instruction": ep.instruction.instruction.raw_text(),
        }))
        .collect::<Vec<_>>())))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/observation", get(observe))
        .route("/sessions/{id}/action", post(act))
        .route("/sessions/{id}/step", post(step))
        .route("/sessions/{id}/log", get(get_log))
        .route("/datasets", get(list_datasets))
        .route("/datasets/{id}/routes", get(list_routes))
        .with_state(state)
}

/// Serves until Ctrl-C, evicting idle sessions once a minute.
pub async fn serve(addr: SocketAddr, state: Arc<AppState>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    let sweeper = Arc::clone(&state);
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(Duration::from_secs(60));
        loop {
            tick.tick().await;
            let n = sweeper.evict_expired();
            if n > 0 {
                log::info!("evicted {n} idle sessions");
            }
        }
    });
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

/// `NAVSIM_PORT`, or the default port.
pub fn port_from_env() -> u16 {
    std::env::var("NAVSIM_PORT")
        .ok()
        .and_then(|p| p.parse().ok())
        .unwrap_or(DEFAULT_PORT)
}
