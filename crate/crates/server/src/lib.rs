//! HTTP JSON API over one planning session.
//!
//! Handlers only compose library calls; the session (current design and
//! timeline) lives behind a single lock and long recommendations run as
//! background jobs on a snapshot taken at submission.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use fairplan::allocator::{simulate, Simulation};
use fairplan::explain::{building_detail, heatmap, planning_indicators, summarize};
use fairplan::model::{apply_edits, Edit};
use fairplan::recommend::{recommend, RecommendConstraints};
use fairplan::scenario::Scenario;
use fairplan::store::{city_to_value, TimelineStore};
use fairplan::Error;
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::{Mutex, RwLock};

pub const DEFAULT_PORT: u16 = 8080;
pub const DEFAULT_SEED: u64 = 0;

/// Source of timeline timestamps.
pub trait Clock: Send + Sync {
    fn now(&self) -> String;
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> String {
        chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
    }
}

pub struct FixedClock(pub String);

impl Clock for FixedClock {
    fn now(&self) -> String {
        self.0.clone()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Job {
    Running,
    Done(Value),
    Failed(ApiError),
}

struct Shared {
    session: RwLock<Scenario>,
    timeline: Mutex<TimelineStore>,
    jobs: Mutex<BTreeMap<u64, Job>>,
    next_job: AtomicU64,
    clock: Box<dyn Clock>,
}

#[derive(Clone)]
pub struct AppState(Arc<Shared>);

impl AppState {
    /// Session starting from `scenario`, with its timeline under `data_dir/timeline`.
    pub fn new(scenario: Scenario, data_dir: impl Into<PathBuf>, clock: Box<dyn Clock>) -> fairplan::Result<Self> {
        let timeline = TimelineStore::open_with(data_dir.into().join("timeline"), &scenario.config)?;
        Ok(AppState(Arc::new(Shared {
            session: RwLock::new(scenario),
            timeline: Mutex::new(timeline),
            jobs: Mutex::new(BTreeMap::new()),
            next_job: AtomicU64::new(1),
            clock,
        })))
    }

    /// Waits for a job to leave the running state.
    pub async fn wait_for_job(&self, id: u64) -> Option<Job> {
        loop {
            match self.0.jobs.lock().await.get(&id) {
                None => return None,
                Some(Job::Running) => {}
                Some(done) => return Some(done.clone()),
            }
            tokio::time::sleep(std::time::Duration::from_millis(20)).await;
        }
    }
}

/// Error body `{code, message, details}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub details: Value,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
            details: Value::Null,
        }
    }

    pub fn body(&self) -> Value {
        json!({ "code": self.code, "message": self.message, "details": self.details })
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let message = e.to_string();
        let (status, code) = match &e {
            Error::UnknownId { .. } | Error::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            Error::Conflict(_) => (StatusCode::CONFLICT, "conflict"),
            Error::Validation(_) => (StatusCode::UNPROCESSABLE_ENTITY, "validation_failed"),
            Error::InvalidInput(_)
            | Error::Parse { .. }
            | Error::Domain(_)
            | Error::DegenerateFootprint(_)
            | Error::InfeasibleCalibration { .. }
            | Error::InfeasibleConstraints(_)
            | Error::TooManyPlayers { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_input"),
            Error::NonConvergence { .. } | Error::Lp(_) | Error::CorruptIndex(_) | Error::Io(_) => {
                (StatusCode::INTERNAL_SERVER_ERROR, "internal")
            }
        };
        let details = match &e {
            Error::Validation(v) => serde_json::to_value(v).unwrap_or(Value::Null),
            _ => Value::Null,
        };
        ApiError {
            status,
            code,
            message,
            details,
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "bad_request", r.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body())).into_response()
    }
}

type ApiResult = Result<Json<Value>, ApiError>;

fn to_json<T: serde::Serialize>(value: &T) -> Result<Value, ApiError> {
    serde_json::to_value(value).map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedQuery {
    pub seed: Option<u64>,
}

fn run_simulation(s: &Scenario, seed: Option<u64>) -> Result<Simulation, ApiError> {
    Ok(simulate(
        &s.design,
        &s.population,
        &s.config,
        seed.unwrap_or(DEFAULT_SEED),
    )?)
}

async fn get_design(State(app): State<AppState>) -> ApiResult {
    let s = app.0.session.read().await;
    Ok(Json(
        json!({ "revision": s.design.revision, "design": city_to_value(&s.design) }),
    ))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditRequest {
    /// Revision the client last saw.
    pub revision: u64,
    pub edits: Vec<Edit>,
}

async fn post_edits(State(app): State<AppState>, body: Result<Json<EditRequest>, JsonRejection>) -> ApiResult {
    let Json(req) = body?;
    let mut s = app.0.session.write().await;
    if req.revision != s.design.revision {
        let mut err = ApiError::new(
            StatusCode::CONFLICT,
            "stale_revision",
            format!(
                "edit against revision {} but current is {}",
                req.revision, s.design.revision
            ),
        );
        err.details = json!({ "current_revision": s.design.revision });
        return Err(err);
    }
    let next = apply_edits(&s.design, &req.edits)?;
    s.design = next;
    Ok(Json(
        json!({ "revision": s.design.revision, "design": city_to_value(&s.design) }),
    ))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateRequest {
    pub seed: Option<u64>,
}

async fn post_simulate(State(app): State<AppState>, body: Result<Json<SimulateRequest>, JsonRejection>) -> ApiResult {
    let Json(req) = body?;
    let s = app.0.session.read().await;
    let sim = run_simulation(&s, req.seed)?;
    Ok(Json(json!({
        "revision": s.design.revision,
        "allocation": {
            "seed": sim.allocation.seed,
            "gamma": sim.allocation.gamma,
            "ipf_iterations": sim.allocation.iterations,
            "allocated": sim.allocation.allocated_count(),
            "occupancy": sim.allocation.occupancy(),
            "assignments": sim.allocation.assignments,
        },
        "stats": to_json(&sim.stats)?,
        "inequality": to_json(&sim.inequality)?,
    })))
}

async fn get_indicators(State(app): State<AppState>) -> ApiResult {
    let s = app.0.session.read().await;
    Ok(Json(to_json(&planning_indicators(
        &s.design,
        &s.population,
        &s.config,
    ))?))
}

async fn get_heatmap(State(app): State<AppState>, Query(q): Query<SeedQuery>) -> ApiResult {
    let s = app.0.session.read().await;
    let sim = run_simulation(&s, q.seed)?;
    Ok(Json(to_json(&heatmap(&s.design, &sim))?))
}

async fn get_building_detail(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<SeedQuery>,
) -> ApiResult {
    let s = app.0.session.read().await;
    s.design.building(&id)?;
    let sim = run_simulation(&s, q.seed)?;
    Ok(Json(to_json(&building_detail(
        &s.design,
        &s.population,
        &s.config,
        &sim,
        &id,
    )?)?))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecommendRequest {
    /// Falls back to the session's default constraints.
    pub constraints: Option<RecommendConstraints>,
    pub seed: Option<u64>,
}

async fn post_recommend(
    State(app): State<AppState>,
    body: Result<Json<RecommendRequest>, JsonRejection>,
) -> Result<(StatusCode, Json<Value>), ApiError> {
    let Json(req) = body?;
    let snapshot = app.0.session.read().await.clone();
    let constraints = req.constraints.unwrap_or_else(|| snapshot.constraints.clone());
    constraints.validate()?;
    let seed = req.seed.unwrap_or(DEFAULT_SEED);
    let id = app.0.next_job.fetch_add(1, Ordering::SeqCst);
    app.0.jobs.lock().await.insert(id, Job::Running);
    let worker = app.clone();
    tokio::spawn(async move {
        let outcome = tokio::task::spawn_blocking(move || {
            recommend(
                &snapshot.design,
                &snapshot.population,
                &constraints,
                &snapshot.config,
                seed,
            )
        })
        .await;
        let job = match outcome {
            Ok(Ok(plan)) => match to_json(&plan) {
                Ok(v) => Job::Done(v),
                Err(e) => Job::Failed(e),
            },
            Ok(Err(e)) => Job::Failed(e.into()),
            Err(e) => Job::Failed(ApiError::new(
                StatusCode::INTERNAL_SERVER_ERROR,
                "internal",
                e.to_string(),
            )),
        };
        worker.0.jobs.lock().await.insert(id, job);
    });
    Ok((StatusCode::ACCEPTED, Json(json!({ "job_id": id, "status": "running" }))))
}

async fn get_job(State(app): State<AppState>, Path(id): Path<u64>) -> ApiResult {
    let jobs = app.0.jobs.lock().await;
    let job = jobs
        .get(&id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("job {id}")))?;
    Ok(Json(match job {
        Job::Running => json!({ "job_id": id, "status": "running" }),
        Job::Done(plan) => json!({ "job_id": id, "status": "done", "result": plan }),
        Job::Failed(e) => json!({ "job_id": id, "status": "failed", "error": e.body() }),
    }))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaveRequest {
    #[serde(default)]
    pub label: String,
    pub seed: Option<u64>,
}

async fn post_timeline_save(State(app): State<AppState>, body: Result<Json<SaveRequest>, JsonRejection>) -> ApiResult {
    let Json(req) = body?;
    let s = app.0.session.write().await;
    let seed = req.seed.unwrap_or(DEFAULT_SEED);
    let summary = summarize(&s.design, &run_simulation(&s, Some(seed))?);
    let timeline = app.0.timeline.lock().await;
    let entry = timeline.append(&s.design, &req.label, &app.0.clock.now(), seed, summary)?;
    Ok(Json(to_json(&entry)?))
}

async fn get_timeline(State(app): State<AppState>) -> ApiResult {
    let entries = app.0.timeline.lock().await.list()?;
    Ok(Json(json!({ "entries": to_json(&entries)? })))
}

async fn get_timeline_revision(State(app): State<AppState>, Path(revision): Path<u64>) -> ApiResult {
    let it = app.0.timeline.lock().await.get(revision)?;
    Ok(Json(
        json!({ "entry": to_json(&it.entry)?, "design": city_to_value(&it.design) }),
    ))
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/design", get(get_design))
        .route("/api/design/edits", post(post_edits))
        .route("/api/simulate", post(post_simulate))
        .route("/api/indicators", get(get_indicators))
        .route("/api/benefits/heatmap", get(get_heatmap))
        .route("/api/buildings/{id}/detail", get(get_building_detail))
        .route("/api/recommend", post(post_recommend))
        .route("/api/jobs/{id}", get(get_job))
        .route("/api/timeline/save", post(post_timeline_save))
        .route("/api/timeline", get(get_timeline))
        .route("/api/timeline/{revision}", get(get_timeline_revision))
        .fallback(not_found)
        .with_state(state)
}

/// Serves until the process is stopped.
pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state)).await
}
