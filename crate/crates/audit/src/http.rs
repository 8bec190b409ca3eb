//! JSON-over-HTTP API.
//!
//! Every request carries `Authorization: Bearer <token>`. Bodies and
//! responses carry `schema_version`; errors come back as
//! `{"schema_version":1,"error":{"code":..,"message":..}}`.

use std::collections::HashMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Redirect, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use parking_lot::Mutex;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::config::{ConfigError, Role, ServiceConfig};
use crate::model::{AuditTask, Correction, Diagnosis, Phase, Verdict, API_SCHEMA_VERSION};
use crate::store::{AuditError, AuditStore};

#[derive(Debug, Clone)]
struct Caller {
    worker_id: String,
    role: Role,
}

#[derive(Clone)]
pub struct AppState {
    store: Arc<Mutex<AuditStore>>,
    tokens: Arc<HashMap<String, Caller>>,
    video_url_template: Option<String>,
    qc_threshold: f64,
}

impl AppState {
    pub fn new(store: AuditStore, cfg: &ServiceConfig) -> Self {
        let tokens = cfg
            .workers
            .iter()
            .map(|w| {
                (
                    w.token.clone(),
                    Caller {
                        worker_id: w.id.clone(),
                        role: w.role,
                    },
                )
            })
            .collect();
        Self {
            store: Arc::new(Mutex::new(store)),
            tokens: Arc::new(tokens),
            video_url_template: cfg.video_url_template.clone(),
            qc_threshold: cfg.qc_threshold,
        }
    }

    pub fn store(&self) -> Arc<Mutex<AuditStore>> {
        self.store.clone()
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({
            "schema_version": API_SCHEMA_VERSION,
            "error": {"code": self.code, "message": self.message},
        });
        (self.status, Json(body)).into_response()
    }
}

impl From<AuditError> for ApiError {
    fn from(e: AuditError) -> Self {
        use AuditError::*;
        let (status, code) = match &e {
            UnknownDataset(_) | UnknownBatch(_) | UnknownTask(_) => (StatusCode::NOT_FOUND, "not_found"),
            UnknownWorker(_) => (StatusCode::FORBIDDEN, "forbidden"),
            UnknownAnnotation(_)
            | EmptyBatch
            | BadThreshold(_)
            | MissingCorrection
            | UnexpectedCorrection
            | ConflictingCorrection
            | EmptyQuery
            | InvalidSpan(_)
            | SpanOutOfBounds { .. } => (StatusCode::BAD_REQUEST, "invalid_request"),
            WrongWorker { .. } | SelfValidation => (StatusCode::FORBIDDEN, "forbidden"),
            DuplicateEnrollment { .. }
            | WrongState { .. }
            | BatchNotReady { .. }
            | BatchClosed(_)
            | ExportNotReady { .. } => (StatusCode::CONFLICT, "conflict"),
            Replay { .. } | Dataset(_) | Io(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        ApiError::new(status, code, e.to_string())
    }
}

type ApiResult = Result<Response, ApiError>;

fn ok(status: StatusCode, mut body: Value) -> ApiResult {
    body["schema_version"] = json!(API_SCHEMA_VERSION);
    Ok((status, Json(body)).into_response())
}

fn authenticate(app: &AppState, headers: &HeaderMap) -> Result<Caller, ApiError> {
    let token = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .ok_or_else(|| ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing bearer token"))?;
    app.tokens
        .get(token.trim())
        .cloned()
        .ok_or_else(|| ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "unknown token"))
}

fn require_admin(caller: &Caller) -> Result<(), ApiError> {
    match caller.role {
        Role::Admin => Ok(()),
        Role::Annotator => Err(ApiError::new(
            StatusCode::FORBIDDEN,
            "forbidden",
            "this action needs the admin role",
        )),
    }
}

#[derive(Deserialize)]
struct Versioned {
    schema_version: Option<u32>,
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    let bad = |m: String| ApiError::new(StatusCode::BAD_REQUEST, "invalid_request", m);
    let v: Versioned = serde_json::from_slice(body).map_err(|e| bad(e.to_string()))?;
    match v.schema_version {
        Some(API_SCHEMA_VERSION) => {}
        Some(other) => return Err(bad(format!("unsupported schema_version {other}"))),
        None => return Err(bad("schema_version is required".into())),
    }
    serde_json::from_slice(body).map_err(|e| bad(e.to_string()))
}

#[derive(Deserialize)]
struct CreateBatch {
    dataset: String,
    annotation_ids: Vec<String>,
    qc_threshold: Option<f64>,
}

#[derive(Deserialize)]
struct Assign {
    phase: Phase,
}

#[derive(Deserialize)]
struct Review {
    diagnosis: Diagnosis,
    #[serde(default)]
    correction: Option<Correction>,
}

#[derive(Deserialize)]
struct Validate {
    verdict: Verdict,
    #[serde(default)]
    note: Option<String>,
}

/// A task plus what a reviewer needs to look at.
#[derive(Serialize)]
struct TaskView {
    task: AuditTask,
    query: String,
    span: [f64; 2],
    duration: f64,
    video_url: Option<String>,
    /// Tasks of the same batch on the same video, this one included.
    video_group: Vec<String>,
}

fn task_view(app: &AppState, store: &AuditStore, task: &AuditTask) -> Result<TaskView, ApiError> {
    let (a, duration) = store
        .annotation_of(task)
        .ok_or_else(|| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", "task lost its annotation"))?;
    let video_group = store
        .video_group(&task.task_id)?
        .into_iter()
        .map(|t| t.task_id.clone())
        .collect();
    Ok(TaskView {
        task: task.clone(),
        query: a.query.clone(),
        span: [a.span.start(), a.span.end()],
        duration,
        video_url: video_url(app, &task.video_id),
        video_group,
    })
}

fn video_url(app: &AppState, video_id: &str) -> Option<String> {
    app.video_url_template
        .as_ref()
        .map(|t| t.replace("{video_id}", video_id))
}

async fn health() -> ApiResult {
    ok(StatusCode::OK, json!({"status": "ok"}))
}

async fn create_batch(State(app): State<AppState>, headers: HeaderMap, body: Bytes) -> ApiResult {
    let caller = authenticate(&app, &headers)?;
    require_admin(&caller)?;
    let req: CreateBatch = parse_body(&body)?;
    let mut store = app.store.lock();
    let batch = store.create_batch(
        &req.dataset,
        req.annotation_ids,
        req.qc_threshold.unwrap_or(app.qc_threshold),
    )?;
    ok(StatusCode::CREATED, json!({"batch": batch}))
}

async fn get_batch(State(app): State<AppState>, headers: HeaderMap, Path(id): Path<String>) -> ApiResult {
    authenticate(&app, &headers)?;
    let store = app.store.lock();
    ok(StatusCode::OK, json!({"batch": store.batch(&id)?}))
}

async fn run_qc(State(app): State<AppState>, headers: HeaderMap, Path(id): Path<String>) -> ApiResult {
    let caller = authenticate(&app, &headers)?;
    require_admin(&caller)?;
    let mut store = app.store.lock();
    let qc = store.batch_qc(&id)?;
    ok(StatusCode::OK, json!({"qc": qc, "batch": store.batch(&id)?}))
}

async fn assign(State(app): State<AppState>, headers: HeaderMap, body: Bytes) -> ApiResult {
    let caller = authenticate(&app, &headers)?;
    let req: Assign = parse_body(&body)?;
    let mut store = app.store.lock();
    let task = store.assign_next(&caller.worker_id, req.phase)?;
    let view = task.map(|t| task_view(&app, &store, &t)).transpose()?;
    ok(StatusCode::OK, json!({"task": view}))
}

async fn get_task(State(app): State<AppState>, headers: HeaderMap, Path(id): Path<String>) -> ApiResult {
    authenticate(&app, &headers)?;
    let store = app.store.lock();
    let task = store.task(&id)?;
    ok(StatusCode::OK, json!({"task": task_view(&app, &store, task)?}))
}

async fn review(
    State(app): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult {
    let caller = authenticate(&app, &headers)?;
    let req: Review = parse_body(&body)?;
    let mut store = app.store.lock();
    let task = store.submit_review(&id, &caller.worker_id, req.diagnosis, req.correction)?;
    ok(StatusCode::OK, json!({"task": task}))
}

async fn validate(
    State(app): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult {
    let caller = authenticate(&app, &headers)?;
    let req: Validate = parse_body(&body)?;
    let mut store = app.store.lock();
    let task = store.submit_validation(&id, &caller.worker_id, req.verdict, req.note)?;
    ok(StatusCode::OK, json!({"task": task}))
}

async fn export(State(app): State<AppState>, headers: HeaderMap, Path(dataset): Path<String>) -> ApiResult {
    let caller = authenticate(&app, &headers)?;
    require_admin(&caller)?;
    let e = app.store.lock().export(&dataset)?;
    ok(
        StatusCode::OK,
        json!({"dataset": e.dataset, "jsonl": e.jsonl, "ledger": e.ledger}),
    )
}

async fn video(State(app): State<AppState>, headers: HeaderMap, Path(id): Path<String>) -> ApiResult {
    authenticate(&app, &headers)?;
    let known = app.store.lock().datasets().any(|d| d.video(&id).is_some());
    if !known {
        return Err(ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("unknown video '{id}'")));
    }
    match video_url(&app, &id) {
        Some(url) => Ok(Redirect::temporary(&url).into_response()),
        None => Err(ApiError::new(
            StatusCode::NOT_FOUND,
            "not_found",
            "no video_url_template configured",
        )),
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/batches", post(create_batch))
        .route("/batches/{id}", get(get_batch))
        .route("/batches/{id}/qc", post(run_qc))
        .route("/assign", post(assign))
        .route("/tasks/{id}", get(get_task))
        .route("/tasks/{id}/review", post(review))
        .route("/tasks/{id}/validate", post(validate))
        .route("/export/{dataset}", get(export))
        .route("/videos/{id}", get(video))
        .with_state(state)
}

#[derive(Debug, Error)]
pub enum ServeError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Audit(#[from] AuditError),
    #[error("server: {0}")]
    Io(#[from] std::io::Error),
}

/// Builds the store from the config and serves until ctrl-c.
pub fn run(cfg: &ServiceConfig) -> Result<(), ServeError> {
    cfg.validate()?;
    let datasets = cfg.load_datasets()?;
    let store = match &cfg.event_log {
        Some(path) => AuditStore::open(datasets, cfg.worker_ids(), path)?,
        None => AuditStore::new(datasets, cfg.worker_ids()),
    };
    let app = router(AppState::new(store, cfg));
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&cfg.bind).await?;
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
    })?;
    Ok(())
}
