//! HTTP front end and the single writer that owns the project.
//!
//! Handlers send commands over a channel to one thread that owns the
//! [`Project`]; that thread applies them in arrival order. A complete batch
//! is retrained on a separate thread from a copied snapshot of the training
//! data, and the result comes back through the same channel, so requests
//! keep being served from the previous model while training runs.

use std::collections::HashMap;
use std::sync::mpsc;
use std::sync::Arc;
use std::thread;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use log::{error, info, warn};
use nerloop_core::active::LoopError;
use nerloop_core::{AnnotationRecord, CrfModel, Tag};
use serde::Serialize;
use tokio::sync::oneshot;

use crate::api::*;
use crate::config::Identity;
use crate::project::{Project, ProjectError};

pub const TOKEN_HEADER: &str = "x-annotator-token";

pub fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

type Reply<T> = oneshot::Sender<Result<T, ProjectError>>;

enum Command {
    NextSample(String, Reply<NextSample>),
    Submit(Box<AnnotationRecord>, Reply<SubmitAck>),
    Inspection(Reply<ModelInspection>),
    SetMode(MetricMode, Reply<ModelInspection>),
    Overview(Reply<TaskOverview>),
    Scheme(Reply<SchemeView>),
    Annotations(Reply<Vec<AnnotationRecord>>),
    Save(Reply<()>),
    Retrained(Result<CrfModel, String>, f64),
    Shutdown(Reply<()>),
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeView {
    pub entity_types: Vec<String>,
    pub tags: Vec<Tag>,
}

/// Cloneable sender side of the writer thread.
#[derive(Clone)]
pub struct ServiceHandle {
    tx: mpsc::Sender<Command>,
}

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error(transparent)]
    Project(#[from] ProjectError),
    #[error("the project writer has stopped")]
    Stopped,
}

impl ServiceHandle {
    /// Starts the writer thread. A batch left complete by an earlier run is
    /// retrained straight away.
    pub fn spawn(project: Project) -> (Self, thread::JoinHandle<()>) {
        let (tx, rx) = mpsc::channel();
        let handle = Self { tx: tx.clone() };
        let join = thread::Builder::new()
            .name("project-writer".into())
            .spawn(move || writer(project, rx, tx))
            .expect("spawn writer thread");
        (handle, join)
    }

    async fn call<T>(&self, make: impl FnOnce(Reply<T>) -> Command) -> Result<T, ServiceError> {
        let (reply, rx) = oneshot::channel();
        self.tx.send(make(reply)).map_err(|_| ServiceError::Stopped)?;
        Ok(rx.await.map_err(|_| ServiceError::Stopped)??)
    }

    pub async fn next_sample(&self, annotator: &str) -> Result<NextSample, ServiceError> {
        let a = annotator.to_string();
        self.call(|r| Command::NextSample(a, r)).await
    }

    pub async fn submit(&self, record: AnnotationRecord) -> Result<SubmitAck, ServiceError> {
        self.call(|r| Command::Submit(Box::new(record), r)).await
    }

    pub async fn inspection(&self) -> Result<ModelInspection, ServiceError> {
        self.call(Command::Inspection).await
    }

    pub async fn set_mode(&self, mode: MetricMode) -> Result<ModelInspection, ServiceError> {
        self.call(|r| Command::SetMode(mode, r)).await
    }

    pub async fn overview(&self) -> Result<TaskOverview, ServiceError> {
        self.call(Command::Overview).await
    }

    pub async fn scheme(&self) -> Result<SchemeView, ServiceError> {
        self.call(Command::Scheme).await
    }

    pub async fn annotations(&self) -> Result<Vec<AnnotationRecord>, ServiceError> {
        self.call(Command::Annotations).await
    }

    pub async fn save(&self) -> Result<(), ServiceError> {
        self.call(Command::Save).await
    }

    /// Writes a final snapshot and stops the writer. A retrain still
    /// running is abandoned and resumes on the next start.
    pub async fn shutdown(&self) -> Result<(), ServiceError> {
        self.call(Command::Shutdown).await
    }
}

fn writer(mut project: Project, rx: mpsc::Receiver<Command>, tx: mpsc::Sender<Command>) {
    loop {
        match project.take_retrain_job() {
            Ok(Some(job)) => {
                let tx = tx.clone();
                info!("retraining round {} on {} instances", job.round, job.data.len());
                thread::spawn(move || {
                    let t0 = Instant::now();
                    let result = job.run().map_err(|e| e.to_string());
                    let _ = tx.send(Command::Retrained(result, t0.elapsed().as_secs_f64()));
                });
            }
            Ok(None) => {}
            Err(e) => {
                error!("cannot prepare retrain: {e}");
                project.retrain_failed();
            }
        }
        let Ok(cmd) = rx.recv() else { break };
        match cmd {
            Command::NextSample(a, r) => {
                let _ = r.send(project.next_sample(&a, now_ms()));
            }
            Command::Submit(rec, r) => {
                let _ = r.send(project.submit(*rec, now_ms()));
            }
            Command::Inspection(r) => {
                let _ = r.send(Ok(project.inspection()));
            }
            Command::SetMode(mode, r) => {
                let _ = r.send(project.set_metric_mode(mode).map(|_| project.inspection()));
            }
            Command::Overview(r) => {
                let _ = r.send(Ok(project.overview(now_ms())));
            }
            Command::Scheme(r) => {
                let scheme = project.state().model().scheme();
                let _ = r.send(Ok(SchemeView {
                    entity_types: scheme.entity_types().to_vec(),
                    tags: scheme.tags(),
                }));
            }
            Command::Annotations(r) => {
                let _ = r.send(Ok(project.all_annotations()));
            }
            Command::Save(r) => {
                let _ = r.send(project.save());
            }
            Command::Retrained(Ok(model), seconds) => {
                if let Err(e) = project.complete_retrain(model, Some(seconds)) {
                    error!("cannot close round: {e}");
                    project.retrain_failed();
                }
            }
            Command::Retrained(Err(e), _) => {
                error!("retrain failed: {e}");
                project.retrain_failed();
            }
            Command::Shutdown(r) => {
                let _ = r.send(project.save());
                return;
            }
        }
    }
    if let Err(e) = project.save() {
        warn!("final snapshot failed: {e}");
    }
}

#[derive(Clone)]
struct AppState {
    handle: ServiceHandle,
    identities: Arc<HashMap<String, Identity>>,
}

pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, error: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                error: error.into(),
                message: message.into(),
            },
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        let msg = e.to_string();
        let ServiceError::Project(p) = e else {
            return Self::new(StatusCode::SERVICE_UNAVAILABLE, "stopped", msg);
        };
        let (status, code) = match &p {
            ProjectError::Loop(LoopError::NotQueried(_)) => (StatusCode::CONFLICT, "not_queried"),
            ProjectError::Loop(LoopError::NoOpenRound) => (StatusCode::CONFLICT, "round_not_open"),
            ProjectError::Loop(LoopError::Annotation(_) | LoopError::Corpus(_)) => {
                (StatusCode::UNPROCESSABLE_ENTITY, "invalid_annotation")
            }
            ProjectError::NoLease { .. } => (StatusCode::CONFLICT, "no_lease"),
            ProjectError::LeasedToOther { .. } => (StatusCode::CONFLICT, "leased_to_other"),
            ProjectError::InstanceComplete(_) => (StatusCode::CONFLICT, "instance_complete"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        Self::new(status, code, msg)
    }
}

fn identify(state: &AppState, headers: &HeaderMap) -> Result<Identity, ApiError> {
    headers
        .get(TOKEN_HEADER)
        .and_then(|v| v.to_str().ok())
        .and_then(|t| state.identities.get(t).cloned())
        .ok_or_else(|| ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or unknown annotator token"))
}

fn annotator(state: &AppState, headers: &HeaderMap) -> Result<String, ApiError> {
    match identify(state, headers)? {
        Identity::Annotator(a) => Ok(a),
        Identity::Admin => Err(ApiError::new(StatusCode::FORBIDDEN, "forbidden", "the admin token cannot annotate")),
    }
}

fn admin(state: &AppState, headers: &HeaderMap) -> Result<(), ApiError> {
    match identify(state, headers)? {
        Identity::Admin => Ok(()),
        Identity::Annotator(_) => Err(ApiError::new(StatusCode::FORBIDDEN, "forbidden", "admin token required")),
    }
}

fn payload<T>(body: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    body.map(|Json(v)| v)
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_payload", e.body_text()))
}

type ApiResult<T> = Result<Json<T>, ApiError>;

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

async fn next_sample(State(s): State<AppState>, headers: HeaderMap) -> ApiResult<NextSample> {
    let who = annotator(&s, &headers)?;
    Ok(Json(s.handle.next_sample(&who).await?))
}

async fn feedback(
    State(s): State<AppState>,
    headers: HeaderMap,
    body: Result<Json<AnnotationRecord>, JsonRejection>,
) -> ApiResult<SubmitAck> {
    let who = annotator(&s, &headers)?;
    let record = payload(body)?;
    if record.annotator_id != who {
        return Err(ApiError::new(
            StatusCode::FORBIDDEN,
            "forbidden",
            format!("token belongs to `{who}`, record names `{}`", record.annotator_id),
        ));
    }
    Ok(Json(s.handle.submit(record).await?))
}

async fn inspection(State(s): State<AppState>, headers: HeaderMap) -> ApiResult<ModelInspection> {
    identify(&s, &headers)?;
    Ok(Json(s.handle.inspection().await?))
}

async fn set_mode(
    State(s): State<AppState>,
    headers: HeaderMap,
    body: Result<Json<ModeRequest>, JsonRejection>,
) -> ApiResult<ModelInspection> {
    identify(&s, &headers)?;
    let req = payload(body)?;
    Ok(Json(s.handle.set_mode(req.mode).await?))
}

async fn overview(State(s): State<AppState>, headers: HeaderMap) -> ApiResult<TaskOverview> {
    identify(&s, &headers)?;
    Ok(Json(s.handle.overview().await?))
}

async fn scheme(State(s): State<AppState>, headers: HeaderMap) -> ApiResult<SchemeView> {
    identify(&s, &headers)?;
    Ok(Json(s.handle.scheme().await?))
}

async fn save(State(s): State<AppState>, headers: HeaderMap) -> ApiResult<serde_json::Value> {
    admin(&s, &headers)?;
    s.handle.save().await?;
    Ok(Json(serde_json::json!({ "saved": true })))
}

async fn annotations(State(s): State<AppState>, headers: HeaderMap) -> ApiResult<Vec<AnnotationRecord>> {
    admin(&s, &headers)?;
    Ok(Json(s.handle.annotations().await?))
}

/// The API routes over a running writer.
pub fn router(handle: ServiceHandle, identities: HashMap<String, Identity>) -> Router {
    let state = AppState {
        handle,
        identities: Arc::new(identities),
    };
    Router::new()
        .route("/api/health", get(health))
        .route("/api/next-sample", get(next_sample))
        .route("/api/feedback", post(feedback))
        .route("/api/inspection", get(inspection))
        .route("/api/inspection/mode", put(set_mode))
        .route("/api/overview", get(overview))
        .route("/api/scheme", get(scheme))
        .route("/api/admin/save", post(save))
        .route("/api/admin/annotations", get(annotations))
        .with_state(state)
}

/// Serves until `shutdown` resolves, then writes a final snapshot.
pub async fn serve(
    listener: tokio::net::TcpListener,
    project: Project,
    identities: HashMap<String, Identity>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> Result<(), ServiceError> {
    let (handle, join) = ServiceHandle::spawn(project);
    let app = router(handle.clone(), identities);
    if let Ok(addr) = listener.local_addr() {
        info!("listening on http://{addr}");
    }
    if let Err(e) = axum::serve(listener, app).with_graceful_shutdown(shutdown).await {
        error!("server error: {e}");
    }
    let result = handle.shutdown().await;
    let _ = tokio::task::spawn_blocking(move || join.join()).await;
    result
}
