//! HTTP+JSON front end.
//!
//! | method | path | body | response |
//! |---|---|---|---|
//! | POST | `/studies` | study spec | 201, study info |
//! | GET | `/studies` | | study list |
//! | POST | `/studies/{id}/sessions` | `{alias, seed?}` | 201, session info |
//! | GET | `/studies/{id}/report` | | report over completed sessions |
//! | GET | `/sessions/{sid}` | | session progress |
//! | GET | `/sessions/{sid}/trials/next` | | PNG with `x-trial-*` headers, or 204 when done |
//! | POST | `/sessions/{sid}/judgments` | `{trial_id, verdict}` | acknowledgment |
//!
//! Errors are `{"code": ..., "message": ...}` with 400, 404, 409 (trial
//! already judged), 412 (trial not current) or 500.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;
use uuid::Uuid;

use crate::error::StudyError;
use crate::protocol::{StudySpec, Verdict};
use crate::service::StudyService;

pub const TRIAL_ID: &str = "x-trial-id";
pub const TRIAL_NUMBER: &str = "x-trial-number";
pub const TRIAL_TOTAL: &str = "x-trial-total";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

pub struct ApiError(StudyError);

impl From<StudyError> for ApiError {
    fn from(e: StudyError) -> Self {
        Self(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            StudyError::NotFound(_) => StatusCode::NOT_FOUND,
            StudyError::Conflict(_) => StatusCode::CONFLICT,
            StudyError::Precondition(_) => StatusCode::PRECONDITION_FAILED,
            StudyError::Invalid(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if status == StatusCode::INTERNAL_SERVER_ERROR {
            log::error!("{}", self.0);
        }
        let body = ErrorBody { code: self.0.code().to_string(), message: self.0.to_string() };
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse_id(kind: &str, raw: &str) -> ApiResult<Uuid> {
    raw.parse().map_err(|_| StudyError::NotFound(format!("no {kind} {raw}")).into())
}

fn body<T>(json: Result<Json<T>, JsonRejection>) -> ApiResult<T> {
    json.map(|Json(v)| v).map_err(|e| StudyError::Invalid(e.body_text()).into())
}

/// Runs a service call off the async workers; calls may fsync or decode.
async fn blocking<T: Send + 'static>(
    svc: &Arc<StudyService>,
    f: impl FnOnce(&StudyService) -> Result<T, StudyError> + Send + 'static,
) -> ApiResult<T> {
    let svc = Arc::clone(svc);
    tokio::task::spawn_blocking(move || f(&svc))
        .await
        .map_err(|e| ApiError(StudyError::Invalid(format!("worker failed: {e}"))))?
        .map_err(ApiError)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OpenSession {
    pub alias: String,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Judgment {
    pub trial_id: Uuid,
    pub verdict: Verdict,
}

async fn create_study(
    State(svc): State<Arc<StudyService>>,
    spec: Result<Json<StudySpec>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let spec = body(spec)?;
    let info = blocking(&svc, move |s| s.create_study(&spec)).await?;
    Ok((StatusCode::CREATED, Json(info)))
}

async fn list_studies(State(svc): State<Arc<StudyService>>) -> impl IntoResponse {
    Json(svc.studies())
}

async fn open_session(
    State(svc): State<Arc<StudyService>>,
    Path(study): Path<String>,
    req: Result<Json<OpenSession>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let study = parse_id("study", &study)?;
    let req = body(req)?;
    let info = blocking(&svc, move |s| s.open_session(study, &req.alias, req.seed)).await?;
    Ok((StatusCode::CREATED, Json(info)))
}

async fn session(State(svc): State<Arc<StudyService>>, Path(sid): Path<String>) -> ApiResult<impl IntoResponse> {
    let sid = parse_id("session", &sid)?;
    Ok(Json(svc.session(sid)?))
}

async fn next_trial(State(svc): State<Arc<StudyService>>, Path(sid): Path<String>) -> ApiResult<Response> {
    let sid = parse_id("session", &sid)?;
    let Some(trial) = blocking(&svc, move |s| s.next_trial(sid)).await? else {
        return Ok(StatusCode::NO_CONTENT.into_response());
    };
    let num = |n: usize| HeaderValue::from(n as u64);
    let headers = [
        (header::CONTENT_TYPE, HeaderValue::from_static("image/png")),
        (header::CACHE_CONTROL, HeaderValue::from_static("no-store")),
        (header::HeaderName::from_static(TRIAL_ID), HeaderValue::from_str(&trial.trial_id.to_string()).expect("uuid is ascii")),
        (header::HeaderName::from_static(TRIAL_NUMBER), num(trial.number)),
        (header::HeaderName::from_static(TRIAL_TOTAL), num(trial.total)),
    ];
    Ok((headers, trial.png).into_response())
}

async fn judge(
    State(svc): State<Arc<StudyService>>,
    Path(sid): Path<String>,
    req: Result<Json<Judgment>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let sid = parse_id("session", &sid)?;
    let req = body(req)?;
    Ok(Json(blocking(&svc, move |s| s.submit(sid, req.trial_id, req.verdict)).await?))
}

async fn report(State(svc): State<Arc<StudyService>>, Path(study): Path<String>) -> ApiResult<impl IntoResponse> {
    let study = parse_id("study", &study)?;
    Ok(Json(svc.report(study, false)?))
}

/// The API routes, plus static files from `static_dir` for anything else.
pub fn router(svc: Arc<StudyService>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/studies", post(create_study).get(list_studies))
        .route("/studies/{id}/sessions", post(open_session))
        .route("/studies/{id}/report", get(report))
        .route("/sessions/{sid}", get(session))
        .route("/sessions/{sid}/trials/next", get(next_trial))
        .route("/sessions/{sid}/judgments", post(judge))
        .with_state(svc);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Serves until the process is stopped.
pub async fn serve(addr: SocketAddr, svc: Arc<StudyService>, static_dir: Option<PathBuf>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("study service listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(svc, static_dir)).await
}
