//! HTTP API for side-by-side human evaluation of debiased articles.
//!
//! - `GET /api/pairs/next?grader=<id>`: next pair the grader has not judged,
//!   or 204 when none remain.
//! - `POST /api/judgments`: store a judgment; 201 on success.
//! - `GET /api/report`: aggregate of all stored judgments.
//! - `GET /api/images/<pair_id>.<original|debiased>`: image bytes.

use std::net::SocketAddr;
use std::path::Path;
use std::sync::{Arc, Mutex, MutexGuard};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use debias_core::orchestrator::{EvalPair, EvalSession, JudgmentRecord, PairSide};
use debias_core::Error;
use serde::{Deserialize, Serialize};

/// Payload of `GET /api/pairs/next`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairView {
    pub pair_id: String,
    pub original_text: String,
    pub debiased_text: String,
    pub original_image_url: Option<String>,
    pub debiased_image_url: Option<String>,
}

pub fn image_url(pair_id: &str, side: PairSide) -> String {
    let side = match side {
        PairSide::Original => "original",
        PairSide::Debiased => "debiased",
    };
    format!("/api/images/{pair_id}.{side}")
}

impl From<&EvalPair> for PairView {
    fn from(p: &EvalPair) -> Self {
        Self {
            pair_id: p.pair_id.clone(),
            original_text: p.original_text.clone(),
            debiased_text: p.debiased_text.clone(),
            original_image_url: p.original_image.as_ref().map(|_| image_url(&p.pair_id, PairSide::Original)),
            debiased_image_url: p.debiased_image.as_ref().map(|_| image_url(&p.pair_id, PairSide::Debiased)),
        }
    }
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
}

/// Maps library errors onto status codes.
#[derive(Debug)]
pub struct ApiError(StatusCode, String);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::NotFound(_) => StatusCode::NOT_FOUND,
            Error::Validation(_) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if status == StatusCode::INTERNAL_SERVER_ERROR {
            log::error!("{e}");
        }
        ApiError(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(ErrorBody { error: self.1 })).into_response()
    }
}

type Shared = Arc<Mutex<EvalSession>>;

fn lock(state: &Shared) -> MutexGuard<'_, EvalSession> {
    state.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NextQuery {
    grader: String,
}

async fn next_pair(State(state): State<Shared>, Query(q): Query<NextQuery>) -> Response {
    let session = lock(&state);
    match session.next_pair(&q.grader) {
        Some(p) => Json(PairView::from(p)).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    }
}

async fn submit(State(state): State<Shared>, body: Bytes) -> Result<Response, ApiError> {
    let record: JudgmentRecord = serde_json::from_slice(&body)
        .map_err(|e| ApiError(StatusCode::BAD_REQUEST, format!("invalid judgment: {e}")))?;
    let state = state.clone();
    let stored = record.clone();
    // The store fsyncs; keep that off the async workers.
    tokio::task::spawn_blocking(move || lock(&state).submit(record))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok((StatusCode::CREATED, Json(stored)).into_response())
}

async fn report(State(state): State<Shared>) -> Response {
    Json(lock(&state).report()).into_response()
}

async fn image(State(state): State<Shared>, UrlPath(image_id): UrlPath<String>) -> Result<Response, ApiError> {
    let not_found = || ApiError(StatusCode::NOT_FOUND, format!("no image `{image_id}`"));
    let (pair_id, side) = image_id.rsplit_once('.').ok_or_else(not_found)?;
    let side = match side {
        "original" => PairSide::Original,
        "debiased" => PairSide::Debiased,
        _ => return Err(not_found()),
    };
    let path = {
        let session = lock(&state);
        let pair = session.pair(pair_id).ok_or_else(not_found)?;
        pair.image(side).ok_or_else(not_found)?.to_path_buf()
    };
    let bytes = tokio::fs::read(&path).await.map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => not_found(),
        _ => ApiError::from(Error::Io(e)),
    })?;
    Ok(([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response())
}

fn content_type(path: &Path) -> &'static str {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        _ => "application/octet-stream",
    }
}

pub fn router(session: EvalSession) -> Router {
    Router::new()
        .route("/api/pairs/next", get(next_pair))
        .route("/api/judgments", post(submit))
        .route("/api/report", get(report))
        .route("/api/images/{image_id}", get(image))
        .with_state(Arc::new(Mutex::new(session)))
}

/// Serves until Ctrl-C.
pub async fn serve(addr: SocketAddr, session: EvalSession) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(session))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
