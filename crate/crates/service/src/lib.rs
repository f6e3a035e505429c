//! HTTP feedback service: hands exported preference queries to the labeling UI
//! one at a time and collects answers into a label file.
//!
//! The service never touches training state. Labels reach a run only through
//! the exported file and the `import-labels` command.

mod session;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use hasd::preference::Choice;
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

pub use session::{polyline, FeedbackSession, Geometry, LabelError, Progress, QueryView};

/// Shared state; the mutex serializes every label write.
pub type AppState = Arc<Mutex<FeedbackSession>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelRequest {
    pub id: u64,
    pub choice: Choice,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportResponse {
    pub path: PathBuf,
    pub count: usize,
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
}

fn error(status: StatusCode, msg: impl ToString) -> Response {
    (status, Json(ErrorBody { error: msg.to_string() })).into_response()
}

fn lock(state: &AppState) -> std::sync::MutexGuard<'_, FeedbackSession> {
    // a panic mid-request cannot leave the answer map half-written
    state.lock().unwrap_or_else(|p| p.into_inner())
}

async fn next_query(State(state): State<AppState>) -> Response {
    match lock(&state).next() {
        Some(q) => Json(q).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    }
}

async fn post_label(State(state): State<AppState>, Json(req): Json<LabelRequest>) -> Response {
    match lock(&state).label(req.id, req.choice) {
        Ok(()) => StatusCode::NO_CONTENT.into_response(),
        Err(e @ LabelError::UnknownId(_)) => error(StatusCode::NOT_FOUND, e),
        Err(e @ LabelError::AlreadyLabeled(_)) => error(StatusCode::CONFLICT, e),
    }
}

async fn progress(State(state): State<AppState>) -> Json<Progress> {
    Json(lock(&state).progress())
}

async fn export(State(state): State<AppState>) -> Response {
    match lock(&state).export() {
        Ok((path, count)) => Json(ExportResponse { path, count }).into_response(),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e),
    }
}

/// API routes, plus the UI bundle under `/` when `static_dir` is given.
pub fn router(state: AppState, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/queries/next", get(next_query))
        .route("/api/labels", post(post_label))
        .route("/api/progress", get(progress))
        .route("/api/export", post(export))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Serves until the process is stopped.
pub async fn serve(session: FeedbackSession, addr: SocketAddr, static_dir: Option<PathBuf>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!(
        "feedback service on http://{} ({} queries)",
        listener.local_addr()?,
        session.len()
    );
    let app = router(Arc::new(Mutex::new(session)), static_dir);
    axum::serve(listener, app).await
}
