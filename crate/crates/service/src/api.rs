//! HTTP JSON routes.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

use crate::error::{Result, ServiceError};
use crate::manager::SessionManager;
use crate::session::{CreateSession, ObservationInput, Proposal, SessionSummary, SessionView, Status};

#[derive(Clone)]
pub struct AppState {
    pub manager: Arc<SessionManager>,
    pub token: Option<Arc<str>>,
}

/// Options of `serve`.
#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub addr: SocketAddr,
    pub data_dir: PathBuf,
    /// Require `Authorization: Bearer <token>` on API routes.
    pub token: Option<String>,
    /// Serve static files (the operator UI) from this directory.
    pub ui_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NextResponse {
    pub proposal_token: String,
    pub step: usize,
    pub x: f64,
}

impl From<Proposal> for NextResponse {
    fn from(p: Proposal) -> Self {
        NextResponse {
            proposal_token: p.token,
            step: p.step,
            x: p.x,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UndoRequest {
    #[serde(default)]
    pub proposal_token: Option<String>,
}

fn body<T>(payload: std::result::Result<Json<T>, JsonRejection>) -> Result<T> {
    payload.map(|Json(v)| v).map_err(|e| ServiceError::BadRequest(e.body_text()))
}

/// Run a blocking manager call off the async workers.
async fn blocking<T, F>(f: F) -> Result<T>
where
    F: FnOnce() -> Result<T> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .unwrap_or_else(|e| std::panic::resume_unwind(e.into_panic()))
}

async fn create(
    State(app): State<AppState>,
    payload: std::result::Result<Json<CreateSession>, JsonRejection>,
) -> Result<(StatusCode, Json<SessionView>)> {
    let req = body(payload)?;
    let s = blocking(move || app.manager.create(&req)).await?;
    Ok((StatusCode::CREATED, Json(s.view())))
}

async fn list(State(app): State<AppState>) -> Json<Vec<SessionSummary>> {
    Json(app.manager.list())
}

async fn show(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionView>> {
    Ok(Json(app.manager.get(&id)?.view()))
}

async fn next(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<NextResponse>> {
    Ok(Json(app.manager.next(&id)?.into()))
}

async fn observe(
    State(app): State<AppState>,
    Path(id): Path<String>,
    payload: std::result::Result<Json<ObservationInput>, JsonRejection>,
) -> Result<Json<SessionView>> {
    let input = body(payload)?;
    let s = blocking(move || app.manager.observe(&id, &input)).await?;
    Ok(Json(s.view()))
}

async fn undo(State(app): State<AppState>, Path(id): Path<String>, raw: Bytes) -> Result<Json<SessionView>> {
    let req: UndoRequest = if raw.iter().all(u8::is_ascii_whitespace) {
        UndoRequest::default()
    } else {
        serde_json::from_slice(&raw).map_err(|e| ServiceError::BadRequest(e.to_string()))?
    };
    let s = blocking(move || app.manager.undo(&id, req.proposal_token.as_deref())).await?;
    Ok(Json(s.view()))
}

async fn complete(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionView>> {
    let s = blocking(move || app.manager.close(&id, Status::Completed)).await?;
    Ok(Json(s.view()))
}

async fn abort(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionView>> {
    let s = blocking(move || app.manager.close(&id, Status::Aborted)).await?;
    Ok(Json(s.view()))
}

async fn trace(State(app): State<AppState>, Path(id): Path<String>) -> Result<Response> {
    let csv = app.manager.trace_csv(&id)?;
    Ok((
        [
            (header::CONTENT_TYPE, "text/csv; charset=utf-8".to_string()),
            (header::CONTENT_DISPOSITION, format!("attachment; filename=\"{id}-trace.csv\"")),
        ],
        csv,
    )
        .into_response())
}

async fn events(State(app): State<AppState>, Path(id): Path<String>) -> Result<Response> {
    let log = app.manager.events_jsonl(&id)?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], log).into_response())
}

async fn import(State(app): State<AppState>, raw: String) -> Result<(StatusCode, Json<SessionView>)> {
    let s = blocking(move || app.manager.import(&raw)).await?;
    Ok((StatusCode::CREATED, Json(s.view())))
}

async fn health() -> &'static str {
    "ok"
}

async fn require_token(State(app): State<AppState>, req: Request, next: Next) -> Response {
    if let Some(expected) = &app.token {
        let ok = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|t| t == &**expected);
        if !ok {
            return ServiceError::Unauthorized.into_response();
        }
    }
    next.run(req).await
}

pub fn router(state: AppState, ui_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/sessions", post(create).get(list))
        .route("/sessions/import", post(import))
        .route("/sessions/{id}", get(show))
        .route("/sessions/{id}/next", get(next))
        .route("/sessions/{id}/observations", post(observe))
        .route("/sessions/{id}/undo", post(undo))
        .route("/sessions/{id}/complete", post(complete))
        .route("/sessions/{id}/abort", post(abort))
        .route("/sessions/{id}/trace", get(trace))
        .route("/sessions/{id}/events", get(events))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token))
        .route("/health", get(health))
        .with_state(state);
    match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Bind, print the address to stdout and serve until Ctrl-C.
pub async fn serve(opts: ServeOptions) -> Result<()> {
    let manager = SessionManager::open(&opts.data_dir)?;
    let loaded = manager.list().len();
    let state = AppState {
        manager: Arc::new(manager),
        token: opts.token.map(Arc::from),
    };
    let app = router(state, opts.ui_dir);
    let listener = tokio::net::TcpListener::bind(opts.addr)
        .await
        .map_err(|source| ServiceError::Storage {
            path: PathBuf::from(opts.addr.to_string()),
            source,
        })?;
    let local = listener.local_addr().map_err(|source| ServiceError::Storage {
        path: PathBuf::from(opts.addr.to_string()),
        source,
    })?;
    tracing::info!(%local, sessions = loaded, data_dir = %opts.data_dir.display(), "serving");
    println!("listening on http://{local}");
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|source| ServiceError::Storage {
            path: PathBuf::from(local.to_string()),
            source,
        })
}
