//! HTTP API for running MOS listening sessions.
//!
//! | method | path | body / query | response |
//! |---|---|---|---|
//! | POST | `/sessions` | `{rater_id, pairs \| pair_set, seed}` | session id and size |
//! | GET | `/sessions/{id}/next` | | next item or `done` |
//! | POST | `/sessions/{id}/ratings` | `{frame_id, audio_id, mos}` | acknowledgment |
//! | GET | `/ratings/export` | `?rater=` | ratings CSV |
//! | GET | `/media/{path}` | | file under the media root |
//!
//! Errors are `{"code": ..., "message": ...}` with a matching status.

use std::net::SocketAddr;
use std::path::{Component, Path, PathBuf};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use sonify_core::eval::{write_ratings, Pair};
use sonify_core::rating::{RatingError, RatingFilter, RatingService};

#[derive(Clone)]
struct AppState {
    ratings: Arc<RatingService>,
    media_root: Option<PathBuf>,
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

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }
}

impl From<RatingError> for ApiError {
    fn from(e: RatingError) -> Self {
        let status = match e {
            RatingError::EmptyPairList
            | RatingError::UnknownAsset(_)
            | RatingError::InvalidMos(_) => StatusCode::UNPROCESSABLE_ENTITY,
            RatingError::UnknownSession(_) | RatingError::UnknownPairSet(_) => {
                StatusCode::NOT_FOUND
            }
            RatingError::OutOfOrder { .. } => StatusCode::CONFLICT,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.code(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = Json(json!({"code": self.code, "message": self.message}));
        (self.status, body).into_response()
    }
}

/// Parses a JSON body ourselves so malformed requests get the error schema.
fn parse<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid body: {e}")))
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, RatingError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
        .map_err(ApiError::from)
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum PairInput {
    Object { frame_id: String, audio_id: String },
    Tuple(String, String),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    rater_id: String,
    #[serde(default)]
    pairs: Option<Vec<PairInput>>,
    #[serde(default)]
    pair_set: Option<String>,
    #[serde(default)]
    seed: u64,
}

#[derive(Debug, Serialize)]
struct Created {
    session_id: String,
    rater_id: String,
    total: usize,
}

async fn create_session(State(st): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let req: CreateSession = parse(&body)?;
    if req.rater_id.trim().is_empty() {
        return Err(ApiError::bad_request("rater_id must not be empty"));
    }
    let svc = st.ratings.clone();
    let session = blocking(move || {
        let pairs: Vec<Pair> = match (req.pairs, req.pair_set) {
            (Some(p), None) => p
                .into_iter()
                .map(|p| match p {
                    PairInput::Object { frame_id, audio_id }
                    | PairInput::Tuple(frame_id, audio_id) => (frame_id, audio_id),
                })
                .collect(),
            (None, Some(name)) => svc.pair_set(&name)?.to_vec(),
            _ => Vec::new(),
        };
        svc.create_session(&req.rater_id, &pairs, req.seed)
    })
    .await?;
    let created = Created {
        total: session.items.len(),
        session_id: session.session_id,
        rater_id: session.rater_id,
    };
    Ok((StatusCode::CREATED, Json(created)).into_response())
}

async fn next_item(
    State(st): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> Result<Response, ApiError> {
    let svc = st.ratings.clone();
    let next = blocking(move || svc.next_item(&id)).await?;
    Ok(Json(next).into_response())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Submit {
    frame_id: String,
    audio_id: String,
    mos: i64,
}

async fn submit_rating(
    State(st): State<AppState>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let req: Submit = parse(&body)?;
    let svc = st.ratings.clone();
    let ack =
        blocking(move || svc.submit_rating(&id, &req.frame_id, &req.audio_id, req.mos)).await?;
    Ok(Json(ack).into_response())
}

#[derive(Debug, Deserialize)]
struct ExportQuery {
    rater: Option<String>,
}

async fn export(
    State(st): State<AppState>,
    Query(q): Query<ExportQuery>,
) -> Result<Response, ApiError> {
    let svc = st.ratings.clone();
    let filter = RatingFilter { rater_id: q.rater };
    let records = blocking(move || svc.export_ratings(&filter)).await?;
    let mut csv = Vec::new();
    write_ratings(&mut csv, &records).map_err(|e| ApiError::from(RatingError::Ratings(e)))?;
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], csv).into_response())
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
        Some("wav") => "audio/wav",
        Some("mp3") => "audio/mpeg",
        Some("ogg") => "audio/ogg",
        Some("flac") => "audio/flac",
        Some("json") => "application/json",
        _ => "application/octet-stream",
    }
}

/// Resolves a request path under `root`, rejecting anything that could escape it.
fn media_path(root: &Path, rel: &str) -> Option<PathBuf> {
    let rel = Path::new(rel);
    if rel.as_os_str().is_empty() || !rel.components().all(|c| matches!(c, Component::Normal(_))) {
        return None;
    }
    Some(root.join(rel))
}

async fn media(
    State(st): State<AppState>,
    UrlPath(rel): UrlPath<String>,
) -> Result<Response, ApiError> {
    let root = st
        .media_root
        .as_ref()
        .ok_or_else(|| ApiError::not_found("no media root configured"))?;
    let path = media_path(root, &rel).ok_or_else(|| ApiError::bad_request("invalid media path"))?;
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|_| ApiError::not_found(format!("no media at '{rel}'")))?;
    Ok(([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response())
}

pub fn router(ratings: Arc<RatingService>, media_root: Option<PathBuf>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/next", get(next_item))
        .route("/sessions/{id}/ratings", post(submit_rating))
        .route("/ratings/export", get(export))
        .route("/media/{*path}", get(media))
        .fallback(|| async { ApiError::not_found("no such route") })
        .with_state(AppState {
            ratings,
            media_root,
        })
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(
    addr: SocketAddr,
    ratings: Arc<RatingService>,
    media_root: Option<PathBuf>,
) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(ratings, media_root)).await
}
