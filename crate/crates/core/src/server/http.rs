//! JSON/HTTP query surface. Every response is computed from one snapshot.

use super::jobs::{JobStatus, ProjectionJobs, ProjectionRequest, MAX_POINTS_LIMIT};
use super::registry::Registry;
use crate::analytics::{self, AnalyticsError};
use crate::model::{DType, Episode, Experience, Tensor};
use crate::storage::{Snapshot, StorageError};
use axum::extract::rejection::{PathRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};
use std::path::{Component, PathBuf};
use std::sync::Arc;

#[derive(Clone)]
pub struct AppState {
    pub registry: Arc<Registry>,
    pub jobs: Arc<ProjectionJobs>,
    /// Directory of static dashboard assets, served at `/`.
    pub ui_dir: Option<PathBuf>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> ApiError {
        ApiError { status, message: message.into() }
    }

    fn not_found(message: impl Into<String>) -> ApiError {
        ApiError::new(StatusCode::NOT_FOUND, message)
    }

    fn bad_request(message: impl Into<String>) -> ApiError {
        ApiError::new(StatusCode::BAD_REQUEST, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

impl From<StorageError> for ApiError {
    fn from(e: StorageError) -> Self {
        let status = match e {
            StorageError::NotFound(_) | StorageError::Bounds { .. } => StatusCode::NOT_FOUND,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

impl From<AnalyticsError> for ApiError {
    fn from(e: AnalyticsError) -> Self {
        ApiError::bad_request(e.to_string())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        ApiError::bad_request(e.body_text())
    }
}

impl From<PathRejection> for ApiError {
    fn from(e: PathRejection) -> Self {
        ApiError::bad_request(e.body_text())
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/sessions", get(sessions))
        .route("/api/metrics", get(metrics))
        .route("/api/episodes", get(episodes))
        .route("/api/episodes/{id}", get(episode))
        .route("/api/episodes/{id}/frames/{t}", get(frame))
        .route("/api/episodes/{id}/frames/{t}/image", get(frame_image))
        .route("/api/episodes/{id}/series", get(series))
        .route("/api/episodes/{id}/histogram", get(histogram))
        .route("/api/projection", get(projection))
        .fallback(static_asset)
        .with_state(state)
}

#[derive(Debug, Deserialize)]
struct SessionQuery {
    session: Option<u64>,
}

/// The requested session, or the latest one; `Ok(None)` when there are no sessions.
fn resolve(state: &AppState, session: Option<u64>) -> ApiResult<Option<(u64, Snapshot)>> {
    let Some(id) = session.or_else(|| state.registry.latest()) else {
        return Ok(None);
    };
    match state.registry.snapshot(id) {
        Some(snap) => Ok(Some((id, snap?))),
        None => Err(ApiError::not_found(format!("session {id} not found"))),
    }
}

fn require(state: &AppState, session: Option<u64>) -> ApiResult<(u64, Snapshot)> {
    resolve(state, session)?.ok_or_else(|| ApiError::not_found("no sessions"))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

async fn sessions(State(state): State<AppState>) -> ApiResult<Json<Value>> {
    let reg = state.registry.clone();
    let list = blocking(move || Ok(reg.list())).await?;
    Ok(Json(json!({ "sessions": list })))
}

async fn metrics(State(state): State<AppState>, q: Result<Query<SessionQuery>, QueryRejection>) -> ApiResult<Json<Value>> {
    let Query(q) = q?;
    let (session, generation, m) = match resolve(&state, q.session)? {
        Some((id, snap)) => (json!(id), json!(snap.generation()), analytics::metrics(snap.list_episodes().iter())),
        None => (Value::Null, Value::Null, analytics::metrics(Vec::<analytics::EpisodeStats>::new())),
    };
    let mut body = serde_json::to_value(m).expect("metrics serialize");
    body["session"] = session;
    body["generation"] = generation;
    Ok(Json(body))
}

async fn episodes(State(state): State<AppState>, q: Result<Query<SessionQuery>, QueryRejection>) -> ApiResult<Json<Value>> {
    let Query(q) = q?;
    let Some((id, snap)) = resolve(&state, q.session)? else {
        return Ok(Json(json!({ "session": null, "generation": null, "episodes": [] })));
    };
    Ok(Json(json!({ "session": id, "generation": snap.generation(), "episodes": snap.list_episodes() })))
}

fn dtype_name(d: DType) -> &'static str {
    match d {
        DType::F32 => "f32",
        DType::F64 => "f64",
        DType::I32 => "i32",
        DType::U8 => "u8",
    }
}

/// `{dtype, shape, data}` with `data` flattened row-major. Non-finite
/// floats encode as null.
pub fn tensor_json(t: &Tensor) -> Value {
    let data: Vec<Value> = if t.dtype().is_integer() {
        (0..t.len()).map(|i| json!(t.get_f64(i) as i64)).collect()
    } else {
        (0..t.len()).map(|i| json!(t.get_f64(i))).collect()
    };
    json!({ "dtype": dtype_name(t.dtype()), "shape": t.shape(), "data": data })
}

pub fn step_json(e: &Experience) -> Value {
    json!({
        "t": e.t,
        "s": tensor_json(&e.s),
        "a": tensor_json(&e.a),
        "r": tensor_json(&e.r),
        "s_next": e.s_next.as_ref().map(tensor_json),
        "done": e.done,
        "has_frame": e.frame.is_some(),
    })
}

fn episode_json(session: u64, ep: &Episode) -> Value {
    json!({
        "session": session,
        "id": ep.id,
        "n_steps": ep.len(),
        "complete": ep.complete,
        "return_sum": ep.episode_return(1.0).unwrap_or(f64::NAN),
        "wall_start": ep.wall_start,
        "wall_end": ep.wall_end,
        "duration": ep.duration(),
        "steps": ep.experiences.iter().map(step_json).collect::<Vec<_>>(),
    })
}

async fn read_episode(state: &AppState, session: Option<u64>, id: u64) -> ApiResult<(u64, Episode)> {
    let (sid, snap) = require(state, session)?;
    blocking(move || Ok((sid, snap.read_episode(id)?))).await
}

async fn episode(
    State(state): State<AppState>,
    path: Result<Path<u64>, PathRejection>,
    q: Result<Query<SessionQuery>, QueryRejection>,
) -> ApiResult<Json<Value>> {
    let (Path(id), Query(q)) = (path?, q?);
    let (sid, ep) = read_episode(&state, q.session, id).await?;
    Ok(Json(episode_json(sid, &ep)))
}

async fn read_frame(state: &AppState, session: Option<u64>, id: u64, t: u32) -> ApiResult<(u64, Snapshot, Experience)> {
    let (sid, snap) = require(state, session)?;
    blocking(move || {
        let e = snap.read_frame(id, t)?;
        Ok((sid, snap, e))
    })
    .await
}

async fn frame(
    State(state): State<AppState>,
    path: Result<Path<(u64, u32)>, PathRejection>,
    q: Result<Query<SessionQuery>, QueryRejection>,
) -> ApiResult<Json<Value>> {
    let (Path((id, t)), Query(q)) = (path?, q?);
    let (sid, _, e) = read_frame(&state, q.session, id, t).await?;
    let mut body = step_json(&e);
    body["session"] = json!(sid);
    body["episode_id"] = json!(id);
    Ok(Json(body))
}

/// PNG (8-bit RGB) of a `[H, W, 3]` U8 frame.
pub fn encode_png(frame: &Tensor) -> Result<Vec<u8>, String> {
    let shape = frame.shape();
    if frame.dtype() != DType::U8 || shape.len() != 3 || shape[2] != 3 {
        return Err(format!("frame must be [H, W, 3] u8, got {:?} {shape:?}", frame.dtype()));
    }
    let mut out = Vec::new();
    let mut enc = png::Encoder::new(&mut out, shape[1], shape[0]);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut w = enc.write_header().map_err(|e| e.to_string())?;
    w.write_image_data(frame.data()).map_err(|e| e.to_string())?;
    w.finish().map_err(|e| e.to_string())?;
    Ok(out)
}

async fn frame_image(
    State(state): State<AppState>,
    path: Result<Path<(u64, u32)>, PathRejection>,
    q: Result<Query<SessionQuery>, QueryRejection>,
) -> ApiResult<Response> {
    let (Path((id, t)), Query(q)) = (path?, q?);
    let (_, snap) = require(&state, q.session)?;
    if !snap.schema().has_frames {
        return Err(ApiError::not_found("session logs no frames"));
    }
    let (_, _, e) = read_frame(&state, q.session, id, t).await?;
    let frame = e.frame.ok_or_else(|| ApiError::not_found("step has no frame"))?;
    let png = encode_png(&frame).map_err(|m| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, m))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

#[derive(Debug, Deserialize)]
struct SeriesQuery {
    session: Option<u64>,
    kind: String,
    #[serde(default)]
    dim: usize,
}

async fn series(
    State(state): State<AppState>,
    path: Result<Path<u64>, PathRejection>,
    q: Result<Query<SeriesQuery>, QueryRejection>,
) -> ApiResult<Json<Value>> {
    let (Path(id), Query(q)) = (path?, q?);
    let (_, ep) = read_episode(&state, q.session, id).await?;
    let values = match q.kind.as_str() {
        "state" => analytics::state_series(&ep, q.dim)?,
        "action" => analytics::action_series(&ep, q.dim)?,
        "reward" => analytics::reward_component_series(&ep, q.dim)?,
        "scalar_reward" => ep.scalar_rewards(),
        other => return Err(ApiError::bad_request(format!("unknown series kind {other:?}"))),
    };
    Ok(Json(json!({ "episode_id": id, "kind": q.kind, "dim": q.dim, "values": values })))
}

#[derive(Debug, Deserialize)]
struct HistogramQuery {
    session: Option<u64>,
    bins: Option<usize>,
    start: Option<usize>,
    end: Option<usize>,
}

async fn histogram(
    State(state): State<AppState>,
    path: Result<Path<u64>, PathRejection>,
    q: Result<Query<HistogramQuery>, QueryRejection>,
) -> ApiResult<Json<Value>> {
    let (Path(id), Query(q)) = (path?, q?);
    let (_, mut ep) = read_episode(&state, q.session, id).await?;
    let n = ep.len();
    let end = q.end.unwrap_or(n).min(n);
    let start = q.start.unwrap_or(0).min(end);
    ep.experiences = ep.experiences.drain(start..end).collect();
    let h = analytics::action_histogram(&ep, q.bins.unwrap_or(10))?;
    Ok(Json(json!({ "episode_id": id, "start": start, "end": end, "histogram": h })))
}

#[derive(Debug, Deserialize)]
struct ProjectionQuery {
    session: Option<u64>,
    window: Option<usize>,
    max_points: Option<usize>,
    perplexity: Option<f64>,
    seed: Option<u64>,
    iterations: Option<usize>,
}

async fn projection(State(state): State<AppState>, q: Result<Query<ProjectionQuery>, QueryRejection>) -> ApiResult<Response> {
    let Query(q) = q?;
    let defaults = ProjectionRequest::default();
    let req = ProjectionRequest {
        window: q.window,
        max_points: q.max_points.unwrap_or(defaults.max_points),
        perplexity: q.perplexity.unwrap_or(defaults.perplexity),
        seed: q.seed.unwrap_or(defaults.seed),
        iterations: q.iterations.unwrap_or(defaults.iterations),
    };
    if !(4..=MAX_POINTS_LIMIT).contains(&req.max_points) {
        return Err(ApiError::bad_request(format!("max_points must lie in [4, {MAX_POINTS_LIMIT}]")));
    }
    if !(req.perplexity.is_finite() && req.perplexity > 1.0) {
        return Err(ApiError::bad_request("perplexity must be greater than 1"));
    }
    if !(1..=10_000).contains(&req.iterations) {
        return Err(ApiError::bad_request("iterations must lie in [1, 10000]"));
    }
    let (sid, snap) = require(&state, q.session)?;
    Ok(match state.jobs.status_or_start(sid, snap, req) {
        JobStatus::Running { progress } => {
            (StatusCode::CONFLICT, Json(json!({ "status": "running", "progress": progress }))).into_response()
        }
        JobStatus::Done(r) => Json(&*r).into_response(),
        JobStatus::Failed(msg) => {
            (StatusCode::UNPROCESSABLE_ENTITY, Json(json!({ "status": "failed", "error": msg }))).into_response()
        }
    })
}

fn content_type(path: &std::path::Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()) {
        Some("html") => "text/html; charset=utf-8",
        Some("js" | "mjs") => "text/javascript",
        Some("css") => "text/css",
        Some("json" | "map") => "application/json",
        Some("svg") => "image/svg+xml",
        Some("png") => "image/png",
        Some("wasm") => "application/wasm",
        _ => "application/octet-stream",
    }
}

async fn static_asset(State(state): State<AppState>, uri: Uri) -> ApiResult<Response> {
    let Some(root) = state.ui_dir.clone() else {
        return Err(ApiError::not_found("no such route"));
    };
    let rel = uri.path().trim_start_matches('/');
    let rel = if rel.is_empty() { "index.html" } else { rel };
    let rel = PathBuf::from(rel);
    if !rel.components().all(|c| matches!(c, Component::Normal(_))) {
        return Err(ApiError::bad_request("invalid asset path"));
    }
    let path = root.join(&rel);
    match std::fs::read(&path) {
        Ok(bytes) => Ok(([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response()),
        Err(_) => Err(ApiError::not_found(format!("asset {} not found", rel.display()))),
    }
}
