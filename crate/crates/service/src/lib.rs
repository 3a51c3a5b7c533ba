//! HTTP API for interactive tuning of a patient's deficit model.
//!
//! Sessions live on disk (see [`store`]); every render request reads an
//! immutable model snapshot at its start and never writes session state.

pub mod store;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine as _;
use serde::Deserialize;
use serde_json::json;
use tower_http::services::ServeDir;
use vloss_core::inverse::DEFAULT_GAMMA_CAP;
use vloss_core::{validate_model, DeficitModel, Image};

pub use store::{Session, SessionStore, StoreError};

const DEFAULT_SIZE: usize = 512;
const DEFAULT_SPACING: usize = 32;
const DEFAULT_LINE: usize = 2;
/// Largest raster edge any endpoint will render.
pub const MAX_SIZE: usize = 4096;
const BODY_LIMIT: usize = 64 * 1024 * 1024;

#[derive(Clone)]
pub struct AppState {
    store: Arc<SessionStore>,
}

#[derive(Debug)]
pub enum ApiError {
    NotFound,
    BadRequest(String),
    InvalidModel(Vec<String>),
    Internal(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, body) = match self {
            ApiError::NotFound => (StatusCode::NOT_FOUND, json!({"error": "unknown session"})),
            ApiError::BadRequest(msg) => (StatusCode::BAD_REQUEST, json!({"error": msg})),
            ApiError::InvalidModel(violations) => (
                StatusCode::UNPROCESSABLE_ENTITY,
                json!({"error": "invalid model", "violations": violations}),
            ),
            ApiError::Internal(detail) => {
                log::error!("internal error: {detail}");
                (StatusCode::INTERNAL_SERVER_ERROR, json!({"error": "internal error"}))
            }
        };
        (status, Json(body)).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NotFound => ApiError::NotFound,
            StoreError::Storage(detail) => ApiError::Internal(detail),
        }
    }
}

impl From<vloss_core::Error> for ApiError {
    fn from(e: vloss_core::Error) -> Self {
        match e {
            vloss_core::Error::Param(msg) => ApiError::BadRequest(msg),
            vloss_core::Error::InvalidModel(v) => ApiError::InvalidModel(v),
            vloss_core::Error::Image(e) => ApiError::BadRequest(format!("unreadable image: {e}")),
            other => ApiError::Internal(other.to_string()),
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Builds the router. Static UI assets are served from `ui_dir` when given,
/// otherwise `/` shows a placeholder page.
pub fn router(store: SessionStore, ui_dir: Option<PathBuf>) -> Router {
    let state = AppState {
        store: Arc::new(store),
    };
    let api = Router::new()
        .route("/api/health", get(health))
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}/model", get(get_model).put(put_model))
        .route("/api/grid", get(grid))
        .route("/api/sessions/{id}/simulate", post(simulate))
        .route("/api/sessions/{id}/compensate", post(compensate))
        .route("/api/sessions/{id}/region", get(region))
        .route("/api/sessions/{id}/roundtrip", get(roundtrip))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(state);
    match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.route("/", get(index)),
    }
}

/// Serves on `addr` until the process exits.
pub async fn serve(addr: SocketAddr, state_dir: PathBuf, ui_dir: Option<PathBuf>) -> std::io::Result<()> {
    let store = SessionStore::open(state_dir).map_err(|e| std::io::Error::other(e.to_string()))?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(store, ui_dir)).await
}

async fn index() -> Html<&'static str> {
    Html(include_str!("../assets/index.html"))
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({"status": "ok"}))
}

async fn create_session(State(st): State<AppState>) -> ApiResult<impl IntoResponse> {
    let session = st.store.create()?;
    Ok((StatusCode::CREATED, Json(json!({"id": session.id}))))
}

fn json_body(text: String) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], text).into_response()
}

async fn get_model(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(json_body(st.store.load(&id)?.model.to_json()))
}

async fn put_model(State(st): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let text = std::str::from_utf8(&body).map_err(|_| ApiError::BadRequest("body is not UTF-8".into()))?;
    let model = DeficitModel::from_json(text).map_err(|e| ApiError::BadRequest(e.to_string()))?;
    let report = validate_model(&model);
    if !report.is_ok() {
        return Err(ApiError::InvalidModel(report.violations));
    }
    let session = st.store.replace_model(&id, model).await?;
    Ok(Json(json!({"model": session.model, "warnings": report.warnings})).into_response())
}

fn check_size(name: &str, v: usize) -> ApiResult<usize> {
    if v == 0 || v > MAX_SIZE {
        return Err(ApiError::BadRequest(format!("{name} must lie in [1, {MAX_SIZE}]")));
    }
    Ok(v)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridParams {
    size: Option<usize>,
    spacing: Option<usize>,
    line: Option<usize>,
}

impl GridParams {
    fn render(&self) -> ApiResult<Image> {
        let size = check_size("size", self.size.unwrap_or(DEFAULT_SIZE))?;
        Ok(vloss_core::amsler_grid(
            size,
            self.spacing.unwrap_or(DEFAULT_SPACING),
            self.line.unwrap_or(DEFAULT_LINE),
        )?)
    }
}

fn png_response(img: &Image) -> ApiResult<Response> {
    let bytes = vloss_core::io::encode_png(img)?;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

/// Runs CPU-bound rendering off the async workers.
async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    F: FnOnce() -> ApiResult<T> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Internal(format!("render task failed: {e}")))?
}

async fn grid(Query(params): Query<GridParams>) -> ApiResult<Response> {
    blocking(move || png_response(&params.render()?)).await
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RenderRequest {
    /// `"amsler"` or a base64-encoded PNG.
    image: String,
    size: Option<usize>,
    spacing: Option<usize>,
    line: Option<usize>,
    gamma_cap: Option<f64>,
}

impl RenderRequest {
    fn source(&self) -> ApiResult<Image> {
        if self.image == "amsler" {
            return GridParams {
                size: self.size,
                spacing: self.spacing,
                line: self.line,
            }
            .render();
        }
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(self.image.trim())
            .map_err(|_| ApiError::BadRequest("image must be \"amsler\" or base64 PNG".into()))?;
        let img = vloss_core::io::decode_png(&bytes)?;
        check_size("image width", img.width())?;
        check_size("image height", img.height())?;
        Ok(img)
    }
}

fn parse_render_request(body: &Bytes) -> ApiResult<RenderRequest> {
    serde_json::from_slice(body).map_err(|e| ApiError::BadRequest(format!("malformed request: {e}")))
}

/// Model snapshot for a render; invalid stored models are refused.
fn snapshot(st: &AppState, id: &str) -> ApiResult<DeficitModel> {
    let model = st.store.load(id)?.model;
    Ok(model.validated()?)
}

async fn simulate(State(st): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let req = parse_render_request(&body)?;
    if req.gamma_cap.is_some() {
        return Err(ApiError::BadRequest("gamma_cap applies to compensate only".into()));
    }
    let model = snapshot(&st, &id)?;
    blocking(move || png_response(&vloss_core::simulate(&model, &req.source()?))).await
}

async fn compensate(State(st): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let req = parse_render_request(&body)?;
    let model = snapshot(&st, &id)?;
    blocking(move || {
        let comp = vloss_core::compensate(&model, &req.source()?, req.gamma_cap.unwrap_or(DEFAULT_GAMMA_CAP))?;
        let mut resp = png_response(&comp.image)?;
        let headers = resp.headers_mut();
        headers.insert("x-converged", HeaderValue::from_static(if comp.converged() { "true" } else { "false" }));
        headers.insert("x-iterations", HeaderValue::from(comp.inversion.iterations));
        Ok(resp)
    })
    .await
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegionParams {
    lambda: Option<f64>,
    size: Option<usize>,
}

async fn region(
    State(st): State<AppState>,
    Path(id): Path<String>,
    Query(params): Query<RegionParams>,
) -> ApiResult<Response> {
    let model = snapshot(&st, &id)?;
    let size = check_size("size", params.size.unwrap_or(DEFAULT_SIZE))?;
    let lambda = params.lambda.unwrap_or(model.lambda);
    blocking(move || png_response(&vloss_core::region_mask(&model, lambda, size, size)?)).await
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RoundtripParams {
    image: Option<String>,
    size: Option<usize>,
    spacing: Option<usize>,
    line: Option<usize>,
}

async fn roundtrip(
    State(st): State<AppState>,
    Path(id): Path<String>,
    Query(params): Query<RoundtripParams>,
) -> ApiResult<Response> {
    if params.image.as_deref().unwrap_or("amsler") != "amsler" {
        return Err(ApiError::BadRequest("roundtrip supports image=amsler only".into()));
    }
    let model = snapshot(&st, &id)?;
    blocking(move || {
        let img = GridParams {
            size: params.size,
            spacing: params.spacing,
            line: params.line,
        }
        .render()?;
        let report = vloss_core::roundtrip_report(&model, &img)?;
        Ok(Json(report).into_response())
    })
    .await
}
