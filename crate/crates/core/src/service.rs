//! HTTP query service.
//!
//! | route | body | reply |
//! |---|---|---|
//! | `POST /v1/query` | `{"vector": [..]}` or `{"text": ".."}`, optional `top_k` | `{"results": [{"image_id", "score"}], "top_k", "latency_ms"}` |
//! | `GET /v1/healthz` | | `{"status": "ok"}` |
//! | `GET /v1/stats` | | `{"vectors", "channels", "images"}` |
//!
//! Text queries are forwarded to an external encoder speaking
//! `POST {encoder}/v1/encode {"text"} -> {"vector"}`. Errors reply with
//! `{"error": ".."}`: 400 for bad requests, 502 when the encoder fails.

use std::sync::{Arc, RwLock};
use std::time::{Duration, Instant};

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;

use crate::error::{Error, Result};
use crate::index::{search, FlatIndex, QueryVector, RankedEntry};

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub max_top_k: usize,
    /// Used when a request omits `top_k`; capped at `max_top_k`.
    pub default_top_k: usize,
    /// Base URL of the text encoder; `None` serves vector queries only.
    pub encoder_url: Option<String>,
    pub encoder_timeout: Duration,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self { max_top_k: 1000, default_top_k: 50, encoder_url: None, encoder_timeout: Duration::from_secs(10) }
    }
}

/// Shared state. The index sits behind an `Arc` so a rebuilt one can be
/// swapped in while in-flight searches finish on the old copy.
pub struct AppState {
    index: RwLock<Arc<FlatIndex>>,
    pub config: ServiceConfig,
}

impl AppState {
    pub fn new(index: FlatIndex, config: ServiceConfig) -> Self {
        Self { index: RwLock::new(Arc::new(index)), config }
    }

    pub fn index(&self) -> Arc<FlatIndex> {
        Arc::clone(&self.index.read().unwrap_or_else(|e| e.into_inner()))
    }

    /// Replaces the served index, returning the previous one.
    pub fn swap_index(&self, index: FlatIndex) -> Arc<FlatIndex> {
        let mut guard = self.index.write().unwrap_or_else(|e| e.into_inner());
        std::mem::replace(&mut *guard, Arc::new(index))
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct QueryRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vector: Option<Vec<f32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_k: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryResponse {
    pub results: Vec<RankedEntry>,
    pub top_k: usize,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsResponse {
    pub vectors: usize,
    pub channels: usize,
    pub images: usize,
}

#[derive(Serialize, Deserialize)]
struct EncodeRequest<'a> {
    text: &'a str,
}

#[derive(Serialize, Deserialize)]
pub struct EncodeResponse {
    pub vector: Vec<f32>,
}

/// Blocking call to `POST {base_url}/v1/encode`.
pub fn encode_text(base_url: &str, text: &str, timeout: Duration) -> Result<Vec<f32>> {
    let url = format!("{}/v1/encode", base_url.trim_end_matches('/'));
    let agent: ureq::Agent = ureq::Agent::config_builder().timeout_global(Some(timeout)).build().into();
    let mut response =
        agent.post(&url).send_json(EncodeRequest { text }).map_err(|e| Error::Encoder(format!("{url}: {e}")))?;
    let body: EncodeResponse =
        response.body_mut().read_json().map_err(|e| Error::Encoder(format!("{url}: bad reply: {e}")))?;
    Ok(body.vector)
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(serde_json::json!({ "error": self.1 }))).into_response()
    }
}

fn bad_request(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, msg.into())
}

async fn query(
    State(state): State<Arc<AppState>>,
    Json(req): Json<QueryRequest>,
) -> std::result::Result<Json<QueryResponse>, ApiError> {
    let start = Instant::now();
    let cfg = &state.config;
    let top_k = req.top_k.unwrap_or(cfg.default_top_k.min(cfg.max_top_k));
    if top_k == 0 || top_k > cfg.max_top_k {
        return Err(bad_request(format!("top_k must lie in 1..={}, got {top_k}", cfg.max_top_k)));
    }
    let index = state.index();
    let channels = index.channels();
    let query = match (req.vector, req.text) {
        (Some(_), Some(_)) => return Err(bad_request("give either vector or text, not both")),
        (None, None) => return Err(bad_request("request needs a vector or a text field")),
        (Some(v), None) => {
            if v.len() != channels {
                return Err(bad_request(format!("vector has {} dims, expected {channels}", v.len())));
            }
            QueryVector::new(&v, None).map_err(|e| bad_request(e.to_string()))?
        }
        (None, Some(text)) => {
            let Some(url) = cfg.encoder_url.clone() else {
                return Err(bad_request("no text encoder configured; this service accepts vector queries only"));
            };
            let timeout = cfg.encoder_timeout;
            let label = text.clone();
            let vector = tokio::task::spawn_blocking(move || encode_text(&url, &text, timeout))
                .await
                .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
                .map_err(|e| ApiError(StatusCode::BAD_GATEWAY, e.to_string()))?;
            if vector.len() != channels {
                return Err(ApiError(
                    StatusCode::BAD_GATEWAY,
                    format!("encoder returned {} dims, index has {channels}", vector.len()),
                ));
            }
            QueryVector::new(&vector, Some(label)).map_err(|e| ApiError(StatusCode::BAD_GATEWAY, e.to_string()))?
        }
    };
    let ranked = search(&index, &query, top_k).map_err(|e| bad_request(e.to_string()))?;
    Ok(Json(QueryResponse { results: ranked.entries, top_k, latency_ms: start.elapsed().as_secs_f64() * 1e3 }))
}

async fn healthz() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

async fn stats(State(state): State<Arc<AppState>>) -> Json<StatsResponse> {
    let index = state.index();
    Json(StatsResponse { vectors: index.vector_count(), channels: index.channels(), images: index.image_count() })
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/query", post(query))
        .route("/v1/healthz", get(healthz))
        .route("/v1/stats", get(stats))
        .with_state(state)
}

/// Serves until the listener fails.
pub async fn serve(listener: TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}
