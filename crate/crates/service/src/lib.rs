//! HTTP API over the per-URL analyzer.
//!
//! Routes: `POST /v1/analyze` with `{"url": "..."}`, `GET /v1/taxonomy` and
//! `GET /v1/health`.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use termscope_core::lens::{Analyzer, LensError};
use tower_http::cors::{AllowOrigin, CorsLayer};

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct AnalyzeRequest {
    pub url: String,
}

#[derive(Clone)]
struct AppState {
    analyzer: Arc<Analyzer>,
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

async fn analyze(State(state): State<AppState>, body: Result<Json<AnalyzeRequest>, JsonRejection>) -> Response {
    let Json(req) = match body {
        Ok(b) => b,
        Err(e) => return error(StatusCode::BAD_REQUEST, e.body_text()),
    };
    let analyzer = state.analyzer.clone();
    match tokio::task::spawn_blocking(move || analyzer.analyze(&req.url)).await {
        Ok(Ok(report)) => Json(report).into_response(),
        Ok(Err(LensError::BadUrl(e))) => error(StatusCode::BAD_REQUEST, e.to_string()),
        Ok(Err(e)) => {
            tracing::error!(error = %e, "analysis failed");
            error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
        }
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn taxonomy(State(state): State<AppState>) -> Response {
    Json(state.analyzer.taxonomy().clone()).into_response()
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok" }))
}

/// CORS for the listed origins only. An empty list allows no cross-origin callers.
pub fn cors_layer(origins: &[String]) -> CorsLayer {
    let allowed: Vec<HeaderValue> = origins
        .iter()
        .filter_map(|o| match HeaderValue::from_str(o.trim_end_matches('/')) {
            Ok(v) => Some(v),
            Err(_) => {
                tracing::warn!(origin = %o, "ignoring invalid CORS origin");
                None
            }
        })
        .collect();
    CorsLayer::new()
        .allow_origin(AllowOrigin::list(allowed))
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE])
}

pub fn router(analyzer: Arc<Analyzer>, cors_origins: &[String]) -> Router {
    Router::new()
        .route("/v1/analyze", post(analyze))
        .route("/v1/taxonomy", get(taxonomy))
        .route("/v1/health", get(health))
        .layer(cors_layer(cors_origins))
        .with_state(AppState { analyzer })
}

pub async fn serve(app: Router, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, app).await
}
