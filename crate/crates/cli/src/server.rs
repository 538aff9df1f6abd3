//! HTTP front end: `GET /suggest` and `GET /healthz`.

use std::net::SocketAddr;
use std::sync::Arc;

use anyhow::Context;
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use deboost_core::{Engine, Mode};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;

#[derive(Clone)]
pub struct AppState {
    pub engine: Arc<Engine>,
    pub default_mode: Mode,
}

#[derive(Debug, Deserialize)]
pub struct SuggestParams {
    prefix: Option<String>,
    k: Option<String>,
    mode: Option<String>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct Health {
    pub status: String,
    pub queries: usize,
    pub embeddings: usize,
}

#[derive(Debug, Serialize)]
struct ApiError {
    error: String,
}

fn bad_request(msg: impl Into<String>) -> Response {
    (StatusCode::BAD_REQUEST, Json(ApiError { error: msg.into() })).into_response()
}

async fn suggest(State(state): State<AppState>, Query(params): Query<SuggestParams>) -> Response {
    let Some(prefix) = params.prefix else {
        return bad_request("missing required parameter: prefix");
    };
    let k = match params.k.as_deref() {
        None => state.engine.visible_k(),
        Some(raw) => match raw.parse::<usize>() {
            Ok(k) => k,
            Err(_) => return bad_request(format!("invalid k: {raw:?}")),
        },
    };
    let mode = match params.mode.as_deref() {
        None => state.default_mode,
        Some(raw) => match raw.parse::<Mode>() {
            Ok(m) => m,
            Err(e) => return bad_request(e.to_string()),
        },
    };
    Json(state.engine.suggest(&prefix, k, mode)).into_response()
}

async fn healthz(State(state): State<AppState>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        queries: state.engine.index().len(),
        embeddings: state.engine.table().len(),
    })
}

pub fn router(state: AppState) -> Router {
    Router::new().route("/suggest", get(suggest)).route("/healthz", get(healthz)).with_state(state)
}

/// Binds `addr`, failing with the address in the error chain.
pub async fn bind(addr: &str) -> anyhow::Result<TcpListener> {
    TcpListener::bind(addr).await.with_context(|| format!("cannot bind {addr}"))
}

/// Serves until the listener fails or `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    state: AppState,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> anyhow::Result<()> {
    let addr: SocketAddr = listener.local_addr()?;
    tracing::info!(%addr, "listening");
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await.context("server error")
}
