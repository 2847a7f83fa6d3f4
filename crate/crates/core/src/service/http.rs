//! HTTP routes over [`Api`].

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, SystemTime};

use axum::body::Bytes;
use axum::extract::{Path, Query as UrlQuery, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;

use super::api::{Api, ApiError, ErrorKind, SearchRequest, Snapshot};
use crate::corpus::PicoLabel;
use crate::evidence_map::Query;

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match self.kind() {
            ErrorKind::NotFound => StatusCode::NOT_FOUND,
            ErrorKind::BadRequest => StatusCode::BAD_REQUEST,
        };
        (status, Json(self)).into_response()
    }
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::new("bad_request", format!("invalid body: {e}")))
}

#[derive(Debug, Deserialize)]
struct AutocompleteParams {
    #[serde(default)]
    q: String,
    #[serde(default)]
    role: Option<String>,
}

async fn autocomplete(State(api): State<Arc<Api>>, UrlQuery(p): UrlQuery<AutocompleteParams>) -> Response {
    let role = match p.role.as_deref().filter(|r| !r.is_empty()).map(str::parse::<PicoLabel>) {
        None => None,
        Some(Ok(l)) => Some(l),
        Some(Err(_)) => {
            return ApiError::new("bad_request", format!("unknown role {:?}", p.role.unwrap_or_default()))
                .into_response()
        }
    };
    match api.autocomplete(&p.q, role) {
        Ok(s) => Json(s).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn search(State(api): State<Arc<Api>>, body: Bytes) -> Response {
    match parse_body::<SearchRequest>(&body).and_then(|r| api.search(&r)) {
        Ok(r) => Json(r).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn map(State(api): State<Arc<Api>>, body: Bytes) -> Response {
    match parse_body::<Query>(&body).and_then(|q| api.map_json(&q)) {
        Ok(bytes) => ([(header::CONTENT_TYPE, "application/json")], (*bytes).clone()).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn document(State(api): State<Arc<Api>>, Path(id): Path<String>) -> Response {
    match api.document(&id) {
        Ok(d) => Json(d).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn health(State(api): State<Arc<Api>>) -> Response {
    Json(api.health()).into_response()
}

pub fn router(api: Arc<Api>) -> Router {
    Router::new()
        .route("/autocomplete", get(autocomplete))
        .route("/search", post(search))
        .route("/map", post(map))
        .route("/doc/{id}", get(document))
        .route("/health", get(health))
        .with_state(api)
}

/// Serve until `shutdown` resolves.
pub async fn serve(
    api: Arc<Api>,
    addr: SocketAddr,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    serve_on(listener, api, shutdown).await
}

/// Serve on an already bound listener.
pub async fn serve_on(
    listener: tokio::net::TcpListener,
    api: Arc<Api>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(api)).with_graceful_shutdown(shutdown).await
}

/// Poll `watched` and swap in a fresh snapshot whenever its modification time changes.
pub async fn watch_store(
    api: Arc<Api>,
    watched: PathBuf,
    every: Duration,
    load: impl Fn() -> Option<Snapshot> + Send + Sync + 'static,
) {
    let load = Arc::new(load);
    let mtime = |p: &PathBuf| std::fs::metadata(p).and_then(|m| m.modified()).ok();
    let mut last: Option<SystemTime> = mtime(&watched);
    let mut tick = tokio::time::interval(every);
    loop {
        tick.tick().await;
        let now = mtime(&watched);
        if now == last {
            continue;
        }
        last = now;
        let load = load.clone();
        if let Ok(Some(snap)) = tokio::task::spawn_blocking(move || load()).await {
            api.swap(snap);
            log::info!("store reloaded");
        }
    }
}
