//! HTTP/JSON query service.
//!
//! | route                     | purpose                                   |
//! |---------------------------|-------------------------------------------|
//! | `POST /v1/query`          | answer one query, optional threshold      |
//! | `GET /v1/health`          | liveness plus index and bank sizes        |
//! | `GET /v1/config`          | effective router configuration            |
//! | `GET /v1/sources/{id}`    | chunk text and provenance of a tree node  |
//! | `POST /v1/reload`         | swap in freshly built artifacts           |
//! | `GET /ui/...`             | static browser client, if configured      |
//!
//! Loaded artifacts sit behind one lock and are replaced as a unit, so a
//! query always sees a consistent index and chunk store.

use std::net::SocketAddr;
use std::path::{Component, Path, PathBuf};
use std::sync::{Arc, RwLock};

use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Redirect, Response};
use axum::routing::{get, post};
use axum::Json;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::index::ScoredHit;
use crate::router::{check_threshold, Answer, RouteMode, Router, RouterConfig, RouterError};

/// Artifacts a running service answers from.
pub struct Loaded {
    pub router: Router,
    pub bank_size: usize,
}

pub type Loader = dyn Fn() -> Result<Loaded, String> + Send + Sync;

pub struct AppState {
    loaded: RwLock<Option<Arc<Loaded>>>,
    loader: Box<Loader>,
    default_config: RouterConfig,
    ui_dir: Option<PathBuf>,
}

impl AppState {
    /// Does not load anything yet; call [`AppState::reload`] to load.
    pub fn new(loader: Box<Loader>, default_config: RouterConfig, ui_dir: Option<PathBuf>) -> Arc<AppState> {
        Arc::new(AppState {
            loaded: RwLock::new(None),
            loader,
            default_config,
            ui_dir,
        })
    }

    /// Runs the loader and swaps the result in; on failure the previous
    /// artifacts stay in service.
    pub fn reload(&self) -> Result<(usize, usize), String> {
        let fresh = Arc::new((self.loader)()?);
        let sizes = (fresh.router.index().len(), fresh.bank_size);
        *self.loaded.write().expect("state lock") = Some(fresh);
        Ok(sizes)
    }

    fn current(&self) -> Option<Arc<Loaded>> {
        self.loaded.read().expect("state lock").clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRequest {
    pub query: String,
    #[serde(default)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Source {
    pub qa_id: String,
    pub node_id: String,
    pub doc_id: String,
    pub score: f32,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResponse {
    pub answer: String,
    pub mode: RouteMode,
    pub top_score: f32,
    pub threshold: f64,
    pub latency_ms: f64,
    /// One entry per retrieved QA hit, in rank order.
    pub sources: Vec<Source>,
    pub source_node_ids: Vec<String>,
}

impl QueryResponse {
    pub fn from_answer(answer: Answer, threshold: f64, router: &Router) -> QueryResponse {
        let sources = answer
            .hits
            .iter()
            .map(|h| {
                let meta = router.index().meta(&h.qa_id).expect("hit has metadata");
                Source {
                    qa_id: h.qa_id.clone(),
                    node_id: meta.node_id.clone(),
                    doc_id: meta.doc_id.clone(),
                    score: h.score,
                    rank: h.rank,
                }
            })
            .collect();
        QueryResponse {
            answer: answer.text,
            mode: answer.mode,
            top_score: answer.top_score,
            threshold,
            latency_ms: answer.latency_ms,
            sources,
            source_node_ids: answer.source_node_ids,
        }
    }

    pub fn to_answer(&self) -> Answer {
        Answer {
            text: self.answer.clone(),
            mode: self.mode,
            top_score: self.top_score,
            hits: self
                .sources
                .iter()
                .map(|s| ScoredHit {
                    qa_id: s.qa_id.clone(),
                    score: s.score,
                    rank: s.rank,
                })
                .collect(),
            source_node_ids: self.source_node_ids.clone(),
            latency_ms: self.latency_ms,
        }
    }
}

fn error(status: StatusCode, message: impl ToString) -> Response {
    (status, Json(json!({ "error": message.to_string() }))).into_response()
}

fn not_loaded() -> Response {
    error(StatusCode::SERVICE_UNAVAILABLE, "index not loaded")
}

async fn query(State(state): State<Arc<AppState>>, Json(req): Json<QueryRequest>) -> Response {
    if req.query.trim().is_empty() {
        return error(StatusCode::BAD_REQUEST, "query is empty");
    }
    if let Some(t) = req.threshold {
        if let Err(e) = check_threshold(t) {
            return error(StatusCode::BAD_REQUEST, e);
        }
    }
    let Some(loaded) = state.current() else {
        return not_loaded();
    };
    let result = tokio::task::spawn_blocking(move || {
        let router = &loaded.router;
        let threshold = req.threshold.unwrap_or(router.config().threshold);
        router
            .answer_query(&req.query, Some(threshold))
            .map(|a| QueryResponse::from_answer(a, threshold, router))
    })
    .await;
    match result {
        Ok(Ok(resp)) => Json(resp).into_response(),
        Ok(Err(e @ (RouterError::EmptyQuery | RouterError::InvalidThreshold(_)))) => error(StatusCode::BAD_REQUEST, e),
        Ok(Err(e @ RouterError::EmptyIndex)) => error(StatusCode::SERVICE_UNAVAILABLE, e),
        Ok(Err(e @ RouterError::Provider(_))) => error(StatusCode::BAD_GATEWAY, e),
        Ok(Err(e)) => error(StatusCode::INTERNAL_SERVER_ERROR, e),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e),
    }
}

async fn health(State(state): State<Arc<AppState>>) -> Response {
    let (index_size, bank_size) = state
        .current()
        .map(|l| (l.router.index().len(), l.bank_size))
        .unwrap_or((0, 0));
    Json(json!({ "status": "ok", "index_size": index_size, "bank_size": bank_size })).into_response()
}

async fn config(State(state): State<Arc<AppState>>) -> Response {
    let cfg = match state.current() {
        Some(l) => l.router.config().effective(),
        None => state.default_config.effective(),
    };
    Json(cfg).into_response()
}

async fn source(State(state): State<Arc<AppState>>, UrlPath(node_id): UrlPath<String>) -> Response {
    let Some(loaded) = state.current() else {
        return not_loaded();
    };
    match loaded.router.store().get(&node_id) {
        Some(node) => Json(json!({
            "node_id": node.node_id,
            "doc_id": node.doc_id,
            "level": node.level,
            "position": node.position,
            "text": node.text,
            "token_count": node.token_count,
            "child_ids": node.child_ids,
            "source_element_ids": node.source_element_ids,
        }))
        .into_response(),
        None => error(StatusCode::NOT_FOUND, format!("unknown node {node_id}")),
    }
}

async fn reload(State(state): State<Arc<AppState>>) -> Response {
    let s = state.clone();
    match tokio::task::spawn_blocking(move || s.reload()).await {
        Ok(Ok((index_size, bank_size))) => {
            Json(json!({ "status": "reloaded", "index_size": index_size, "bank_size": bank_size })).into_response()
        }
        Ok(Err(e)) => error(StatusCode::SERVICE_UNAVAILABLE, e),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e),
    }
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()) {
        Some("html") => "text/html; charset=utf-8",
        Some("js" | "mjs") => "text/javascript; charset=utf-8",
        Some("css") => "text/css; charset=utf-8",
        Some("json") => "application/json",
        Some("svg") => "image/svg+xml",
        Some("png") => "image/png",
        Some("ico") => "image/x-icon",
        Some("woff2") => "font/woff2",
        _ => "application/octet-stream",
    }
}

async fn serve_ui(state: &AppState, rel: &str) -> Response {
    let Some(dir) = &state.ui_dir else {
        return error(StatusCode::NOT_FOUND, "no ui configured");
    };
    let rel = Path::new(if rel.is_empty() { "index.html" } else { rel });
    if rel.components().any(|c| !matches!(c, Component::Normal(_))) {
        return error(StatusCode::NOT_FOUND, "not found");
    }
    let mut path = dir.join(rel);
    if path.is_dir() {
        path = path.join("index.html");
    }
    match tokio::fs::read(&path).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response(),
        Err(_) => error(StatusCode::NOT_FOUND, "not found"),
    }
}

async fn ui_index(State(state): State<Arc<AppState>>) -> Response {
    serve_ui(&state, "").await
}

async fn ui_file(State(state): State<Arc<AppState>>, UrlPath(rel): UrlPath<String>) -> Response {
    serve_ui(&state, &rel).await
}

pub fn app(state: Arc<AppState>) -> axum::Router {
    axum::Router::new()
        .route("/v1/query", post(query))
        .route("/v1/health", get(health))
        .route("/v1/config", get(config))
        .route("/v1/sources/{node_id}", get(source))
        .route("/v1/reload", post(reload))
        .route("/ui", get(|| async { Redirect::permanent("/ui/") }))
        .route("/ui/", get(ui_index))
        .route("/ui/{*path}", get(ui_file))
        .with_state(state)
}

/// Serves on an already-bound listener until `shutdown` resolves.
pub async fn serve_on(
    listener: tokio::net::TcpListener,
    state: Arc<AppState>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, app(state)).with_graceful_shutdown(shutdown).await
}

/// Binds `addr` and serves until Ctrl-C.
pub async fn serve(addr: SocketAddr, state: Arc<AppState>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    serve_on(listener, state, async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await
}
