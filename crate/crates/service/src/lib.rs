//! HTTP API over a traced index.
//!
//! | method | path | purpose |
//! |---|---|---|
//! | POST | `/api/v1/trace` | trace a response; body `{prompt?, response, options?}` |
//! | GET | `/api/v1/docs/{shard_id}/{doc_id}?center=&window=` | extended document view |
//! | POST | `/api/v1/takedown` | exclude documents; needs the admin token |
//! | GET | `/healthz` | load status |
//!
//! Every error body is `{"error": {"code", "message"}}`.

mod error;
mod state;

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::BytesRejection;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tracescope_core::{Error as CoreError, Stage, TakedownReport, TraceConfig};

pub use error::ApiError;
pub use state::{AppState, LoadState, ServiceConfig, MIN_BODY_LIMIT};

pub const ADMIN_TOKEN_HEADER: &str = "x-admin-token";
pub const LATENCY_HEADER: &str = "x-trace-latency-ms";
const MAX_WINDOW: u64 = 100_000;

pub fn router(state: Arc<AppState>) -> Router {
    let limit = state.config.body_limit;
    Router::new()
        .route("/api/v1/trace", post(trace))
        .route("/api/v1/docs/{shard_id}/{doc_id}", get(document))
        .route("/api/v1/takedown", post(takedown))
        .route("/healthz", get(healthz))
        .fallback(|| async { ApiError::not_found("no such endpoint") })
        .method_not_allowed_fallback(|| async {
            ApiError::new(StatusCode::METHOD_NOT_ALLOWED, "method_not_allowed", "method not allowed")
        })
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}

/// Binds, starts loading the index in the background, and serves until
/// interrupted.
pub async fn serve(config: ServiceConfig) -> std::io::Result<()> {
    config
        .validate()
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidInput, e))?;
    let listener = tokio::net::TcpListener::bind(config.listen).await?;
    log::info!("listening on {}", listener.local_addr()?);
    let state = AppState::new(config);
    let loader = state.clone();
    tokio::task::spawn_blocking(move || loader.load());
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

fn parse_json<T: for<'de> Deserialize<'de>>(body: Result<Bytes, BytesRejection>) -> Result<T, ApiError> {
    let bytes = body.map_err(|r| {
        if r.status() == StatusCode::PAYLOAD_TOO_LARGE {
            ApiError::new(StatusCode::PAYLOAD_TOO_LARGE, "payload_too_large", "request body too large")
        } else {
            ApiError::bad_request(r.body_text())
        }
    })?;
    serde_json::from_slice(&bytes).map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))
}

fn ready(state: &AppState) -> Result<Arc<tracescope_core::Tracer>, ApiError> {
    match state.load_state() {
        LoadState::Ready(t) => Ok(t),
        LoadState::Loading => Err(ApiError::unavailable("index is still loading")),
        LoadState::Failed { message, .. } => Err(ApiError::unavailable(message)),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TraceRequest {
    #[serde(default)]
    prompt: String,
    response: String,
    #[serde(default)]
    options: Option<Value>,
}

/// Overlays request options on the service defaults; unknown keys are
/// rejected.
fn merge_options(defaults: &TraceConfig, options: Option<Value>) -> Result<TraceConfig, ApiError> {
    let Some(options) = options else {
        return Ok(defaults.clone());
    };
    let Value::Object(options) = options else {
        return Err(ApiError::bad_request("options must be an object"));
    };
    let mut merged = serde_json::to_value(defaults).expect("config serializes");
    let target = merged.as_object_mut().expect("config is an object");
    for (k, v) in options {
        let key = if k == "seed" { "rng_seed".to_string() } else { k };
        target.insert(key, v);
    }
    let config: TraceConfig =
        serde_json::from_value(merged).map_err(|e| ApiError::bad_request(format!("invalid options: {e}")))?;
    config.validate().map_err(ApiError::from)?;
    Ok(config)
}

async fn trace(State(state): State<Arc<AppState>>, body: Result<Bytes, BytesRejection>) -> Result<Response, ApiError> {
    let req: TraceRequest = parse_json(body)?;
    if req.response.is_empty() {
        return Err(ApiError::bad_request("response must be non-empty"));
    }
    let config = merge_options(&state.config.trace_defaults, req.options)?;
    let tracer = ready(&state)?;
    let job = tokio::task::spawn_blocking(move || tracer.trace(&req.prompt, &req.response, &config));
    let result = match tokio::time::timeout(state.config.timeout, job).await {
        Err(_) => {
            return Err(ApiError::new(
                StatusCode::GATEWAY_TIMEOUT,
                "timeout",
                format!("trace exceeded {} ms", state.config.timeout.as_millis()),
            ))
        }
        Ok(Err(join)) => {
            log::error!("trace task failed: {join}");
            return Err(ApiError::internal());
        }
        Ok(Ok(r)) => r?,
    };
    let mut response = (
        [(axum::http::header::CONTENT_TYPE, HeaderValue::from_static("application/json"))],
        result.to_json(),
    )
        .into_response();
    let ms = format!("{:.3}", result.elapsed.as_secs_f64() * 1e3);
    response
        .headers_mut()
        .insert(LATENCY_HEADER, HeaderValue::from_str(&ms).expect("ascii"));
    Ok(response)
}

#[derive(Deserialize)]
struct DocQuery {
    center: Option<String>,
    window: Option<String>,
}

#[derive(Serialize)]
struct DocumentView {
    shard_id: u32,
    doc_id: u64,
    source: String,
    stage: Stage,
    text: String,
    window_token_range: (u64, u64),
    total_doc_tokens: u64,
    center: u64,
}

fn parse_u64(name: &str, v: Option<String>, default: u64) -> Result<u64, ApiError> {
    match v {
        None => Ok(default),
        Some(s) => s
            .parse()
            .map_err(|_| ApiError::bad_request(format!("{name} must be a non-negative integer"))),
    }
}

async fn document(
    State(state): State<Arc<AppState>>,
    path: Result<Path<(String, String)>, axum::extract::rejection::PathRejection>,
    query: Result<Query<DocQuery>, axum::extract::rejection::QueryRejection>,
) -> Result<Json<DocumentView>, ApiError> {
    let Path((shard, doc)) = path.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let shard_id: u32 = shard
        .parse()
        .map_err(|_| ApiError::bad_request("shard_id must be a non-negative integer"))?;
    let doc_id: u64 = doc
        .parse()
        .map_err(|_| ApiError::bad_request("doc_id must be a non-negative integer"))?;
    let Query(q) = query.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let center = parse_u64("center", q.center, 0)?;
    let window = parse_u64("window", q.window, 500)?;
    if window == 0 || window > MAX_WINDOW {
        return Err(ApiError::bad_request(format!("window must be in 1..={MAX_WINDOW}")));
    }
    let tracer = ready(&state)?;
    let index = tracer.index();
    let Some(shard) = index.shards().get(shard_id as usize) else {
        return Err(ApiError::not_found(format!("unknown shard {shard_id}")));
    };
    let Some((start, end)) = shard.doc_range(doc_id) else {
        return Err(ApiError::not_found(format!("unknown document {shard_id}:{doc_id}")));
    };
    if center >= (end - start).max(1) {
        return Err(ApiError::bad_request(format!(
            "center {center} outside document of {} tokens",
            end - start
        )));
    }
    let s = index.document_view(shard_id, doc_id, center, window)?;
    Ok(Json(DocumentView {
        shard_id,
        doc_id,
        source: s.source,
        stage: s.stage,
        text: s.text,
        window_token_range: s.token_range,
        total_doc_tokens: s.doc_tokens,
        center,
    }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TakedownRequest {
    documents: Vec<DocRef>,
}

#[derive(Deserialize, Serialize, Clone, Copy)]
#[serde(deny_unknown_fields)]
struct DocRef {
    shard_id: u32,
    doc_id: u64,
}

fn authorized(state: &AppState, headers: &HeaderMap) -> bool {
    let Some(expected) = state.config.admin_token.as_deref() else {
        return false;
    };
    let given = headers
        .get(ADMIN_TOKEN_HEADER)
        .and_then(|v| v.to_str().ok())
        .or_else(|| {
            headers
                .get(axum::http::header::AUTHORIZATION)
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.strip_prefix("Bearer "))
        });
    given.is_some_and(|g| constant_time_eq(g.as_bytes(), expected.as_bytes()))
}

fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

fn takedown_body(report: &TakedownReport, unknown: &[(u32, u64)]) -> Value {
    json!({
        "applied": report.applied,
        "already_present": report.already_present,
        "unknown": report.unknown,
        "unknown_documents": unknown
            .iter()
            .map(|&(shard_id, doc_id)| DocRef { shard_id, doc_id })
            .collect::<Vec<_>>(),
    })
}

async fn takedown(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    body: Result<Bytes, BytesRejection>,
) -> Result<Json<Value>, ApiError> {
    if !authorized(&state, &headers) {
        return Err(ApiError::new(
            StatusCode::UNAUTHORIZED,
            "unauthorized",
            "missing or invalid admin token",
        ));
    }
    let req: TakedownRequest = parse_json(body)?;
    let tracer = ready(&state)?;
    let docs: Vec<(u32, u64)> = req.documents.iter().map(|d| (d.shard_id, d.doc_id)).collect();
    let outcome = tokio::task::spawn_blocking(move || tracer.index().take_down(&docs))
        .await
        .map_err(|_| ApiError::internal())?;
    match outcome {
        Ok(report) => Ok(Json(takedown_body(&report, &[]))),
        Err(CoreError::UnknownDocuments { unknown, report }) => {
            if report.applied + report.already_present == 0 {
                let list: Vec<String> = unknown.iter().map(|(s, d)| format!("{s}:{d}")).collect();
                Err(ApiError::new(
                    StatusCode::UNPROCESSABLE_ENTITY,
                    "unknown_documents",
                    format!("no such documents: {}", list.join(", ")),
                ))
            } else {
                Ok(Json(takedown_body(&report, &unknown)))
            }
        }
        Err(e) => Err(e.into()),
    }
}

async fn healthz(State(state): State<Arc<AppState>>) -> Response {
    match state.load_state() {
        LoadState::Ready(t) => Json(json!({
            "status": "ok",
            "shards_loaded": t.index().shards().len(),
            "num_tokens": t.index().num_tokens(),
        }))
        .into_response(),
        LoadState::Loading => (
            StatusCode::SERVICE_UNAVAILABLE,
            Json(json!({
                "status": "loading",
                "error": { "code": "loading", "message": "index is still loading" },
            })),
        )
            .into_response(),
        LoadState::Failed { message, shard } => (
            StatusCode::SERVICE_UNAVAILABLE,
            Json(json!({
                "status": "failed",
                "shard": shard,
                "error": { "code": "index_unavailable", "message": message },
            })),
        )
            .into_response(),
    }
}
