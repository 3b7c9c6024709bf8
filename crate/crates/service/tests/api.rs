use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use axum::Router;
use serde_json::{json, Value};
use tempfile::TempDir;
use tower::ServiceExt;
use tracescope_core::builder::{BuildConfig, DocumentRecord, Vocabulary};
use tracescope_core::{ingest, Stage};
use tracescope_service::{router, AppState, LoadState, ServiceConfig, LATENCY_HEADER};

const TOKEN: &str = "s3cret";

fn corpus() -> Vec<String> {
    let mut docs: Vec<String> = (0..8)
        .map(|i| format!("document {i} talks about topic{i} and then in the morning we walked to the river bank"))
        .collect();
    let long: Vec<String> = (0..2000).map(|i| format!("w{}", i % 97)).collect();
    docs.push(long.join(" "));
    docs
}

fn build(root: &std::path::Path, shard_cap: u64) {
    ingest(
        root,
        corpus()
            .into_iter()
            .enumerate()
            .map(|(i, t)| DocumentRecord::text(format!("src-{i}"), Stage::Pretraining, t)),
        BuildConfig { shard_cap },
        Vocabulary::default_tokenizer(),
    )
    .unwrap();
}

fn loaded(shard_cap: u64) -> (TempDir, Arc<AppState>, Router) {
    let dir = TempDir::new().unwrap();
    let root = dir.path().join("index");
    build(&root, shard_cap);
    let mut config = ServiceConfig::new(&root);
    config.admin_token = Some(TOKEN.into());
    config.parallelism = 2;
    let state = AppState::new(config);
    state.load();
    assert!(matches!(state.load_state(), LoadState::Ready(_)));
    let app = router(state.clone());
    (dir, state, app)
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Value, axum::http::HeaderMap) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let body = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|_| panic!("non-JSON body: {:?}", bytes))
    };
    (status, body, headers)
}

fn post(uri: &str, body: impl Into<Body>) -> Request<Body> {
    Request::post(uri)
        .header("content-type", "application/json")
        .body(body.into())
        .unwrap()
}

fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

fn takedown_req(token: Option<&str>, docs: Value) -> Request<Body> {
    let mut b = Request::post("/api/v1/takedown").header("content-type", "application/json");
    if let Some(t) = token {
        b = b.header("x-admin-token", t);
    }
    b.body(Body::from(json!({ "documents": docs }).to_string())).unwrap()
}

fn assert_error(body: &Value, code: &str) {
    assert_eq!(body["error"]["code"], code, "{body}");
    assert!(body["error"]["message"].as_str().is_some_and(|m| !m.is_empty()), "{body}");
}

#[tokio::test]
async fn trace_returns_result_json() {
    let (_d, _s, app) = loaded(1 << 20);
    let req = post(
        "/api/v1/trace",
        json!({"prompt": "tell me", "response": "and then in the morning we walked to the river bank"}).to_string(),
    );
    let (status, body, headers) = send(&app, req).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert!(headers.get(LATENCY_HEADER).is_some());
    assert!(!body["spans"].as_array().unwrap().is_empty());
    assert!(!body["documents"].as_array().unwrap().is_empty());
    assert!(body["adjacency"].is_array());
    assert!(body["stats"].get("latency_ms").is_none());
    for doc in body["documents"].as_array().unwrap() {
        assert!(["high", "medium", "low"].contains(&doc["relevance"].as_str().unwrap()));
    }
}

#[tokio::test]
async fn trace_options_and_timing() {
    let (_d, _s, app) = loaded(1 << 20);
    let body = json!({
        "response": "then in the morning we walked to the river bank",
        "options": {"max_docs_per_span": 2, "include_timing": true, "seed": 7}
    });
    let (status, body, _) = send(&app, post("/api/v1/trace", body.to_string())).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert!(body["stats"]["latency_ms"].is_number());
    for span in body["spans"].as_array().unwrap() {
        assert!(span["doc_ids"].as_array().unwrap().len() <= 2);
    }
}

#[tokio::test]
async fn trace_rejects_bad_input() {
    let (_d, _s, app) = loaded(1 << 20);
    let cases = [
        json!({"prompt": "x"}).to_string(),
        json!({"response": ""}).to_string(),
        json!({"response": "a b", "options": {"max_docs_per_span": 0}}).to_string(),
        json!({"response": "a b", "options": {"no_such_option": 1}}).to_string(),
        json!({"response": "a b", "extra": 1}).to_string(),
        "{not json".to_string(),
    ];
    for body in cases {
        let (status, resp, _) = send(&app, post("/api/v1/trace", body.clone())).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{body} -> {resp}");
        assert_error(&resp, "bad_request");
    }
}

#[tokio::test]
async fn trace_rejects_oversized_body() {
    let (_d, _s, app) = loaded(1 << 20);
    let response = "word ".repeat(1_000_000);
    let (status, body, _) = send(&app, post("/api/v1/trace", json!({"response": response}).to_string())).await;
    assert_eq!(status, StatusCode::PAYLOAD_TOO_LARGE);
    assert_error(&body, "payload_too_large");
}

#[tokio::test]
async fn unloaded_index_is_unavailable() {
    let dir = TempDir::new().unwrap();
    let state = AppState::new(ServiceConfig::new(dir.path()));
    let app = router(state);
    let (status, body, _) = send(&app, post("/api/v1/trace", json!({"response": "hi"}).to_string())).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert_error(&body, "index_unavailable");
    let (status, body, _) = send(&app, get("/healthz")).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(body["status"], "loading");
}

#[tokio::test]
async fn document_window() {
    let (_d, state, app) = loaded(1 << 20);
    let tracer = state.tracer().unwrap();
    let long_len = tracer.index().shards()[0].doc_range(8).map(|(s, e)| e - s).unwrap();
    assert!(long_len >= 2000);

    let (status, body, _) = send(&app, get("/api/v1/docs/0/8?center=1000")).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let (b, e) = (body["window_token_range"][0].as_u64().unwrap(), body["window_token_range"][1].as_u64().unwrap());
    assert_eq!(e - b, 500);
    assert!(b <= 1000 && 1000 < e);
    assert_eq!(body["total_doc_tokens"], long_len);
    assert_eq!(body["source"], "src-8");
    assert_eq!(body["stage"], "pretraining");

    // Near the end the window shifts rather than shrinks.
    let (_, body, _) = send(&app, get(&format!("/api/v1/docs/0/8?center={}", long_len - 1))).await;
    assert_eq!(body["window_token_range"], json!([long_len - 500, long_len]));

    let (status, body, _) = send(&app, get("/api/v1/docs/0/0?center=3&window=500")).await;
    assert_eq!(status, StatusCode::OK);
    let short = body["total_doc_tokens"].as_u64().unwrap();
    assert!(short < 500);
    assert_eq!(body["window_token_range"], json!([0, short]));
    assert!(body["text"].as_str().unwrap().contains("document 0"));
}

#[tokio::test]
async fn document_errors() {
    let (_d, _s, app) = loaded(1 << 20);
    for (uri, status) in [
        ("/api/v1/docs/0/99", StatusCode::NOT_FOUND),
        ("/api/v1/docs/7/0", StatusCode::NOT_FOUND),
        ("/api/v1/docs/x/0", StatusCode::BAD_REQUEST),
        ("/api/v1/docs/0/0?center=-1", StatusCode::BAD_REQUEST),
        ("/api/v1/docs/0/0?center=100000", StatusCode::BAD_REQUEST),
        ("/api/v1/docs/0/0?window=0", StatusCode::BAD_REQUEST),
    ] {
        let (got, body, _) = send(&app, get(uri)).await;
        assert_eq!(got, status, "{uri} -> {body}");
        assert!(body["error"]["code"].is_string());
    }
}

#[tokio::test]
async fn takedown_flow() {
    let (_d, state, app) = loaded(1 << 20);

    let (status, body, _) = send(&app, takedown_req(None, json!([{"shard_id": 0, "doc_id": 3}]))).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    assert_error(&body, "unauthorized");
    let (status, _, _) = send(&app, takedown_req(Some("wrong"), json!([{"shard_id": 0, "doc_id": 3}]))).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);

    let (status, body, _) = send(&app, takedown_req(Some(TOKEN), json!([{"shard_id": 0, "doc_id": 3}]))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["applied"], 1);

    let (status, body, _) = send(&app, takedown_req(Some(TOKEN), json!([{"shard_id": 0, "doc_id": 3}]))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["applied"], 0);
    assert_eq!(body["already_present"], 1);

    let (status, body, _) = send(&app, takedown_req(Some(TOKEN), json!([{"shard_id": 0, "doc_id": 999}]))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_error(&body, "unknown_documents");

    let bearer = Request::post("/api/v1/takedown")
        .header("authorization", format!("Bearer {TOKEN}"))
        .body(Body::from(json!({"documents": [{"shard_id": 0, "doc_id": 4}, {"shard_id": 0, "doc_id": 999}]}).to_string()))
        .unwrap();
    let (status, body, _) = send(&app, bearer).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["applied"], 1);
    assert_eq!(body["unknown"], 1);

    let (status, body, _) = send(&app, get("/api/v1/docs/0/3")).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_error(&body, "not_found");

    let req = post("/api/v1/trace", json!({"response": "document 3 talks about topic3"}).to_string());
    let (status, body, _) = send(&app, req).await;
    assert_eq!(status, StatusCode::OK);
    for doc in body["documents"].as_array().unwrap() {
        assert!(!(doc["shard_id"] == 0 && (doc["doc_id"] == 3 || doc["doc_id"] == 4)), "{doc}");
    }
    assert!(state.tracer().unwrap().index().is_taken_down((0, 3)));
}

#[tokio::test]
async fn takedown_refused_without_configured_token() {
    let dir = TempDir::new().unwrap();
    let root = dir.path().join("index");
    build(&root, 1 << 20);
    let state = AppState::new(ServiceConfig::new(&root));
    state.load();
    let app = router(state);
    let (status, _, _) = send(&app, takedown_req(Some(""), json!([{"shard_id": 0, "doc_id": 0}]))).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
}

#[tokio::test]
async fn health_reports_loaded_index() {
    let (_d, state, app) = loaded(2001);
    let (status, body, _) = send(&app, get("/healthz")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "ok");
    let index = state.tracer().unwrap().index().clone();
    assert!(body["shards_loaded"].as_u64().unwrap() >= 2);
    assert_eq!(body["shards_loaded"], index.shards().len());
    assert_eq!(body["num_tokens"], index.num_tokens());
}

#[tokio::test]
async fn health_names_corrupt_shard() {
    let dir = TempDir::new().unwrap();
    let root = dir.path().join("index");
    build(&root, 2001);
    let sa = root.join("shard-0001").join("sa.bin");
    let mut bytes = std::fs::read(&sa).unwrap();
    let (a, b) = bytes.split_at_mut(8);
    a.swap_with_slice(&mut b[..8]);
    std::fs::write(&sa, bytes).unwrap();

    let state = AppState::new(ServiceConfig::new(&root));
    state.load();
    let app = router(state);
    let (status, body, _) = send(&app, get("/healthz")).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(body["status"], "failed");
    assert_eq!(body["shard"], "shard-0001");
    assert!(body["error"]["message"].as_str().unwrap().contains("shard-0001"));
}

#[tokio::test]
async fn unknown_routes_and_methods() {
    let (_d, _s, app) = loaded(1 << 20);
    let (status, body, _) = send(&app, get("/nope")).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_error(&body, "not_found");
    let (status, body, _) = send(&app, get("/api/v1/trace")).await;
    assert_eq!(status, StatusCode::METHOD_NOT_ALLOWED);
    assert_error(&body, "method_not_allowed");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_traces_are_identical() {
    let (_d, _s, app) = loaded(2001);
    let body = json!({"prompt": "p", "response": "we walked to the river bank and then in the morning we walked"}).to_string();
    let mut handles = Vec::new();
    for _ in 0..8 {
        let app = app.clone();
        let body = body.clone();
        handles.push(tokio::spawn(async move {
            let resp = app.oneshot(post("/api/v1/trace", body)).await.unwrap();
            assert_eq!(resp.status(), StatusCode::OK);
            to_bytes(resp.into_body(), usize::MAX).await.unwrap()
        }));
    }
    let mut bodies = Vec::new();
    for h in handles {
        bodies.push(h.await.unwrap());
    }
    assert!(bodies.windows(2).all(|w| w[0] == w[1]));
}
