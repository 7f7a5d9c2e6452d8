#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::body::Body;
use axum::http::Request;
use axum::Router;
use echo_core::engine::EngineParams;
use echo_core::recommend::Catalog;
use echo_core::types::FeatureRegistry;
use echo_service::{App, EngineConfig, ManualClock};
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

pub const START_MS: u64 = 1_760_000_000_000;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/service")
}

pub fn config() -> EngineConfig {
    EngineConfig::load(&fixtures().join("echo.toml")).unwrap()
}

pub fn inputs() -> (FeatureRegistry, Catalog<f64>, EngineParams) {
    let cfg = config();
    let params = cfg.engine_params();
    (
        FeatureRegistry::load(&cfg.registry).unwrap(),
        Catalog::load(&cfg.catalog, params.dim).unwrap(),
        params,
    )
}

pub fn memory_app(clock: &ManualClock) -> App {
    let (r, c, p) = inputs();
    App::in_memory(r, c, p, Arc::new(clock.clone())).unwrap()
}

pub fn router(app: App) -> Router {
    echo_service::http::router(Arc::new(Mutex::new(app)))
}

pub async fn call(router: &Router, method: &str, uri: &str, body: Option<&Value>) -> (u16, Value) {
    call_raw(router, method, uri, body.map(|b| b.to_string()).unwrap_or_default()).await
}

pub async fn call_raw(router: &Router, method: &str, uri: &str, body: String) -> (u16, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(Body::from(body))
        .unwrap();
    let resp = router.clone().oneshot(req).await.unwrap();
    let status = resp.status().as_u16();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, v)
}

/// A message that mentions five registered features and a catalog noun.
pub const TASKABLE: &str = "looking for a jacket as a gift, budget and style matter and i like sustainable brands";

/// Picks an answer that fits the task's kind.
pub fn answer_for(task: &Value, i: usize) -> Value {
    if task["kind"] == "free_text" {
        Value::String("hiking".into())
    } else {
        Value::from(i % 4)
    }
}
