//! HTTP routes over [`App`].

use std::sync::{Arc, Mutex, MutexGuard};

use axum::body::Bytes;
use axum::extract::{Path, RawQuery, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;

use crate::app::App;
use crate::error::ServiceError;
use crate::wire::{self, ErrorBody};

pub type Shared = Arc<Mutex<App>>;

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let (status, error, fields) = match &self {
            ServiceError::NotFound { .. } => (StatusCode::NOT_FOUND, "not_found", Vec::new()),
            ServiceError::BadRequest(f) => (StatusCode::BAD_REQUEST, "bad_request", f.clone()),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal", Vec::new()),
        };
        let body = ErrorBody {
            error,
            message: self.to_string(),
            fields,
        };
        (status, Json(body)).into_response()
    }
}

type Reply<T> = Result<Json<T>, ServiceError>;

fn lock(app: &Shared) -> MutexGuard<'_, App> {
    app.lock().unwrap_or_else(|p| p.into_inner())
}

fn ok<T: Serialize>(v: T) -> Reply<T> {
    Ok(Json(v))
}

async fn create_session(State(app): State<Shared>, body: Bytes) -> Reply<wire::SessionCreated> {
    let user = wire::parse_create(&body)?;
    ok(lock(&app).create_session(user)?)
}

async fn post_message(State(app): State<Shared>, Path(id): Path<String>, body: Bytes) -> Reply<wire::MessageReply> {
    let text = wire::parse_message(&body);
    let mut app = lock(&app);
    known(&app, &id)?;
    ok(app.post_message(&id, text?)?)
}

async fn post_response(State(app): State<Shared>, Path(id): Path<String>, body: Bytes) -> Reply<wire::ResponseReply> {
    let req = wire::parse_response(&body);
    let mut app = lock(&app);
    known(&app, &id)?;
    ok(app.post_response(&id, req?)?)
}

async fn post_click(State(app): State<Shared>, Path(id): Path<String>, body: Bytes) -> Reply<wire::ClickReply> {
    let imp = wire::parse_click(&body);
    let mut app = lock(&app);
    known(&app, &id)?;
    ok(app.post_click(&id, &imp?)?)
}

async fn metrics(State(app): State<Shared>) -> Reply<wire::MetricsReply> {
    ok(lock(&app).metrics())
}

async fn events(State(app): State<Shared>, Path(id): Path<String>, RawQuery(q): RawQuery) -> Reply<wire::EventsPage> {
    let after = wire::parse_after(q.as_deref());
    let app = lock(&app);
    known(&app, &id)?;
    ok(app.events(&id, after?)?)
}

/// 404 for unknown sessions takes precedence over body diagnostics.
fn known(app: &App, id: &str) -> Result<(), ServiceError> {
    if app.has_session(id) {
        Ok(())
    } else {
        Err(ServiceError::not_found("session", id))
    }
}

pub fn router(app: Shared) -> Router {
    Router::new()
        .route("/session", post(create_session))
        .route("/session/{id}/message", post(post_message))
        .route("/session/{id}/response", post(post_response))
        .route("/session/{id}/click", post(post_click))
        .route("/session/{id}/events", get(events))
        .route("/metrics", get(metrics))
        .with_state(app)
}

/// Serves until ctrl-c.
pub async fn serve(app: App, listener: tokio::net::TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router(Arc::new(Mutex::new(app))))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
