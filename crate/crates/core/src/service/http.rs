//! JSON over HTTP: `POST /v1/chat`, `GET /v1/stats`, `POST /v1/admin/flush`.

use std::future::Future;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::json;
use tokio::net::TcpListener;

use super::{ChatRequest, ChatService};
use crate::error::Error;

struct ApiError(StatusCode, String);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::InvalidRequest(_) | Error::EmptyQuery => StatusCode::BAD_REQUEST,
            Error::LlmBackend(_) | Error::EmbeddingBackend(_) => StatusCode::BAD_GATEWAY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, Error> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(ApiError::from)
}

async fn chat(State(svc): State<Arc<ChatService>>, body: Bytes) -> Result<Response, ApiError> {
    let req: ChatRequest = serde_json::from_slice(&body)
        .map_err(|e| ApiError(StatusCode::BAD_REQUEST, format!("invalid request: {e}")))?;
    let resp = blocking(move || svc.handle_chat(&req)).await?;
    Ok(Json(resp).into_response())
}

async fn stats(State(svc): State<Arc<ChatService>>) -> Response {
    Json(svc.handle_stats()).into_response()
}

async fn flush(State(svc): State<Arc<ChatService>>) -> Result<Response, ApiError> {
    let removed = blocking(move || svc.flush()).await?;
    Ok(Json(json!({ "removed": removed })).into_response())
}

pub fn router(service: Arc<ChatService>) -> Router {
    Router::new()
        .route("/v1/chat", post(chat))
        .route("/v1/stats", get(stats))
        .route("/v1/admin/flush", post(flush))
        .with_state(service)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    service: Arc<ChatService>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(service)).with_graceful_shutdown(shutdown).await
}
