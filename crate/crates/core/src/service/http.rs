//! HTTP/JSON front end. Errors are returned as `{"code": ..., "reason": ...}`.

use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;

use super::{Service, SubmitRequest};
use crate::error::Error;

#[derive(Serialize)]
struct ErrorBody {
    code: String,
    reason: String,
}

pub struct ApiError(StatusCode, ErrorBody);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let (status, code) = match &e {
            Error::NotFound(_) => (StatusCode::NOT_FOUND, "not_found".to_string()),
            Error::Rejected { code, .. } => (StatusCode::CONFLICT, code.to_string()),
            Error::InvalidInput(_) | Error::Json(_) => {
                (StatusCode::BAD_REQUEST, "invalid_request".into())
            }
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal".into()),
        };
        let reason = match e {
            Error::Rejected { reason, .. } => reason,
            other => other.to_string(),
        };
        ApiError(status, ErrorBody { code, reason })
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError(
            StatusCode::BAD_REQUEST,
            ErrorBody {
                code: "invalid_request".into(),
                reason: r.body_text(),
            },
        )
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;
type Shared = Arc<Service>;

async fn next(State(s): State<Shared>, Path(id): Path<String>) -> ApiResult<super::NextItem> {
    Ok(Json(s.next_item(&id)?))
}

async fn submit(
    State(s): State<Shared>,
    Path(id): Path<String>,
    body: Result<Json<SubmitRequest>, JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(req) = body?;
    let ann = s.submit(&id, req)?;
    Ok(Json(serde_json::json!({ "status": "accepted", "annotation": ann })).into_response())
}

async fn pause(State(s): State<Shared>, Path(id): Path<String>) -> ApiResult<super::Progress> {
    Ok(Json(s.pause(&id)?))
}

async fn resume(State(s): State<Shared>, Path(id): Path<String>) -> ApiResult<super::Progress> {
    Ok(Json(s.resume(&id)?))
}

async fn progress(State(s): State<Shared>, Path(id): Path<String>) -> ApiResult<super::Progress> {
    Ok(Json(s.progress(&id)?))
}

async fn survey(
    State(s): State<Shared>,
    Path(id): Path<String>,
    body: Result<Json<serde_json::Value>, JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(v) = body?;
    s.submit_survey(&id, v)?;
    Ok(Json(serde_json::json!({ "status": "accepted" })).into_response())
}

async fn export(State(s): State<Shared>) -> ApiResult<super::Export> {
    Ok(Json(s.export()?))
}

async fn export_dataset(State(s): State<Shared>) -> Result<Response, ApiError> {
    let e = s.export()?;
    Ok((
        [(header::CONTENT_TYPE, "application/x-ndjson")],
        e.dataset_jsonl,
    )
        .into_response())
}

async fn export_effort(State(s): State<Shared>) -> Result<Response, ApiError> {
    let e = s.export()?;
    Ok(([(header::CONTENT_TYPE, "text/csv")], e.effort_csv).into_response())
}

async fn health(State(s): State<Shared>) -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok", "last_seq": s.last_seq() }))
}

pub fn router(service: Shared) -> Router {
    Router::new()
        .route("/session/{id}/next", get(next))
        .route("/session/{id}/submit", post(submit))
        .route("/session/{id}/pause", post(pause))
        .route("/session/{id}/resume", post(resume))
        .route("/session/{id}/progress", get(progress))
        .route("/session/{id}/survey", post(survey))
        .route("/export", get(export))
        .route("/export/dataset.jsonl", get(export_dataset))
        .route("/export/effort.csv", get(export_effort))
        .route("/health", get(health))
        .with_state(service)
}

/// Serves until ctrl-c. `on_bound` receives the bound address (useful with
/// port 0).
pub async fn serve(
    service: Shared,
    addr: std::net::SocketAddr,
    on_bound: impl FnOnce(std::net::SocketAddr),
) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    on_bound(listener.local_addr()?);
    axum::serve(listener, router(service))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
