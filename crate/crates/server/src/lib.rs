//! HTTP host for the tool bridge.
//!
//! Routes, bodies and status codes follow the wire contract documented on
//! `studybench_core::bridge::client`. Backend calls run on the blocking
//! pool because rendering and segmentation are CPU-bound.

use std::future::Future;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use serde::Serialize;
use studybench_core::bridge::{
    Backend, CloseResponse, ErrorBody, InvokeRequest, InvokeResponse, OpenRequest, StateResponse, Status, ToolCall,
    TrackPolicy, PROTOCOL_VERSION,
};
use tokio::net::TcpListener;

fn reply<T: Serialize>(body: T) -> Response {
    (StatusCode::OK, Json(body)).into_response()
}

fn error(e: ErrorBody) -> Response {
    let code = StatusCode::from_u16(e.http_status()).unwrap_or(StatusCode::BAD_REQUEST);
    (code, Json(e)).into_response()
}

fn rejected(r: JsonRejection) -> Response {
    error(ErrorBody::new(
        Status::BadArgs,
        format!("invalid request body: {}", r.body_text()),
    ))
}

async fn blocking<F: FnOnce() -> Response + Send + 'static>(f: F) -> Response {
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => r,
        Err(e) => (
            StatusCode::INTERNAL_SERVER_ERROR,
            Json(ErrorBody::new(Status::BadArgs, format!("backend task failed: {e}"))),
        )
            .into_response(),
    }
}

async fn open(State(backend): State<Arc<Backend>>, body: Result<Json<OpenRequest>, JsonRejection>) -> Response {
    let Json(req) = match body {
        Ok(b) => b,
        Err(r) => return rejected(r),
    };
    blocking(
        move || match backend.open_session(&req.study_id, TrackPolicy::new(req.track, req.tool_budget)) {
            Ok(info) => reply(info),
            Err(e) => error(e),
        },
    )
    .await
}

async fn invoke(
    State(backend): State<Arc<Backend>>,
    Path(session_id): Path<String>,
    body: Result<Json<InvokeRequest>, JsonRejection>,
) -> Response {
    let Json(req) = match body {
        Ok(b) => b,
        Err(r) => return rejected(r),
    };
    blocking(move || {
        // an unknown session is a transport-level error, not a tool result
        if let Err(e) = backend.state(&session_id) {
            return error(e);
        }
        let result = backend.invoke(&ToolCall {
            session_id,
            tool: req.tool,
            args: req.args,
            call_id: req.call_id,
        });
        if result.status == Status::BadSession {
            let message = result.error.map(|e| e.message).unwrap_or_default();
            return error(ErrorBody::new(Status::BadSession, message));
        }
        reply(InvokeResponse {
            protocol: PROTOCOL_VERSION.into(),
            result,
        })
    })
    .await
}

async fn state(State(backend): State<Arc<Backend>>, Path(session_id): Path<String>) -> Response {
    blocking(move || match backend.state(&session_id) {
        Ok(state) => reply(StateResponse {
            protocol: PROTOCOL_VERSION.into(),
            state_digest: state.digest(),
            state,
        }),
        Err(e) => error(e),
    })
    .await
}

async fn close(State(backend): State<Arc<Backend>>, Path(session_id): Path<String>) -> Response {
    match backend.close_session(&session_id) {
        Ok(()) => reply(CloseResponse {
            protocol: PROTOCOL_VERSION.into(),
            closed: true,
        }),
        Err(e) => error(e),
    }
}

async fn not_found() -> Response {
    (
        StatusCode::NOT_FOUND,
        Json(ErrorBody::new(Status::BadArgs, "no such route")),
    )
        .into_response()
}

pub fn router(backend: Arc<Backend>) -> Router {
    Router::new()
        .route("/session", post(open))
        .route("/session/{id}/invoke", post(invoke))
        .route("/session/{id}/state", get(state))
        .route("/session/{id}", delete(close))
        .fallback(not_found)
        .with_state(backend)
}

/// Serve until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    backend: Arc<Backend>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(backend))
        .with_graceful_shutdown(shutdown)
        .await
}
