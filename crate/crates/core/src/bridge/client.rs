//! Bridge clients and the HTTP wire types.
//!
//! | method | path                    | body            | reply                   |
//! |--------|-------------------------|-----------------|-------------------------|
//! | POST   | `/session`              | `OpenRequest`   | `SessionInfo`           |
//! | POST   | `/session/{id}/invoke`  | `InvokeRequest` | `InvokeResponse`        |
//! | GET    | `/session/{id}/state`   |                 | `StateResponse`         |
//! | DELETE | `/session/{id}`         |                 | `CloseResponse`         |
//!
//! Tool-level failures are HTTP 200 with a non-OK `status` in the result.
//! Session-level failures are an `ErrorBody` with HTTP 400 (bad request or
//! unknown study) or 404 (unknown session). Every body carries `protocol`.

use std::sync::Arc;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::{Backend, ErrorInfo, SessionInfo, Status, ToolCall, ToolResult, Track, TrackPolicy, PROTOCOL_VERSION};
use crate::viewer::ViewerState;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub protocol: String,
    pub status: Status,
    pub message: String,
}

impl ErrorBody {
    pub fn new(status: Status, message: impl Into<String>) -> Self {
        Self {
            protocol: PROTOCOL_VERSION.to_string(),
            status,
            message: message.into(),
        }
    }

    pub fn http_status(&self) -> u16 {
        match self.status {
            Status::BadSession => 404,
            _ => 400,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpenRequest {
    pub study_id: String,
    pub track: Track,
    pub tool_budget: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvokeRequest {
    pub tool: String,
    #[serde(default)]
    pub args: Value,
    pub call_id: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvokeResponse {
    pub protocol: String,
    pub result: ToolResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateResponse {
    pub protocol: String,
    pub state: ViewerState,
    pub state_digest: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CloseResponse {
    pub protocol: String,
    pub closed: bool,
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("bridge refused: {} {}", .0.status, .0.message)]
    Bridge(ErrorBody),
    #[error("bridge unreachable: {0}")]
    Unreachable(String),
    #[error("bridge protocol error: {0}")]
    Protocol(String),
}

/// How the runtime talks to a bridge. Implementations are shareable across
/// episode workers.
pub trait BridgeClient: Send + Sync {
    fn open_session(&self, study_id: &str, policy: &TrackPolicy) -> Result<SessionInfo, ClientError>;
    fn invoke(&self, call: &ToolCall) -> Result<ToolResult, ClientError>;
    fn state(&self, session_id: &str) -> Result<StateResponse, ClientError>;
    fn close_session(&self, session_id: &str) -> Result<(), ClientError>;
}

/// Calls a backend in the same process.
#[derive(Clone)]
pub struct LocalClient {
    backend: Arc<Backend>,
}

impl LocalClient {
    pub fn new(backend: Arc<Backend>) -> Self {
        Self { backend }
    }

    pub fn backend(&self) -> &Arc<Backend> {
        &self.backend
    }
}

impl BridgeClient for LocalClient {
    fn open_session(&self, study_id: &str, policy: &TrackPolicy) -> Result<SessionInfo, ClientError> {
        self.backend
            .open_session(study_id, policy.clone())
            .map_err(ClientError::Bridge)
    }

    fn invoke(&self, call: &ToolCall) -> Result<ToolResult, ClientError> {
        Ok(self.backend.invoke(call))
    }

    fn state(&self, session_id: &str) -> Result<StateResponse, ClientError> {
        let state = self.backend.state(session_id).map_err(ClientError::Bridge)?;
        Ok(StateResponse {
            protocol: PROTOCOL_VERSION.to_string(),
            state_digest: state.digest(),
            state,
        })
    }

    fn close_session(&self, session_id: &str) -> Result<(), ClientError> {
        self.backend.close_session(session_id).map_err(ClientError::Bridge)
    }
}

/// Talks to a bridge server over HTTP/1.1.
#[derive(Clone)]
pub struct HttpClient {
    base: String,
    agent: ureq::Agent,
}

impl HttpClient {
    pub fn new(base_url: &str) -> Self {
        Self::with_timeout(base_url, Duration::from_secs(60))
    }

    pub fn with_timeout(base_url: &str, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self {
            base: base_url.trim_end_matches('/').to_string(),
            agent,
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    fn read<T: DeserializeOwned>(
        resp: Result<ureq::http::Response<ureq::Body>, ureq::Error>,
    ) -> Result<T, ClientError> {
        let mut resp = resp.map_err(|e| match e {
            ureq::Error::Io(_)
            | ureq::Error::HostNotFound
            | ureq::Error::ConnectionFailed
            | ureq::Error::Timeout(_) => ClientError::Unreachable(e.to_string()),
            other => ClientError::Protocol(other.to_string()),
        })?;
        let code = resp.status().as_u16();
        let body: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| ClientError::Protocol(format!("HTTP {code}: unreadable body: {e}")))?;
        if body.get("protocol").and_then(Value::as_str) != Some(PROTOCOL_VERSION) {
            return Err(ClientError::Protocol(format!(
                "HTTP {code}: expected protocol {PROTOCOL_VERSION}, got {}",
                body.get("protocol").unwrap_or(&Value::Null)
            )));
        }
        if code != 200 {
            let err: ErrorBody =
                serde_json::from_value(body).map_err(|e| ClientError::Protocol(format!("HTTP {code}: {e}")))?;
            return Err(ClientError::Bridge(err));
        }
        serde_json::from_value(body).map_err(|e| ClientError::Protocol(e.to_string()))
    }
}

impl BridgeClient for HttpClient {
    fn open_session(&self, study_id: &str, policy: &TrackPolicy) -> Result<SessionInfo, ClientError> {
        let req = OpenRequest {
            study_id: study_id.to_string(),
            track: policy.track,
            tool_budget: policy.tool_budget,
        };
        Self::read(self.agent.post(self.url("/session")).send_json(&req))
    }

    fn invoke(&self, call: &ToolCall) -> Result<ToolResult, ClientError> {
        let req = InvokeRequest {
            tool: call.tool.clone(),
            args: call.args.clone(),
            call_id: call.call_id,
        };
        let path = format!("/session/{}/invoke", call.session_id);
        match Self::read::<InvokeResponse>(self.agent.post(self.url(&path)).send_json(&req)) {
            Ok(r) => Ok(r.result),
            // a vanished session is still an ordinary, traceable tool outcome
            Err(ClientError::Bridge(e)) if e.status == Status::BadSession => Ok(ToolResult::err(
                Status::BadSession,
                ErrorInfo {
                    message: e.message,
                    reason: None,
                    fields: Vec::new(),
                },
                None,
            )),
            Err(e) => Err(e),
        }
    }

    fn state(&self, session_id: &str) -> Result<StateResponse, ClientError> {
        Self::read(self.agent.get(self.url(&format!("/session/{session_id}/state"))).call())
    }

    fn close_session(&self, session_id: &str) -> Result<(), ClientError> {
        let r: CloseResponse = Self::read(self.agent.delete(self.url(&format!("/session/{session_id}"))).call())?;
        if r.closed {
            Ok(())
        } else {
            Err(ClientError::Protocol("close not acknowledged".into()))
        }
    }
}
