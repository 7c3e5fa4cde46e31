//! The bounded tool protocol between agent runtime and viewer backend.
//!
//! A call passes, in order: session lookup, call-id ordering, tool lookup,
//! track gate, budget, argument schema, execution. The first failing stage
//! decides the status. Failed calls never change viewer state.

mod backend;
mod client;
mod schema;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::canonical::{canonical_digest, sha256_hex};
use crate::viewer::Artifact;

pub use backend::{Backend, SessionInfo, StudyStore};
pub use client::{
    BridgeClient, ClientError, CloseResponse, ErrorBody, HttpClient, InvokeRequest, InvokeResponse, LocalClient,
    OpenRequest, StateResponse,
};
pub use schema::{descriptor, registry, validate_call, FieldError, ParamSpec, ParamType, Semantic, ToolDescriptor};

pub const PROTOCOL_VERSION: &str = "studybench-bridge/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Track {
    A,
    B,
}

impl Track {
    pub fn allowed_layers(self) -> BTreeSet<u8> {
        match self {
            Track::A => BTreeSet::from([1, 2]),
            Track::B => BTreeSet::from([1, 2, 3]),
        }
    }
}

impl fmt::Display for Track {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Track::A => "A",
            Track::B => "B",
        })
    }
}

impl FromStr for Track {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "A" | "a" => Ok(Track::A),
            "B" | "b" => Ok(Track::B),
            other => Err(format!("unknown track '{other}' (expected A or B)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackPolicy {
    pub track: Track,
    pub allowed_layers: BTreeSet<u8>,
    pub tool_budget: u32,
}

impl TrackPolicy {
    pub fn new(track: Track, tool_budget: u32) -> Self {
        Self {
            track,
            allowed_layers: track.allowed_layers(),
            tool_budget,
        }
    }

    pub fn allows(&self, layer: u8) -> bool {
        self.allowed_layers.contains(&layer)
    }
}

/// Descriptors advertised under `policy`, in registry order.
pub fn catalog(policy: &TrackPolicy) -> Vec<ToolDescriptor> {
    registry().iter().filter(|d| policy.allows(d.layer)).cloned().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Status {
    #[serde(rename = "OK")]
    Ok,
    #[serde(rename = "E_UNKNOWN_TOOL")]
    UnknownTool,
    #[serde(rename = "E_BAD_ARGS")]
    BadArgs,
    #[serde(rename = "E_TRACK_FORBIDDEN")]
    TrackForbidden,
    #[serde(rename = "E_BAD_SESSION")]
    BadSession,
    #[serde(rename = "E_BUDGET")]
    Budget,
    #[serde(rename = "E_VIEWER")]
    Viewer,
}

impl Status {
    pub fn code(self) -> &'static str {
        match self {
            Status::Ok => "OK",
            Status::UnknownTool => "E_UNKNOWN_TOOL",
            Status::BadArgs => "E_BAD_ARGS",
            Status::TrackForbidden => "E_TRACK_FORBIDDEN",
            Status::BadSession => "E_BAD_SESSION",
            Status::Budget => "E_BUDGET",
            Status::Viewer => "E_VIEWER",
        }
    }

    pub fn is_ok(self) -> bool {
        self == Status::Ok
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub session_id: String,
    pub tool: String,
    #[serde(default)]
    pub args: Value,
    pub call_id: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorInfo {
    pub message: String,
    /// Viewer-level cause for `E_VIEWER`, e.g. `SeedOutsideThreshold`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fields: Vec<FieldError>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolResult {
    pub status: Status,
    pub payload: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorInfo>,
    /// Rendered PNG, when the tool produces one.
    #[serde(default, rename = "image_png_b64", with = "crate::canonical::base64_bytes::option")]
    pub image: Option<Vec<u8>>,
    #[serde(default)]
    pub artifacts: Vec<Artifact>,
    /// Post-call viewer state digest; the pre-call digest on errors; absent
    /// only when there is no session.
    pub state_digest: Option<String>,
}

impl ToolResult {
    pub fn ok(payload: Value, state_digest: String) -> Self {
        Self {
            status: Status::Ok,
            payload,
            error: None,
            image: None,
            artifacts: Vec::new(),
            state_digest: Some(state_digest),
        }
    }

    pub fn err(status: Status, error: ErrorInfo, state_digest: Option<String>) -> Self {
        Self {
            status,
            payload: Value::Null,
            error: Some(error),
            image: None,
            artifacts: Vec::new(),
            state_digest,
        }
    }

    pub fn artifact_ids(&self) -> Vec<String> {
        self.artifacts.iter().map(|a| a.id.clone()).collect()
    }

    /// Digest of everything the call returned except the state digest.
    pub fn result_digest(&self) -> String {
        canonical_digest(&json!({
            "status": self.status,
            "payload": self.payload,
            "error": self.error,
            "image_sha256": self.image.as_ref().map(sha256_hex),
            "artifacts": self.artifact_ids(),
        }))
    }
}
