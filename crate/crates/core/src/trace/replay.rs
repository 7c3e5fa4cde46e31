//! Replay verification: re-dispatch every recorded call against a fresh
//! session and compare digests step by step.

use serde::{Deserialize, Serialize};

use super::{parse_trace, EpisodeTrace, TraceError, TracePosition};
use crate::bridge::{BridgeClient, ClientError, Status, ToolCall, TrackPolicy};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "UPPERCASE")]
pub enum ReplayVerdict {
    Pass,
    Fail { position: TracePosition, reason: String },
}

impl ReplayVerdict {
    pub fn is_pass(&self) -> bool {
        matches!(self, ReplayVerdict::Pass)
    }

    fn fail(position: TracePosition, reason: impl Into<String>) -> Self {
        ReplayVerdict::Fail {
            position,
            reason: reason.into(),
        }
    }
}

/// PASS iff the chain verifies, the footer matches the records, and every
/// recorded call reproduces its status, result digest, state digest and
/// artifact ids. The first divergence decides the verdict.
pub fn verify_replay(trace: &EpisodeTrace, client: &dyn BridgeClient) -> Result<ReplayVerdict, TraceError> {
    if let Some(position) = trace.first_chain_break() {
        return Ok(ReplayVerdict::fail(position, "hash chain does not verify"));
    }
    let h = &trace.header;
    let policy = TrackPolicy::new(h.track, h.tool_budget);
    let session = client.open_session(&h.study_id, &policy).map_err(|e| match e {
        ClientError::Bridge(b) if b.status == Status::BadArgs => TraceError::StudyUnavailable(b.message),
        other => TraceError::Bridge(other.to_string()),
    })?;
    let verdict = replay_records(trace, client, &session.session_id);
    // the session is disposable; a failed close does not change the verdict
    let _ = client.close_session(&session.session_id);
    let verdict = verdict?;
    if verdict.is_pass() {
        if let Some(f) = &trace.footer {
            if f.total_calls != trace.records.len() as u64 {
                return Ok(ReplayVerdict::fail(
                    TracePosition::Footer,
                    "footer call count differs from records",
                ));
            }
        }
    }
    Ok(verdict)
}

/// Replay a serialized trace. A broken chain is a FAIL at the first
/// tampered line, even when the tampering also breaks the trace structure.
pub fn verify_replay_text(text: &str, client: &dyn BridgeClient) -> Result<ReplayVerdict, TraceError> {
    match parse_trace(text) {
        Ok(trace) => verify_replay(&trace, client),
        Err(TraceError::ChainBroken { position, .. }) => {
            Ok(ReplayVerdict::fail(position, "hash chain does not verify"))
        }
        Err(e) => Err(e),
    }
}

fn replay_records(
    trace: &EpisodeTrace,
    client: &dyn BridgeClient,
    session_id: &str,
) -> Result<ReplayVerdict, TraceError> {
    for r in &trace.records {
        let call = ToolCall {
            session_id: session_id.to_string(),
            tool: r.tool.clone(),
            args: r.args.clone(),
            call_id: r.call_id,
        };
        let got = client.invoke(&call).map_err(|e| TraceError::Bridge(e.to_string()))?;
        let at = TracePosition::Step(r.step);
        if got.status != r.status {
            return Ok(ReplayVerdict::fail(
                at,
                format!("status {} replayed as {}", r.status, got.status),
            ));
        }
        if got.state_digest != r.state_digest {
            return Ok(ReplayVerdict::fail(at, "state digest differs"));
        }
        if got.result_digest() != r.result_digest {
            return Ok(ReplayVerdict::fail(at, "result digest differs"));
        }
        if got.artifact_ids() != r.artifact_ids {
            return Ok(ReplayVerdict::fail(at, "artifact ids differ"));
        }
    }
    Ok(ReplayVerdict::Pass)
}
