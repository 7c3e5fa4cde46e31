//! In-process bridge host: sessions over the simulated viewer.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::{
    catalog, descriptor, validate_call, ErrorBody, ErrorInfo, Status, ToolCall, ToolDescriptor, ToolResult,
    TrackPolicy, PROTOCOL_VERSION,
};
use crate::study::{Point3, StudyPackage};
use crate::synth::SuiteIndex;
use crate::tools::ToolError;
use crate::viewer::{Artifact, Orientation, Viewer, ViewerError, ViewerState};

enum Source {
    Memory,
    Suite(SuiteIndex),
}

/// Studies a backend can open, keyed by study id. Suite-backed stores load
/// packages on first use and keep them.
pub struct StudyStore {
    source: Source,
    cache: Mutex<HashMap<String, Arc<StudyPackage>>>,
}

impl StudyStore {
    pub fn in_memory(packages: impl IntoIterator<Item = StudyPackage>) -> Self {
        let cache = packages
            .into_iter()
            .map(|p| (p.study_id.clone(), Arc::new(p)))
            .collect();
        Self {
            source: Source::Memory,
            cache: Mutex::new(cache),
        }
    }

    pub fn from_suite(index: SuiteIndex) -> Self {
        Self {
            source: Source::Suite(index),
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn get(&self, study_id: &str) -> Result<Arc<StudyPackage>, String> {
        if let Some(p) = self.cache.lock().expect("study cache").get(study_id) {
            return Ok(p.clone());
        }
        match &self.source {
            Source::Memory => Err(format!("unknown study '{study_id}'")),
            Source::Suite(index) => {
                if index.study_dir(study_id).is_none() {
                    return Err(format!("unknown study '{study_id}'"));
                }
                let package = Arc::new(index.load_study(study_id).map_err(|e| e.to_string())?);
                let mut cache = self.cache.lock().expect("study cache");
                Ok(cache.entry(study_id.to_string()).or_insert(package).clone())
            }
        }
    }
}

/// Reply to a session open.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub protocol: String,
    pub session_id: String,
    pub study_id: String,
    pub policy: TrackPolicy,
    pub catalog: Vec<ToolDescriptor>,
    pub state_digest: String,
}

struct Session {
    viewer: Viewer,
    policy: TrackPolicy,
    last_call_id: u64,
}

pub struct Backend {
    store: StudyStore,
    sessions: Mutex<HashMap<String, Arc<Mutex<Session>>>>,
    next_session: AtomicU64,
    executions: [AtomicU64; 3],
}

struct Output {
    payload: Value,
    image: Option<Vec<u8>>,
    artifacts: Vec<Artifact>,
}

impl Output {
    fn of(payload: Value) -> Self {
        Self {
            payload,
            image: None,
            artifacts: Vec::new(),
        }
    }
}

fn bad_session(id: &str) -> ErrorBody {
    ErrorBody::new(Status::BadSession, format!("no open session '{id}'"))
}

fn error_info(message: impl Into<String>) -> ErrorInfo {
    ErrorInfo {
        message: message.into(),
        reason: None,
        fields: Vec::new(),
    }
}

fn map_viewer_error(e: ViewerError) -> (Status, ErrorInfo) {
    let message = e.to_string();
    let reason = match &e {
        ViewerError::BadArgs(_) | ViewerError::Tool(ToolError::BadArgs(_)) => {
            return (Status::BadArgs, error_info(message));
        }
        ViewerError::UnknownSeries(_) => "UnknownSeries",
        ViewerError::UnknownMask(_) => "UnknownMask",
        ViewerError::Tool(ToolError::SeedOutOfBounds(_)) => "SeedOutOfBounds",
        ViewerError::Tool(ToolError::SeedOutsideThreshold { .. }) => "SeedOutsideThreshold",
        ViewerError::Tool(ToolError::EmptyMask) => "EmptyMask",
        ViewerError::Tool(ToolError::GridMismatch { .. }) => "GridMismatch",
        ViewerError::Tool(ToolError::MalformedMask(_)) => "MalformedMask",
    };
    (
        Status::Viewer,
        ErrorInfo {
            message,
            reason: Some(reason.to_string()),
            fields: Vec::new(),
        },
    )
}

// Arguments below have passed schema validation.
fn arg_str<'a>(args: &'a Map<String, Value>, k: &str) -> &'a str {
    args[k].as_str().expect("validated string")
}

fn arg_i64(args: &Map<String, Value>, k: &str) -> i64 {
    args[k].as_i64().expect("validated integer")
}

fn arg_f64(args: &Map<String, Value>, k: &str) -> f64 {
    args[k].as_f64().expect("validated real")
}

fn arg_point(args: &Map<String, Value>, k: &str) -> Point3 {
    let a = args[k].as_array().expect("validated point");
    [0, 1, 2].map(|i| a[i].as_f64().expect("validated coordinate"))
}

fn execute(viewer: &mut Viewer, tool: &str, args: &Map<String, Value>) -> Result<Output, ViewerError> {
    let out = match tool {
        "list_series" => Output::of(json!({ "series": viewer.list_series() })),
        "select_series" => {
            viewer.select_series(arg_str(args, "series_id"))?;
            Output::of(json!({}))
        }
        "set_slice" => {
            let orientation = Orientation::parse(arg_str(args, "orientation")).expect("validated orientation");
            let requested = arg_i64(args, "index");
            let effective = viewer.set_slice(orientation, requested);
            Output::of(json!({ "requested_index": requested, "effective_index": effective }))
        }
        "set_window" => {
            viewer.set_window(arg_f64(args, "center"), arg_f64(args, "width"))?;
            Output::of(json!({}))
        }
        "set_fusion" => {
            viewer.set_fusion(arg_str(args, "overlay_series"), arg_f64(args, "alpha"))?;
            Output::of(json!({}))
        }
        "render" => {
            let r = viewer.render();
            let s = viewer.state();
            Output {
                payload: json!({
                    "series_id": s.active_series,
                    "orientation": s.orientation,
                    "slice_index": s.slice_index.get(s.orientation),
                    "width": r.image.width,
                    "height": r.image.height,
                    "image_artifact_id": r.artifact.id,
                }),
                image: Some(r.artifact.bytes.clone()),
                artifacts: vec![r.artifact],
            }
        }
        "bookmark_view" => {
            let (entry, artifact) = viewer.bookmark_view(arg_str(args, "label"));
            Output {
                payload: json!({ "bookmark": entry }),
                image: None,
                artifacts: vec![artifact],
            }
        }
        "measure_distance" => {
            let m = viewer.measure_distance(arg_point(args, "p1"), arg_point(args, "p2"))?;
            Output::of(json!({ "distance_mm": m.distance_mm, "step": m.step }))
        }
        "export_evidence" => {
            let (bundle, manifest) = viewer.export_evidence();
            let mut artifacts = vec![manifest.clone()];
            for id in bundle.artifact_ids() {
                if !artifacts.iter().any(|a| a.id == id) {
                    artifacts.push(viewer.artifact(&id).expect("evidence artifact retained").clone());
                }
            }
            Output {
                payload: json!({ "bundle_artifact_id": manifest.id, "bundle": bundle }),
                image: None,
                artifacts,
            }
        }
        "local_threshold_segment" => {
            let (entry, artifact) = viewer.segment(
                arg_point(args, "seed_mm"),
                arg_i64(args, "lo") as i32,
                arg_i64(args, "hi") as i32,
                arg_f64(args, "max_radius_mm"),
            )?;
            Output {
                payload: json!({
                    "mask_id": entry.mask_id,
                    "series_id": entry.series_id,
                    "mask_artifact_id": entry.artifact_id,
                    "stats": entry.stats,
                }),
                image: None,
                artifacts: vec![artifact],
            }
        }
        "mask_stats" => {
            let id = arg_str(args, "mask_id");
            Output::of(json!({ "mask_id": id, "stats": viewer.mask_stats(id)? }))
        }
        other => unreachable!("registered tool '{other}' has no executor"),
    };
    Ok(out)
}

impl Backend {
    pub fn new(store: StudyStore) -> Self {
        Self {
            store,
            sessions: Mutex::new(HashMap::new()),
            next_session: AtomicU64::new(1),
            executions: Default::default(),
        }
    }

    pub fn open_session(&self, study_id: &str, policy: TrackPolicy) -> Result<SessionInfo, ErrorBody> {
        if policy.allowed_layers.iter().any(|l| !(1..=3).contains(l)) {
            return Err(ErrorBody::new(Status::BadArgs, "allowed layers must lie in {1, 2, 3}"));
        }
        let study = self
            .store
            .get(study_id)
            .map_err(|m| ErrorBody::new(Status::BadArgs, m))?;
        let session_id = format!("sess-{:06}", self.next_session.fetch_add(1, Ordering::SeqCst));
        let viewer = Viewer::open(&session_id, study);
        let info = SessionInfo {
            protocol: PROTOCOL_VERSION.to_string(),
            session_id: session_id.clone(),
            study_id: study_id.to_string(),
            catalog: catalog(&policy),
            state_digest: viewer.state_digest(),
            policy: policy.clone(),
        };
        let session = Session {
            viewer,
            policy,
            last_call_id: 0,
        };
        self.sessions
            .lock()
            .expect("session table")
            .insert(session_id, Arc::new(Mutex::new(session)));
        Ok(info)
    }

    pub fn close_session(&self, session_id: &str) -> Result<(), ErrorBody> {
        self.sessions
            .lock()
            .expect("session table")
            .remove(session_id)
            .map(|_| ())
            .ok_or_else(|| bad_session(session_id))
    }

    fn session(&self, session_id: &str) -> Option<Arc<Mutex<Session>>> {
        self.sessions.lock().expect("session table").get(session_id).cloned()
    }

    pub fn state(&self, session_id: &str) -> Result<ViewerState, ErrorBody> {
        let session = self.session(session_id).ok_or_else(|| bad_session(session_id))?;
        let s = session.lock().expect("session");
        Ok(s.viewer.state().clone())
    }

    /// Tool executions that reached the viewer, per layer (index 0 is layer 1).
    pub fn executions(&self) -> [u64; 3] {
        [0, 1, 2].map(|i| self.executions[i].load(Ordering::SeqCst))
    }

    /// Run one call. Never panics on caller input; every outcome is a
    /// `ToolResult`.
    pub fn invoke(&self, call: &ToolCall) -> ToolResult {
        let Some(session) = self.session(&call.session_id) else {
            let e = bad_session(&call.session_id);
            return ToolResult::err(e.status, error_info(e.message), None);
        };
        let mut s = session.lock().expect("session");
        let pre = s.viewer.state_digest();
        let fail = |status: Status, info: ErrorInfo| ToolResult::err(status, info, Some(pre.clone()));

        if call.call_id <= s.last_call_id {
            return fail(
                Status::BadArgs,
                error_info(format!(
                    "call_id {} must exceed the previous call_id {}",
                    call.call_id, s.last_call_id
                )),
            );
        }
        s.last_call_id = call.call_id;

        let Some(desc) = descriptor(&call.tool) else {
            return fail(
                Status::UnknownTool,
                error_info(format!("no tool named '{}'", call.tool)),
            );
        };
        if !s.policy.allows(desc.layer) {
            return fail(
                Status::TrackForbidden,
                error_info(format!(
                    "'{}' is a layer-{} tool, not available on track {}",
                    desc.name, desc.layer, s.policy.track
                )),
            );
        }
        if call.call_id > s.policy.tool_budget as u64 {
            return fail(
                Status::Budget,
                error_info(format!("tool budget of {} calls is exhausted", s.policy.tool_budget)),
            );
        }
        let args = match validate_call(desc, &call.args) {
            Ok(a) => a,
            Err(fields) => {
                return fail(
                    Status::BadArgs,
                    ErrorInfo {
                        message: format!("invalid arguments for '{}'", desc.name),
                        reason: None,
                        fields,
                    },
                )
            }
        };
        self.executions[(desc.layer - 1) as usize].fetch_add(1, Ordering::SeqCst);
        match execute(&mut s.viewer, &desc.name, &args) {
            Ok(mut out) => {
                if let Value::Object(m) = &mut out.payload {
                    m.insert("state".into(), s.viewer.state().summary());
                }
                ToolResult {
                    status: Status::Ok,
                    payload: out.payload,
                    error: None,
                    image: out.image,
                    artifacts: out.artifacts,
                    state_digest: Some(s.viewer.state_digest()),
                }
            }
            Err(e) => {
                debug_assert_eq!(s.viewer.state_digest(), pre);
                let (status, info) = map_viewer_error(e);
                fail(status, info)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bridge::Track;
    use crate::study::ModuleKind;
    use crate::synth::gen_study_on_grid;

    fn backend() -> Backend {
        Backend::new(StudyStore::in_memory([gen_study_on_grid(
            3,
            ModuleKind::Chest,
            0,
            [24, 24, 24],
        )]))
    }

    fn call(sid: &str, id: u64, tool: &str, args: Value) -> ToolCall {
        ToolCall {
            session_id: sid.into(),
            tool: tool.into(),
            args,
            call_id: id,
        }
    }

    #[test]
    fn sessions_open_close() {
        let b = backend();
        assert_eq!(
            b.open_session("nope", TrackPolicy::new(Track::A, 5))
                .unwrap_err()
                .status,
            Status::BadArgs
        );
        let s = b.open_session("chest-s3-c0000", TrackPolicy::new(Track::A, 5)).unwrap();
        b.close_session(&s.session_id).unwrap();
        assert_eq!(b.close_session(&s.session_id).unwrap_err().status, Status::BadSession);
        let r = b.invoke(&call(&s.session_id, 1, "list_series", json!({})));
        assert_eq!(r.status, Status::BadSession);
    }

    #[test]
    fn gate_budget_and_ordering() {
        let b = backend();
        let s = b.open_session("chest-s3-c0000", TrackPolicy::new(Track::A, 3)).unwrap();
        let sid = &s.session_id;
        let r = b.invoke(&call(sid, 1, "local_threshold_segment", json!({})));
        assert_eq!(r.status, Status::TrackForbidden);
        assert_eq!(r.state_digest.as_deref(), Some(s.state_digest.as_str()));
        assert_eq!(b.invoke(&call(sid, 1, "render", Value::Null)).status, Status::BadArgs);
        assert_eq!(
            b.invoke(&call(sid, 2, "rm -rf", Value::Null)).status,
            Status::UnknownTool
        );
        let r = b.invoke(&call(sid, 3, "render", Value::Null));
        assert_eq!(r.status, Status::Ok);
        assert!(r.image.is_some());
        assert_eq!(b.invoke(&call(sid, 4, "render", Value::Null)).status, Status::Budget);
        assert_eq!(b.executions(), [1, 0, 0]);
    }

    #[test]
    fn sessions_are_isolated() {
        let b = backend();
        let p = TrackPolicy::new(Track::B, 40);
        let s1 = b.open_session("chest-s3-c0000", p.clone()).unwrap();
        let s2 = b.open_session("chest-s3-c0000", p).unwrap();
        assert_ne!(s1.session_id, s2.session_id);
        let r = b.invoke(&call(&s1.session_id, 1, "select_series", json!({"series_id": "PET"})));
        assert_eq!(r.status, Status::Ok);
        assert_eq!(b.state(&s1.session_id).unwrap().active_series, "PET");
        assert_eq!(b.state(&s2.session_id).unwrap().active_series, "CT");
    }

    #[test]
    fn viewer_errors_keep_state() {
        let b = backend();
        let s = b
            .open_session("chest-s3-c0000", TrackPolicy::new(Track::B, 40))
            .unwrap();
        let r = b.invoke(&call(&s.session_id, 1, "select_series", json!({"series_id": "XX"})));
        assert_eq!(r.status, Status::Viewer);
        assert_eq!(r.error.unwrap().reason.as_deref(), Some("UnknownSeries"));
        let r = b.invoke(&call(
            &s.session_id,
            2,
            "local_threshold_segment",
            json!({"seed_mm": [0, 0, 0], "lo": 900, "hi": 100, "max_radius_mm": 5}),
        ));
        assert_eq!(r.status, Status::BadArgs);
        assert_eq!(r.state_digest, Some(s.state_digest));
    }
}
