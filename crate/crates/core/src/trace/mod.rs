//! Append-only, hash-chained episode traces.
//!
//! A trace is line-delimited canonical JSON: one header, one record per
//! dispatched call, one footer. Each line carries
//! `chain = sha256(previous chain || canonical line)`, where the canonical
//! line omits `chain` and `timestamp`; the header chains from the empty
//! string. Timestamps therefore never affect any digest.
//!
//! Artifacts are stored content-addressed in `artifacts/<sha256>` next to the
//! trace file and are written before the record that names them.

mod replay;
mod store;

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::bridge::{Status, ToolResult, Track, PROTOCOL_VERSION};
use crate::canonical::{canonical_json, sha256_hex};
use crate::runtime::{AnswerProtocol, Termination};

pub use replay::{verify_replay, verify_replay_text, ReplayVerdict};
pub use store::{ArtifactStore, ARTIFACT_DIR};

pub const TRACE_FORMAT: &str = "episode-trace/1";
pub const TRACE_EXTENSION: &str = ".trace.jsonl";

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace is sealed: footer already written")]
    Sealed,
    #[error("record step {got} does not follow step {expected_after}")]
    NonContiguous { expected_after: u64, got: u64 },
    #[error("hash chain broken at line {line} ({position})")]
    ChainBroken { line: usize, position: TracePosition },
    #[error("malformed trace: {0}")]
    Malformed(String),
    #[error("study unavailable for replay: {0}")]
    StudyUnavailable(String),
    #[error("bridge failure during replay: {0}")]
    Bridge(String),
    #[error("trace i/o on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TraceError + '_ {
    move |source| TraceError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceHeader {
    pub format: String,
    pub protocol: String,
    pub episode_id: String,
    pub study_id: String,
    pub track: Track,
    pub answer_protocol: AnswerProtocol,
    pub agent_id: String,
    pub tool_budget: u32,
    pub rng_seed: u64,
    pub timestamp: String,
    #[serde(default)]
    pub chain: String,
}

impl TraceHeader {
    pub fn new(
        episode_id: &str,
        study_id: &str,
        track: Track,
        answer_protocol: AnswerProtocol,
        agent_id: &str,
        tool_budget: u32,
        rng_seed: u64,
    ) -> Self {
        Self {
            format: TRACE_FORMAT.to_string(),
            protocol: PROTOCOL_VERSION.to_string(),
            episode_id: episode_id.to_string(),
            study_id: study_id.to_string(),
            track,
            answer_protocol,
            agent_id: agent_id.to_string(),
            tool_budget,
            rng_seed,
            timestamp: String::new(),
            chain: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRecord {
    pub step: u64,
    pub timestamp: String,
    pub call_id: u64,
    pub tool: String,
    pub args: Value,
    pub status: Status,
    pub result_digest: String,
    pub state_digest: Option<String>,
    pub artifact_ids: Vec<String>,
    #[serde(default)]
    pub chain: String,
}

/// Something the orchestrator did that is not a dispatched call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceEvent {
    /// Agent turn number, from 0.
    pub turn: u64,
    pub kind: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceFooter {
    /// Task id to answer; `None` marks an unanswered task.
    pub final_answers: BTreeMap<String, Option<String>>,
    pub termination: Termination,
    pub total_calls: u64,
    pub events: Vec<TraceEvent>,
    pub timestamp: String,
    #[serde(default)]
    pub chain: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum TraceLine {
    Header(TraceHeader),
    Record(TraceRecord),
    Footer(TraceFooter),
}

impl TraceLine {
    fn chain(&self) -> &str {
        match self {
            TraceLine::Header(h) => &h.chain,
            TraceLine::Record(r) => &r.chain,
            TraceLine::Footer(f) => &f.chain,
        }
    }

    fn set_chain(&mut self, c: String) {
        match self {
            TraceLine::Header(h) => h.chain = c,
            TraceLine::Record(r) => r.chain = c,
            TraceLine::Footer(f) => f.chain = c,
        }
    }

    /// Chain value of this line given the previous line's chain.
    pub fn compute_chain(&self, prev: &str) -> String {
        let mut v = serde_json::to_value(self).expect("trace line serializes");
        let obj = v.as_object_mut().expect("object");
        obj.remove("chain");
        obj.remove("timestamp");
        sha256_hex(format!("{prev}{}", crate::canonical::to_canonical_string(&v)))
    }

    pub fn to_line(&self) -> String {
        canonical_json(self)
    }
}

/// Where in a trace something happened.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "at", content = "step", rename_all = "lowercase")]
pub enum TracePosition {
    Header,
    Step(u64),
    Footer,
}

impl std::fmt::Display for TracePosition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TracePosition::Header => f.write_str("header"),
            TracePosition::Step(k) => write!(f, "step {k}"),
            TracePosition::Footer => f.write_str("footer"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub header: TraceHeader,
    pub records: Vec<TraceRecord>,
    pub footer: Option<TraceFooter>,
}

impl EpisodeTrace {
    /// A footerless trace: a valid prefix left by an interrupted episode.
    pub fn is_complete(&self) -> bool {
        self.footer.is_some()
    }

    pub fn lines(&self) -> Vec<TraceLine> {
        let mut out = vec![TraceLine::Header(self.header.clone())];
        out.extend(self.records.iter().cloned().map(TraceLine::Record));
        out.extend(self.footer.clone().map(TraceLine::Footer));
        out
    }

    pub fn to_jsonl(&self) -> String {
        self.lines().iter().map(|l| l.to_line() + "\n").collect()
    }

    /// Recompute every chain value in order (used to build traces and to
    /// forge test fixtures).
    pub fn reseal(&mut self) {
        let mut prev = String::new();
        let mut lines = self.lines();
        for line in &mut lines {
            let c = line.compute_chain(&prev);
            line.set_chain(c.clone());
            prev = c;
        }
        *self = Self::from_lines(lines).expect("same shape");
    }

    /// First line whose stored chain differs from its recomputation.
    pub fn first_chain_break(&self) -> Option<TracePosition> {
        let mut prev = String::new();
        for line in self.lines() {
            let expect = line.compute_chain(&prev);
            if line.chain() != expect {
                return Some(position_of(&line));
            }
            prev = expect;
        }
        None
    }

    /// Structure only: header first, contiguous steps, at most one footer,
    /// footer count equal to the record count.
    fn from_lines(lines: Vec<TraceLine>) -> Result<Self, TraceError> {
        let mut it = lines.into_iter();
        let header = match it.next() {
            Some(TraceLine::Header(h)) => h,
            Some(_) => return Err(TraceError::Malformed("first line is not a header".into())),
            None => return Err(TraceError::Malformed("empty trace".into())),
        };
        let mut records = Vec::new();
        let mut footer = None;
        for line in it {
            if footer.is_some() {
                return Err(TraceError::Malformed("line after footer".into()));
            }
            match line {
                TraceLine::Header(_) => return Err(TraceError::Malformed("second header".into())),
                TraceLine::Record(r) => {
                    let expected = records.len() as u64 + 1;
                    if r.step != expected {
                        return Err(TraceError::Malformed(format!(
                            "step {} where {expected} expected",
                            r.step
                        )));
                    }
                    records.push(r);
                }
                TraceLine::Footer(f) => {
                    if f.total_calls != records.len() as u64 {
                        return Err(TraceError::Malformed(format!(
                            "footer counts {} calls but the trace holds {}",
                            f.total_calls,
                            records.len()
                        )));
                    }
                    footer = Some(f);
                }
            }
        }
        Ok(Self {
            header,
            records,
            footer,
        })
    }
}

fn position_of(line: &TraceLine) -> TracePosition {
    match line {
        TraceLine::Header(_) => TracePosition::Header,
        TraceLine::Record(r) => TracePosition::Step(r.step),
        TraceLine::Footer(_) => TracePosition::Footer,
    }
}

fn parse_lines(text: &str) -> Result<Vec<TraceLine>, TraceError> {
    if !text.is_empty() && !text.ends_with('\n') {
        return Err(TraceError::Malformed("truncated final line".into()));
    }
    text.lines()
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| TraceError::Malformed(format!("line {}: {e}", i + 1))))
        .collect()
}

/// Parse, verify the hash chain, then check structure.
pub fn parse_trace(text: &str) -> Result<EpisodeTrace, TraceError> {
    let lines = parse_lines(text)?;
    let mut prev = String::new();
    for (i, line) in lines.iter().enumerate() {
        let expect = line.compute_chain(&prev);
        if line.chain() != expect {
            // records are located by ordinal; their own step field may be the tampered one
            let position = match line {
                TraceLine::Record(_) => TracePosition::Step(i as u64),
                other => position_of(other),
            };
            return Err(TraceError::ChainBroken { line: i + 1, position });
        }
        prev = expect;
    }
    EpisodeTrace::from_lines(lines)
}

/// Parse and check structure without verifying the chain, so replay can
/// locate tampering itself.
pub fn parse_trace_unverified(text: &str) -> Result<EpisodeTrace, TraceError> {
    EpisodeTrace::from_lines(parse_lines(text)?)
}

pub fn read_trace(path: &Path) -> Result<EpisodeTrace, TraceError> {
    parse_trace(&fs::read_to_string(path).map_err(io_err(path))?)
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

enum Sink {
    File { file: File, path: PathBuf },
    Memory,
}

/// Writes a trace line by line; every line is on disk before `append` or
/// `finish` returns.
pub struct TraceWriter {
    sink: Sink,
    store: ArtifactStore,
    trace: EpisodeTrace,
    chain: String,
}

impl TraceWriter {
    /// Create `path` (which should end in `.trace.jsonl`) with artifacts in
    /// the sibling `artifacts/` directory.
    pub fn create(path: &Path, header: TraceHeader) -> Result<Self, TraceError> {
        let dir = path.parent().unwrap_or(Path::new("."));
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let file = OpenOptions::new()
            .write(true)
            .create(true)
            .truncate(true)
            .open(path)
            .map_err(io_err(path))?;
        let sink = Sink::File {
            file,
            path: path.to_path_buf(),
        };
        Self::start(sink, ArtifactStore::open(&dir.join(ARTIFACT_DIR))?, header)
    }

    pub fn in_memory(header: TraceHeader) -> Self {
        Self::start(Sink::Memory, ArtifactStore::memory(), header).expect("memory sink cannot fail")
    }

    fn start(sink: Sink, store: ArtifactStore, mut header: TraceHeader) -> Result<Self, TraceError> {
        header.timestamp = now();
        let mut w = Self {
            sink,
            store,
            trace: EpisodeTrace {
                header: header.clone(),
                records: Vec::new(),
                footer: None,
            },
            chain: String::new(),
        };
        let line = w.emit(TraceLine::Header(header))?;
        if let TraceLine::Header(h) = line {
            w.trace.header = h;
        }
        Ok(w)
    }

    fn emit(&mut self, mut line: TraceLine) -> Result<TraceLine, TraceError> {
        let c = line.compute_chain(&self.chain);
        line.set_chain(c.clone());
        if let Sink::File { file, path } = &mut self.sink {
            file.write_all((line.to_line() + "\n").as_bytes())
                .and_then(|_| file.flush())
                .map_err(io_err(path))?;
        }
        self.chain = c;
        Ok(line)
    }

    pub fn trace(&self) -> &EpisodeTrace {
        &self.trace
    }

    pub fn store(&self) -> &ArtifactStore {
        &self.store
    }

    pub fn next_step(&self) -> u64 {
        self.trace.records.len() as u64 + 1
    }

    /// Record one dispatched call and persist its artifacts.
    pub fn record_call(
        &mut self,
        call_id: u64,
        tool: &str,
        args: &Value,
        result: &ToolResult,
    ) -> Result<TraceRecord, TraceError> {
        if self.trace.footer.is_some() {
            return Err(TraceError::Sealed);
        }
        for a in &result.artifacts {
            self.store.put(a)?;
        }
        let record = TraceRecord {
            step: self.next_step(),
            timestamp: String::new(),
            call_id,
            tool: tool.to_string(),
            args: args.clone(),
            status: result.status,
            result_digest: result.result_digest(),
            state_digest: result.state_digest.clone(),
            artifact_ids: result.artifact_ids(),
            chain: String::new(),
        };
        self.append(record)
    }

    /// Append a prepared record; `step` must continue the sequence.
    pub fn append(&mut self, mut record: TraceRecord) -> Result<TraceRecord, TraceError> {
        if self.trace.footer.is_some() {
            return Err(TraceError::Sealed);
        }
        let expected = self.next_step();
        if record.step != expected {
            return Err(TraceError::NonContiguous {
                expected_after: expected - 1,
                got: record.step,
            });
        }
        record.timestamp = now();
        let TraceLine::Record(r) = self.emit(TraceLine::Record(record))? else {
            unreachable!()
        };
        self.trace.records.push(r.clone());
        Ok(r)
    }

    pub fn finish(
        &mut self,
        final_answers: BTreeMap<String, Option<String>>,
        termination: Termination,
        events: Vec<TraceEvent>,
    ) -> Result<&EpisodeTrace, TraceError> {
        if self.trace.footer.is_some() {
            return Err(TraceError::Sealed);
        }
        let footer = TraceFooter {
            final_answers,
            termination,
            total_calls: self.trace.records.len() as u64,
            events,
            timestamp: now(),
            chain: String::new(),
        };
        let TraceLine::Footer(f) = self.emit(TraceLine::Footer(footer))? else {
            unreachable!()
        };
        self.trace.footer = Some(f);
        Ok(&self.trace)
    }

    pub fn is_sealed(&self) -> bool {
        self.trace.footer.is_some()
    }
}
