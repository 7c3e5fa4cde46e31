//! Episode orchestration: drive an agent through observe/act turns under a
//! track policy and budget, with every dispatched call traced before the
//! agent sees its result.
//!
//! Budget handling: the runtime never dispatches more than `tool_budget`
//! calls (the bridge enforces the same limit independently). A tool call
//! requested with the budget spent is answered by one budget-exhausted
//! observation; another tool call then ends the episode with
//! `PROTOCOL_ERROR`. A malformed turn gets one repair observation; a second
//! consecutive malformed turn also ends with `PROTOCOL_ERROR`.

mod agents;
mod external;
mod prompt;

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::bridge::{BridgeClient, ClientError, ToolCall, ToolDescriptor, ToolResult, Track, TrackPolicy};
use crate::study::{McqOption, ModuleKind, TaskSpec};
use crate::trace::{EpisodeTrace, TraceError, TraceEvent, TraceHeader, TraceWriter};

pub use agents::{OracleAgent, OracleMode, RandomAgent, ScriptedAgent, TruthSource};
pub use external::{ExternalAgent, ExternalAgentConfig, RateLimiter};
pub use prompt::{parse_reply, render_observation, render_system_prompt, PROMPT_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum AnswerProtocol {
    Mcq,
    Open,
}

impl fmt::Display for AnswerProtocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AnswerProtocol::Mcq => "MCQ",
            AnswerProtocol::Open => "OPEN",
        })
    }
}

impl FromStr for AnswerProtocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "MCQ" => Ok(AnswerProtocol::Mcq),
            "OPEN" => Ok(AnswerProtocol::Open),
            _ => Err(format!("unknown answer protocol '{s}' (expected MCQ or OPEN)")),
        }
    }
}

/// How an episode ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Termination {
    Answered,
    /// Answered after the budget-exhausted observation.
    BudgetForced,
    ProtocolError,
    /// Infrastructure failure: bridge unreachable, agent endpoint down, or
    /// cancellation.
    Aborted,
}

pub const DEFAULT_TOOL_BUDGET: u32 = 40;
pub const BUDGET_EXHAUSTED: &str = "budget exhausted; provide final answer";
/// Answer the random agent gives under the open-ended protocol.
pub const OPEN_FALLBACK_ANSWER: &str = "unknown";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Episode {
    pub episode_id: String,
    pub study_id: String,
    pub module: ModuleKind,
    pub track: Track,
    pub answer_protocol: AnswerProtocol,
    pub tool_budget: u32,
    pub agent_id: String,
    pub rng_seed: u64,
}

/// A task as the agent sees it. Options are withheld under the open-ended
/// protocol.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskView {
    pub task_id: String,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<Vec<McqOption>>,
}

impl TaskView {
    pub fn of(task: &TaskSpec, protocol: AnswerProtocol) -> Self {
        Self {
            task_id: task.task_id.clone(),
            question: task.question.clone(),
            options: match protocol {
                AnswerProtocol::Mcq if task.is_mcq() => Some(task.options().to_vec()),
                _ => None,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Observation {
    /// First observation of every episode.
    Start {
        episode_id: String,
        study_id: String,
        module: ModuleKind,
        track: Track,
        answer_protocol: AnswerProtocol,
        tasks: Vec<TaskView>,
        catalog: Vec<ToolDescriptor>,
        tool_budget: u32,
        rng_seed: u64,
        /// Set when the budget is zero: the only acceptable turn is a final answer.
        budget_exhausted: bool,
    },
    ToolResult {
        call_id: u64,
        tool: String,
        result: ToolResult,
        remaining_budget: u32,
    },
    BudgetExhausted {
        message: String,
    },
    Repair {
        error: String,
        budget_exhausted: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentTurn {
    ToolCall { tool: String, args: Value },
    FinalAnswer(BTreeMap<String, String>),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    /// The turn could not be understood; the runtime may ask for a repair.
    #[error("malformed turn: {0}")]
    Malformed(String),
    /// The agent's backend failed; the episode is aborted.
    #[error("agent endpoint error: {0}")]
    Endpoint(String),
}

pub trait Agent: Send {
    fn agent_id(&self) -> String;
    fn next_turn(&mut self, observation: &Observation) -> Result<AgentTurn, AgentError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub episode_id: String,
    pub study_id: String,
    pub module: ModuleKind,
    pub track: Track,
    pub answer_protocol: AnswerProtocol,
    pub agent_id: String,
    /// Task id to answer; `None` marks an unanswered task.
    pub final_answers: BTreeMap<String, Option<String>>,
    pub tool_call_count: u64,
    pub termination: Termination,
    /// Trace file, when written to disk.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_path: Option<String>,
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Trace(#[from] TraceError),
}

/// Where the trace goes.
pub enum TraceTarget {
    Memory,
    File(PathBuf),
}

/// Stops episodes between turns; a stopped episode is finalized as
/// `ABORTED`.
#[derive(Debug, Default)]
pub struct CancelFlag(AtomicBool);

impl CancelFlag {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn cancel(&self) {
        self.0.store(true, Ordering::SeqCst);
    }

    pub fn is_cancelled(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }
}

fn validate_answer(tasks: &[TaskSpec], answer: &BTreeMap<String, String>) -> Result<(), String> {
    if let Some(extra) = answer.keys().find(|k| !tasks.iter().any(|t| &&t.task_id == k)) {
        return Err(format!("final answer names unknown task '{extra}'"));
    }
    if let Some(missing) = tasks.iter().find(|t| !answer.contains_key(&t.task_id)) {
        return Err(format!("final answer is missing task '{}'", missing.task_id));
    }
    Ok(())
}

fn unanswered(tasks: &[TaskSpec]) -> BTreeMap<String, Option<String>> {
    tasks.iter().map(|t| (t.task_id.clone(), None)).collect()
}

struct Outcome {
    answers: BTreeMap<String, Option<String>>,
    termination: Termination,
}

/// Run one episode to completion. The session is always closed and the
/// trace always finalized; only trace I/O failures surface as errors.
pub fn run_episode(
    episode: &Episode,
    tasks: &[TaskSpec],
    agent: &mut dyn Agent,
    client: &dyn BridgeClient,
    target: TraceTarget,
    cancel: Option<&CancelFlag>,
) -> Result<(EpisodeResult, EpisodeTrace), RunError> {
    let header = TraceHeader::new(
        &episode.episode_id,
        &episode.study_id,
        episode.track,
        episode.answer_protocol,
        &episode.agent_id,
        episode.tool_budget,
        episode.rng_seed,
    );
    let (mut writer, trace_path) = match target {
        TraceTarget::Memory => (TraceWriter::in_memory(header), None),
        TraceTarget::File(p) => (TraceWriter::create(&p, header)?, Some(p.display().to_string())),
    };
    let mut events = Vec::new();
    let policy = TrackPolicy::new(episode.track, episode.tool_budget);

    let outcome = match client.open_session(&episode.study_id, &policy) {
        Err(e) => {
            events.push(TraceEvent {
                turn: 0,
                kind: "open_failed".into(),
                detail: e.to_string(),
            });
            Outcome {
                answers: unanswered(tasks),
                termination: Termination::Aborted,
            }
        }
        Ok(info) => {
            let outcome = drive(
                episode,
                tasks,
                agent,
                client,
                &info.session_id,
                info.catalog,
                &mut writer,
                &mut events,
                cancel,
            );
            if let Err(e) = client.close_session(&info.session_id) {
                events.push(TraceEvent {
                    turn: 0,
                    kind: "close_failed".into(),
                    detail: e.to_string(),
                });
            }
            outcome?
        }
    };
    let calls = writer.trace().records.len() as u64;
    let trace = writer
        .finish(outcome.answers.clone(), outcome.termination, events)?
        .clone();
    Ok((
        EpisodeResult {
            episode_id: episode.episode_id.clone(),
            study_id: episode.study_id.clone(),
            module: episode.module,
            track: episode.track,
            answer_protocol: episode.answer_protocol,
            agent_id: episode.agent_id.clone(),
            final_answers: outcome.answers,
            tool_call_count: calls,
            termination: outcome.termination,
            trace_path,
        },
        trace,
    ))
}

#[allow(clippy::too_many_arguments)]
fn drive(
    episode: &Episode,
    tasks: &[TaskSpec],
    agent: &mut dyn Agent,
    client: &dyn BridgeClient,
    session_id: &str,
    catalog: Vec<ToolDescriptor>,
    writer: &mut TraceWriter,
    events: &mut Vec<TraceEvent>,
    cancel: Option<&CancelFlag>,
) -> Result<Outcome, TraceError> {
    let budget = episode.tool_budget as u64;
    let mut calls = 0u64;
    let mut forced = budget == 0;
    let mut repaired = false;
    let mut observation = Observation::Start {
        episode_id: episode.episode_id.clone(),
        study_id: episode.study_id.clone(),
        module: episode.module,
        track: episode.track,
        answer_protocol: episode.answer_protocol,
        tasks: tasks.iter().map(|t| TaskView::of(t, episode.answer_protocol)).collect(),
        catalog,
        tool_budget: episode.tool_budget,
        rng_seed: episode.rng_seed,
        budget_exhausted: forced,
    };
    let end = |termination| Outcome {
        answers: unanswered(tasks),
        termination,
    };
    for turn in 0u64.. {
        if cancel.is_some_and(CancelFlag::is_cancelled) {
            events.push(TraceEvent {
                turn,
                kind: "cancelled".into(),
                detail: "run interrupted".into(),
            });
            return Ok(end(Termination::Aborted));
        }
        let malformed = match agent.next_turn(&observation) {
            Err(AgentError::Endpoint(detail)) => {
                events.push(TraceEvent {
                    turn,
                    kind: "agent_endpoint_error".into(),
                    detail,
                });
                return Ok(end(Termination::Aborted));
            }
            Err(AgentError::Malformed(m)) => m,
            Ok(AgentTurn::FinalAnswer(answer)) => match validate_answer(tasks, &answer) {
                Ok(()) => {
                    return Ok(Outcome {
                        answers: answer.into_iter().map(|(k, v)| (k, Some(v))).collect(),
                        termination: if forced {
                            Termination::BudgetForced
                        } else {
                            Termination::Answered
                        },
                    })
                }
                Err(m) => m,
            },
            Ok(AgentTurn::ToolCall { .. }) if forced => {
                events.push(TraceEvent {
                    turn,
                    kind: "call_after_budget".into(),
                    detail: "tool call after the budget-exhausted observation".into(),
                });
                return Ok(end(Termination::ProtocolError));
            }
            Ok(AgentTurn::ToolCall { .. }) if calls >= budget => {
                forced = true;
                repaired = false;
                events.push(TraceEvent {
                    turn,
                    kind: "budget_exhausted".into(),
                    detail: format!("{calls} of {budget} calls used"),
                });
                observation = Observation::BudgetExhausted {
                    message: BUDGET_EXHAUSTED.into(),
                };
                continue;
            }
            Ok(AgentTurn::ToolCall { tool, args }) => {
                calls += 1;
                let call = ToolCall {
                    session_id: session_id.to_string(),
                    tool: tool.clone(),
                    args: args.clone(),
                    call_id: calls,
                };
                let result = match client.invoke(&call) {
                    Ok(r) => r,
                    Err(e @ (ClientError::Unreachable(_) | ClientError::Protocol(_) | ClientError::Bridge(_))) => {
                        events.push(TraceEvent {
                            turn,
                            kind: "bridge_error".into(),
                            detail: e.to_string(),
                        });
                        return Ok(end(Termination::Aborted));
                    }
                };
                writer.record_call(calls, &tool, &args, &result)?;
                repaired = false;
                observation = Observation::ToolResult {
                    call_id: calls,
                    tool,
                    result,
                    remaining_budget: (budget - calls) as u32,
                };
                continue;
            }
        };
        events.push(TraceEvent {
            turn,
            kind: "malformed_turn".into(),
            detail: malformed.clone(),
        });
        if repaired {
            return Ok(end(Termination::ProtocolError));
        }
        repaired = true;
        observation = Observation::Repair {
            error: malformed,
            budget_exhausted: forced,
        };
    }
    unreachable!("turn counter is unbounded")
}
