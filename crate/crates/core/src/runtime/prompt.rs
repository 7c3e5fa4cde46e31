//! Text protocol for language-model agents.
//!
//! The agent replies with exactly one fenced block tagged `action` holding
//! either a tool call or a final answer:
//!
//! ````text
//! ```action
//! {"tool": "set_slice", "args": {"orientation": "AXIAL", "index": 30}}
//! ```
//! ```action
//! {"final_answer": {"diagnosis": "A"}}
//! ```
//! ````

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde_json::Value;

use super::{AgentError, AgentTurn, AnswerProtocol, Observation};

pub const PROMPT_VERSION: &str = "prompt/1";

const FENCE_OPEN: &str = "```action";
const FENCE_CLOSE: &str = "```";

/// Opening instructions built from the first observation.
pub fn render_system_prompt(start: &Observation) -> String {
    let Observation::Start {
        study_id,
        module,
        track,
        answer_protocol,
        tasks,
        catalog,
        tool_budget,
        ..
    } = start
    else {
        panic!("system prompt needs the opening observation");
    };
    let mut p = String::new();
    let _ = writeln!(p, "[{PROMPT_VERSION}]");
    let _ = writeln!(
        p,
        "You are reading a full {module} imaging study ({study_id}) through a viewer you control with tools. \
         You cannot run code; only the tools below exist."
    );
    let _ = writeln!(
        p,
        "Track {track}. Tool budget: {tool_budget} calls. Answer protocol: {answer_protocol}."
    );
    p.push_str("\nTasks:\n");
    for (i, t) in tasks.iter().enumerate() {
        let _ = writeln!(p, "{}. [{}] {}", i + 1, t.task_id, t.question);
        if let Some(opts) = &t.options {
            for o in opts {
                let _ = writeln!(p, "   {}. {}", o.id, o.text);
            }
        }
    }
    p.push_str("\nTools:\n");
    for (i, d) in catalog.iter().enumerate() {
        let _ = writeln!(p, "{}. {} (layer {}): {}", i + 1, d.signature(), d.layer, d.description);
    }
    let answer_hint = match answer_protocol {
        AnswerProtocol::Mcq => "the option id",
        AnswerProtocol::Open => "a short free-text answer",
    };
    let _ = write!(
        p,
        "\nReply with exactly one fenced block per turn, either a tool call:\n\
         {FENCE_OPEN}\n{{\"tool\": \"<name>\", \"args\": {{...}}}}\n{FENCE_CLOSE}\n\
         or your final answer covering every task, giving {answer_hint} for each:\n\
         {FENCE_OPEN}\n{{\"final_answer\": {{\"<task_id>\": \"<answer>\"}}}}\n{FENCE_CLOSE}\n"
    );
    p
}

/// Text for one observation after the first, plus the rendered image if
/// there is one.
pub fn render_observation(observation: &Observation) -> (String, Option<Vec<u8>>) {
    match observation {
        Observation::Start { .. } => (render_system_prompt(observation), None),
        Observation::ToolResult {
            call_id,
            tool,
            result,
            remaining_budget,
        } => {
            let mut t = format!("Call {call_id} ({tool}) returned {}.", result.status);
            if let Some(e) = &result.error {
                let _ = write!(t, " Error: {}", e.message);
                for f in &e.fields {
                    let _ = write!(t, " [{}: {}]", f.field, f.problem);
                }
            }
            if !result.payload.is_null() {
                let _ = write!(t, "\nResult: {}", result.payload);
            }
            let _ = write!(t, "\nRemaining budget: {remaining_budget} calls.");
            (t, result.image.clone())
        }
        Observation::BudgetExhausted { message } => (message.clone(), None),
        Observation::Repair { error, .. } => (
            format!(
                "Your last reply could not be used: {error}. Reply again with exactly one {FENCE_OPEN} block \
                 as described."
            ),
            None,
        ),
    }
}

fn malformed(msg: impl Into<String>) -> AgentError {
    AgentError::Malformed(msg.into())
}

/// Extract the single action block from a model reply.
pub fn parse_reply(reply: &str) -> Result<AgentTurn, AgentError> {
    let blocks: Vec<&str> = reply
        .match_indices(FENCE_OPEN)
        .filter_map(|(start, _)| {
            let body = &reply[start + FENCE_OPEN.len()..];
            let body = body.strip_prefix('\n').or_else(|| body.strip_prefix("\r\n"))?;
            body.find(FENCE_CLOSE).map(|end| &body[..end])
        })
        .collect();
    let block = match blocks.as_slice() {
        [one] => one,
        [] => return Err(malformed("no ```action block found")),
        _ => return Err(malformed("more than one ```action block")),
    };
    let value: Value = serde_json::from_str(block.trim()).map_err(|e| malformed(format!("action is not JSON: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| malformed("action must be a JSON object"))?;
    match (obj.get("tool"), obj.get("final_answer")) {
        (Some(tool), None) => {
            let tool = tool.as_str().ok_or_else(|| malformed("\"tool\" must be a string"))?;
            if let Some(k) = obj.keys().find(|k| *k != "tool" && *k != "args") {
                return Err(malformed(format!("unexpected key \"{k}\" in tool call")));
            }
            Ok(AgentTurn::ToolCall {
                tool: tool.to_string(),
                args: obj.get("args").cloned().unwrap_or(Value::Object(Default::default())),
            })
        }
        (None, Some(answer)) => {
            if obj.len() != 1 {
                return Err(malformed("final answer block must hold only \"final_answer\""));
            }
            let map = answer
                .as_object()
                .ok_or_else(|| malformed("\"final_answer\" must be an object"))?;
            let mut out = BTreeMap::new();
            for (k, v) in map {
                let s = v
                    .as_str()
                    .ok_or_else(|| malformed(format!("answer for \"{k}\" must be a string")))?;
                out.insert(k.clone(), s.to_string());
            }
            Ok(AgentTurn::FinalAnswer(out))
        }
        (Some(_), Some(_)) => Err(malformed("block holds both a tool call and a final answer")),
        (None, None) => Err(malformed("block holds neither \"tool\" nor \"final_answer\"")),
    }
}
