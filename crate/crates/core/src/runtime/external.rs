//! Adapter for an external chat-completion endpoint (OpenAI-compatible
//! `messages` shape with text and base64 PNG parts).

use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::prompt::{parse_reply, render_observation, render_system_prompt};
use super::{Agent, AgentError, AgentTurn, Observation};

pub const DEFAULT_TOKEN_ENV: &str = "STUDYBENCH_API_TOKEN";

fn default_token_env() -> Option<String> {
    Some(DEFAULT_TOKEN_ENV.to_string())
}

fn default_timeout() -> u64 {
    120
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalAgentConfig {
    /// Full chat-completions URL.
    pub url: String,
    pub model: String,
    /// Environment variable holding the bearer token; `None` sends no
    /// Authorization header.
    #[serde(default = "default_token_env")]
    pub token_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default)]
    pub max_tokens: Option<u32>,
    #[serde(default)]
    pub temperature: Option<f64>,
    /// Shared across all episodes of a run.
    #[serde(default)]
    pub requests_per_minute: Option<u32>,
}

/// Spaces requests evenly; one limiter is shared by every worker.
#[derive(Debug)]
pub struct RateLimiter {
    interval: Duration,
    next: Mutex<Instant>,
}

impl RateLimiter {
    pub fn per_minute(n: u32) -> Self {
        Self {
            interval: Duration::from_secs_f64(60.0 / n.max(1) as f64),
            next: Mutex::new(Instant::now()),
        }
    }

    pub fn acquire(&self) {
        let wait = {
            let mut next = self.next.lock().expect("rate limiter");
            let now = Instant::now();
            let slot = (*next).max(now);
            *next = slot + self.interval;
            slot - now
        };
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }
}

pub struct ExternalAgent {
    config: ExternalAgentConfig,
    token: Option<String>,
    http: ureq::Agent,
    limiter: Option<Arc<RateLimiter>>,
    messages: Vec<Value>,
}

impl ExternalAgent {
    /// Fails when the configured token variable is unset.
    pub fn new(config: ExternalAgentConfig, limiter: Option<Arc<RateLimiter>>) -> Result<Self, String> {
        let token = match &config.token_env {
            Some(var) => Some(std::env::var(var).map_err(|_| format!("environment variable {var} is not set"))?),
            None => None,
        };
        let http = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .build()
            .into();
        Ok(Self {
            config,
            token,
            http,
            limiter,
            messages: Vec::new(),
        })
    }

    /// Conversation so far, in request form.
    pub fn messages(&self) -> &[Value] {
        &self.messages
    }

    fn user_message(text: String, image: Option<Vec<u8>>) -> Value {
        match image {
            None => json!({ "role": "user", "content": text }),
            Some(png) => json!({
                "role": "user",
                "content": [
                    { "type": "text", "text": text },
                    { "type": "image_url", "image_url": { "url": format!("data:image/png;base64,{}", STANDARD.encode(png)) } },
                ],
            }),
        }
    }

    fn complete(&self) -> Result<String, AgentError> {
        if let Some(l) = &self.limiter {
            l.acquire();
        }
        let mut body = json!({ "model": self.config.model, "messages": self.messages });
        if let Some(n) = self.config.max_tokens {
            body["max_tokens"] = json!(n);
        }
        if let Some(t) = self.config.temperature {
            body["temperature"] = json!(t);
        }
        let mut req = self.http.post(&self.config.url);
        if let Some(token) = &self.token {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let mut resp = req.send_json(&body).map_err(|e| AgentError::Endpoint(e.to_string()))?;
        let status = resp.status().as_u16();
        let reply: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| AgentError::Endpoint(format!("HTTP {status}: unreadable reply: {e}")))?;
        if status != 200 {
            return Err(AgentError::Endpoint(format!("HTTP {status}: {reply}")));
        }
        reply["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| AgentError::Endpoint("reply has no choices[0].message.content".into()))
    }
}

impl Agent for ExternalAgent {
    fn agent_id(&self) -> String {
        format!("external-{}", self.config.model)
    }

    fn next_turn(&mut self, observation: &Observation) -> Result<AgentTurn, AgentError> {
        if let Observation::Start { .. } = observation {
            self.messages = vec![json!({ "role": "system", "content": render_system_prompt(observation) })];
            self.messages.push(Self::user_message("Begin.".into(), None));
        } else {
            let (text, image) = render_observation(observation);
            self.messages.push(Self::user_message(text, image));
        }
        let reply = self.complete()?;
        self.messages.push(json!({ "role": "assistant", "content": reply }));
        parse_reply(&reply)
    }
}

#[cfg(test)]
mod tests {
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::mpsc;

    use super::*;
    use crate::bridge::Track;
    use crate::study::ModuleKind;

    /// Serves canned chat replies in order and forwards each request body.
    fn fake_endpoint(replies: Vec<(u16, Value)>) -> (String, mpsc::Receiver<(Option<String>, Value)>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for (status, reply) in replies {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream);
                let (mut len, mut auth) = (0usize, None);
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    let line = line.trim_end();
                    if line.is_empty() {
                        break;
                    }
                    let (name, value) = line.split_once(':').unwrap_or((line, ""));
                    match name.to_ascii_lowercase().as_str() {
                        "content-length" => len = value.trim().parse().unwrap(),
                        "authorization" => auth = Some(value.trim().to_string()),
                        _ => {}
                    }
                }
                let mut body = vec![0; len];
                reader.read_exact(&mut body).unwrap();
                tx.send((auth, serde_json::from_slice(&body).unwrap())).unwrap();
                let text = reply.to_string();
                let mut stream = reader.into_inner();
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                    text.len()
                )
                .unwrap();
            }
        });
        (url, rx)
    }

    fn chat(content: &str) -> (u16, Value) {
        (
            200,
            json!({ "choices": [{ "message": { "role": "assistant", "content": content } }] }),
        )
    }

    fn start() -> Observation {
        Observation::Start {
            episode_id: "ep".into(),
            study_id: "st".into(),
            module: ModuleKind::Brain,
            track: Track::A,
            answer_protocol: crate::runtime::AnswerProtocol::Mcq,
            tasks: vec![],
            catalog: vec![],
            tool_budget: 3,
            rng_seed: 0,
            budget_exhausted: false,
        }
    }

    fn config(url: String, token_env: Option<String>) -> ExternalAgentConfig {
        ExternalAgentConfig {
            url,
            model: "m1".into(),
            token_env,
            timeout_secs: 10,
            max_tokens: Some(256),
            temperature: Some(0.0),
            requests_per_minute: None,
        }
    }

    #[test]
    fn converses_and_parses_action_blocks() {
        let (url, rx) = fake_endpoint(vec![
            chat("Looking first.\n```action\n{\"tool\": \"list_series\", \"args\": {}}\n```"),
            chat("```action\n{\"final_answer\": {\"diagnosis\": \"D\"}}\n```"),
        ]);
        std::env::set_var("STUDYBENCH_TEST_TOKEN_A", "tok");
        let mut agent = ExternalAgent::new(config(url, Some("STUDYBENCH_TEST_TOKEN_A".into())), None).unwrap();
        assert_eq!(agent.agent_id(), "external-m1");
        let turn = agent.next_turn(&start()).unwrap();
        assert_eq!(
            turn,
            AgentTurn::ToolCall {
                tool: "list_series".into(),
                args: json!({})
            }
        );
        let (auth, body) = rx.recv().unwrap();
        assert_eq!(auth.as_deref(), Some("Bearer tok"));
        assert_eq!(body["model"], "m1");
        assert_eq!(body["max_tokens"], 256);
        assert_eq!(body["messages"][0]["role"], "system");

        let repair = Observation::Repair {
            error: "bad".into(),
            budget_exhausted: false,
        };
        let turn = agent.next_turn(&repair).unwrap();
        assert!(matches!(turn, AgentTurn::FinalAnswer(a) if a["diagnosis"] == "D"));
        let (_, body) = rx.recv().unwrap();
        // system, begin, assistant, repair
        assert_eq!(body["messages"].as_array().unwrap().len(), 4);
        assert_eq!(agent.messages().len(), 5);
    }

    #[test]
    fn http_errors_are_endpoint_errors() {
        let (url, _rx) = fake_endpoint(vec![(503, json!({ "error": "overloaded" }))]);
        let mut agent = ExternalAgent::new(config(url, None), None).unwrap();
        assert!(matches!(agent.next_turn(&start()), Err(AgentError::Endpoint(m)) if m.contains("503")));
    }

    #[test]
    fn missing_token_variable_is_reported() {
        let err = ExternalAgent::new(
            config("http://127.0.0.1:9".into(), Some("STUDYBENCH_TEST_UNSET".into())),
            None,
        );
        assert!(err.is_err());
    }

    #[test]
    fn rate_limiter_spaces_requests() {
        let limiter = RateLimiter::per_minute(1200);
        let t0 = Instant::now();
        for _ in 0..4 {
            limiter.acquire();
        }
        assert!(t0.elapsed() >= Duration::from_millis(140));
    }

    #[test]
    fn config_reads_with_defaults() {
        let c: ExternalAgentConfig = serde_json::from_value(json!({ "url": "http://x", "model": "m" })).unwrap();
        assert_eq!(c.token_env.as_deref(), Some(DEFAULT_TOKEN_ENV));
        assert_eq!(c.timeout_secs, 120);
    }
}
