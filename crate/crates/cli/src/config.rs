//! Run configuration. Each setting is taken from the first source that
//! provides it: command-line flag, then the `--config` TOML file, then the
//! environment, then the built-in default.
//!
//! Environment variables: `STUDYBENCH_SUITE`, `STUDYBENCH_OUT`,
//! `STUDYBENCH_BRIDGE_URL`, `STUDYBENCH_PARALLELISM`. The external agent's
//! bearer token is read from the variable named by its `token_env`
//! (default `STUDYBENCH_API_TOKEN`).

use std::path::{Path, PathBuf};

use serde::Deserialize;
use studybench_core::bridge::Track;
use studybench_core::runtime::{AnswerProtocol, ExternalAgentConfig};

use crate::CliError;

pub const ENV_SUITE: &str = "STUDYBENCH_SUITE";
pub const ENV_OUT: &str = "STUDYBENCH_OUT";
pub const ENV_BRIDGE: &str = "STUDYBENCH_BRIDGE_URL";
pub const ENV_PARALLELISM: &str = "STUDYBENCH_PARALLELISM";

/// Contents of a `--config` file. Every key is optional.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunFile {
    pub suite: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub track: Option<Track>,
    pub agent: Option<String>,
    pub protocol: Option<AnswerProtocol>,
    pub budget: Option<u32>,
    pub parallelism: Option<usize>,
    pub bridge: Option<String>,
    pub seed_noise_mm: Option<f64>,
    pub agent_seed: Option<u64>,
    pub limit: Option<usize>,
    /// Endpoint settings for `agent = "external"`.
    pub external: Option<ExternalAgentConfig>,
}

impl RunFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
    }
}

/// Settings given on the command line; `None` defers to the next source.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunFlags {
    pub suite: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub track: Option<Track>,
    pub agent: Option<String>,
    pub agent_config: Option<PathBuf>,
    pub protocol: Option<AnswerProtocol>,
    pub budget: Option<u32>,
    pub parallelism: Option<usize>,
    pub bridge: Option<String>,
    pub embedded_viewer: bool,
    pub seed_noise_mm: Option<f64>,
    pub agent_seed: Option<u64>,
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AgentSpec {
    Random { seed: u64 },
    OracleViewer,
    OracleTools { seed_noise_mm: f64 },
    External(ExternalAgentConfig),
}

pub const AGENT_NAMES: [&str; 4] = ["random", "oracle-viewer", "oracle-tools", "external"];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub suite: PathBuf,
    pub out: PathBuf,
    pub track: Track,
    pub agent: AgentSpec,
    pub protocol: AnswerProtocol,
    /// Overrides every episode's budget when set.
    pub budget: Option<u32>,
    pub parallelism: usize,
    /// Remote bridge; `None` runs the viewer in-process.
    pub bridge: Option<String>,
    pub limit: Option<usize>,
}

/// Read an environment variable; unset and empty are the same.
fn env(name: &str) -> Option<String> {
    std::env::var(name).ok().filter(|v| !v.is_empty())
}

impl RunConfig {
    pub fn resolve(flags: RunFlags, file: RunFile) -> Result<Self, CliError> {
        let suite = flags
            .suite
            .or(file.suite)
            .or_else(|| env(ENV_SUITE).map(PathBuf::from))
            .ok_or_else(|| CliError::usage(format!("no suite given (--suite, config `suite`, or {ENV_SUITE})")))?;
        let out = flags
            .out
            .or(file.out)
            .or_else(|| env(ENV_OUT).map(PathBuf::from))
            .ok_or_else(|| CliError::usage(format!("no output directory given (--out, config `out`, or {ENV_OUT})")))?;
        let parallelism = match flags.parallelism.or(file.parallelism) {
            Some(p) => p,
            None => match env(ENV_PARALLELISM) {
                Some(v) => v
                    .parse()
                    .map_err(|_| CliError::usage(format!("{ENV_PARALLELISM} must be a positive integer, got '{v}'")))?,
                None => 1,
            },
        };
        if parallelism < 1 {
            return Err(CliError::usage("parallelism must be >= 1"));
        }
        let bridge = if flags.embedded_viewer {
            None
        } else {
            flags.bridge.or(file.bridge).or_else(|| env(ENV_BRIDGE))
        };
        let name = flags.agent.or(file.agent).unwrap_or_else(|| "random".into());
        let agent = match name.as_str() {
            "random" => AgentSpec::Random {
                seed: flags.agent_seed.or(file.agent_seed).unwrap_or(0),
            },
            "oracle-viewer" => AgentSpec::OracleViewer,
            "oracle-tools" => AgentSpec::OracleTools {
                seed_noise_mm: flags.seed_noise_mm.or(file.seed_noise_mm).unwrap_or(0.0),
            },
            "external" => {
                let external = match flags.agent_config {
                    Some(path) => Some(load_external(&path)?),
                    None => file.external,
                };
                AgentSpec::External(external.ok_or_else(|| {
                    CliError::usage("agent 'external' needs --agent-config or an [external] table in --config")
                })?)
            }
            other => {
                return Err(CliError::usage(format!(
                    "unknown agent '{other}' (expected one of {})",
                    AGENT_NAMES.join(", ")
                )))
            }
        };
        if let AgentSpec::OracleTools { seed_noise_mm } = agent {
            if !(seed_noise_mm.is_finite() && seed_noise_mm >= 0.0) {
                return Err(CliError::usage(
                    "seed noise must be a finite, non-negative number of mm",
                ));
            }
        }
        Ok(Self {
            suite,
            out,
            track: flags.track.or(file.track).unwrap_or(Track::A),
            agent,
            protocol: flags.protocol.or(file.protocol).unwrap_or(AnswerProtocol::Mcq),
            budget: flags.budget.or(file.budget),
            parallelism,
            bridge,
            limit: flags.limit.or(file.limit),
        })
    }
}

/// An external-agent file holds either the bare endpoint table or an
/// `[external]` table.
pub fn load_external(path: &Path) -> Result<ExternalAgentConfig, CliError> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Shape {
        Wrapped { external: ExternalAgentConfig },
        Bare(ExternalAgentConfig),
    }
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    match toml::from_str::<Shape>(&text) {
        Ok(Shape::Wrapped { external } | Shape::Bare(external)) => Ok(external),
        Err(e) => Err(CliError::usage(format!("{}: {e}", path.display()))),
    }
}
