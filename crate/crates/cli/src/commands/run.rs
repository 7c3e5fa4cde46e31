use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;
use studybench_core::bridge::{Backend, BridgeClient, ClientError, HttpClient, LocalClient, StudyStore, TrackPolicy};
use studybench_core::canonical::canonical_json;
use studybench_core::runtime::{
    run_episode, Agent, CancelFlag, Episode, EpisodeResult, ExternalAgent, OracleAgent, OracleMode, RandomAgent,
    RateLimiter, TraceTarget, PROMPT_VERSION,
};
use studybench_core::synth::{load_suite, EpisodeSpec, SuiteIndex};
use studybench_core::trace::TRACE_EXTENSION;

use crate::config::{AgentSpec, RunConfig};
use crate::{write_file, CliError, EXIT_INTERNAL, EXIT_UNREACHABLE};

pub const TRACE_DIR: &str = "traces";
pub const RESULT_DIR: &str = "results";
pub const RESULT_EXTENSION: &str = ".result.json";
pub const RUN_FILE: &str = "run.json";

#[derive(Debug)]
pub struct RunSummary {
    /// Finished episodes, ordered by episode id.
    pub results: Vec<EpisodeResult>,
    /// Episodes skipped because the run was interrupted.
    pub skipped: usize,
}

/// Provenance written beside the traces.
#[derive(Serialize)]
struct RunRecord<'a> {
    suite_digest: &'a str,
    module: String,
    track: String,
    agent_id: &'a str,
    answer_protocol: String,
    budget_override: Option<u32>,
    bridge: Option<&'a str>,
    prompt_version: &'a str,
    episodes: usize,
}

fn make_agent(
    spec: &AgentSpec,
    store: &Arc<StudyStore>,
    limiter: &Option<Arc<RateLimiter>>,
) -> Result<Box<dyn Agent>, CliError> {
    Ok(match spec {
        AgentSpec::Random { seed } => Box::new(RandomAgent::new(*seed)),
        AgentSpec::OracleViewer => Box::new(OracleAgent::new(OracleMode::Viewer, 0.0, store.clone())),
        AgentSpec::OracleTools { seed_noise_mm } => {
            Box::new(OracleAgent::new(OracleMode::Tools, *seed_noise_mm, store.clone()))
        }
        AgentSpec::External(c) => Box::new(ExternalAgent::new(c.clone(), limiter.clone()).map_err(CliError::usage)?),
    })
}

fn client_for(cfg: &RunConfig, index: &SuiteIndex) -> Box<dyn BridgeClient> {
    match &cfg.bridge {
        Some(url) => Box::new(HttpClient::new(url)),
        None => Box::new(LocalClient::new(Arc::new(Backend::new(StudyStore::from_suite(
            index.clone(),
        ))))),
    }
}

/// Open and close one session so an unreachable bridge fails the run
/// up front instead of aborting every episode.
fn probe(client: &dyn BridgeClient, study_id: &str, cfg: &RunConfig) -> Result<(), CliError> {
    match client.open_session(study_id, &TrackPolicy::new(cfg.track, 1)) {
        Ok(info) => {
            let _ = client.close_session(&info.session_id);
            Ok(())
        }
        Err(ClientError::Unreachable(m)) => Err(CliError::new(EXIT_UNREACHABLE, format!("bridge unreachable: {m}"))),
        Err(ClientError::Bridge(e)) => Err(CliError::input(format!(
            "bridge refused study {study_id}: {}",
            e.message
        ))),
        Err(e) => Err(CliError::new(
            EXIT_UNREACHABLE,
            format!("bridge is not speaking the protocol: {e}"),
        )),
    }
}

pub fn trace_path(out: &Path, episode_id: &str) -> PathBuf {
    out.join(TRACE_DIR).join(format!("{episode_id}{TRACE_EXTENSION}"))
}

pub fn result_path(out: &Path, episode_id: &str) -> PathBuf {
    out.join(RESULT_DIR).join(format!("{episode_id}{RESULT_EXTENSION}"))
}

/// Run every episode of the suite, writing traces and results under
/// `cfg.out`. Episodes not yet started when `cancel` fires are skipped.
pub fn cmd_run(cfg: &RunConfig, cancel: Arc<CancelFlag>) -> Result<RunSummary, CliError> {
    let index = load_suite(&cfg.suite).map_err(|e| CliError::input(e.to_string()))?;
    let store = Arc::new(StudyStore::from_suite(index.clone()));
    let module = index.manifest.generator.module;
    let mut specs: Vec<EpisodeSpec> = index.episodes().to_vec();
    if let Some(n) = cfg.limit {
        specs.truncate(n);
    }
    let client = client_for(cfg, &index);
    if let Some(first) = specs.first() {
        probe(client.as_ref(), &first.study_id, cfg)?;
    }
    let limiter = match &cfg.agent {
        AgentSpec::External(c) => c.requests_per_minute.map(|n| Arc::new(RateLimiter::per_minute(n))),
        _ => None,
    };
    let agent_id = make_agent(&cfg.agent, &store, &limiter)?.agent_id();
    let record = RunRecord {
        suite_digest: &index.digest,
        module: module.to_string(),
        track: cfg.track.to_string(),
        agent_id: &agent_id,
        answer_protocol: cfg.protocol.to_string(),
        budget_override: cfg.budget,
        bridge: cfg.bridge.as_deref(),
        prompt_version: PROMPT_VERSION,
        episodes: specs.len(),
    };
    write_file(&cfg.out.join(RUN_FILE), canonical_json(&record))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallelism)
        .build()
        .map_err(|e| CliError::new(EXIT_INTERNAL, e.to_string()))?;
    let outcomes: Vec<Option<Result<EpisodeResult, CliError>>> = pool.install(|| {
        specs
            .par_iter()
            .map(|spec| {
                if cancel.is_cancelled() {
                    return None;
                }
                Some(run_one(cfg, spec, module, &store, &limiter, client.as_ref(), &cancel))
            })
            .collect()
    });
    let mut results = Vec::new();
    let mut skipped = 0;
    for o in outcomes {
        match o {
            None => skipped += 1,
            Some(r) => results.push(r?),
        }
    }
    results.sort_by(|a, b| a.episode_id.cmp(&b.episode_id));
    Ok(RunSummary { results, skipped })
}

fn run_one(
    cfg: &RunConfig,
    spec: &EpisodeSpec,
    module: studybench_core::study::ModuleKind,
    store: &Arc<StudyStore>,
    limiter: &Option<Arc<RateLimiter>>,
    client: &dyn BridgeClient,
    cancel: &CancelFlag,
) -> Result<EpisodeResult, CliError> {
    let study = store.get(&spec.study_id).map_err(CliError::input)?;
    let mut agent = make_agent(&cfg.agent, store, limiter)?;
    let episode = Episode {
        episode_id: spec.episode_id.clone(),
        study_id: spec.study_id.clone(),
        module,
        track: cfg.track,
        answer_protocol: cfg.protocol,
        tool_budget: cfg.budget.unwrap_or(spec.tool_budget),
        agent_id: agent.agent_id(),
        rng_seed: spec.rng_seed,
    };
    let path = trace_path(&cfg.out, &spec.episode_id);
    let (result, _) = run_episode(
        &episode,
        &study.tasks,
        agent.as_mut(),
        client,
        TraceTarget::File(path),
        Some(cancel),
    )
    .map_err(|e| CliError::input(e.to_string()))?;
    let text = serde_json::to_string_pretty(&result).map_err(|e| CliError::new(EXIT_INTERNAL, e.to_string()))?;
    write_file(&result_path(&cfg.out, &spec.episode_id), text + "\n")?;
    Ok(result)
}
