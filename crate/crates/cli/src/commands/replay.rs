use std::path::{Path, PathBuf};
use std::sync::Arc;

use studybench_core::bridge::{Backend, BridgeClient, HttpClient, LocalClient, StudyStore};
use studybench_core::synth::load_suite;
use studybench_core::trace::{
    parse_trace, verify_replay_text, ArtifactStore, ReplayVerdict, TraceError, TracePosition, ARTIFACT_DIR,
    TRACE_EXTENSION,
};

use crate::{collect_files, CliError, EXIT_EMPTY, EXIT_REPLAY_FAIL, EXIT_UNREACHABLE};

/// Where replayed calls are dispatched.
pub enum ReplaySource {
    Suite(PathBuf),
    Bridge(String),
}

#[derive(Debug)]
pub enum ReplayOutcome {
    Verdict(ReplayVerdict),
    Error(CliError),
}

/// Artifacts stored beside the trace must still exist and hash to their id.
fn check_artifacts(path: &Path, text: &str) -> Option<ReplayVerdict> {
    let dir = path.parent()?.join(ARTIFACT_DIR);
    if !dir.is_dir() {
        return None;
    }
    let store = ArtifactStore::Dir(dir);
    let trace = parse_trace(text).ok()?;
    trace.records.iter().find_map(|r| {
        let bad = store.check(&r.artifact_ids);
        (!bad.is_empty()).then(|| ReplayVerdict::Fail {
            position: TracePosition::Step(r.step),
            reason: format!("artifact {} missing or altered", bad[0]),
        })
    })
}

fn replay_one(path: &Path, client: &dyn BridgeClient) -> ReplayOutcome {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => return ReplayOutcome::Error(CliError::io(path, e)),
    };
    match verify_replay_text(&text, client) {
        Ok(ReplayVerdict::Pass) => ReplayOutcome::Verdict(check_artifacts(path, &text).unwrap_or(ReplayVerdict::Pass)),
        Ok(fail) => ReplayOutcome::Verdict(fail),
        Err(TraceError::Bridge(m)) => ReplayOutcome::Error(CliError::new(EXIT_UNREACHABLE, m)),
        Err(e) => ReplayOutcome::Error(CliError::input(e.to_string())),
    }
}

/// Replay every trace under `paths`, printing one line per trace. Fails
/// with the replay-failure code if any verdict is FAIL, otherwise with the
/// first error's code.
pub fn cmd_replay(paths: &[PathBuf], source: ReplaySource) -> Result<Vec<(PathBuf, ReplayOutcome)>, CliError> {
    let files = collect_files(paths, TRACE_EXTENSION)?;
    if files.is_empty() {
        return Err(CliError::new(EXIT_EMPTY, "EmptyInput: no trace files found"));
    }
    let client: Box<dyn BridgeClient> = match source {
        ReplaySource::Bridge(url) => Box::new(HttpClient::new(&url)),
        ReplaySource::Suite(dir) => {
            let index = load_suite(&dir).map_err(|e| CliError::input(e.to_string()))?;
            Box::new(LocalClient::new(Arc::new(Backend::new(StudyStore::from_suite(index)))))
        }
    };
    let outcomes: Vec<(PathBuf, ReplayOutcome)> = files
        .into_iter()
        .map(|f| {
            let o = replay_one(&f, client.as_ref());
            (f, o)
        })
        .collect();
    let mut fails = 0;
    let mut first_error = None;
    for (path, o) in &outcomes {
        match o {
            ReplayOutcome::Verdict(ReplayVerdict::Pass) => println!("PASS {}", path.display()),
            ReplayOutcome::Verdict(ReplayVerdict::Fail { position, reason }) => {
                fails += 1;
                println!("FAIL {} at {position}: {reason}", path.display());
            }
            ReplayOutcome::Error(e) => {
                println!("ERROR {}: {e}", path.display());
                first_error.get_or_insert(e.clone());
            }
        }
    }
    if fails > 0 {
        return Err(CliError::new(
            EXIT_REPLAY_FAIL,
            format!("{fails} of {} traces failed replay", outcomes.len()),
        ));
    }
    if let Some(e) = first_error {
        return Err(e);
    }
    Ok(outcomes)
}
