//! Acceptance suite: one PASS/FAIL line per headline criterion. Exits
//! nonzero when any criterion fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use studybench::commands::cmd_run;
use studybench::config::{AgentSpec, RunConfig};
use studybench_core::bridge::{descriptor, Backend, BridgeClient, LocalClient, Status, StudyStore, Track, TrackPolicy};
use studybench_core::runtime::{
    run_episode, Agent, AgentError, AgentTurn, AnswerProtocol, CancelFlag, Episode, OracleAgent, OracleMode,
    RandomAgent, ScriptedAgent, TraceTarget,
};
use studybench_core::scoring::{aggregate, format_cell, score_episode, CaseScore, NormalizingJudge, ScoreReport};
use studybench_core::study::{ModuleKind, StudyPackage, Volume, TASK_GRADE, TASK_LOCATION, TASK_T_STAGE};
use studybench_core::synth::{chest, gen_suite, load_suite, write_suite, GenSpec};
use studybench_core::tools::{local_threshold_segment, ToolError};
use studybench_core::trace::{
    parse_trace_unverified, verify_replay, verify_replay_text, EpisodeTrace, ReplayVerdict, TracePosition,
};
use studybench_core::viewer::window_pixel;
use studybench_testkit::fuzz::{fuzz_call, mutate_record, LAYER_3, OUTCOME_FIELDS, RECORD_FIELDS};
use studybench_testkit::{flood_fill, read_chest, window_px, FloodOutcome, Grid};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn grid_of(v: &Volume) -> Grid {
    Grid {
        dims: v.dims(),
        spacing: v.spacing(),
        origin: v.origin(),
    }
}

fn local_client(studies: &[StudyPackage]) -> (Arc<Backend>, LocalClient) {
    let backend = Arc::new(Backend::new(StudyStore::in_memory(studies.to_vec())));
    (backend.clone(), LocalClient::new(backend))
}

fn episode_for(study: &StudyPackage, track: Track, budget: u32, agent_id: &str, rng_seed: u64) -> Episode {
    Episode {
        episode_id: format!("ep-{}", study.study_id),
        study_id: study.study_id.clone(),
        module: study.module,
        track,
        answer_protocol: AnswerProtocol::Mcq,
        tool_budget: budget,
        agent_id: agent_id.into(),
        rng_seed,
    }
}

fn series_ids(module: ModuleKind) -> Vec<&'static str> {
    match module {
        ModuleKind::Brain => vec!["T1", "T1c", "T2", "FLAIR"],
        ModuleKind::Chest => vec!["CT", "PET"],
    }
}

fn scripted(calls: Vec<(String, Value)>, answers: BTreeMap<String, String>) -> ScriptedAgent {
    let mut turns: Vec<Result<AgentTurn, AgentError>> = calls
        .into_iter()
        .map(|(tool, args)| Ok(AgentTurn::ToolCall { tool, args }))
        .collect();
    turns.push(Ok(AgentTurn::FinalAnswer(answers)));
    ScriptedAgent::new("scripted", turns)
}

fn first_options(study: &StudyPackage) -> BTreeMap<String, String> {
    study
        .tasks
        .iter()
        .map(|t| (t.task_id.clone(), "A".to_string()))
        .collect()
}

fn score_all(
    studies: &[StudyPackage],
    client: &LocalClient,
    track: Track,
    budget: u32,
    mut make: impl FnMut() -> Box<dyn Agent>,
) -> Result<ScoreReport, String> {
    let judge = NormalizingJudge;
    let mut items = Vec::new();
    for (i, s) in studies.iter().enumerate() {
        let mut agent = make();
        let ep = episode_for(s, track, budget, &agent.agent_id(), i as u64);
        let (result, _) =
            run_episode(&ep, &s.tasks, agent.as_mut(), client, TraceTarget::Memory, None).map_err(|e| e.to_string())?;
        let score = score_episode(&result, &s.tasks, s.truth.as_ref().unwrap(), &judge).map_err(|e| e.to_string())?;
        items.push((result, score));
    }
    aggregate(&items, None).map_err(|e| e.to_string())
}

fn viewer_oracle_is_perfect() -> Check {
    let started = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let suite = dir.path().join("suite");
    write_suite(&GenSpec::new(20260, ModuleKind::Brain, 20), &suite).map_err(|e| e.to_string())?;
    let cfg = RunConfig {
        suite: suite.clone(),
        out: dir.path().join("run"),
        track: Track::A,
        agent: AgentSpec::OracleViewer,
        protocol: AnswerProtocol::Mcq,
        budget: None,
        parallelism: 1,
        bridge: None,
        limit: None,
    };
    let summary = cmd_run(&cfg, Arc::new(CancelFlag::new())).map_err(|e| e.message)?;
    let index = load_suite(&suite).map_err(|e| e.to_string())?;
    let judge = NormalizingJudge;
    let mut items = Vec::new();
    for r in summary.results {
        let study = index.load_study(&r.study_id).map_err(|e| e.to_string())?;
        let score =
            score_episode(&r, &study.tasks, study.truth.as_ref().unwrap(), &judge).map_err(|e| e.to_string())?;
        items.push((r, score));
    }
    let report = aggregate(&items, None).map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    let detail = format!(
        "{} cases, accuracy {:.2}, avg calls {:.1}, {:.1} s",
        report.n_cases,
        report.accuracy,
        report.avg_tool_calls,
        elapsed.as_secs_f64()
    );
    ensure(report.n_cases == 20, || detail.clone())?;
    ensure(report.accuracy == 1.0, || detail.clone())?;
    ensure(report.avg_tool_calls <= 12.0, || detail.clone())?;
    ensure(elapsed < Duration::from_secs(60), || detail.clone())?;
    Ok(detail)
}

fn chance_baseline() -> Check {
    let suite =
        gen_suite(&GenSpec::new(4242, ModuleKind::Brain, 200).with_grid([24, 24, 24])).map_err(|e| e.to_string())?;
    ensure(
        suite
            .studies
            .iter()
            .all(|s| s.tasks.iter().all(|t| t.options().len() == 4)),
        || "brain tasks are not 4-option".into(),
    )?;
    let (_, client) = local_client(&suite.studies);
    let report = score_all(&suite.studies, &client, Track::A, 40, || Box::new(RandomAgent::new(17)))?;
    let detail = format!("{} episodes, accuracy {:.3}", report.n_cases, report.accuracy);
    ensure(
        report.n_cases == 200 && (0.16..=0.34).contains(&report.accuracy),
        || detail.clone(),
    )?;
    Ok(detail)
}

fn binomial_sigma(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

fn tool_grounding_degrades() -> Check {
    const NOISE: [f64; 4] = [0.0, 5.0, 15.0, 30.0];
    let suite = gen_suite(&GenSpec::new(303, ModuleKind::Chest, 100)).map_err(|e| e.to_string())?;
    let store = Arc::new(StudyStore::in_memory(suite.studies.clone()));
    let (_, client) = local_client(&suite.studies);
    let mut reports = Vec::new();
    for noise in NOISE {
        let store = store.clone();
        reports.push(score_all(&suite.studies, &client, Track::B, 40, || {
            Box::new(OracleAgent::new(OracleMode::Tools, noise, store.clone()))
        })?);
    }
    let n = suite.studies.len();
    let location: Vec<f64> = reports.iter().map(|r| r.per_task[TASK_LOCATION]).collect();
    let exact: Vec<f64> = reports.iter().map(|r| r.accuracy).collect();
    let detail = format!(
        "{n} episodes, location {}, case-exact {}",
        location
            .iter()
            .map(|a| format!("{a:.2}"))
            .collect::<Vec<_>>()
            .join(" -> "),
        exact.iter().map(|a| format!("{a:.2}")).collect::<Vec<_>>().join(" -> "),
    );
    ensure(location[0] - location[2] >= 0.15, || {
        format!("drop at 15 mm below 0.15: {detail}")
    })?;
    for series in [&location, &exact] {
        for w in series.windows(2) {
            let slack = 3.0 * (binomial_sigma(w[0], n).powi(2) + binomial_sigma(w[1], n).powi(2)).sqrt();
            ensure(w[1] <= w[0] + slack, || format!("increase beyond 3 sigma: {detail}"))?;
        }
    }
    Ok(detail)
}

fn generator_self_consistent() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    write_suite(&GenSpec::new(88, ModuleKind::Chest, 100), dir.path()).map_err(|e| e.to_string())?;
    let index = load_suite(dir.path()).map_err(|e| e.to_string())?;
    let mut agree = 0;
    for ep in index.episodes() {
        let study = index.load_study(&ep.study_id).map_err(|e| e.to_string())?;
        let pet = &study.series(chest::PET_SERIES).ok_or("missing PET series")?.volume;
        let reading = read_chest(&grid_of(pet), pet.voxels());
        let truth = study.truth.as_ref().ok_or("missing truth.json")?;
        let matches = [(0, TASK_LOCATION), (1, TASK_T_STAGE), (4, TASK_GRADE)]
            .iter()
            .all(|&(i, task)| truth.answers[task].option.as_deref() == Some(reading.answers[i].as_str()));
        if matches {
            agree += 1;
        }
    }
    let detail = format!("{agree}/{} cases", index.episodes().len());
    ensure(agree == 100, || detail.clone())?;
    Ok(detail)
}

fn scripted_trace(
    study: &StudyPackage,
    client: &LocalClient,
    calls: Vec<(String, Value)>,
    track: Track,
) -> EpisodeTrace {
    let budget = calls.len() as u32;
    let mut agent = scripted(calls, first_options(study));
    let ep = episode_for(study, track, budget, "scripted", 0);
    run_episode(&ep, &study.tasks, &mut agent, client, TraceTarget::Memory, None)
        .expect("in-memory trace")
        .1
}

fn fuzz_script(rng: &mut ChaCha8Rng, module: ModuleKind, n: usize) -> Vec<(String, Value)> {
    let series = series_ids(module);
    (0..n).map(|_| fuzz_call(rng, &series)).collect()
}

fn edit_line(trace: &EpisodeTrace, line: usize, edit: impl FnOnce(&mut Value)) -> String {
    let mut lines: Vec<Value> = trace
        .to_jsonl()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    edit(&mut lines[line]);
    lines.iter().map(|l| format!("{l}\n")).collect()
}

fn replay_is_sound() -> Check {
    let studies: Vec<StudyPackage> = [ModuleKind::Brain, ModuleKind::Chest]
        .into_iter()
        .flat_map(|m| (0..2).map(move |i| studybench_core::synth::gen_study_on_grid(31, m, i, [24, 24, 24])))
        .collect();
    let (_, client) = local_client(&studies);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut traces = Vec::new();
    for s in &studies {
        for track in [Track::A, Track::B] {
            for _ in 0..5 {
                let n = rng.random_range(4..=20);
                let calls = fuzz_script(&mut rng, s.module, n);
                traces.push((s, scripted_trace(s, &client, calls, track)));
            }
        }
    }
    let honest = traces
        .iter()
        .filter(|(_, t)| {
            verify_replay_text(&t.to_jsonl(), &client)
                .map(|v| v.is_pass())
                .unwrap_or(false)
        })
        .count();
    ensure(honest == traces.len(), || {
        format!("{honest}/{} honest traces pass", traces.len())
    })?;

    let mut mutations = 0;
    let mut caught = 0;
    let mut misses = Vec::new();
    for round in 0..600 {
        let (_, trace) = &traces[round % traces.len()];
        let k = rng.random_range(1..=trace.records.len());
        let field = *RECORD_FIELDS.choose(&mut rng).unwrap();
        let text = edit_line(trace, k, |r| mutate_record(r, field, &mut rng));
        mutations += 1;
        match verify_replay_text(&text, &client) {
            Ok(ReplayVerdict::Fail {
                position: TracePosition::Step(s),
                ..
            }) if s == k as u64 => caught += 1,
            other => misses.push(format!("{field}@{k}: {other:?}")),
        }
    }
    // forgeries that recompute the chain must still fail where the outcome was edited
    let mut forged_caught = 0;
    let mut forgeries = 0;
    for round in 0..200 {
        let (_, trace) = &traces[round % traces.len()];
        let k = rng.random_range(1..=trace.records.len());
        let field = *OUTCOME_FIELDS.choose(&mut rng).unwrap();
        let text = edit_line(trace, k, |r| mutate_record(r, field, &mut rng));
        let mut forged = parse_trace_unverified(&text).map_err(|e| e.to_string())?;
        forged.reseal();
        forgeries += 1;
        match verify_replay(&forged, &client) {
            Ok(ReplayVerdict::Fail {
                position: TracePosition::Step(s),
                ..
            }) if s == k as u64 => forged_caught += 1,
            other => misses.push(format!("resealed {field}@{k}: {other:?}")),
        }
    }
    let detail = format!(
        "{honest}/{} honest traces pass; {caught}/{mutations} mutations and {forged_caught}/{forgeries} resealed forgeries fail at the mutated step",
        traces.len()
    );
    ensure(misses.is_empty(), || format!("{detail}; first miss {}", misses[0]))?;
    ensure(mutations >= 500, || detail.clone())?;
    Ok(detail)
}

fn gating_is_sound() -> Check {
    const CALLS_PER_EPISODE: usize = 250;
    let studies: Vec<StudyPackage> = [ModuleKind::Brain, ModuleKind::Chest]
        .into_iter()
        .flat_map(|m| (0..2).map(move |i| studybench_core::synth::gen_study_on_grid(47, m, i, [24, 24, 24])))
        .collect();
    let (backend, client) = local_client(&studies);
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let mut total = 0;
    let mut forbidden = 0;
    for s in &studies {
        let initial = {
            let info = client
                .open_session(&s.study_id, &TrackPolicy::new(Track::A, 1))
                .map_err(|e| e.to_string())?;
            let digest = backend.state(&info.session_id).map_err(|e| e.message)?.digest();
            client.close_session(&info.session_id).map_err(|e| e.to_string())?;
            digest
        };
        let calls = fuzz_script(&mut rng, s.module, CALLS_PER_EPISODE);
        let sent_layer_3 = calls.iter().filter(|(t, _)| LAYER_3.contains(&t.as_str())).count();
        let trace = scripted_trace(s, &client, calls, Track::A);
        ensure(trace.records.len() == CALLS_PER_EPISODE, || {
            format!(
                "{}: {} of {CALLS_PER_EPISODE} calls traced",
                s.study_id,
                trace.records.len()
            )
        })?;
        let mut prev = initial;
        let mut traced_layer_3 = 0;
        for r in &trace.records {
            total += 1;
            let digest = r
                .state_digest
                .clone()
                .ok_or_else(|| format!("step {} has no state digest", r.step))?;
            if descriptor(&r.tool).is_some_and(|d| d.layer == 3) {
                traced_layer_3 += 1;
                ensure(r.status == Status::TrackForbidden, || {
                    format!("step {} {}: {}", r.step, r.tool, r.status)
                })?;
                ensure(digest == prev, || {
                    format!("step {} {} changed the state", r.step, r.tool)
                })?;
            }
            prev = digest;
        }
        ensure(traced_layer_3 == sent_layer_3, || {
            format!(
                "{}: {sent_layer_3} layer-3 calls sent, {traced_layer_3} traced",
                s.study_id
            )
        })?;
        forbidden += traced_layer_3;
    }
    let executed = backend.executions()[2];
    let detail = format!("{total} calls, {forbidden} layer-3 rejections, {executed} layer-3 executions");
    ensure(total >= 1000 && forbidden > 0 && executed == 0, || detail.clone())?;
    Ok(detail)
}

fn random_volume(rng: &mut ChaCha8Rng) -> (Volume, [f64; 3], i32, i32, f64) {
    let dims = [0; 3].map(|_| rng.random_range(1..=16usize));
    let sp = rng.random_range(0.5..3.0);
    let spacing = [sp, sp * 1.25, sp * 0.75];
    let origin = [-3.0, 1.5, 0.25];
    let levels = [0i16, 100, 200, 300];
    // blocky intensities so regions grow past single voxels
    let block = rng.random_range(1..=4usize);
    let palette: Vec<i16> = (0..4096).map(|_| *levels.choose(rng).unwrap()).collect();
    let mut vox = Vec::with_capacity(dims.iter().product());
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let key = (x / block) + 16 * ((y / block) + 16 * (z / block));
                let flip = rng.random_bool(0.05);
                vox.push(if flip {
                    *levels.choose(rng).unwrap()
                } else {
                    palette[key % palette.len()]
                });
            }
        }
    }
    let v = Volume::new(dims, spacing, origin, vox).expect("consistent dims");
    // mostly in-volume seeds and bands around one level; the rest probe the error paths
    let edge = rng.random_bool(0.15);
    let seed = [0, 1, 2].map(|a| {
        let idx = if edge {
            rng.random_range(-2.0..18.0)
        } else {
            rng.random_range(-0.4..dims[a] as f64 - 0.6)
        };
        origin[a] + idx * spacing[a]
    });
    let (lo, hi) = if edge {
        let a = rng.random_range(0..=300);
        let b = rng.random_range(0..=300);
        (a.min(b), a.max(b))
    } else {
        let at = [0, 1, 2].map(|a| (((seed[a] - origin[a]) / spacing[a]).round().max(0.0) as usize).min(dims[a] - 1));
        let level = i32::from(v.get(at));
        (level - rng.random_range(0..120), level + rng.random_range(0..120))
    };
    (v, seed, lo, hi, rng.random_range(0.5..40.0))
}

fn segmentation_matches_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let mut regions = 0;
    let mut largest = 0;
    for i in 0..200 {
        let (vol, seed, lo, hi, radius) = random_volume(&mut rng);
        let oracle = flood_fill(&grid_of(&vol), vol.voxels(), seed, lo, hi, radius);
        let agree = match (local_threshold_segment(&vol, "S", seed, lo, hi, radius), &oracle) {
            (Ok((mask, _)), FloodOutcome::Region(region)) => {
                regions += 1;
                largest = largest.max(region.len());
                &mask.voxels == region
            }
            (Err(ToolError::SeedOutOfBounds(_)), FloodOutcome::SeedOutOfBounds) => true,
            (Err(ToolError::SeedOutsideThreshold { .. }), FloodOutcome::SeedOutsideThreshold) => true,
            (Err(ToolError::BadArgs(_)), FloodOutcome::Region(region)) => region.len() == 1,
            _ => false,
        };
        ensure(agree, || {
            format!(
                "volume {i} dims {:?}: tool and oracle disagree ({oracle:?})",
                vol.dims()
            )
        })?;
    }
    Ok(format!(
        "200/200 volumes agree ({regions} grown regions, largest {largest} voxels)"
    ))
}

fn chest_answers(study: &StudyPackage, wrong: &[&str]) -> BTreeMap<String, String> {
    let truth = study.truth.as_ref().unwrap();
    study
        .tasks
        .iter()
        .map(|t| {
            let right = truth.answers[&t.task_id].option.clone().unwrap();
            let pick = if wrong.contains(&t.task_id.as_str()) {
                t.options().iter().find(|o| o.id != right).unwrap().id.clone()
            } else {
                right
            };
            (t.task_id.clone(), pick)
        })
        .collect()
}

fn scoring_identities(aggregates: &[ScoreReport]) -> Check {
    let studies: Vec<StudyPackage> = (0..2)
        .map(|i| studybench_core::synth::gen_study_on_grid(55, ModuleKind::Chest, i, [24, 24, 24]))
        .collect();
    let (_, client) = local_client(&studies);
    let judge = NormalizingJudge;
    let mut items: Vec<(_, CaseScore)> = Vec::new();
    for (s, wrong) in studies.iter().zip([&[][..], &["t_stage", "grade"][..]]) {
        let mut agent = scripted(vec![("list_series".into(), json!({}))], chest_answers(s, wrong));
        let ep = episode_for(s, Track::A, 40, "scripted", 0);
        let (result, _) =
            run_episode(&ep, &s.tasks, &mut agent, &client, TraceTarget::Memory, None).map_err(|e| e.to_string())?;
        let score = score_episode(&result, &s.tasks, s.truth.as_ref().unwrap(), &judge).map_err(|e| e.to_string())?;
        items.push((result, score));
    }
    let fixture = aggregate(&items, None).map_err(|e| e.to_string())?;
    ensure(
        fixture.accuracy == 0.5 && fixture.question_level_accuracy == 0.8,
        || {
            format!(
                "fixture gave ({}, {})",
                fixture.accuracy, fixture.question_level_accuracy
            )
        },
    )?;
    let cells = [
        (0.61, 5.9, "0.61 (5.9)"),
        (0.605, 5.94, "0.60 (5.9)"),
        (1.0, 12.0, "1.00 (12.0)"),
        (0.0, 0.0, "0.00 (0.0)"),
    ];
    for (acc, calls, want) in cells {
        let got = format_cell(acc, calls);
        ensure(got == want, || {
            format!("format_cell({acc}, {calls}) = {got:?}, want {want:?}")
        })?;
    }
    let pattern_ok = aggregates.iter().all(|r| {
        let cell = format_cell(r.accuracy, r.avg_tool_calls);
        let (rate, calls) = cell.split_once(" (").unwrap_or(("", ""));
        rate.len() == 4
            && rate.as_bytes()[1] == b'.'
            && calls.ends_with(')')
            && calls.split_once('.').is_some_and(|(_, d)| d.len() == 2)
    });
    ensure(pattern_ok, || {
        "a report cell does not match the d.dd (d.d) pattern".into()
    })?;
    let ordered = aggregates
        .iter()
        .chain([&fixture])
        .all(|r| r.accuracy <= r.question_level_accuracy);
    ensure(ordered, || "case-exact exceeds question-level on some aggregate".into())?;
    Ok(format!(
        "fixture ({}, {}); cell \"{}\"; case-exact <= question-level on {} aggregates",
        fixture.accuracy,
        fixture.question_level_accuracy,
        format_cell(0.61, 5.9),
        aggregates.len() + 1
    ))
}

fn files_under(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().display().to_string();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn deterministic() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut suites = Vec::new();
    for name in ["first", "second"] {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_studybench"))
            .args(["gen", "--seed", "42", "--module", "chest", "--cases", "6", "--out"])
            .arg(&out)
            .output()
            .map_err(|e| e.to_string())?;
        ensure(status.status.success(), || {
            format!("gen failed: {}", String::from_utf8_lossy(&status.stderr))
        })?;
        suites.push(files_under(&out));
    }
    ensure(!suites[0].is_empty() && suites[0] == suites[1], || {
        "gen --seed 42 output differs between runs".into()
    })?;
    for (v, want) in [(0i16, 0u8), (40, 128), (80, 255)] {
        let got = window_pixel(v, 40.0, 80.0);
        let oracle = window_px(v as f64, 40.0, 80.0);
        ensure(got == want && oracle == want, || {
            format!("pixel({v}) = {got}, oracle {oracle}, want {want}")
        })?;
    }
    Ok(format!(
        "{} files byte-identical; pixels 0->0, 40->128, 80->255",
        suites[0].len()
    ))
}

fn run(name: &str, check: impl FnOnce() -> Check) -> bool {
    let started = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let secs = started.elapsed().as_secs_f64();
    match outcome {
        Ok(detail) => {
            println!("PASS {name}: {detail} [{secs:.1}s]");
            true
        }
        Err(detail) => {
            println!("FAIL {name}: {detail} [{secs:.1}s]");
            false
        }
    }
}

fn main() -> ExitCode {
    let mut aggregates: Vec<ScoreReport> = Vec::new();
    let mut keep = |r: Result<ScoreReport, String>| r.inspect(|rep| aggregates.push(rep.clone()));
    let mut passed = vec![
        run("viewer-oracle perfection", viewer_oracle_is_perfect),
        run("chance baseline", chance_baseline),
        run("tool-grounding degradation", tool_grounding_degrades),
        run("generator self-consistency", generator_self_consistent),
        run("replay soundness", replay_is_sound),
        run("gating soundness", gating_is_sound),
        run("segmentation oracle equivalence", segmentation_matches_oracle),
    ];
    // aggregates from live runs for the ordering identity
    let suite = gen_suite(&GenSpec::new(9, ModuleKind::Chest, 20).with_grid([32, 32, 32])).expect("suite");
    let store = Arc::new(StudyStore::in_memory(suite.studies.clone()));
    let (_, client) = local_client(&suite.studies);
    for noise in [0.0, 30.0] {
        let store = store.clone();
        let _ = keep(score_all(&suite.studies, &client, Track::B, 40, || {
            Box::new(OracleAgent::new(OracleMode::Tools, noise, store.clone()))
        }));
    }
    let _ = keep(score_all(&suite.studies, &client, Track::A, 40, || {
        Box::new(RandomAgent::new(3))
    }));
    let _ = keep(score_all(&suite.studies, &client, Track::A, 40, || {
        Box::new(OracleAgent::new(OracleMode::Viewer, 0.0, store.clone()))
    }));
    passed.push(run("scoring identities", || scoring_identities(&aggregates)));
    passed.push(run("determinism", deterministic));
    let failed = passed.iter().filter(|p| !**p).count();
    println!("{} of {} criteria passed", passed.len() - failed, passed.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
