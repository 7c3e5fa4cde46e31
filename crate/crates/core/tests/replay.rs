//! Replay soundness: honest traces pass, tampered traces fail at the
//! tampered step.

use std::sync::Arc;

use proptest::prelude::*;
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use studybench_core::bridge::{Backend, LocalClient, StudyStore, Track};
use studybench_core::runtime::{
    run_episode, AgentError, AgentTurn, AnswerProtocol, Episode, ScriptedAgent, TraceTarget,
};
use studybench_core::study::{ModuleKind, StudyPackage};
use studybench_core::synth::gen_study_on_grid;
use studybench_core::trace::{
    parse_trace, parse_trace_unverified, verify_replay, verify_replay_text, EpisodeTrace, ReplayVerdict, TracePosition,
};
use studybench_testkit::fuzz::{fuzz_call, mutate_record, OUTCOME_FIELDS, RECORD_FIELDS};

fn study() -> StudyPackage {
    gen_study_on_grid(21, ModuleKind::Chest, 0, [24, 24, 24])
}

fn client(study: &StudyPackage) -> LocalClient {
    LocalClient::new(Arc::new(Backend::new(StudyStore::in_memory([study.clone()]))))
}

fn scripted_trace(study: &StudyPackage, client: &LocalClient, calls: Vec<(String, Value)>) -> EpisodeTrace {
    let n = calls.len() as u32;
    let mut turns: Vec<Result<AgentTurn, AgentError>> = calls
        .into_iter()
        .map(|(tool, args)| Ok(AgentTurn::ToolCall { tool, args }))
        .collect();
    turns.push(Ok(AgentTurn::FinalAnswer(
        study
            .tasks
            .iter()
            .map(|t| (t.task_id.clone(), "A".to_string()))
            .collect(),
    )));
    let episode = Episode {
        episode_id: "ep".into(),
        study_id: study.study_id.clone(),
        module: study.module,
        track: Track::B,
        answer_protocol: AnswerProtocol::Mcq,
        tool_budget: n,
        agent_id: "scripted".into(),
        rng_seed: 0,
    };
    let mut agent = ScriptedAgent::new("scripted", turns);
    run_episode(&episode, &study.tasks, &mut agent, client, TraceTarget::Memory, None)
        .unwrap()
        .1
}

fn fixed_script() -> Vec<(String, Value)> {
    [
        ("list_series", json!({})),
        ("select_series", json!({ "series_id": "PET" })),
        ("set_window", json!({ "center": 1000, "width": 2000.5 })),
        ("set_slice", json!({ "orientation": "CORONAL", "index": 9 })),
        ("set_fusion", json!({ "overlay_series": "CT", "alpha": 0.25 })),
        ("render", json!({})),
        ("bookmark_view", json!({ "label": "a" })),
        ("measure_distance", json!({ "p1": [0, 0, 0], "p2": [3.0, 4.0, 0.0] })),
        (
            "local_threshold_segment",
            json!({ "seed_mm": [0, 0, 0], "lo": 900, "hi": 32767, "max_radius_mm": 60 }),
        ),
        ("mask_stats", json!({ "mask_id": "mask-0001" })),
        ("export_evidence", json!({})),
        ("select_series", json!({ "series_id": "MISSING" })),
    ]
    .into_iter()
    .map(|(t, a)| (t.to_string(), a))
    .collect()
}

fn fuzz_script(seed: u64, n: usize) -> Vec<(String, Value)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| fuzz_call(&mut rng, &["CT", "PET"])).collect()
}

fn edit_record(trace: &EpisodeTrace, step: usize, edit: impl FnOnce(&mut Value)) -> String {
    let mut lines: Vec<Value> = trace
        .to_jsonl()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    edit(&mut lines[step]);
    lines.iter().map(|l| format!("{l}\n")).collect()
}

#[test]
fn honest_traces_pass() {
    let s = study();
    let c = client(&s);
    for script in [fixed_script(), fuzz_script(1, 40), fuzz_script(2, 40), vec![]] {
        let trace = scripted_trace(&s, &c, script);
        assert_eq!(verify_replay(&trace, &c).unwrap(), ReplayVerdict::Pass);
        assert_eq!(verify_replay_text(&trace.to_jsonl(), &c).unwrap(), ReplayVerdict::Pass);
    }
}

#[test]
fn retimestamped_trace_still_verifies() {
    let s = study();
    let c = client(&s);
    let trace = scripted_trace(&s, &c, fixed_script());
    let text = edit_record(&trace, 3, |r| r["timestamp"] = json!("1999-01-01T00:00:00.000Z"));
    assert!(parse_trace(&text).is_ok());
    assert_eq!(verify_replay_text(&text, &c).unwrap(), ReplayVerdict::Pass);
}

#[test]
fn resealed_argument_change_fails_at_that_step() {
    let s = study();
    let c = client(&s);
    let trace = scripted_trace(&s, &c, fixed_script());
    let text = edit_record(&trace, 3, |r| r["args"]["center"] = json!(1001));
    let mut forged = parse_trace_unverified(&text).unwrap();
    forged.reseal();
    let verdict = verify_replay(&forged, &c).unwrap();
    assert!(
        matches!(
            verdict,
            ReplayVerdict::Fail {
                position: TracePosition::Step(3),
                ..
            }
        ),
        "{verdict:?}"
    );
}

#[test]
fn footer_tampering_is_located() {
    let s = study();
    let c = client(&s);
    let trace = scripted_trace(&s, &c, fixed_script());
    let footer = trace.records.len() + 1;
    let text = edit_record(&trace, footer, |f| f["final_answers"]["location"] = json!("B"));
    let verdict = verify_replay_text(&text, &c).unwrap();
    assert!(matches!(
        verdict,
        ReplayVerdict::Fail {
            position: TracePosition::Footer,
            ..
        }
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn single_field_mutation_fails_at_step(seed in any::<u64>(), field_ix in 0..RECORD_FIELDS.len()) {
        let s = study();
        let c = client(&s);
        let trace = scripted_trace(&s, &c, fuzz_script(seed, 12));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = (seed % 12) as usize + 1;
        let field = RECORD_FIELDS[field_ix];
        let text = edit_record(&trace, k, |r| mutate_record(r, field, &mut rng));
        let verdict = verify_replay_text(&text, &c).unwrap();
        prop_assert_eq!(
            verdict,
            ReplayVerdict::Fail { position: TracePosition::Step(k as u64), reason: "hash chain does not verify".into() }
        );
    }

    #[test]
    fn resealed_outcome_forgery_fails_at_step(seed in any::<u64>()) {
        let s = study();
        let c = client(&s);
        let trace = scripted_trace(&s, &c, fuzz_script(seed ^ 0xABCD, 12));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = (seed % 12) as usize + 1;
        let field = *OUTCOME_FIELDS.choose(&mut rng).unwrap();
        let text = edit_record(&trace, k, |r| mutate_record(r, field, &mut rng));
        let mut forged = parse_trace_unverified(&text).unwrap();
        forged.reseal();
        prop_assert!(forged.first_chain_break().is_none());
        let verdict = verify_replay(&forged, &c).unwrap();
        let at_k = matches!(verdict, ReplayVerdict::Fail { position: TracePosition::Step(step), .. } if step == k as u64);
        prop_assert!(at_k, "{field}: {verdict:?}");
    }
}
