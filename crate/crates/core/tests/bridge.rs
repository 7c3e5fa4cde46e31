//! Gating and robustness of the bridge under fuzzed calls.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use studybench_core::bridge::{descriptor, Backend, Status, StudyStore, ToolCall, Track, TrackPolicy};
use studybench_core::study::ModuleKind;
use studybench_core::synth::gen_study_on_grid;
use studybench_testkit::fuzz::{fuzz_call, LAYER_3};

const READ_ONLY: [&str; 4] = ["list_series", "render", "mask_stats", "export_evidence"];

fn backend(module: ModuleKind) -> Backend {
    Backend::new(StudyStore::in_memory([gen_study_on_grid(9, module, 0, [24, 24, 24])]))
}

#[test]
fn track_a_never_executes_layer_three() {
    for module in [ModuleKind::Brain, ModuleKind::Chest] {
        let b = backend(module);
        let study_id = studybench_core::synth::study_id(9, module, 0);
        let info = b.open_session(&study_id, TrackPolicy::new(Track::A, 1000)).unwrap();
        let series: Vec<&str> = match module {
            ModuleKind::Brain => vec!["T1", "T1c", "T2", "FLAIR"],
            ModuleKind::Chest => vec!["CT", "PET"],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut forbidden = 0;
        for call_id in 1..=500u64 {
            let (tool, args) = fuzz_call(&mut rng, &series);
            let before = b.state(&info.session_id).unwrap().digest();
            let r = b.invoke(&ToolCall {
                session_id: info.session_id.clone(),
                tool: tool.clone(),
                args,
                call_id,
            });
            if LAYER_3.contains(&tool.as_str()) {
                forbidden += 1;
                assert_eq!(r.status, Status::TrackForbidden);
                assert_eq!(r.state_digest.as_deref(), Some(before.as_str()));
                assert_eq!(b.state(&info.session_id).unwrap().digest(), before);
            }
            if r.status != Status::Ok {
                assert_eq!(
                    b.state(&info.session_id).unwrap().digest(),
                    before,
                    "{tool}: {:?}",
                    r.error
                );
            }
        }
        assert!(forbidden > 20);
        assert_eq!(b.executions()[2], 0);
        assert!(b.executions()[0] > 0);
    }
}

#[test]
fn track_b_executes_layer_three() {
    let b = backend(ModuleKind::Chest);
    let study_id = studybench_core::synth::study_id(9, ModuleKind::Chest, 0);
    let info = b.open_session(&study_id, TrackPolicy::new(Track::B, 1000)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for call_id in 1..=400u64 {
        let (tool, args) = fuzz_call(&mut rng, &["CT", "PET"]);
        let r = b.invoke(&ToolCall {
            session_id: info.session_id.clone(),
            tool: tool.clone(),
            args,
            call_id,
        });
        assert_ne!(r.status, Status::TrackForbidden);
        // every unknown tool, and only unknown tools, yields E_UNKNOWN_TOOL
        assert_eq!(r.status == Status::UnknownTool, descriptor(&tool).is_none());
    }
    assert!(b.executions()[2] > 0);
}

#[test]
fn failures_never_advance_the_step_counter() {
    let b = backend(ModuleKind::Brain);
    let study_id = studybench_core::synth::study_id(9, ModuleKind::Brain, 0);
    let info = b.open_session(&study_id, TrackPolicy::new(Track::B, 1000)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for call_id in 1..=300u64 {
        let (tool, args) = fuzz_call(&mut rng, &["T1", "T1c", "T2", "FLAIR"]);
        let before = b.state(&info.session_id).unwrap().step_counter;
        let r = b.invoke(&ToolCall {
            session_id: info.session_id.clone(),
            tool: tool.clone(),
            args,
            call_id,
        });
        let after = b.state(&info.session_id).unwrap().step_counter;
        let mutating = !READ_ONLY.contains(&tool.as_str());
        assert_eq!(after - before, u64::from(r.status == Status::Ok && mutating), "{tool}");
    }
    // a skipped call id is fine, a repeated one is not
    let r = b.invoke(&ToolCall {
        session_id: info.session_id.clone(),
        tool: "list_series".into(),
        args: serde_json::json!({}),
        call_id: 300,
    });
    assert_eq!(r.status, Status::BadArgs);
}
