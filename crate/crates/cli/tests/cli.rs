//! The binary end to end: gen, run, replay, score and report, plus exit codes.

use std::path::Path;
use std::process::{Command, Output};

fn studybench(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_studybench"))
        .args(args)
        .current_dir(cwd)
        .env_remove("STUDYBENCH_SUITE")
        .env_remove("STUDYBENCH_OUT")
        .env_remove("STUDYBENCH_BRIDGE_URL")
        .env_remove("STUDYBENCH_PARALLELISM")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

#[test]
fn pipeline_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let gen = studybench(
        &[
            "gen", "--seed", "3", "--module", "brain", "--cases", "4", "--grid", "24", "--out", "suite",
        ],
        d,
    );
    assert_eq!(code(&gen), 0, "{}", String::from_utf8_lossy(&gen.stderr));

    let run = studybench(
        &[
            "run",
            "--suite",
            "suite",
            "--out",
            "run",
            "--agent",
            "oracle-viewer",
            "--track",
            "a",
            "--parallelism",
            "2",
        ],
        d,
    );
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    assert!(d.join("run/run.json").is_file());

    let replay = studybench(&["replay", "--suite", "suite", "run/traces"], d);
    assert_eq!(code(&replay), 0, "{}", String::from_utf8_lossy(&replay.stdout));
    let stdout = String::from_utf8_lossy(&replay.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS ")).count(), 4);

    let score = studybench(&["score", "--suite", "suite", "--out", "scores", "run/results"], d);
    assert_eq!(code(&score), 0, "{}", String::from_utf8_lossy(&score.stderr));
    let report = studybench(&["report", "scores", "--format", "csv"], d);
    assert_eq!(code(&report), 0);
    assert!(String::from_utf8_lossy(&report.stdout).contains("1.00 (6.0)"));
}

#[test]
fn tampered_trace_exits_with_replay_failure() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(
        code(&studybench(
            &["gen", "--seed", "4", "--module", "chest", "--cases", "1", "--grid", "24", "--out", "s"],
            d
        )),
        0
    );
    assert_eq!(
        code(&studybench(
            &["run", "--suite", "s", "--out", "r", "--agent", "oracle-viewer"],
            d
        )),
        0
    );
    let traces: Vec<_> = std::fs::read_dir(d.join("r/traces"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .collect();
    let text = std::fs::read_to_string(&traces[0]).unwrap();
    std::fs::write(
        &traces[0],
        text.replacen("\"status\":\"OK\"", "\"status\":\"E_BAD_ARGS\"", 1),
    )
    .unwrap();
    let replay = studybench(&["replay", "--suite", "s", "r/traces"], d);
    assert_eq!(code(&replay), 4);
    assert!(String::from_utf8_lossy(&replay.stdout).starts_with("FAIL "));
}

#[test]
fn error_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::create_dir(d.join("empty")).unwrap();
    assert_eq!(
        code(&studybench(&["score", "--suite", "nowhere", "--out", "x", "empty"], d)),
        5
    );
    assert_eq!(code(&studybench(&["report", "empty"], d)), 5);
    assert_eq!(code(&studybench(&["run", "--suite", "nowhere", "--out", "x"], d)), 3);
    assert_eq!(code(&studybench(&["run", "--suite", "nowhere"], d)), 2);
    assert_eq!(
        code(&studybench(
            &["gen", "--seed", "1", "--module", "liver", "--cases", "1", "--out", "g"],
            d
        )),
        2
    );
    assert_eq!(
        code(&studybench(
            &["gen", "--seed", "1", "--module", "brain", "--cases", "1", "--grid", "24"],
            d
        )),
        2
    );
    assert_eq!(
        code(&studybench(
            &["gen", "--seed", "1", "--module", "brain", "--cases", "1", "--grid", "24", "--out", "s"],
            d
        )),
        0
    );
    assert_eq!(
        code(&studybench(
            &["run", "--suite", "s", "--out", "r", "--bridge", "http://127.0.0.1:9"],
            d
        )),
        6
    );
}
