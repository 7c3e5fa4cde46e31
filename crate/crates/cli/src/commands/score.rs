use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use studybench_core::bridge::StudyStore;
use studybench_core::runtime::{AnswerProtocol, EpisodeResult};
use studybench_core::scoring::{
    aggregate, report_csv, report_file_name, score_episode, tool_use_table, viewer_only_table, NormalizingJudge,
    ScoreError, ScoreFile, ScoreReport, Table,
};
use studybench_core::synth::load_suite;

use crate::{collect_files, write_file, CliError, EXIT_EMPTY, EXIT_INTERNAL};

pub const SCORE_EXTENSION: &str = ".score.json";

fn empty(what: &str) -> CliError {
    CliError::new(EXIT_EMPTY, format!("EmptyInput: no {what} found"))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::io(path, e))
}

/// File stem of a cell; open-ended cells get an `.open` marker so they do
/// not collide with the MCQ cell of the same agent.
fn cell_stem(report: &ScoreReport) -> String {
    let base = report_file_name(report);
    let stem = base.trim_end_matches(".report.csv");
    match report.answer_protocol {
        AnswerProtocol::Mcq => stem.to_string(),
        AnswerProtocol::Open => format!("{stem}.open"),
    }
}

fn tables(reports: &[ScoreReport]) -> Vec<Table> {
    [viewer_only_table(reports), tool_use_table(reports)]
        .into_iter()
        .flatten()
        .collect()
}

/// Score every result file under `inputs` against the suite's truth, one
/// report per (module, track, agent, protocol) cell. Writes
/// `<cell>.score.json` and `<cell>.report.csv` into `out`.
pub fn cmd_score(suite: &Path, inputs: &[PathBuf], out: &Path) -> Result<Vec<ScoreReport>, CliError> {
    let files = collect_files(inputs, crate::commands::run::RESULT_EXTENSION)?;
    if files.is_empty() {
        return Err(empty("episode results"));
    }
    let index = load_suite(suite).map_err(|e| CliError::input(e.to_string()))?;
    let store = StudyStore::from_suite(index);
    let judge = NormalizingJudge;
    let mut cells: BTreeMap<(String, String, String, String), Vec<_>> = BTreeMap::new();
    for f in &files {
        let result: EpisodeResult = read_json(f)?;
        let study = store.get(&result.study_id).map_err(CliError::input)?;
        let truth = study
            .truth
            .as_ref()
            .ok_or_else(|| CliError::input(format!("study {} has no sealed truth", result.study_id)))?;
        let score = score_episode(&result, &study.tasks, truth, &judge)
            .map_err(|e| CliError::input(format!("{}: {e}", f.display())))?;
        for w in &score.warnings {
            eprintln!("warning: {}: {w}", result.episode_id);
        }
        let key = (
            result.module.to_string(),
            result.track.to_string(),
            result.agent_id.clone(),
            result.answer_protocol.to_string(),
        );
        cells.entry(key).or_default().push((result, score));
    }
    let mut reports = Vec::new();
    for items in cells.values() {
        let report = aggregate(items, Some(&judge)).map_err(|e| match e {
            ScoreError::EmptyInput => empty("episode results"),
            other => CliError::input(other.to_string()),
        })?;
        let stem = cell_stem(&report);
        let file = ScoreFile::new(report.clone(), items.iter().map(|(_, s)| s.clone()).collect());
        let json = serde_json::to_string_pretty(&file).map_err(|e| CliError::new(EXIT_INTERNAL, e.to_string()))?;
        write_file(&out.join(format!("{stem}{SCORE_EXTENSION}")), json + "\n")?;
        write_file(&out.join(format!("{stem}.report.csv")), report_csv(&report))?;
        reports.push(report);
    }
    for t in tables(&reports) {
        println!("{}", t.to_text());
    }
    Ok(reports)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Csv,
}

/// Render tables from score files and print them. With `out`, text goes to
/// `report.txt` and CSV tables to `viewer_only.csv` and `tool_use.csv`.
pub fn cmd_report(inputs: &[PathBuf], format: ReportFormat, out: Option<&Path>) -> Result<String, CliError> {
    let files = collect_files(inputs, SCORE_EXTENSION)?;
    if files.is_empty() {
        return Err(empty("score files"));
    }
    let mut reports: Vec<ScoreReport> = Vec::new();
    for f in &files {
        let file: ScoreFile = read_json(f)?;
        reports.push(file.report);
    }
    let mut rendered = String::new();
    let names = [
        ("viewer_only.csv", viewer_only_table(&reports)),
        ("tool_use.csv", tool_use_table(&reports)),
    ];
    for (name, table) in names {
        let Some(table) = table else { continue };
        match format {
            ReportFormat::Text => rendered.push_str(&(table.to_text() + "\n")),
            ReportFormat::Csv => {
                let csv = table.to_csv();
                if let Some(dir) = out {
                    write_file(&dir.join(name), &csv)?;
                }
                rendered.push_str(&format!("# {}\n{csv}\n", table.title));
            }
        }
    }
    if let (Some(dir), ReportFormat::Text) = (out, format) {
        write_file(&dir.join("report.txt"), &rendered)?;
    }
    print!("{rendered}");
    Ok(rendered)
}
