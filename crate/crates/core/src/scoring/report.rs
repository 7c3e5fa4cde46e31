//! Table rendering. Accuracies carry two decimals and average tool calls
//! one; text and CSV forms share the same cell strings.

use std::collections::BTreeSet;

use super::ScoreReport;
use crate::bridge::Track;
use crate::runtime::AnswerProtocol;
use crate::study::{ModuleKind, CHEST_TASKS};

pub fn format_rate(x: f64) -> String {
    format!("{x:.2}")
}

/// `accuracy (avg calls)`.
pub fn format_cell(accuracy: f64, avg_tool_calls: f64) -> String {
    format!("{accuracy:.2} ({avg_tool_calls:.1})")
}

const MISSING: &str = "-";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub title: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn to_text(&self) -> String {
        let widths: Vec<usize> = (0..self.header.len())
            .map(|c| {
                std::iter::once(&self.header)
                    .chain(&self.rows)
                    .map(|r| r[c].chars().count())
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let line = |cells: &[String]| {
            cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        };
        let mut out = format!("{}\n{}\n", self.title, line(&self.header));
        out.push_str(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&line(row));
            out.push('\n');
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory csv");
        for row in &self.rows {
            w.write_record(row).expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 cells")
    }
}

const TASK_LABELS: [(&str, &str); 5] = [
    ("location", "Tumor Location"),
    ("t_stage", "T Stage"),
    ("n_stage", "N Stage"),
    ("histology", "Histology"),
    ("grade", "Grade"),
];

fn find<'a>(
    reports: &'a [ScoreReport],
    module: ModuleKind,
    track: Track,
    agent: &str,
    protocol: AnswerProtocol,
) -> Option<&'a ScoreReport> {
    reports
        .iter()
        .find(|r| r.module == module && r.track == track && r.agent_id == agent && r.answer_protocol == protocol)
}

/// Track A grid: one row per (protocol, agent) with brain and chest cells
/// and the chest per-task accuracies.
pub fn viewer_only_table(reports: &[ScoreReport]) -> Option<Table> {
    let rows_keys: BTreeSet<(AnswerProtocol, &str)> = reports
        .iter()
        .filter(|r| r.track == Track::A)
        .map(|r| (r.answer_protocol, r.agent_id.as_str()))
        .collect();
    if rows_keys.is_empty() {
        return None;
    }
    let mut header: Vec<String> = ["Protocol", "Agent", "Brain", "Chest Overall"]
        .map(String::from)
        .to_vec();
    header.extend(TASK_LABELS.iter().map(|(_, l)| l.to_string()));
    let rows = rows_keys
        .into_iter()
        .map(|(protocol, agent)| {
            let brain = find(reports, ModuleKind::Brain, Track::A, agent, protocol);
            let chest = find(reports, ModuleKind::Chest, Track::A, agent, protocol);
            let mut row = vec![
                protocol.to_string(),
                agent.to_string(),
                brain.map_or(MISSING.into(), |r| format_cell(r.accuracy, r.avg_tool_calls)),
                chest.map_or(MISSING.into(), |r| format_cell(r.accuracy, r.avg_tool_calls)),
            ];
            row.extend(TASK_LABELS.iter().map(|(task, _)| {
                chest
                    .and_then(|r| r.per_task.get(*task))
                    .map_or(MISSING.into(), |&a| format_rate(a))
            }));
            row
        })
        .collect();
    Some(Table {
        title: "Viewer-only track: accuracy (avg tool calls)".into(),
        header,
        rows,
    })
}

/// Tool-use ablation: per backbone, one row for the viewer-only system
/// (track A) and one with segmentation tools (track B), MCQ accuracy only.
pub fn tool_use_table(reports: &[ScoreReport]) -> Option<Table> {
    let mcq: Vec<&ScoreReport> = reports
        .iter()
        .filter(|r| r.answer_protocol == AnswerProtocol::Mcq)
        .collect();
    let backbones: BTreeSet<&str> = mcq.iter().map(|r| r.agent_id.as_str()).collect();
    let mut rows = Vec::new();
    for backbone in backbones {
        for (track, system) in [(Track::A, "primitive tools"), (Track::B, "+ segmentation tools")] {
            let cell = |module| {
                find(reports, module, track, backbone, AnswerProtocol::Mcq)
                    .map_or(MISSING.into(), |r| format_rate(r.accuracy))
            };
            if mcq.iter().any(|r| r.agent_id == backbone && r.track == track) {
                rows.push(vec![
                    backbone.to_string(),
                    system.to_string(),
                    cell(ModuleKind::Brain),
                    cell(ModuleKind::Chest),
                ]);
            }
        }
    }
    if rows.is_empty() {
        return None;
    }
    Some(Table {
        title: "Tool-use ablation: MCQ accuracy".into(),
        header: ["Backbone", "System", "Brain (MCQ)", "Chest (MCQ)"]
            .map(String::from)
            .to_vec(),
        rows,
    })
}

pub const REPORT_CSV_COLUMNS: [&str; 14] = [
    "module",
    "track",
    "agent",
    "protocol",
    "judge",
    "n_cases",
    "accuracy",
    "question_level_accuracy",
    "avg_tool_calls",
    "acc_location",
    "acc_t_stage",
    "acc_n_stage",
    "acc_histology",
    "acc_grade",
];

/// One-row CSV for a single cell; per-task columns are empty for brain.
pub fn report_csv(report: &ScoreReport) -> String {
    let mut row = vec![
        report.module.to_string(),
        report.track.to_string(),
        report.agent_id.clone(),
        report.answer_protocol.to_string(),
        report.judge.clone().unwrap_or_default(),
        report.n_cases.to_string(),
        format_rate(report.accuracy),
        format_rate(report.question_level_accuracy),
        format!("{:.1}", report.avg_tool_calls),
    ];
    row.extend(
        CHEST_TASKS
            .iter()
            .map(|t| report.per_task.get(*t).map(|&a| format_rate(a)).unwrap_or_default()),
    );
    Table {
        title: String::new(),
        header: REPORT_CSV_COLUMNS.map(String::from).to_vec(),
        rows: vec![row],
    }
    .to_csv()
}

/// `<module>_<track>_<agent>.report.csv` with the agent id made file-safe.
pub fn report_file_name(report: &ScoreReport) -> String {
    let agent: String = report
        .agent_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "-.".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{}_{}_{}.report.csv", report.module, report.track, agent)
}
