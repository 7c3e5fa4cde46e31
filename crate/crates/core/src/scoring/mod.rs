//! Answer scoring and per-cell aggregation.
//!
//! A cell is one (module, track, agent, answer protocol) combination. Every
//! case keeps its full task denominator: unanswered tasks and options
//! outside a task's list count as incorrect.

mod report;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bridge::Track;
use crate::runtime::{AnswerProtocol, EpisodeResult};
use crate::study::{GroundTruth, ModuleKind, TaskSpec, CHEST_TASKS, TASK_DIAGNOSIS};

pub use report::{
    format_cell, format_rate, report_csv, report_file_name, tool_use_table, viewer_only_table, Table,
    REPORT_CSV_COLUMNS,
};

pub const SCORE_FORMAT: &str = "score-report/1";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoreError {
    #[error("answer names unknown task '{0}'")]
    UnknownTask(String),
    #[error("no results to aggregate")]
    EmptyInput,
    #[error("results mix modules: {0}")]
    MixedModules(String),
    #[error("results mix tracks, agents or answer protocols: {0}")]
    MixedCells(String),
    #[error("truth has no answer for task '{0}'")]
    MissingTruth(String),
    #[error("judge unavailable: {0}")]
    JudgeUnavailable(String),
}

/// Open-ended answer judge: `(answer, canonical, question) -> correct`.
pub trait Judge: Send + Sync {
    fn judge_id(&self) -> String;
    fn judge(&self, answer: &str, canonical: &str, question: &str) -> Result<bool, ScoreError>;
}

/// Lowercase, strip punctuation, collapse whitespace, then compare exactly.
#[derive(Debug, Clone, Copy, Default)]
pub struct NormalizingJudge;

pub fn normalize_answer(s: &str) -> String {
    let kept: String = s
        .chars()
        .map(|c| if c.is_ascii_punctuation() { ' ' } else { c })
        .flat_map(char::to_lowercase)
        .collect();
    kept.split_whitespace().collect::<Vec<_>>().join(" ")
}

impl Judge for NormalizingJudge {
    fn judge_id(&self) -> String {
        "normalized-exact".into()
    }

    fn judge(&self, answer: &str, canonical: &str, _question: &str) -> Result<bool, ScoreError> {
        let a = normalize_answer(answer);
        Ok(!a.is_empty() && a == normalize_answer(canonical))
    }
}

pub fn judge_open(answer: &str, canonical: &str, question: &str, judge: &dyn Judge) -> Result<bool, ScoreError> {
    judge.judge(answer, canonical, question)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskScores {
    pub correct: BTreeMap<String, bool>,
    pub warnings: Vec<String>,
}

fn check_known(answers: &BTreeMap<String, Option<String>>, tasks: &[TaskSpec]) -> Result<(), ScoreError> {
    match answers.keys().find(|k| !tasks.iter().any(|t| &&t.task_id == k)) {
        Some(k) => Err(ScoreError::UnknownTask(k.clone())),
        None => Ok(()),
    }
}

fn truth_for<'a>(truth: &'a GroundTruth, task_id: &str) -> Result<&'a crate::study::TruthAnswer, ScoreError> {
    truth
        .answers
        .get(task_id)
        .ok_or_else(|| ScoreError::MissingTruth(task_id.to_string()))
}

/// Exact option-id match per task.
pub fn score_mcq(
    answers: &BTreeMap<String, Option<String>>,
    tasks: &[TaskSpec],
    truth: &GroundTruth,
) -> Result<TaskScores, ScoreError> {
    check_known(answers, tasks)?;
    let mut scores = TaskScores {
        correct: BTreeMap::new(),
        warnings: Vec::new(),
    };
    for task in tasks {
        let expected = truth_for(truth, &task.task_id)?;
        let ok = match answers.get(&task.task_id).and_then(Option::as_deref) {
            None => false,
            Some(given) if !task.has_option(given) => {
                scores
                    .warnings
                    .push(format!("task '{}': '{given}' is not one of its options", task.task_id));
                false
            }
            Some(given) => expected.option.as_deref() == Some(given),
        };
        scores.correct.insert(task.task_id.clone(), ok);
    }
    Ok(scores)
}

/// Judge free-text answers against each task's canonical text.
pub fn score_open(
    answers: &BTreeMap<String, Option<String>>,
    tasks: &[TaskSpec],
    truth: &GroundTruth,
    judge: &dyn Judge,
) -> Result<TaskScores, ScoreError> {
    check_known(answers, tasks)?;
    let mut correct = BTreeMap::new();
    for task in tasks {
        let expected = truth_for(truth, &task.task_id)?;
        let ok = match answers.get(&task.task_id).and_then(Option::as_deref) {
            None => false,
            Some(given) => judge.judge(given, &expected.text, &task.question)?,
        };
        correct.insert(task.task_id.clone(), ok);
    }
    Ok(TaskScores {
        correct,
        warnings: Vec::new(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseScore {
    pub episode_id: String,
    pub study_id: String,
    pub tasks: BTreeMap<String, bool>,
    /// All tasks correct.
    pub case_correct: bool,
    pub tool_calls: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Score one finished episode; the judge is consulted only under the
/// open-ended protocol.
pub fn score_episode(
    result: &EpisodeResult,
    tasks: &[TaskSpec],
    truth: &GroundTruth,
    judge: &dyn Judge,
) -> Result<CaseScore, ScoreError> {
    let scores = match result.answer_protocol {
        AnswerProtocol::Mcq => score_mcq(&result.final_answers, tasks, truth)?,
        AnswerProtocol::Open => score_open(&result.final_answers, tasks, truth, judge)?,
    };
    Ok(CaseScore {
        episode_id: result.episode_id.clone(),
        study_id: result.study_id.clone(),
        case_correct: !scores.correct.is_empty() && scores.correct.values().all(|&c| c),
        tasks: scores.correct,
        tool_calls: result.tool_call_count,
        warnings: scores.warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub module: ModuleKind,
    pub track: Track,
    pub agent_id: String,
    pub answer_protocol: AnswerProtocol,
    /// Judge identity; present under the open-ended protocol.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge: Option<String>,
    pub n_cases: usize,
    /// Case-level accuracy (brain) or case-exact accuracy (chest).
    pub accuracy: f64,
    /// Correct questions over all questions; equals `accuracy` for
    /// single-task modules.
    pub question_level_accuracy: f64,
    pub per_task: BTreeMap<String, f64>,
    pub avg_tool_calls: f64,
}

impl ScoreReport {
    /// Task ids in display order.
    pub fn task_order(&self) -> Vec<String> {
        let canonical: Vec<&str> = match self.module {
            ModuleKind::Brain => vec![TASK_DIAGNOSIS],
            ModuleKind::Chest => CHEST_TASKS.to_vec(),
        };
        let mut order: Vec<String> = canonical
            .iter()
            .filter(|t| self.per_task.contains_key(**t))
            .map(|t| t.to_string())
            .collect();
        order.extend(
            self.per_task
                .keys()
                .filter(|k| !canonical.contains(&k.as_str()))
                .cloned(),
        );
        order
    }
}

/// Aggregate one cell. Counts are integers until the final division, so
/// the report does not depend on input order.
pub fn aggregate(results: &[(EpisodeResult, CaseScore)], judge: Option<&dyn Judge>) -> Result<ScoreReport, ScoreError> {
    let (first, _) = results.first().ok_or(ScoreError::EmptyInput)?;
    let modules: BTreeSet<ModuleKind> = results.iter().map(|(r, _)| r.module).collect();
    if modules.len() > 1 {
        return Err(ScoreError::MixedModules(
            modules.iter().map(|m| m.as_str()).collect::<Vec<_>>().join(", "),
        ));
    }
    let cells: BTreeSet<(String, String, String)> = results
        .iter()
        .map(|(r, _)| (r.track.to_string(), r.agent_id.clone(), r.answer_protocol.to_string()))
        .collect();
    if cells.len() > 1 {
        return Err(ScoreError::MixedCells(
            cells
                .iter()
                .map(|(t, a, p)| format!("{t}/{a}/{p}"))
                .collect::<Vec<_>>()
                .join(", "),
        ));
    }
    let n = results.len();
    let mut cases_correct = 0usize;
    let mut questions = 0usize;
    let mut questions_correct = 0usize;
    let mut calls = 0u64;
    let mut per_task: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for (_, score) in results {
        cases_correct += usize::from(score.case_correct);
        calls += score.tool_calls;
        for (task, &ok) in &score.tasks {
            questions += 1;
            questions_correct += usize::from(ok);
            let entry = per_task.entry(task.clone()).or_default();
            entry.0 += usize::from(ok);
            entry.1 += 1;
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(ScoreReport {
        module: first.module,
        track: first.track,
        agent_id: first.agent_id.clone(),
        answer_protocol: first.answer_protocol,
        judge: match first.answer_protocol {
            AnswerProtocol::Open => judge.map(|j| j.judge_id()),
            AnswerProtocol::Mcq => None,
        },
        n_cases: n,
        accuracy: ratio(cases_correct, n),
        question_level_accuracy: ratio(questions_correct, questions),
        per_task: per_task.into_iter().map(|(k, (c, t))| (k, ratio(c, t))).collect(),
        avg_tool_calls: calls as f64 / n as f64,
    })
}

/// A scored cell as written by `score`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreFile {
    pub format: String,
    pub report: ScoreReport,
    /// Sorted by episode id.
    pub cases: Vec<CaseScore>,
}

impl ScoreFile {
    pub fn new(report: ScoreReport, mut cases: Vec<CaseScore>) -> Self {
        cases.sort_by(|a, b| a.episode_id.cmp(&b.episode_id));
        Self {
            format: SCORE_FORMAT.into(),
            report,
            cases,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::Termination;
    use crate::study::TruthAnswer;
    use crate::synth::{chest, gen_study_on_grid};

    fn result(module: ModuleKind, answers: &[(&str, Option<&str>)], calls: u64) -> EpisodeResult {
        EpisodeResult {
            episode_id: format!("ep-{calls}"),
            study_id: "s".into(),
            module,
            track: Track::A,
            answer_protocol: AnswerProtocol::Mcq,
            agent_id: "a".into(),
            final_answers: answers
                .iter()
                .map(|(k, v)| (k.to_string(), v.map(str::to_string)))
                .collect(),
            tool_call_count: calls,
            termination: Termination::Answered,
            trace_path: None,
        }
    }

    fn case(tasks: &[(&str, bool)], calls: u64) -> CaseScore {
        CaseScore {
            episode_id: format!("ep-{calls}"),
            study_id: "s".into(),
            tasks: tasks.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            case_correct: tasks.iter().all(|(_, v)| *v),
            tool_calls: calls,
            warnings: vec![],
        }
    }

    #[test]
    fn normalizing_judge_examples() {
        let j = NormalizingJudge;
        assert!(j.judge("Adenocarcinoma.", "adenocarcinoma", "").unwrap());
        assert!(j
            .judge("  Squamous   cell\tcarcinoma ", "squamous cell carcinoma", "")
            .unwrap());
        assert!(!j.judge("unknown", "adenocarcinoma", "").unwrap());
        assert!(!j.judge("", "adenocarcinoma", "").unwrap());
        assert!(!j.judge("...", "", "").unwrap());
    }

    #[test]
    fn mcq_scoring_policies() {
        let study = gen_study_on_grid(3, ModuleKind::Chest, 0, [32, 32, 32]);
        let truth = study.truth.clone().unwrap();
        let mut answers: BTreeMap<String, Option<String>> = truth
            .answers
            .iter()
            .map(|(k, v)| (k.clone(), v.option.clone()))
            .collect();
        let all = score_mcq(&answers, &study.tasks, &truth).unwrap();
        assert!(all.correct.values().all(|&c| c));

        answers.insert("location".into(), None);
        answers.insert("grade".into(), Some("Z".into()));
        let some = score_mcq(&answers, &study.tasks, &truth).unwrap();
        assert!(!some.correct["location"] && !some.correct["grade"]);
        assert_eq!(some.warnings.len(), 1);
        assert!(some.correct["t_stage"]);

        answers.remove("n_stage");
        assert!(!score_mcq(&answers, &study.tasks, &truth).unwrap().correct["n_stage"]);

        answers.insert("extra".into(), Some("A".into()));
        assert_eq!(
            score_mcq(&answers, &study.tasks, &truth),
            Err(ScoreError::UnknownTask("extra".into()))
        );
    }

    #[test]
    fn open_scoring_uses_canonical_text() {
        let study = gen_study_on_grid(3, ModuleKind::Chest, 1, [32, 32, 32]);
        let mut truth = study.truth.clone().unwrap();
        truth.answers.insert(
            "histology".into(),
            TruthAnswer {
                option: Some("A".into()),
                text: "Adenocarcinoma".into(),
            },
        );
        let answers = BTreeMap::from([("histology".to_string(), Some("adenocarcinoma.".to_string()))]);
        let s = score_open(&answers, &study.tasks, &truth, &NormalizingJudge).unwrap();
        assert!(s.correct["histology"]);
        assert!(!s.correct["location"]);
        assert_eq!(chest::LOBES.len(), 5);
    }

    #[test]
    fn chest_fixture_five_of_five_and_three_of_five() {
        let tasks = CHEST_TASKS;
        let full: Vec<(&str, bool)> = tasks.iter().map(|t| (*t, true)).collect();
        let partial: Vec<(&str, bool)> = tasks.iter().enumerate().map(|(i, t)| (*t, i < 3)).collect();
        let items = vec![
            (result(ModuleKind::Chest, &[], 4), case(&full, 4)),
            (result(ModuleKind::Chest, &[], 7), case(&partial, 7)),
        ];
        let r = aggregate(&items, None).unwrap();
        assert_eq!(r.accuracy, 0.5);
        assert_eq!(r.question_level_accuracy, 0.8);
        assert_eq!(r.avg_tool_calls, 5.5);
        assert_eq!(r.per_task["location"], 1.0);
        assert_eq!(r.per_task["grade"], 0.5);
    }

    #[test]
    fn aggregate_errors() {
        assert_eq!(aggregate(&[], None), Err(ScoreError::EmptyInput));
        let mixed = vec![
            (result(ModuleKind::Chest, &[], 1), case(&[("location", true)], 1)),
            (result(ModuleKind::Brain, &[], 1), case(&[("diagnosis", true)], 1)),
        ];
        assert!(matches!(aggregate(&mixed, None), Err(ScoreError::MixedModules(_))));
        let mut other = result(ModuleKind::Brain, &[], 1);
        other.track = Track::B;
        let cells = vec![
            (result(ModuleKind::Brain, &[], 1), case(&[("diagnosis", true)], 1)),
            (other, case(&[("diagnosis", true)], 1)),
        ];
        assert!(matches!(aggregate(&cells, None), Err(ScoreError::MixedCells(_))));
    }

    #[test]
    fn brain_all_correct_is_one() {
        let items: Vec<_> = (0..4)
            .map(|i| (result(ModuleKind::Brain, &[], i), case(&[("diagnosis", true)], i)))
            .collect();
        let r = aggregate(&items, None).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.question_level_accuracy, 1.0);
        assert_eq!(r.avg_tool_calls, 1.5);
    }

    #[test]
    fn episode_scoring_marks_unanswered_incorrect() {
        let study = gen_study_on_grid(3, ModuleKind::Brain, 2, [32, 32, 32]);
        let truth = study.truth.clone().unwrap();
        let r = result(ModuleKind::Brain, &[("diagnosis", None)], 0);
        let s = score_episode(&r, &study.tasks, &truth, &NormalizingJudge).unwrap();
        assert!(!s.case_correct);
        let right = truth.answers["diagnosis"].option.as_deref();
        let r = result(ModuleKind::Brain, &[("diagnosis", right)], 0);
        assert!(
            score_episode(&r, &study.tasks, &truth, &NormalizingJudge)
                .unwrap()
                .case_correct
        );
    }
}
