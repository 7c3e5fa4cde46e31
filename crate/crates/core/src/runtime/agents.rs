//! Scripted agents: a chance baseline, truth-reading oracles, and a
//! replayable fixed script for tests.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::{json, Value};

use super::{Agent, AgentError, AgentTurn, AnswerProtocol, Observation, OPEN_FALLBACK_ANSWER};
use crate::bridge::{Status, StudyStore};
use crate::study::{
    ModuleKind, Point3, StudyPackage, TASK_GRADE, TASK_HISTOLOGY, TASK_LOCATION, TASK_N_STAGE, TASK_T_STAGE,
};
use crate::synth::chest;
use crate::tools::MaskStats;

/// Read access to sealed studies, for oracle agents only.
pub trait TruthSource: Send + Sync {
    fn study(&self, study_id: &str) -> Option<Arc<StudyPackage>>;
}

impl TruthSource for StudyStore {
    fn study(&self, study_id: &str) -> Option<Arc<StudyPackage>> {
        self.get(study_id).ok()
    }
}

fn episode_rng(agent_seed: u64, episode_seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(agent_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ episode_seed)
}

/// Makes no tool calls; picks each MCQ option uniformly at random.
pub struct RandomAgent {
    seed: u64,
}

impl RandomAgent {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }
}

impl Agent for RandomAgent {
    fn agent_id(&self) -> String {
        format!("random-s{}", self.seed)
    }

    fn next_turn(&mut self, observation: &Observation) -> Result<AgentTurn, AgentError> {
        let Observation::Start {
            tasks,
            rng_seed,
            answer_protocol,
            ..
        } = observation
        else {
            return Err(AgentError::Malformed(
                "random agent only answers the opening observation".into(),
            ));
        };
        let mut rng = episode_rng(self.seed, *rng_seed);
        let answers = tasks
            .iter()
            .map(|t| {
                let answer = match (&t.options, answer_protocol) {
                    (Some(opts), AnswerProtocol::Mcq) => opts.choose(&mut rng).map(|o| o.id.clone()),
                    _ => None,
                };
                (
                    t.task_id.clone(),
                    answer.unwrap_or_else(|| OPEN_FALLBACK_ANSWER.to_string()),
                )
            })
            .collect();
        Ok(AgentTurn::FinalAnswer(answers))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleMode {
    /// Navigate to the finding and answer from the sealed truth.
    Viewer,
    /// Answer chest location, T stage, histology and grade from a
    /// segmentation seeded at the true lesion centroid plus Gaussian noise.
    Tools,
}

/// Truth-reading reference agent.
pub struct OracleAgent {
    mode: OracleMode,
    seed_noise_mm: f64,
    truth: Arc<dyn TruthSource>,
    plan: Vec<(String, Value)>,
    study: Option<Arc<StudyPackage>>,
    protocol: AnswerProtocol,
    segmentation: Option<Result<MaskStats, String>>,
}

impl OracleAgent {
    pub fn new(mode: OracleMode, seed_noise_mm: f64, truth: Arc<dyn TruthSource>) -> Self {
        Self {
            mode,
            seed_noise_mm: seed_noise_mm.max(0.0),
            truth,
            plan: Vec::new(),
            study: None,
            protocol: AnswerProtocol::Mcq,
            segmentation: None,
        }
    }

    fn viewer_plan(study: &StudyPackage) -> Vec<(String, Value)> {
        let truth = study.truth.as_ref().expect("oracle needs sealed truth");
        let (series, center, width) = match study.module {
            ModuleKind::Brain => ("FLAIR", 500.0, 1000.0),
            ModuleKind::Chest => (chest::PET_SERIES, 1000.0, 2000.0),
        };
        let grid = study.grid();
        let slice = match truth.lesions().next() {
            Some(l) => ((l.centroid_mm[2] - grid.origin()[2]) / grid.spacing()[2]).round() as i64,
            None => grid.dims()[2] as i64 / 2,
        };
        vec![
            ("list_series".into(), json!({})),
            ("select_series".into(), json!({ "series_id": series })),
            ("set_window".into(), json!({ "center": center, "width": width })),
            ("set_slice".into(), json!({ "orientation": "AXIAL", "index": slice })),
            ("render".into(), json!({})),
            ("bookmark_view".into(), json!({ "label": "key finding" })),
        ]
    }

    fn tools_plan(&self, study: &StudyPackage, rng_seed: u64) -> Vec<(String, Value)> {
        let truth = study.truth.as_ref().expect("oracle needs sealed truth");
        let centroid = truth.lesions().next().map_or([0.0; 3], |l| l.centroid_mm);
        // unit normals are drawn independently of the noise scale, so runs at
        // different scales share the same random directions
        let mut rng = episode_rng(0x5EED, rng_seed);
        let z: [f64; 3] = [0; 3].map(|_| rng.sample(StandardNormal));
        let seed: Point3 = [0, 1, 2].map(|a| centroid[a] + self.seed_noise_mm * z[a]);
        vec![
            ("select_series".into(), json!({ "series_id": chest::PET_SERIES })),
            (
                "local_threshold_segment".into(),
                json!({
                    "seed_mm": seed,
                    "lo": chest::LESION_FLOOR,
                    "hi": i16::MAX,
                    "max_radius_mm": 100.0,
                }),
            ),
        ]
    }

    fn answer(&self, study: &StudyPackage) -> BTreeMap<String, String> {
        let truth = study.truth.as_ref().expect("oracle needs sealed truth");
        let from_truth = |task_id: &str| {
            let a = &truth.answers[task_id];
            match self.protocol {
                AnswerProtocol::Mcq => a.option.clone().unwrap_or_else(|| a.text.clone()),
                AnswerProtocol::Open => a.text.clone(),
            }
        };
        let mut answers: BTreeMap<String, String> = study
            .tasks
            .iter()
            .map(|t| (t.task_id.clone(), from_truth(&t.task_id)))
            .collect();
        if self.mode == OracleMode::Tools && study.module == ModuleKind::Chest {
            let measured = match &self.segmentation {
                Some(Ok(stats)) => {
                    let (histology, grade) = chest::uptake_bin(stats.mean_intensity);
                    chest::lobe_for_point(stats.centroid_mm).map(|lobe| {
                        [
                            lobe,
                            chest::t_stage_for_diameter(stats.max_diameter_mm),
                            histology,
                            grade,
                        ]
                    })
                }
                _ => None,
            };
            // a failed or misplaced segmentation falls back to the first option
            let picks = measured.unwrap_or([0; 4]);
            for (task, pick) in [TASK_LOCATION, TASK_T_STAGE, TASK_HISTOLOGY, TASK_GRADE]
                .into_iter()
                .zip(picks)
            {
                let text = study
                    .task(task)
                    .and_then(|t| t.options().get(pick))
                    .map(|o| o.text.clone());
                let id = chest::option_id(pick).to_string();
                answers.insert(
                    task.to_string(),
                    match self.protocol {
                        AnswerProtocol::Mcq => id,
                        AnswerProtocol::Open => text.unwrap_or(id),
                    },
                );
            }
            answers.insert(TASK_N_STAGE.into(), from_truth(TASK_N_STAGE));
        }
        answers
    }
}

impl Agent for OracleAgent {
    fn agent_id(&self) -> String {
        match self.mode {
            OracleMode::Viewer => "oracle-viewer".into(),
            OracleMode::Tools => format!("oracle-tools-n{}", self.seed_noise_mm),
        }
    }

    fn next_turn(&mut self, observation: &Observation) -> Result<AgentTurn, AgentError> {
        match observation {
            Observation::Start {
                study_id,
                answer_protocol,
                rng_seed,
                budget_exhausted,
                ..
            } => {
                let study = self
                    .truth
                    .study(study_id)
                    .ok_or_else(|| AgentError::Endpoint(format!("oracle has no truth for {study_id}")))?;
                self.protocol = *answer_protocol;
                self.segmentation = None;
                let mut plan = match (self.mode, study.module) {
                    (OracleMode::Tools, ModuleKind::Chest) => self.tools_plan(&study, *rng_seed),
                    _ => Self::viewer_plan(&study),
                };
                plan.reverse();
                self.plan = if *budget_exhausted { Vec::new() } else { plan };
                self.study = Some(study);
            }
            Observation::ToolResult { tool, result, .. } if tool == "local_threshold_segment" => {
                self.segmentation = Some(if result.status == Status::Ok {
                    serde_json::from_value(result.payload["stats"].clone()).map_err(|e| e.to_string())
                } else {
                    Err(result.status.code().to_string())
                });
            }
            Observation::BudgetExhausted { .. } => self.plan.clear(),
            _ => {}
        }
        let study = self
            .study
            .clone()
            .ok_or_else(|| AgentError::Malformed("oracle has not seen the opening observation".into()))?;
        Ok(match self.plan.pop() {
            Some((tool, args)) => AgentTurn::ToolCall { tool, args },
            None => AgentTurn::FinalAnswer(self.answer(&study)),
        })
    }
}

/// Plays back a fixed list of turns, then reports malformed turns.
pub struct ScriptedAgent {
    id: String,
    turns: std::vec::IntoIter<Result<AgentTurn, AgentError>>,
    pub seen: Vec<Observation>,
}

impl ScriptedAgent {
    pub fn new(id: &str, turns: Vec<Result<AgentTurn, AgentError>>) -> Self {
        Self {
            id: id.to_string(),
            turns: turns.into_iter(),
            seen: Vec::new(),
        }
    }
}

impl Agent for ScriptedAgent {
    fn agent_id(&self) -> String {
        self.id.clone()
    }

    fn next_turn(&mut self, observation: &Observation) -> Result<AgentTurn, AgentError> {
        self.seen.push(observation.clone());
        self.turns
            .next()
            .unwrap_or_else(|| Err(AgentError::Malformed("script exhausted".into())))
    }
}
