//! Study package data model, on-disk format and voxel/world transforms.
//!
//! A study package is a directory holding `manifest.json`, an optional
//! sealed `truth.json`, and one `.mvol` volume per series. All series of a
//! study share one voxel grid.

mod mvol;
mod package;

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use mvol::{decode_mvol, encode_mvol, MVOL_HEADER_LEN, MVOL_MAGIC, MVOL_VERSION};
pub use package::{load_study_package, write_study_package, MANIFEST_FILE, MANIFEST_FORMAT, TRUTH_FILE};

/// World-space point in millimetres.
pub type Point3 = [f64; 3];

/// Voxel index triple `(x, y, z)`.
pub type VoxelIndex = [usize; 3];

pub const TASK_DIAGNOSIS: &str = "diagnosis";
pub const TASK_LOCATION: &str = "location";
pub const TASK_T_STAGE: &str = "t_stage";
pub const TASK_N_STAGE: &str = "n_stage";
pub const TASK_HISTOLOGY: &str = "histology";
pub const TASK_GRADE: &str = "grade";

/// Task ids of a chest package, in manifest order.
pub const CHEST_TASKS: [&str; 5] = [TASK_LOCATION, TASK_T_STAGE, TASK_N_STAGE, TASK_HISTOLOGY, TASK_GRADE];

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("checksum mismatch for {file}: manifest {expected}, content {actual}")]
    ChecksumMismatch {
        file: String,
        expected: String,
        actual: String,
    },
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("voxel index {index:?} out of bounds for dims {dims:?}")]
    OutOfBounds { index: [i64; 3], dims: VoxelIndex },
    #[error("invalid volume: {0}")]
    InvalidVolume(String),
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ModuleKind {
    Brain,
    Chest,
}

impl ModuleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModuleKind::Brain => "brain",
            ModuleKind::Chest => "chest",
        }
    }

    /// Number of tasks every package of this module carries.
    pub fn task_count(self) -> usize {
        match self {
            ModuleKind::Brain => 1,
            ModuleKind::Chest => CHEST_TASKS.len(),
        }
    }
}

impl fmt::Display for ModuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModuleKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "brain" => Ok(ModuleKind::Brain),
            "chest" => Ok(ModuleKind::Chest),
            other => Err(format!("unknown module '{other}' (expected brain or chest)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "MR-T1")]
    MrT1,
    #[serde(rename = "MR-T1c")]
    MrT1c,
    #[serde(rename = "MR-T2")]
    MrT2,
    #[serde(rename = "MR-FLAIR")]
    MrFlair,
    #[serde(rename = "CT")]
    Ct,
    #[serde(rename = "PET")]
    Pet,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeriesMeta {
    pub series_id: String,
    pub modality: Modality,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct McqOption {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "UPPERCASE")]
pub enum AnswerKind {
    Mcq { options: Vec<McqOption> },
    Open,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub question: String,
    pub answer: AnswerKind,
}

impl TaskSpec {
    pub fn options(&self) -> &[McqOption] {
        match &self.answer {
            AnswerKind::Mcq { options } => options,
            AnswerKind::Open => &[],
        }
    }

    pub fn is_mcq(&self) -> bool {
        matches!(self.answer, AnswerKind::Mcq { .. })
    }

    pub fn has_option(&self, id: &str) -> bool {
        self.options().iter().any(|o| o.id == id)
    }
}

/// Canonical answer of one task. `option` is present for MCQ tasks; `text`
/// is the canonical free-text answer used by the open-ended protocol.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthAnswer {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub option: Option<String>,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingKind {
    Lesion,
    NodalFocus,
}

/// Geometry of one generated structure, measured on its voxel mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub kind: FindingKind,
    pub series_id: String,
    pub centroid_mm: Point3,
    pub max_diameter_mm: f64,
    pub voxel_count: u64,
    pub mean_intensity: f64,
}

/// Contents of the sealed `truth.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub study_id: String,
    pub answers: BTreeMap<String, TruthAnswer>,
    pub findings: Vec<Finding>,
}

impl GroundTruth {
    pub fn lesions(&self) -> impl Iterator<Item = &Finding> {
        self.findings.iter().filter(|f| f.kind == FindingKind::Lesion)
    }
}

/// A single-channel volume on a regular grid, x-fastest voxel order.
///
/// Geometry is held at `f32` precision (the on-disk precision) so a loaded
/// volume and the volume it was written from are identical.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: VoxelIndex,
    spacing: Point3,
    origin: Point3,
    voxels: Vec<i16>,
}

fn quantize(p: Point3) -> Point3 {
    p.map(|c| c as f32 as f64)
}

impl Volume {
    pub fn new(dims: VoxelIndex, spacing: Point3, origin: Point3, voxels: Vec<i16>) -> Result<Self, StudyError> {
        if dims.iter().any(|&d| d == 0) {
            return Err(StudyError::InvalidVolume(format!("dims must be >= 1, got {dims:?}")));
        }
        let spacing = quantize(spacing);
        if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(StudyError::InvalidVolume(format!(
                "spacing must be > 0, got {spacing:?}"
            )));
        }
        let origin = quantize(origin);
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(StudyError::InvalidVolume("origin must be finite".into()));
        }
        let expected = dims[0]
            .checked_mul(dims[1])
            .and_then(|v| v.checked_mul(dims[2]))
            .ok_or_else(|| StudyError::InvalidVolume("voxel count overflows".into()))?;
        if voxels.len() != expected {
            return Err(StudyError::InvalidVolume(format!(
                "voxel count {} does not match dims {dims:?} ({expected})",
                voxels.len()
            )));
        }
        Ok(Self {
            dims,
            spacing,
            origin,
            voxels,
        })
    }

    /// Volume filled with a single value.
    pub fn filled(dims: VoxelIndex, spacing: Point3, origin: Point3, value: i16) -> Result<Self, StudyError> {
        let n = dims.iter().product();
        Self::new(dims, spacing, origin, vec![value; n])
    }

    pub fn dims(&self) -> VoxelIndex {
        self.dims
    }

    pub fn spacing(&self) -> Point3 {
        self.spacing
    }

    pub fn origin(&self) -> Point3 {
        self.origin
    }

    pub fn voxels(&self) -> &[i16] {
        &self.voxels
    }

    pub fn voxels_mut(&mut self) -> &mut [i16] {
        &mut self.voxels
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    pub fn voxel_volume_mm3(&self) -> f64 {
        self.spacing[0] * self.spacing[1] * self.spacing[2]
    }

    pub fn same_grid(&self, other: &Volume) -> bool {
        self.dims == other.dims && self.spacing == other.spacing && self.origin == other.origin
    }

    #[inline]
    pub fn flat_index(&self, [x, y, z]: VoxelIndex) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn unflatten(&self, flat: usize) -> VoxelIndex {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [flat % nx, (flat / nx) % ny, flat / (nx * ny)]
    }

    #[inline]
    pub fn contains(&self, i: VoxelIndex) -> bool {
        i[0] < self.dims[0] && i[1] < self.dims[1] && i[2] < self.dims[2]
    }

    #[inline]
    pub fn get(&self, i: VoxelIndex) -> i16 {
        self.voxels[self.flat_index(i)]
    }

    /// World position of a voxel centre, without bounds checking.
    #[inline]
    pub fn center_mm(&self, i: VoxelIndex) -> Point3 {
        [
            self.origin[0] + i[0] as f64 * self.spacing[0],
            self.origin[1] + i[1] as f64 * self.spacing[1],
            self.origin[2] + i[2] as f64 * self.spacing[2],
        ]
    }

    /// Nearest voxel to a world point. Ties round half away from zero.
    pub fn world_to_voxel(&self, p: Point3) -> Result<VoxelIndex, StudyError> {
        let mut raw = [0i64; 3];
        for a in 0..3 {
            let r = ((p[a] - self.origin[a]) / self.spacing[a]).round();
            raw[a] = if r.is_finite() {
                r.clamp(i64::MIN as f64, i64::MAX as f64) as i64
            } else {
                i64::MIN
            };
        }
        if (0..3).any(|a| raw[a] < 0 || raw[a] >= self.dims[a] as i64) {
            return Err(StudyError::OutOfBounds {
                index: raw,
                dims: self.dims,
            });
        }
        Ok([raw[0] as usize, raw[1] as usize, raw[2] as usize])
    }

    pub fn voxel_to_world(&self, i: VoxelIndex) -> Result<Point3, StudyError> {
        if !self.contains(i) {
            return Err(StudyError::OutOfBounds {
                index: i.map(|c| c as i64),
                dims: self.dims,
            });
        }
        Ok(self.center_mm(i))
    }

    /// Axis-aligned world extent `(min, max)` of the voxel centres.
    pub fn world_bounds(&self) -> (Point3, Point3) {
        let lo = self.center_mm([0, 0, 0]);
        let hi = self.center_mm([self.dims[0] - 1, self.dims[1] - 1, self.dims[2] - 1]);
        (lo, hi)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub meta: SeriesMeta,
    pub volume: Volume,
}

/// A full study: series, tasks and (when unsealed) the ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyPackage {
    pub study_id: String,
    pub module: ModuleKind,
    pub series: Vec<Series>,
    pub tasks: Vec<TaskSpec>,
    pub truth: Option<GroundTruth>,
    /// File name to SHA-256 digest, as recorded in the manifest.
    pub checksums: BTreeMap<String, String>,
}

impl StudyPackage {
    pub fn series(&self, series_id: &str) -> Option<&Series> {
        self.series.iter().find(|s| s.meta.series_id == series_id)
    }

    pub fn series_metas(&self) -> Vec<SeriesMeta> {
        self.series.iter().map(|s| s.meta.clone()).collect()
    }

    pub fn task(&self, task_id: &str) -> Option<&TaskSpec> {
        self.tasks.iter().find(|t| t.task_id == task_id)
    }

    /// Grid shared by every series.
    pub fn grid(&self) -> &Volume {
        &self.series[0].volume
    }

    /// Check the in-memory invariants that do not depend on files.
    pub fn validate(&self) -> Result<(), StudyError> {
        let bad = |m: String| Err(StudyError::SchemaViolation(m));
        if self.study_id.is_empty() {
            return bad("study_id is empty".into());
        }
        if self.series.is_empty() {
            return bad("study has no series".into());
        }
        let mut seen = std::collections::BTreeSet::new();
        for s in &self.series {
            if s.meta.series_id.is_empty() {
                return bad("series_id is empty".into());
            }
            if !s
                .meta
                .series_id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
            {
                return bad(format!(
                    "series_id '{}' has characters outside [A-Za-z0-9_-]",
                    s.meta.series_id
                ));
            }
            if !seen.insert(s.meta.series_id.as_str()) {
                return bad(format!("duplicate series_id '{}'", s.meta.series_id));
            }
            if !s.volume.same_grid(&self.series[0].volume) {
                return bad(format!("series '{}' does not share the study grid", s.meta.series_id));
            }
        }
        if self.tasks.len() != self.module.task_count() {
            return bad(format!(
                "{} package must carry {} task(s), found {}",
                self.module,
                self.module.task_count(),
                self.tasks.len()
            ));
        }
        if self.module == ModuleKind::Chest {
            let ids: Vec<&str> = self.tasks.iter().map(|t| t.task_id.as_str()).collect();
            if ids != CHEST_TASKS {
                return bad(format!("chest tasks must be {CHEST_TASKS:?}, found {ids:?}"));
            }
        }
        for t in &self.tasks {
            if t.task_id.is_empty() {
                return bad("task_id is empty".into());
            }
            if let AnswerKind::Mcq { options } = &t.answer {
                if options.len() < 2 {
                    return bad(format!("task '{}' has fewer than 2 options", t.task_id));
                }
                let unique: std::collections::BTreeSet<&str> = options.iter().map(|o| o.id.as_str()).collect();
                if unique.len() != options.len() {
                    return bad(format!("task '{}' has duplicate option ids", t.task_id));
                }
            }
        }
        if let Some(truth) = &self.truth {
            if truth.study_id != self.study_id {
                return bad("truth.json belongs to a different study".into());
            }
            for t in &self.tasks {
                let Some(ans) = truth.answers.get(&t.task_id) else {
                    return bad(format!("truth has no answer for task '{}'", t.task_id));
                };
                if ans.text.trim().is_empty() {
                    return bad(format!("canonical text for '{}' is empty", t.task_id));
                }
                match (&t.answer, &ans.option) {
                    (AnswerKind::Mcq { .. }, Some(opt)) if t.has_option(opt) => {}
                    (AnswerKind::Mcq { .. }, _) => {
                        return bad(format!("canonical option for '{}' is not among its options", t.task_id))
                    }
                    (AnswerKind::Open, _) => {}
                }
            }
            if truth.answers.len() != self.tasks.len() {
                return bad("truth answers do not match the task list".into());
            }
        }
        Ok(())
    }
}
