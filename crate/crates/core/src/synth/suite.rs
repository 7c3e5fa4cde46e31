use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{gen_study_on_grid, stream_rng, GenError, GenSpec};
use crate::canonical::{canonical_json, sha256_hex};
use crate::study::{load_study_package, write_study_package, StudyPackage};
use rand::Rng;

pub const SUITE_FILE: &str = "suite.json";
pub const SUITE_FORMAT: &str = "study-suite/1";
pub const DEFAULT_TOOL_BUDGET: u32 = 40;

/// Track-independent part of an episode, as stored in a suite.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub episode_id: String,
    pub study_id: String,
    pub tool_budget: u32,
    pub rng_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteStudy {
    pub study_id: String,
    /// Package directory relative to the suite root.
    pub path: String,
    pub manifest_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteManifest {
    pub format: String,
    pub generator: GenSpec,
    pub studies: Vec<SuiteStudy>,
    pub episodes: Vec<EpisodeSpec>,
}

/// An in-memory suite.
#[derive(Debug, Clone)]
pub struct Suite {
    pub spec: GenSpec,
    pub studies: Vec<StudyPackage>,
    pub episodes: Vec<EpisodeSpec>,
}

fn episode_for(spec: &GenSpec, study_id: &str) -> EpisodeSpec {
    EpisodeSpec {
        episode_id: format!("ep-{study_id}"),
        study_id: study_id.to_string(),
        tool_budget: DEFAULT_TOOL_BUDGET,
        rng_seed: stream_rng(spec.seed, &format!("{study_id}/episode")).random(),
    }
}

pub fn gen_suite(spec: &GenSpec) -> Result<Suite, GenError> {
    spec.validate()?;
    let studies: Vec<StudyPackage> = (0..spec.n_cases)
        .into_par_iter()
        .map(|i| gen_study_on_grid(spec.seed, spec.module, i, spec.grid))
        .collect();
    let episodes = studies.iter().map(|s| episode_for(spec, &s.study_id)).collect();
    Ok(Suite {
        spec: spec.clone(),
        studies,
        episodes,
    })
}

fn study_path(study_id: &str) -> String {
    format!("studies/{study_id}")
}

/// Generate and write a suite case by case; returns the suite digest
/// (SHA-256 of the canonical `suite.json`).
pub fn write_suite(spec: &GenSpec, dir: &Path) -> Result<String, GenError> {
    spec.validate()?;
    let entries: Vec<SuiteStudy> = (0..spec.n_cases)
        .into_par_iter()
        .map(|i| {
            let package = gen_study_on_grid(spec.seed, spec.module, i, spec.grid);
            let path = study_path(&package.study_id);
            let manifest_sha256 = write_study_package(&package, &dir.join(&path))?;
            Ok(SuiteStudy {
                study_id: package.study_id,
                path,
                manifest_sha256,
            })
        })
        .collect::<Result<_, GenError>>()?;
    let manifest = SuiteManifest {
        format: SUITE_FORMAT.to_string(),
        generator: spec.clone(),
        episodes: entries.iter().map(|s| episode_for(spec, &s.study_id)).collect(),
        studies: entries,
    };
    let text = canonical_json(&manifest);
    let path = dir.join(SUITE_FILE);
    fs::write(&path, &text).map_err(|source| GenError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(sha256_hex(text))
}

/// A suite on disk.
#[derive(Debug, Clone)]
pub struct SuiteIndex {
    pub root: PathBuf,
    pub manifest: SuiteManifest,
    pub digest: String,
}

pub fn load_suite(dir: &Path) -> Result<SuiteIndex, GenError> {
    let path = dir.join(SUITE_FILE);
    let bytes = fs::read(&path).map_err(|source| GenError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let manifest: SuiteManifest =
        serde_json::from_slice(&bytes).map_err(|e| GenError::Malformed(format!("{SUITE_FILE}: {e}")))?;
    if manifest.format != SUITE_FORMAT {
        return Err(GenError::Malformed(format!(
            "unsupported suite format '{}'",
            manifest.format
        )));
    }
    for ep in &manifest.episodes {
        if !manifest.studies.iter().any(|s| s.study_id == ep.study_id) {
            return Err(GenError::Malformed(format!(
                "episode {} references unknown study {}",
                ep.episode_id, ep.study_id
            )));
        }
    }
    Ok(SuiteIndex {
        root: dir.to_path_buf(),
        digest: sha256_hex(&bytes),
        manifest,
    })
}

impl SuiteIndex {
    pub fn study_dir(&self, study_id: &str) -> Option<PathBuf> {
        self.manifest
            .studies
            .iter()
            .find(|s| s.study_id == study_id)
            .map(|s| self.root.join(&s.path))
    }

    pub fn load_study(&self, study_id: &str) -> Result<StudyPackage, GenError> {
        let dir = self
            .study_dir(study_id)
            .ok_or_else(|| GenError::Malformed(format!("suite has no study {study_id}")))?;
        Ok(load_study_package(&dir)?)
    }

    pub fn episodes(&self) -> &[EpisodeSpec] {
        &self.manifest.episodes
    }
}
