use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    decode_mvol, encode_mvol, GroundTruth, ModuleKind, Series, SeriesMeta, StudyError, StudyPackage, TaskSpec,
};
use crate::canonical::{canonical_json, sha256_hex};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRUTH_FILE: &str = "truth.json";
pub const MANIFEST_FORMAT: &str = "study-package/1";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestSeries {
    #[serde(flatten)]
    meta: SeriesMeta,
    file: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    study_id: String,
    module: ModuleKind,
    series: Vec<ManifestSeries>,
    tasks: Vec<TaskSpec>,
    checksums: BTreeMap<String, String>,
}

fn volume_file(series_id: &str) -> String {
    format!("{series_id}.mvol")
}

fn read(path: &Path) -> Result<Vec<u8>, StudyError> {
    fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            StudyError::MissingFile(path.to_path_buf())
        } else {
            StudyError::Io {
                path: path.to_path_buf(),
                source: e,
            }
        }
    })
}

fn verify_digest(file: &str, bytes: &[u8], checksums: &BTreeMap<String, String>) -> Result<(), StudyError> {
    let expected = checksums
        .get(file)
        .ok_or_else(|| StudyError::SchemaViolation(format!("no checksum recorded for {file}")))?;
    let actual = sha256_hex(bytes);
    if &actual != expected {
        return Err(StudyError::ChecksumMismatch {
            file: file.to_string(),
            expected: expected.clone(),
            actual,
        });
    }
    Ok(())
}

/// Load and fully validate a study package directory.
///
/// `truth.json` is optional: a package distributed without it loads with
/// `truth == None`. When present it must match its manifest checksum.
pub fn load_study_package(dir: &Path) -> Result<StudyPackage, StudyError> {
    let manifest_bytes = read(&dir.join(MANIFEST_FILE))?;
    let manifest: Manifest = serde_json::from_slice(&manifest_bytes)
        .map_err(|e| StudyError::SchemaViolation(format!("manifest.json: {e}")))?;
    if manifest.format != MANIFEST_FORMAT {
        return Err(StudyError::SchemaViolation(format!(
            "unsupported manifest format '{}'",
            manifest.format
        )));
    }

    let mut series = Vec::with_capacity(manifest.series.len());
    for entry in manifest.series {
        if entry.file != volume_file(&entry.meta.series_id) {
            return Err(StudyError::SchemaViolation(format!(
                "series '{}' must be stored in {}",
                entry.meta.series_id,
                volume_file(&entry.meta.series_id)
            )));
        }
        let bytes = read(&dir.join(&entry.file))?;
        verify_digest(&entry.file, &bytes, &manifest.checksums)?;
        series.push(Series {
            meta: entry.meta,
            volume: decode_mvol(&bytes)?,
        });
    }

    let truth_path = dir.join(TRUTH_FILE);
    let truth = if truth_path.exists() {
        let bytes = read(&truth_path)?;
        verify_digest(TRUTH_FILE, &bytes, &manifest.checksums)?;
        let truth: GroundTruth =
            serde_json::from_slice(&bytes).map_err(|e| StudyError::SchemaViolation(format!("truth.json: {e}")))?;
        Some(truth)
    } else {
        None
    };

    let package = StudyPackage {
        study_id: manifest.study_id,
        module: manifest.module,
        series,
        tasks: manifest.tasks,
        truth,
        checksums: manifest.checksums,
    };
    package.validate()?;
    Ok(package)
}

/// Write a package in canonical form and return the manifest digest.
///
/// Checksums are recomputed from the encoded bytes; `package.checksums` is
/// ignored except for the truth entry of a sealed package loaded without
/// its truth file, which is carried over unchanged.
pub fn write_study_package(package: &StudyPackage, dir: &Path) -> Result<String, StudyError> {
    package.validate()?;
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| StudyError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;

    let mut checksums = BTreeMap::new();
    let mut entries = Vec::with_capacity(package.series.len());
    for s in &package.series {
        let file = volume_file(&s.meta.series_id);
        let bytes = encode_mvol(&s.volume);
        checksums.insert(file.clone(), sha256_hex(&bytes));
        let path = dir.join(&file);
        fs::write(&path, &bytes).map_err(io(&path))?;
        entries.push(ManifestSeries {
            meta: s.meta.clone(),
            file,
        });
    }
    match &package.truth {
        Some(truth) => {
            let bytes = canonical_json(truth);
            checksums.insert(TRUTH_FILE.to_string(), sha256_hex(&bytes));
            let path = dir.join(TRUTH_FILE);
            fs::write(&path, bytes).map_err(io(&path))?;
        }
        None => {
            if let Some(d) = package.checksums.get(TRUTH_FILE) {
                checksums.insert(TRUTH_FILE.to_string(), d.clone());
            }
        }
    }

    let manifest = Manifest {
        format: MANIFEST_FORMAT.to_string(),
        study_id: package.study_id.clone(),
        module: package.module,
        series: entries,
        tasks: package.tasks.clone(),
        checksums,
    };
    let text = canonical_json(&manifest);
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, &text).map_err(io(&path))?;
    Ok(sha256_hex(text))
}

/// Recompute the checksum map a package would be written with.
pub(crate) fn compute_checksums(package: &StudyPackage) -> BTreeMap<String, String> {
    let mut checksums = BTreeMap::new();
    for s in &package.series {
        checksums.insert(volume_file(&s.meta.series_id), sha256_hex(encode_mvol(&s.volume)));
    }
    if let Some(truth) = &package.truth {
        checksums.insert(TRUTH_FILE.to_string(), sha256_hex(canonical_json(truth)));
    }
    checksums
}

impl StudyPackage {
    /// Refresh `checksums` from the current contents.
    pub fn seal(&mut self) {
        self.checksums = compute_checksums(self);
    }
}
