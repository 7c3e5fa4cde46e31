//! Content-addressed artifact storage.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use super::{io_err, TraceError};
use crate::canonical::sha256_hex;
use crate::viewer::Artifact;

pub const ARTIFACT_DIR: &str = "artifacts";

/// Blobs keyed by their SHA-256. Several traces may share one directory.
pub enum ArtifactStore {
    Dir(PathBuf),
    Memory(Mutex<BTreeMap<String, Vec<u8>>>),
}

impl ArtifactStore {
    pub fn open(dir: &Path) -> Result<Self, TraceError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        Ok(Self::Dir(dir.to_path_buf()))
    }

    pub fn memory() -> Self {
        Self::Memory(Mutex::new(BTreeMap::new()))
    }

    pub fn put(&self, artifact: &Artifact) -> Result<(), TraceError> {
        if !artifact.verify() {
            return Err(TraceError::Malformed(format!(
                "artifact {} does not match its content",
                artifact.id
            )));
        }
        match self {
            Self::Dir(dir) => {
                let path = dir.join(&artifact.id);
                if !path.exists() {
                    // write then rename so readers never see a partial blob
                    let tmp = dir.join(format!(".{}.tmp{}", artifact.id, std::process::id()));
                    fs::write(&tmp, &artifact.bytes).map_err(io_err(&tmp))?;
                    fs::rename(&tmp, &path).map_err(io_err(&path))?;
                }
            }
            Self::Memory(m) => {
                m.lock()
                    .expect("artifact map")
                    .insert(artifact.id.clone(), artifact.bytes.clone());
            }
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<Vec<u8>> {
        match self {
            Self::Dir(dir) => fs::read(dir.join(id)).ok(),
            Self::Memory(m) => m.lock().expect("artifact map").get(id).cloned(),
        }
    }

    /// Ids that are missing or whose bytes no longer hash to the id.
    pub fn check<'a>(&self, ids: impl IntoIterator<Item = &'a String>) -> Vec<String> {
        ids.into_iter()
            .filter(|id| self.get(id).is_none_or(|b| &sha256_hex(b) != *id))
            .cloned()
            .collect()
    }
}
