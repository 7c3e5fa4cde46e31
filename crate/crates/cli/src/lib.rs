//! Operator commands behind the `studybench` binary.
//!
//! Exit codes:
//!
//! | code | meaning                                        |
//! |------|------------------------------------------------|
//! | 0    | success                                        |
//! | 1    | internal error                                 |
//! | 2    | usage error (bad flags or configuration)       |
//! | 3    | input or I/O error (missing suite, bad file)   |
//! | 4    | replay verdict FAIL on at least one trace      |
//! | 5    | empty input (nothing to score or report)       |
//! | 6    | bridge unreachable                             |
//! | 130  | interrupted; open traces were finalized        |

pub mod commands;
pub mod config;

use std::fmt;
use std::path::{Path, PathBuf};

pub const EXIT_INTERNAL: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_INPUT: u8 = 3;
pub const EXIT_REPLAY_FAIL: u8 = 4;
pub const EXIT_EMPTY: u8 = 5;
pub const EXIT_UNREACHABLE: u8 = 6;
pub const EXIT_INTERRUPTED: u8 = 130;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(EXIT_USAGE, message)
    }

    pub fn input(message: impl Into<String>) -> Self {
        Self::new(EXIT_INPUT, message)
    }

    pub fn io(path: &Path, e: impl fmt::Display) -> Self {
        Self::input(format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

/// Files under `paths` (searched recursively) whose names end in `suffix`,
/// sorted. Plain file arguments are kept regardless of suffix.
pub fn collect_files(paths: &[PathBuf], suffix: &str) -> Result<Vec<PathBuf>, CliError> {
    fn walk(dir: &Path, suffix: &str, out: &mut Vec<PathBuf>) -> Result<(), CliError> {
        let entries = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
        for entry in entries {
            let path = entry.map_err(|e| CliError::io(dir, e))?.path();
            if path.is_dir() {
                walk(&path, suffix, out)?;
            } else if path
                .file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.ends_with(suffix))
            {
                out.push(path);
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            walk(p, suffix, &mut out)?;
        } else if p.is_file() {
            out.push(p.clone());
        } else {
            return Err(CliError::input(format!("{}: no such file or directory", p.display())));
        }
    }
    out.sort();
    out.dedup();
    Ok(out)
}

pub(crate) fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}
