use std::path::Path;

use studybench_core::synth::{write_suite, GenError, GenSpec};

use crate::CliError;

/// Write a suite and return its digest.
pub fn cmd_gen(spec: &GenSpec, out: &Path) -> Result<String, CliError> {
    write_suite(spec, out).map_err(|e| match e {
        GenError::InvalidSpec(m) => CliError::usage(m),
        other => CliError::input(other.to_string()),
    })
}
