use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use studybench_core::bridge::{Backend, StudyStore};
use studybench_core::synth::load_suite;

use crate::{CliError, EXIT_INTERNAL};

/// Host the bridge for a suite until ctrl-C.
pub fn cmd_serve(suite: &Path, addr: SocketAddr) -> Result<(), CliError> {
    let index = load_suite(suite).map_err(|e| CliError::input(e.to_string()))?;
    let n = index.manifest.studies.len();
    let backend = Arc::new(Backend::new(StudyStore::from_suite(index)));
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::new(EXIT_INTERNAL, e.to_string()))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| CliError::input(format!("cannot bind {addr}: {e}")))?;
        let local = listener
            .local_addr()
            .map_err(|e| CliError::new(EXIT_INTERNAL, e.to_string()))?;
        eprintln!("serving {n} studies on http://{local}");
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        studybench_server::serve(listener, backend, shutdown)
            .await
            .map_err(|e| CliError::new(EXIT_INTERNAL, e.to_string()))
    })
}
