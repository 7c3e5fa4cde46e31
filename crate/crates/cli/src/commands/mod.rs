mod gen;
mod replay;
pub(crate) mod run;
mod score;
mod serve;

pub use gen::cmd_gen;
pub use replay::{cmd_replay, ReplayOutcome, ReplaySource};
pub use run::{cmd_run, RunSummary};
pub use score::{cmd_report, cmd_score, ReportFormat};
pub use serve::cmd_serve;
