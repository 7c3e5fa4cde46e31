use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use studybench::commands::{
    cmd_gen, cmd_replay, cmd_report, cmd_run, cmd_score, cmd_serve, ReplaySource, ReportFormat,
};
use studybench::config::{RunConfig, RunFile, RunFlags};
use studybench::{CliError, EXIT_INTERRUPTED, EXIT_USAGE};
use studybench_core::bridge::Track;
use studybench_core::runtime::{AnswerProtocol, CancelFlag, Termination};
use studybench_core::study::ModuleKind;
use studybench_core::synth::GenSpec;

const EXIT_CODES: &str = "Exit codes: 0 ok, 1 internal error, 2 usage error, 3 input or I/O error, \
4 replay FAIL, 5 empty input, 6 bridge unreachable, 130 interrupted.";

#[derive(Parser)]
#[command(name = "studybench", version, about = "Bounded viewer runtime and benchmark harness for full-study imaging agents", after_help = EXIT_CODES)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModuleArg {
    Brain,
    Chest,
}

#[derive(Clone, Copy, ValueEnum)]
enum TrackArg {
    A,
    B,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProtocolArg {
    Mcq,
    Open,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Text,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic study suite.
    Gen {
        #[arg(long)]
        seed: u64,
        #[arg(long, value_enum, ignore_case = true)]
        module: ModuleArg,
        #[arg(long)]
        cases: usize,
        /// Grid size: one number for a cube or X,Y,Z.
        #[arg(long, default_value = "64")]
        grid: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Host the tool bridge for a suite over HTTP.
    Serve {
        #[arg(long)]
        suite: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8700")]
        addr: SocketAddr,
    },
    /// Run one agent over every episode of a suite.
    Run(RunArgs),
    /// Re-dispatch recorded calls and verify every trace.
    Replay {
        /// Trace files or directories searched for *.trace.jsonl.
        #[arg(required = true)]
        traces: Vec<PathBuf>,
        /// Replay against an in-process viewer over this suite.
        #[arg(long, conflicts_with = "bridge")]
        suite: Option<PathBuf>,
        /// Replay against a running bridge.
        #[arg(long)]
        bridge: Option<String>,
    },
    /// Score episode results against the suite's sealed answers.
    Score {
        #[arg(long)]
        suite: PathBuf,
        /// Directory for score and per-cell report files.
        #[arg(long)]
        out: PathBuf,
        /// Result files or directories searched for *.result.json.
        #[arg(required = true)]
        results: Vec<PathBuf>,
    },
    /// Render benchmark tables from score files.
    Report {
        /// Score files or directories searched for *.score.json.
        #[arg(required = true)]
        scores: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "text")]
        format: FormatArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML file with run settings; flags take precedence over it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    suite: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, ignore_case = true)]
    track: Option<TrackArg>,
    /// One of: random, oracle-viewer, oracle-tools, external.
    #[arg(long)]
    agent: Option<String>,
    /// Endpoint settings for the external agent (TOML).
    #[arg(long)]
    agent_config: Option<PathBuf>,
    #[arg(long, value_enum, ignore_case = true)]
    protocol: Option<ProtocolArg>,
    /// Tool budget for every episode (default: the suite's, 40).
    #[arg(long)]
    budget: Option<u32>,
    #[arg(long)]
    parallelism: Option<usize>,
    /// Use a running bridge instead of the in-process viewer.
    #[arg(long, conflicts_with = "embedded_viewer")]
    bridge: Option<String>,
    /// Run the viewer in-process (the default unless a bridge is configured).
    #[arg(long)]
    embedded_viewer: bool,
    /// Gaussian seed noise for the tools oracle, in mm.
    #[arg(long)]
    seed_noise_mm: Option<f64>,
    /// Seed of the random agent.
    #[arg(long)]
    agent_seed: Option<u64>,
    /// Only run the first N episodes.
    #[arg(long)]
    limit: Option<usize>,
}

fn parse_grid(s: &str) -> Result<[usize; 3], CliError> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::usage(format!("invalid grid '{s}'")))?;
    match parts[..] {
        [n] => Ok([n; 3]),
        [x, y, z] => Ok([x, y, z]),
        _ => Err(CliError::usage(format!("grid must be N or X,Y,Z, got '{s}'"))),
    }
}

fn run(args: RunArgs) -> Result<(), CliError> {
    let file = match &args.config {
        Some(p) => RunFile::load(p)?,
        None => RunFile::default(),
    };
    let flags = RunFlags {
        suite: args.suite,
        out: args.out,
        track: args.track.map(|t| match t {
            TrackArg::A => Track::A,
            TrackArg::B => Track::B,
        }),
        agent: args.agent,
        agent_config: args.agent_config,
        protocol: args.protocol.map(|p| match p {
            ProtocolArg::Mcq => AnswerProtocol::Mcq,
            ProtocolArg::Open => AnswerProtocol::Open,
        }),
        budget: args.budget,
        parallelism: args.parallelism,
        bridge: args.bridge,
        embedded_viewer: args.embedded_viewer,
        seed_noise_mm: args.seed_noise_mm,
        agent_seed: args.agent_seed,
        limit: args.limit,
    };
    let cfg = RunConfig::resolve(flags, file)?;
    let cancel = Arc::new(CancelFlag::new());
    let handler_flag = cancel.clone();
    ctrlc::set_handler(move || {
        eprintln!("interrupt: finishing open episodes");
        handler_flag.cancel();
    })
    .map_err(|e| CliError::new(studybench::EXIT_INTERNAL, e.to_string()))?;
    let summary = cmd_run(&cfg, cancel.clone())?;
    let count = |t: Termination| summary.results.iter().filter(|r| r.termination == t).count();
    let calls: u64 = summary.results.iter().map(|r| r.tool_call_count).sum();
    eprintln!(
        "{} episodes: {} answered, {} budget-forced, {} protocol errors, {} aborted; {} tool calls; output in {}",
        summary.results.len(),
        count(Termination::Answered),
        count(Termination::BudgetForced),
        count(Termination::ProtocolError),
        count(Termination::Aborted),
        calls,
        cfg.out.display()
    );
    if cancel.is_cancelled() {
        return Err(CliError::new(
            EXIT_INTERRUPTED,
            format!("interrupted; {} episodes not started", summary.skipped),
        ));
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Gen {
            seed,
            module,
            cases,
            grid,
            out,
        } => {
            let module = match module {
                ModuleArg::Brain => ModuleKind::Brain,
                ModuleArg::Chest => ModuleKind::Chest,
            };
            let digest = cmd_gen(&GenSpec::new(seed, module, cases).with_grid(parse_grid(&grid)?), &out)?;
            println!("{digest}  {}", out.display());
            Ok(())
        }
        Command::Serve { suite, addr } => cmd_serve(&suite, addr),
        Command::Run(args) => run(args),
        Command::Replay { traces, suite, bridge } => {
            let source = match (suite, bridge) {
                (Some(s), None) => ReplaySource::Suite(s),
                (None, Some(b)) => ReplaySource::Bridge(b),
                _ => return Err(CliError::usage("replay needs --suite or --bridge")),
            };
            cmd_replay(&traces, source).map(|_| ())
        }
        Command::Score { suite, out, results } => cmd_score(&suite, &results, &out).map(|_| ()),
        Command::Report { scores, format, out } => {
            let format = match format {
                FormatArg::Text => ReportFormat::Text,
                FormatArg::Csv => ReportFormat::Csv,
            };
            cmd_report(&scores, format, out.as_deref()).map(|_| ())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
