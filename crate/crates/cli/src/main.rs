//! `drm-monitor`: composite EL quantile estimation and monitoring tests for
//! clustered samples.

mod commands;
mod manifest;
mod output;
mod table;

use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use manifest::RunManifest;
use output::Emitter;

#[derive(Parser, Debug)]
#[command(
    name = "drm-monitor",
    version,
    about = "Quantile monitoring for clustered samples under a density ratio model"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// Suppress progress messages on stderr.
    #[arg(long, global = true)]
    quiet: bool,
    /// Worker threads for bootstrap and simulation replicates.
    #[arg(long, global = true, env = "DRM_MONITOR_THREADS")]
    threads: Option<usize>,
    /// Run on a single thread (overrides --threads); output is identical
    /// to a parallel run.
    #[arg(long, global = true)]
    serial: bool,
    /// Omit timing and thread counts so reports compare byte for byte.
    #[arg(long, global = true)]
    no_timing: bool,
    /// Report destination; `-` is standard output.
    #[arg(long, global = true, default_value = "-")]
    out: String,
    /// Pretty-printed JSON report, or plain-text tables.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Table,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit the density ratio model and report composite EL quantiles.
    Fit(commands::fit::FitArgs),
    /// Test whether a population's quantile has declined.
    Test(commands::test::TestArgs),
    /// One-way random-effects ANOVA of lot effects.
    Anova(commands::anova::AnovaArgs),
    /// Monte Carlo studies of estimation error, coverage and power.
    Simulate(commands::simulate::SimulateArgs),
}

/// Failures, split by exit status: 1 for usage, 2 for data and numerics.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Run(String),
}

impl From<drm_core::Error> for CliError {
    fn from(e: drm_core::Error) -> Self {
        match e {
            drm_core::Error::InvalidArgument(_) => CliError::Usage(e.to_string()),
            _ => CliError::Run(e.to_string()),
        }
    }
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Run(_) => 2,
        }
    }
}

/// Progress messages on stderr, silenced by `--quiet`.
#[derive(Debug, Clone, Copy)]
pub struct Progress {
    quiet: bool,
}

impl Progress {
    pub fn note(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("drm-monitor: {}", msg.as_ref());
        }
    }
}

fn thread_count(g: &GlobalArgs) -> Result<usize, CliError> {
    if g.serial {
        return Ok(1);
    }
    match g.threads {
        Some(0) => Err(CliError::Usage("--threads must be at least 1".into())),
        Some(n) => Ok(n),
        None => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn run(cli: Cli, argv: &[String]) -> Result<(), CliError> {
    let started = Instant::now();
    let threads = thread_count(&cli.global)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Run(format!("cannot start worker pool: {e}")))?;
    let progress = Progress { quiet: cli.global.quiet };
    let mut manifest = RunManifest::new(argv);
    let emitter = Emitter::new(&cli.global);
    pool.install(|| match cli.command {
        Command::Fit(a) => commands::fit::run(a, &mut manifest, progress, &emitter, started, threads),
        Command::Test(a) => commands::test::run(a, &mut manifest, progress, &emitter, started, threads),
        Command::Anova(a) => commands::anova::run(a, &mut manifest, &emitter, started, threads),
        Command::Simulate(a) => commands::simulate::run(a, &mut manifest, progress, &emitter, started, threads),
    })
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli, &argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (CliError::Usage(msg) | CliError::Run(msg)) = &e;
            eprintln!("drm-monitor: error: {msg}");
            ExitCode::from(e.code())
        }
    }
}
