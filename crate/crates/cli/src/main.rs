//! `dgcert` — pipeline driver for worst-case-loss certification of
//! representation-space classifiers on synthetic multi-domain tasks.
//!
//! ```text
//! dgcert gen-data --config run.json      generate domains + train/test split
//! dgcert train    --config run.json      train (robust and/or DG objective)
//! dgcert certify  --config run.json      sweep certified worst-case losses
//! dgcert attack   --config run.json      adversarial reference + PGD table
//! dgcert evaluate --config run.json      distance/accuracy/loss per domain
//! dgcert report   --config run.json      SVG overlay + Markdown summary
//! ```
//!
//! Exit codes: 0 on success, 1 on a domain error (missing artifacts, solver
//! failures, I/O), 2 on a usage error (bad flags or a config that fails
//! schema validation).

mod artifacts;
mod commands;
mod config;
mod render;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;

#[derive(Debug)]
pub enum CliError {
    /// Bad invocation or config: exit code 2.
    Usage(String),
    /// The pipeline itself failed: exit code 1.
    Domain(String),
}

impl From<dgcert::Error> for CliError {
    fn from(e: dgcert::Error) -> Self {
        CliError::Domain(e.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "dgcert",
    version,
    about = "Certify and train distributionally robust representation-space classifiers"
)]
struct Cli {
    /// Path to the run configuration (JSON).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the config's output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Worker threads for batch evaluation (results are identical at any
    /// count; reductions are fixed-order).
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the multi-domain dataset, its split, and the manifest.
    GenData,
    /// Train the model described by the config.
    Train {
        /// Continue from the saved training state instead of starting fresh.
        #[arg(long)]
        resume: bool,
        /// Stop after this many epochs (for later `--resume`).
        #[arg(long, value_name = "EPOCHS")]
        stop_after: Option<usize>,
    },
    /// Compute certified worst-case losses over the configured radii.
    Certify,
    /// Write the adversarial reference distribution and a PGD attack table.
    Attack,
    /// Tabulate distance/accuracy/loss for source, unseen, adversarial, and
    /// corrupted distributions.
    Evaluate,
    /// Render the SVG overlay and Markdown summary, checking soundness.
    Report,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Domain(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if cli.threads == 0 {
        return Err(CliError::Usage("--threads must be >= 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .map_err(|e| CliError::Domain(format!("thread pool: {e}")))?;

    let config_path = cli
        .config
        .ok_or_else(|| CliError::Usage("--config <path> is required".into()))?;
    let cfg = RunConfig::load(&config_path, cli.seed, cli.out)?;

    match cli.cmd {
        Cmd::GenData => commands::cmd_gen_data(&cfg, cli.threads),
        Cmd::Train { resume, stop_after } => commands::cmd_train(&cfg, resume, stop_after),
        Cmd::Certify => commands::cmd_certify(&cfg),
        Cmd::Attack => commands::cmd_attack(&cfg),
        Cmd::Evaluate => commands::cmd_evaluate(&cfg),
        Cmd::Report => commands::cmd_report(&cfg),
    }
}
