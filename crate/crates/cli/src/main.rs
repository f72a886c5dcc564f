mod commands;
mod config;
mod plot;
mod pool;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use cnwf::model::baseline::BaselineKind;

use commands::CoverageMode;
use config::RunConfig;
use run::{Failure, Run};

/// Reduced-order source localization and adaptive sensor placement.
///
/// Exit codes: 0 success, 1 invalid input, 2 numerical failure,
/// 3 a requested check did not pass.
#[derive(Parser)]
#[command(name = "cnwf", version)]
struct Cli {
    /// TOML run configuration; defaults apply to anything left out.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration value, e.g. `--set training.steps=100`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Worker threads for sample generation, evaluation and trials.
    #[arg(short, long, default_value_t = 1, global = true)]
    jobs: usize,
    /// Repeat for more log output.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Baseline {
    Mlp,
    Encoder,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    /// Adaptive loop driven by a trained checkpoint.
    Model,
    /// Adaptive loop with the true density.
    Oracle,
    /// Convergence-rate experiment with the bump importance model.
    Bump,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the configured mesh, or validate an existing mesh file.
    Mesh {
        #[arg(long, value_name = "FILE")]
        validate: Option<PathBuf>,
    },
    /// Generate the training set (skipped when an identical one exists).
    Datagen,
    /// Train the conditional model or a baseline.
    Train {
        #[arg(long, value_enum)]
        baseline: Option<Baseline>,
        /// Continue from the latest checkpoint.
        #[arg(long)]
        resume: bool,
        /// Require the loss to halve with every solve converging.
        #[arg(long)]
        check: bool,
    },
    /// Score a checkpoint (or the true density) over a sensor-count sweep.
    Eval {
        #[arg(long, value_name = "MANIFEST")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        oracle: bool,
        #[arg(long)]
        check: bool,
    },
    /// Run coverage-control experiments.
    Coverage {
        #[arg(long, value_enum, default_value = "oracle")]
        mode: Mode,
        #[arg(long, value_name = "MANIFEST")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        check: bool,
    },
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    let cfg = RunConfig::load(cli.config.as_deref(), &cli.overrides)?;
    let run = Run::new(cfg, cli.jobs)?;
    match cli.command {
        Command::Mesh { validate } => commands::mesh(&run, validate.as_deref()),
        Command::Datagen => commands::datagen(&run),
        Command::Train { baseline, resume, check } => {
            let b = baseline.map(|b| match b {
                Baseline::Mlp => BaselineKind::Mlp,
                Baseline::Encoder => BaselineKind::Encoder,
            });
            commands::train_cmd(&run, b, resume, check)
        }
        Command::Eval { checkpoint, oracle, check } => commands::eval(&run, checkpoint.as_deref(), oracle, check),
        Command::Coverage { mode, checkpoint, check } => {
            let m = match mode {
                Mode::Model => CoverageMode::Model,
                Mode::Oracle => CoverageMode::Oracle,
                Mode::Bump => CoverageMode::Bump,
            };
            commands::coverage(&run, m, checkpoint.as_deref(), check)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
