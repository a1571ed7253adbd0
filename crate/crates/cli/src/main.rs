//! Experiment runner for mean-reflected SDE simulation.
//!
//! Subcommands: `skorokhod-test`, `simulate`, `picard`, `chaos-study`,
//! `control-chatter`, `control-search`. Each reads one structured config
//! file, writes CSV tables plus a `report.json` envelope into the output
//! directory, and exits 0 on success, 2 on configuration errors, 3 on
//! numerical failures, and 4 when `--check` thresholds fail.

mod experiment;
mod report;
mod runners;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use experiment::LoadedConfig;
use runners::RunContext;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numerical(String),
    CheckFailed(Vec<String>),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Config(m) => write!(f, "configuration error: {m}"),
            Self::Numerical(m) => write!(f, "numerical failure: {m}"),
            Self::CheckFailed(failures) => {
                writeln!(f, "acceptance checks failed:")?;
                for failure in failures {
                    writeln!(f, "  - {failure}")?;
                }
                Ok(())
            }
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => 2,
            Self::Numerical(_) => 3,
            Self::CheckFailed(_) => 4,
        }
    }
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for CSV tables and report.json (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Worker-thread cap. Runs are scheduled deterministically; outputs are
    /// identical for every value.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Enforce acceptance thresholds; failures exit with code 4.
    #[arg(long, default_value_t = false)]
    check: bool,
}

#[derive(Debug, Parser)]
#[command(name = "mean-reflect", version, about = "Mean-reflected SDE experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the mean-reflection problem for a deterministic path file.
    SkorokhodTest(CommonArgs),
    /// One interacting particle run: mean path, shared ledger, audit paths.
    Simulate(CommonArgs),
    /// Picard iteration on law flows for the limiting equation.
    Picard(CommonArgs),
    /// Propagation-of-chaos convergence table over ensemble sizes.
    ChaosStudy(CommonArgs),
    /// Chattering approximation: cost gaps of switched strict controls.
    ControlChatter(CommonArgs),
    /// Brute-force search over piecewise-constant strict controls.
    ControlSearch(CommonArgs),
}

impl Command {
    fn common(&self) -> &CommonArgs {
        match self {
            Self::SkorokhodTest(a)
            | Self::Simulate(a)
            | Self::Picard(a)
            | Self::ChaosStudy(a)
            | Self::ControlChatter(a)
            | Self::ControlSearch(a) => a,
        }
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let args = cli.command.common();
    if args.threads == 0 {
        return Err(CliError::Config("--threads must be at least 1".into()));
    }
    // Validate the configuration fully before touching the output directory,
    // so config errors leave no partial outputs.
    let loaded = LoadedConfig::load(&args.config)?;
    std::fs::create_dir_all(&args.out)
        .map_err(|e| CliError::Config(format!("cannot create {}: {e}", args.out.display())))?;
    let ctx = RunContext {
        loaded: &loaded,
        out_dir: &args.out,
        check: args.check,
        threads: args.threads,
    };
    let report = match &cli.command {
        Command::SkorokhodTest(_) => runners::run_skorokhod_test(&ctx)?,
        Command::Simulate(_) => runners::run_simulate(&ctx)?,
        Command::Picard(_) => runners::run_picard(&ctx)?,
        Command::ChaosStudy(_) => runners::run_chaos(&ctx)?,
        Command::ControlChatter(_) => runners::run_control_chatter(&ctx)?,
        Command::ControlSearch(_) => runners::run_control_search(&ctx)?,
    };
    for warning in &report.warnings {
        eprintln!("warning: {warning}");
    }
    eprintln!(
        "{}: wrote {} table(s) to {} in {:.2}s",
        report.subcommand,
        report.tables.len(),
        args.out.display(),
        report.wall_time_seconds
    );
    if args.check && !report.check.passed {
        return Err(CliError::CheckFailed(report.check.failures.clone()));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
