//! `simctl`: sampled-data runs, stiffness sweeps and convergence studies.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use commands::CliError;
use config::{Experiment, ExperimentConfig, FeedbackSel, ModeSel};

#[derive(Parser)]
#[command(
    name = "simctl",
    version,
    about = "Sampled-data energy-based control experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Single closed-loop run against its target.
    Run(Overrides),
    /// Largest stiffness per sampling time on the mass-spring system.
    Sweep(Overrides),
    /// Empirical convergence orders on a halving sequence of h.
    Convergence(Overrides),
}

#[derive(clap::Args)]
struct Overrides {
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Sampling time [s].
    #[arg(long)]
    h: Option<f64>,
    /// Horizon [s].
    #[arg(long = "T")]
    horizon: Option<f64>,
    #[arg(long, value_enum)]
    experiment: Option<Experiment>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    feedback: Option<FeedbackArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Symplectic,
    Quasi,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum FeedbackArg {
    Position,
    Full,
}

fn load(o: &Overrides) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(&o.config)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", o.config.display())))?;
    let mut cfg = ExperimentConfig::parse(&text)?;
    if o.h.is_some() {
        cfg.h = o.h;
    }
    if o.horizon.is_some() {
        cfg.horizon = o.horizon;
    }
    if let Some(e) = o.experiment {
        cfg.experiment = e;
    }
    if let Some(out) = &o.out {
        cfg.out = out.clone();
    }
    if let Some(m) = o.mode {
        cfg.mode = match m {
            ModeArg::Symplectic => ModeSel::Symplectic,
            ModeArg::Quasi => ModeSel::Quasi,
            ModeArg::Both => ModeSel::Both,
        };
    }
    if let Some(f) = o.feedback {
        cfg.feedback = match f {
            FeedbackArg::Position => FeedbackSel::Position,
            FeedbackArg::Full => FeedbackSel::Full,
        };
    }
    Ok(cfg)
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Run(o) => commands::cmd_run(&load(o)?),
        Command::Sweep(o) => commands::cmd_sweep(&load(o)?),
        Command::Convergence(o) => commands::cmd_convergence(&load(o)?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("simctl: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
