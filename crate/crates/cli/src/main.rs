//! `ionarray`: command-line front end for the trap-array toolkit.
//!
//! Every command reads an optional JSON config (`--config`), writes CSV files
//! into `--out` and prints the paths it wrote. Exit status is 0 on success,
//! 2 for configuration errors and 1 when a computation fails.

// `!(x > 0.0)` deliberately also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use crate::commands::Context;
use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "ionarray", version, about = "Surface-electrode ion-trap array design and analysis")]
struct Cli {
    /// JSON run configuration (SI units in every key).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Electrode layout document; overrides the config's `layout`.
    #[arg(long, global = true)]
    layout: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// RNG seed; overrides the config's `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Trap minima (and optionally saddles) with their normal modes.
    Sites,
    /// Normal modes at given positions or at every minimum.
    Modes,
    /// Control-voltage sets for the named potential families.
    SolveControl,
    /// Detuning or mode-rotation sweep over a control amplitude.
    Sweep,
    /// Pixelated RF electrode design by linear programming.
    Rfopt,
    /// Forward simulations of the spectroscopy experiments.
    Simulate {
        #[arg(value_enum)]
        kind: SimKind,
    },
    /// Fit Rabi-flopping data for mode angle and occupations.
    FitFlop,
    /// Build an AWG ramp waveform file.
    Waveform,
    /// Potential, gradient and Hessian at sample points.
    FieldSample,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SimKind {
    Flop,
    Thermometry,
    Heating,
    Tickle,
    Exchange,
    Micromotion,
    Detection,
    Ramp,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = RunConfig::load(cli.config.as_deref())?;
    let ctx = Context::new(cfg, cli.layout, &cli.out, cli.seed)?;
    match cli.command {
        Command::Sites => commands::sites(&ctx),
        Command::Modes => commands::modes(&ctx),
        Command::SolveControl => commands::solve_control(&ctx),
        Command::Sweep => commands::sweep(&ctx),
        Command::Rfopt => commands::rfopt(&ctx),
        Command::Simulate { kind } => match kind {
            SimKind::Flop => commands::simulate_flop(&ctx),
            SimKind::Thermometry => commands::simulate_thermometry(&ctx),
            SimKind::Heating => commands::simulate_heating(&ctx),
            SimKind::Tickle => commands::simulate_tickle(&ctx),
            SimKind::Exchange => commands::simulate_exchange(&ctx),
            SimKind::Micromotion => commands::simulate_micromotion(&ctx),
            SimKind::Detection => commands::simulate_detection(&ctx),
            SimKind::Ramp => commands::simulate_ramp(&ctx),
        },
        Command::FitFlop => commands::fit_flop(&ctx),
        Command::Waveform => commands::waveform(&ctx),
        Command::FieldSample => commands::field_sample(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ionarray: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
