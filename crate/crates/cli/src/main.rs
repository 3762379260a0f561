//! `tlscope`: spectra, fits and simulations for a transmon coupled to a
//! charged two-level system.
//!
//! Exit codes: 0 success, 2 bad input, 3 non-convergence, 4 calibration failure.

mod commands;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{execute, replay_job, Command, ConfigSource, Job, Outcome};
use error::{CliError, EXIT_NOT_CONVERGED};
use output::Format;

#[derive(Parser)]
#[command(name = "tlscope", version, about = "Transmon / charged-TLS spectra, fits and joint-state rate inference")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Global {
    /// JSON parameter document; unknown keys are rejected.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for every random stream of the run.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, env = "TLSCOPE_OUT_DIR", default_value = "tlscope-out")]
    out: PathBuf,
    /// Format of tabular outputs.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Subcommand)]
enum Cmd {
    /// ν01 versus offset charge for both parities and TLS states.
    Spectrum,
    /// TLS-induced shift of the 0-1 and 1-2 transitions versus qubit frequency.
    ShiftSweep,
    /// Fit measured data.
    Fit {
        #[command(subcommand)]
        kind: FitKind,
    },
    /// Generate synthetic trajectories or shot records.
    Simulate {
        #[command(subcommand)]
        kind: SimKind,
    },
    /// Rerun the command recorded in a manifest.
    Replay {
        manifest: PathBuf,
    },
}

#[derive(Args)]
struct InputArg {
    /// Data file to fit.
    #[arg(long)]
    input: PathBuf,
}

#[derive(Subcommand)]
enum FitKind {
    /// Lorentzian peaks in a spectroscopy trace (CSV).
    Peaks(InputArg),
    /// Offset charge from parity-pair splittings given in the config.
    Ng,
    /// Avoided crossing branches (CSV).
    Crossing(InputArg),
    /// Coupling parameters from δ_b versus ν̄01 (CSV).
    Shiftcurve(InputArg),
    /// Joint TLS-parity transition rates from shot records (JSONL).
    Rates(InputArg),
}

#[derive(Subcommand)]
enum SimKind {
    /// Continuous-time Markov trajectory of the joint state.
    Ctmc,
    /// Measure-and-confirm protocol shot records.
    Protocol,
}

fn job(cli: Cli) -> Result<Job, CliError> {
    let g = cli.global;
    let (command, input) = match cli.command {
        Cmd::Replay { manifest } => {
            if g.config.is_some() || g.seed.is_some() {
                return Err(CliError::bad_input("replay takes configuration and seed from the manifest"));
            }
            return replay_job(&manifest, g.out);
        }
        Cmd::Spectrum => (Command::Spectrum, None),
        Cmd::ShiftSweep => (Command::ShiftSweep, None),
        Cmd::Fit { kind } => match kind {
            FitKind::Peaks(a) => (Command::FitPeaks, Some(a.input)),
            FitKind::Ng => (Command::FitNg, None),
            FitKind::Crossing(a) => (Command::FitCrossing, Some(a.input)),
            FitKind::Shiftcurve(a) => (Command::FitShiftCurve, Some(a.input)),
            FitKind::Rates(a) => (Command::FitRates, Some(a.input)),
        },
        Cmd::Simulate { kind } => match kind {
            SimKind::Ctmc => (Command::SimulateCtmc, None),
            SimKind::Protocol => (Command::SimulateProtocol, None),
        },
    };
    Ok(Job {
        command,
        config: g.config.map_or(ConfigSource::Default, ConfigSource::File),
        input,
        expect_input: None,
        seed: g.seed,
        format: g.format,
        out: g.out,
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match job(cli).and_then(|j| execute(&j)) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::NotConverged(msg)) => {
            eprintln!("tlscope: {msg} (results written)");
            ExitCode::from(EXIT_NOT_CONVERGED)
        }
        Err(e) => {
            eprintln!("tlscope: error: {e}");
            ExitCode::from(e.code)
        }
    }
}
