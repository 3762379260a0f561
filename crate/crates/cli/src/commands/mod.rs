//! Command dispatch shared by direct invocation and manifest replay.

mod fit;
mod simulate;
mod spectrum;
mod sweep;

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;
use tlscope_core::coupling::{CoupledSystem, CouplingSpec};
use tlscope_core::spectra::{TlsParams, TransmonParams};

use crate::error::{CliError, CliResult};
use crate::output::{Format, InputRef, Manifest, Sink};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Spectrum,
    ShiftSweep,
    FitPeaks,
    FitNg,
    FitCrossing,
    FitShiftCurve,
    FitRates,
    SimulateCtmc,
    SimulateProtocol,
}

impl Command {
    pub const ALL: [Command; 9] = [
        Command::Spectrum,
        Command::ShiftSweep,
        Command::FitPeaks,
        Command::FitNg,
        Command::FitCrossing,
        Command::FitShiftCurve,
        Command::FitRates,
        Command::SimulateCtmc,
        Command::SimulateProtocol,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Spectrum => "spectrum",
            Command::ShiftSweep => "shift-sweep",
            Command::FitPeaks => "fit peaks",
            Command::FitNg => "fit ng",
            Command::FitCrossing => "fit crossing",
            Command::FitShiftCurve => "fit shiftcurve",
            Command::FitRates => "fit rates",
            Command::SimulateCtmc => "simulate ctmc",
            Command::SimulateProtocol => "simulate protocol",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == name)
    }

    pub fn needs_input(self) -> bool {
        matches!(
            self,
            Command::FitPeaks | Command::FitCrossing | Command::FitShiftCurve | Command::FitRates
        )
    }
}

pub enum ConfigSource {
    Default,
    File(PathBuf),
    Value(Value),
}

pub struct Job {
    pub command: Command,
    pub config: ConfigSource,
    pub input: Option<PathBuf>,
    /// Content hash the input must match (replay).
    pub expect_input: Option<InputRef>,
    pub seed: Option<u64>,
    pub format: Format,
    pub out: PathBuf,
}

pub struct Input {
    pub path: PathBuf,
    pub data: Vec<u8>,
}

pub struct Ctx {
    pub sink: Sink,
    pub seed: u64,
    pub input: Option<Input>,
}

impl Ctx {
    /// Parse the input file, naming it in any error.
    pub fn parse_input<T>(&self, parse: impl FnOnce(&[u8]) -> tlscope_core::Result<T>) -> CliResult<T> {
        let input = self.input.as_ref().expect("commands that read data are checked for --input");
        parse(&input.data).map_err(|e| CliError::from(e).in_file(&input.path))
    }
}

pub enum Outcome {
    Done,
    /// Results were written but the fit did not converge.
    NotConverged(String),
}

pub trait Task: Serialize + DeserializeOwned {
    /// Configuration used when `--config` is absent; `None` makes it mandatory.
    fn fallback() -> Option<Self> {
        None
    }

    /// Seed used when `--seed` is absent.
    fn seed(&self) -> u64 {
        0
    }

    fn run(&mut self, ctx: &mut Ctx) -> CliResult<Outcome>;
}

/// Device of the reference measurement with the TLS parameters inverted from it.
pub fn reference_system() -> CoupledSystem {
    CoupledSystem::new(
        TransmonParams::paper_device(),
        TlsParams::new(1.331, 2.555),
        CouplingSpec::ChargeDipole {
            lambda: 0.020297,
            jc: None,
        },
    )
}

fn load<T: Task>(command: Command, src: &ConfigSource) -> CliResult<T> {
    match src {
        ConfigSource::Default => T::fallback()
            .ok_or_else(|| CliError::bad_input(format!("{} needs --config", command.name()))),
        ConfigSource::File(path) => {
            let text = fs::read(path).map_err(|e| CliError::bad_input(format!("{}: {e}", path.display())))?;
            tlscope_core::io::read_json(text.as_slice()).map_err(|e| CliError::from(e).in_file(path))
        }
        ConfigSource::Value(v) => serde_json::from_value(v.clone())
            .map_err(|e| CliError::bad_input(format!("manifest config: {e}"))),
    }
}

fn read_input(command: Command, path: Option<&Path>, expect: Option<&InputRef>) -> CliResult<Option<Input>> {
    match (command.needs_input(), path) {
        (true, None) => Err(CliError::bad_input(format!("{} needs --input", command.name()))),
        (false, Some(_)) => Err(CliError::bad_input(format!("{} takes no --input", command.name()))),
        (false, None) => Ok(None),
        (true, Some(path)) => {
            let data = fs::read(path).map_err(|e| CliError::bad_input(format!("{}: {e}", path.display())))?;
            if let Some(want) = expect {
                let got = InputRef::of(path, &data);
                if got.sha256 != want.sha256 {
                    return Err(CliError::bad_input(format!(
                        "{}: contents changed since the manifest was written",
                        path.display()
                    )));
                }
            }
            Ok(Some(Input {
                path: path.to_path_buf(),
                data,
            }))
        }
    }
}

fn execute_task<T: Task>(job: &Job) -> CliResult<Outcome> {
    let mut cfg: T = load(job.command, &job.config)?;
    let input = read_input(job.command, job.input.as_deref(), job.expect_input.as_ref())?;
    let seed = job.seed.unwrap_or_else(|| cfg.seed());
    let mut ctx = Ctx {
        sink: Sink::new(&job.out, job.format)?,
        seed,
        input,
    };
    let outcome = cfg.run(&mut ctx)?;
    let manifest = Manifest {
        tool: "tlscope".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: job.command.name().into(),
        format: job.format,
        seed,
        config: serde_json::to_value(&cfg).map_err(|e| CliError::bad_input(e.to_string()))?,
        input: ctx.input.as_ref().map(|i| InputRef::of(&i.path, &i.data)),
        outputs: ctx.sink.written.clone(),
    };
    ctx.sink.manifest(&manifest)?;
    Ok(outcome)
}

pub fn execute(job: &Job) -> CliResult<Outcome> {
    match job.command {
        Command::Spectrum => execute_task::<spectrum::SpectrumConfig>(job),
        Command::ShiftSweep => execute_task::<sweep::SweepConfig>(job),
        Command::FitPeaks => execute_task::<fit::PeaksConfig>(job),
        Command::FitNg => execute_task::<fit::NgConfig>(job),
        Command::FitCrossing => execute_task::<fit::CrossingConfig>(job),
        Command::FitShiftCurve => execute_task::<fit::ShiftCurveConfig>(job),
        Command::FitRates => execute_task::<fit::RatesConfig>(job),
        Command::SimulateCtmc => execute_task::<simulate::CtmcConfig>(job),
        Command::SimulateProtocol => execute_task::<simulate::ProtocolRun>(job),
    }
}

/// Rebuild the job recorded in a manifest.
pub fn replay_job(manifest_path: &Path, out: PathBuf) -> CliResult<Job> {
    let text = fs::read(manifest_path).map_err(|e| CliError::bad_input(format!("{}: {e}", manifest_path.display())))?;
    let m: Manifest =
        tlscope_core::io::read_json(text.as_slice()).map_err(|e| CliError::from(e).in_file(manifest_path))?;
    let command = Command::from_name(&m.command)
        .ok_or_else(|| CliError::bad_input(format!("unknown command {:?} in manifest", m.command)))?;
    Ok(Job {
        command,
        config: ConfigSource::Value(m.config),
        input: m.input.as_ref().map(|i| i.path.clone()),
        expect_input: m.input,
        seed: Some(m.seed),
        format: m.format,
        out,
    })
}
