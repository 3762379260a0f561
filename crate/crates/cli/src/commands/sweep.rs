//! δ_b of the 0-1 and 1-2 transitions across a grid of qubit frequencies.

use serde::{Deserialize, Serialize};
use tlscope_core::coupling::{shift_sweep, CoupledSystem, DEFAULT_BAND_POINTS};
use tlscope_core::spectra::flux_for_frequency;

use super::{reference_system, Ctx, Outcome, Task};
use crate::error::{CliError, CliResult};
use crate::output::{Cell, Table};

fn default_min() -> f64 {
    3.0
}

fn default_max() -> f64 {
    4.8
}

fn default_points() -> usize {
    121
}

fn default_band() -> Option<usize> {
    Some(DEFAULT_BAND_POINTS)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default = "reference_system")]
    pub system: CoupledSystem,
    /// Parity-averaged ν̄01 grid (GHz), uniform between the two ends.
    #[serde(default = "default_min", rename = "nu01_min_GHz")]
    pub nu01_min: f64,
    #[serde(default = "default_max", rename = "nu01_max_GHz")]
    pub nu01_max: f64,
    #[serde(default = "default_points")]
    pub points: usize,
    /// Offset-charge points for the δ_b01 band; `null` skips the band.
    #[serde(default = "default_band")]
    pub band_points: Option<usize>,
}

impl Task for SweepConfig {
    fn fallback() -> Option<Self> {
        Some(SweepConfig {
            system: reference_system(),
            nu01_min: default_min(),
            nu01_max: default_max(),
            points: default_points(),
            band_points: default_band(),
        })
    }

    fn run(&mut self, ctx: &mut Ctx) -> CliResult<Outcome> {
        let sys = self.system;
        sys.validate()?;
        if self.points < 2 {
            return Err(CliError::bad_input("points must be >= 2"));
        }
        if !(self.nu01_min.is_finite() && self.nu01_max > self.nu01_min) {
            return Err(CliError::bad_input("need finite nu01_min_GHz < nu01_max_GHz"));
        }
        let fluxes: Vec<f64> = (0..self.points)
            .map(|k| {
                let target = self.nu01_min + (self.nu01_max - self.nu01_min) * k as f64 / (self.points - 1) as f64;
                flux_for_frequency(&sys.transmon, target)
            })
            .collect::<tlscope_core::Result<_>>()?;
        let sweep = shift_sweep(&sys, &fluxes, &[(0, 1), (1, 2)], self.band_points)?;
        let khz = |v: Option<f64>| Cell::from(v.map(|x| x * 1e6));
        let mut table = Table::new(
            "shift_sweep",
            &[
                "nu01_bar_GHz",
                "flux",
                "delta_b01_kHz",
                "delta_b12_kHz",
                "band_min_kHz",
                "band_max_kHz",
                "excluded",
            ],
        );
        for p in &sweep {
            let band = p.bands[0];
            table.push(vec![
                Cell::Num(p.nu01_bar),
                Cell::Num(p.flux),
                khz(p.shifts[0]),
                khz(p.shifts[1]),
                khz(band.map(|b| b.0)),
                khz(band.map(|b| b.1)),
                Cell::Bool(p.excluded),
            ]);
        }
        ctx.sink.table(&table)?;
        Ok(Outcome::Done)
    }
}
