//! Qubit ν01 versus offset charge for both parities and both TLS states.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use tlscope_core::coupling::{
    coupled_spectrum, dispersive_shift_band, dispersive_shift_with, CoupledSystem, CouplingSpec, LabelMode,
    LevelLabel, DEFAULT_BAND_POINTS,
};
use tlscope_core::spectra::{Parity, TlsState};

use super::{reference_system, Ctx, Outcome, Task};
use crate::error::{CliError, CliResult};
use crate::output::{Cell, Table};

/// Offset-charge points per period used for the branch summary.
const SUMMARY_POINTS: usize = 64;

fn default_ng_max() -> f64 {
    1.0
}

fn default_points() -> usize {
    101
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumConfig {
    #[serde(default = "reference_system")]
    pub system: CoupledSystem,
    #[serde(default)]
    pub ng_min: f64,
    #[serde(default = "default_ng_max")]
    pub ng_max: f64,
    #[serde(default = "default_points")]
    pub points: usize,
}

/// Measured separation of the TLS-e and TLS-g branches.
#[derive(Debug, Clone, Serialize)]
#[allow(non_snake_case)]
struct Summary {
    rows: usize,
    /// Mean of ν01(e) − ν01(g) over one offset-charge period.
    branch_offset_kHz: f64,
    /// Offset-charge displacement of the e branch relative to the g branch.
    ng_shift: f64,
    /// δ_b at the configured offset charge and its range over n_g and parity.
    dispersive_shift_kHz: f64,
    dispersive_shift_band_kHz: (f64, f64),
    /// 2λ cos θ, charge-dipole coupling only.
    #[serde(skip_serializing_if = "Option::is_none")]
    expected_ng_shift: Option<f64>,
}

fn transitions(sys: &CoupledSystem, ng: f64, parity: Parity) -> CliResult<[f64; 2]> {
    let spec = coupled_spectrum(&sys.with_transmon(sys.transmon.with_ng(ng).with_parity(parity)))?;
    let tf = sys.coupling.has_tf().then_some(TlsState::G);
    let mut out = [0.0; 2];
    for (k, tls) in [TlsState::G, TlsState::E].into_iter().enumerate() {
        let level = |qubit| {
            let label = LevelLabel { qubit, tls, tf };
            spec.level(label)
                .map(|l| l.energy)
                .ok_or_else(|| CliError::bad_input(format!("level {label} not identified at n_g = {ng}")))
        };
        out[k] = level(1)? - level(0)?;
    }
    Ok(out)
}

/// Offset charge of the dispersion maximum, from the phase of the first harmonic.
fn phase_center(ng: &[f64], nu: &[f64]) -> f64 {
    let (mut re, mut im) = (0.0, 0.0);
    for (&x, &y) in ng.iter().zip(nu) {
        re += y * (2.0 * PI * x).cos();
        im += y * (2.0 * PI * x).sin();
    }
    im.atan2(re) / (2.0 * PI)
}

fn wrap_half(x: f64) -> f64 {
    x - x.round()
}

fn summarize(sys: &CoupledSystem, rows: usize) -> CliResult<Summary> {
    let ng: Vec<f64> = (0..SUMMARY_POINTS).map(|k| k as f64 / SUMMARY_POINTS as f64).collect();
    let mut offset = 0.0;
    let mut shift = 0.0;
    for parity in [Parity::Even, Parity::Odd] {
        let mut g = Vec::with_capacity(ng.len());
        let mut e = Vec::with_capacity(ng.len());
        for &x in &ng {
            let [a, b] = transitions(sys, x, parity)?;
            g.push(a);
            e.push(b);
        }
        offset += e.iter().zip(&g).map(|(b, a)| b - a).sum::<f64>() / ng.len() as f64;
        shift += wrap_half(phase_center(&ng, &e) - phase_center(&ng, &g));
    }
    let db = dispersive_shift_with(sys, (0, 1), LabelMode::BestEffort)?;
    let band = dispersive_shift_band(sys, (0, 1), DEFAULT_BAND_POINTS, LabelMode::BestEffort)?;
    let expected_ng_shift = match sys.coupling {
        CouplingSpec::ChargeDipole { lambda, .. } => Some(2.0 * lambda * sys.tls.theta().cos()),
        _ => None,
    };
    Ok(Summary {
        rows,
        branch_offset_kHz: 0.5 * offset * 1e6,
        ng_shift: 0.5 * shift,
        dispersive_shift_kHz: db * 1e6,
        dispersive_shift_band_kHz: (band.0 * 1e6, band.1 * 1e6),
        expected_ng_shift,
    })
}

impl Task for SpectrumConfig {
    fn fallback() -> Option<Self> {
        Some(SpectrumConfig {
            system: reference_system(),
            ng_min: 0.0,
            ng_max: default_ng_max(),
            points: default_points(),
        })
    }

    fn run(&mut self, ctx: &mut Ctx) -> CliResult<Outcome> {
        let sys = self.system;
        sys.validate()?;
        if self.points < 2 {
            return Err(CliError::bad_input("points must be >= 2"));
        }
        if !(self.ng_min.is_finite() && self.ng_max.is_finite() && self.ng_max > self.ng_min) {
            return Err(CliError::bad_input("need finite ng_min < ng_max"));
        }
        let mut table = Table::new("spectrum", &["ng", "parity", "tls_state", "nu01_GHz"]);
        for k in 0..self.points {
            let ng = self.ng_min + (self.ng_max - self.ng_min) * k as f64 / (self.points - 1) as f64;
            for (parity, name) in [(Parity::Even, "even"), (Parity::Odd, "odd")] {
                let nu = transitions(&sys, ng, parity)?;
                table.push(vec![Cell::Num(ng), name.into(), "g".into(), Cell::Num(nu[0])]);
                table.push(vec![Cell::Num(ng), name.into(), "e".into(), Cell::Num(nu[1])]);
            }
        }
        ctx.sink.table(&table)?;
        let summary = summarize(&sys, table.rows.len())?;
        ctx.sink.json("summary.json", &summary)?;
        Ok(Outcome::Done)
    }
}
