//! Joint fit of avoided-crossing branches from several parity sets.

use serde::{Deserialize, Serialize};

use super::{nlls_fit, Bounds, FitOptions, FitResult};
use crate::error::{Error, Result};
use crate::spectra::{transmon_levels, FluxCalibration, TransmonParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Upper,
    Lower,
}

impl Branch {
    fn sign(self) -> f64 {
        match self {
            Branch::Upper => 1.0,
            Branch::Lower => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossingPoint {
    /// Coil current (A).
    pub current: f64,
    /// Measured frequency (GHz).
    pub frequency: f64,
    pub branch: Branch,
    /// Data set index; sets share g_C and ω_TLS and differ by a frequency offset.
    #[serde(default)]
    pub set: usize,
}

/// Qubit model and the flux calibration whose offset is refined by the fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossingModel {
    pub qubit: TransmonParams,
    pub calibration: FluxCalibration,
}

impl CrossingModel {
    /// Qubit ν01 at coil current `current` with calibration offset `offset`.
    pub fn qubit_frequency(&self, current: f64, offset: f64) -> Result<f64> {
        let flux = (current - offset) / self.calibration.period;
        let lv = transmon_levels(&self.qubit.with_flux(flux))?;
        Ok(lv[1] - lv[0])
    }

    /// Branch frequency `(ν_q + ω)/2 ± sqrt(g² + (ν_q − ω)²/4)`.
    pub fn branch_frequency(nu_q: f64, g: f64, w_tls: f64, branch: Branch) -> f64 {
        0.5 * (nu_q + w_tls) + branch.sign() * (g * g + 0.25 * (nu_q - w_tls).powi(2)).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossingInit {
    pub g: Option<f64>,
    pub w_tls: Option<f64>,
}

fn auto_init(points: &[CrossingPoint]) -> (f64, f64) {
    let mut best: Option<(f64, f64)> = None;
    for u in points.iter().filter(|p| p.branch == Branch::Upper) {
        for l in points.iter().filter(|p| {
            p.branch == Branch::Lower
                && p.set == u.set
                && (p.current - u.current).abs() <= 1e-9 * u.current.abs().max(1e-12)
        }) {
            let gap = u.frequency - l.frequency;
            if best.is_none_or(|(g, _)| gap < g) {
                best = Some((gap, 0.5 * (u.frequency + l.frequency)));
            }
        }
    }
    match best {
        Some((gap, mid)) => (0.5 * gap.max(0.0), mid),
        None => {
            let mut f: Vec<f64> = points.iter().map(|p| p.frequency).collect();
            f.sort_by(f64::total_cmp);
            (0.01, f[f.len() / 2])
        }
    }
}

/// Fit g_C, ω_TLS, the calibration offset and per-set frequency offsets.
/// Parameter names: `g`, `w_tls`, `current_offset`, `set_offset_1`, ….
pub fn fit_avoided_crossing(
    points: &[CrossingPoint],
    model: &CrossingModel,
    init: &CrossingInit,
) -> Result<FitResult> {
    model.qubit.validate()?;
    if points.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "{} crossing points, need at least 4",
            points.len()
        )));
    }
    let n_sets = points.iter().map(|p| p.set).max().unwrap_or(0) + 1;
    for s in 0..n_sets {
        if !points.iter().any(|p| p.set == s) {
            return Err(Error::invalid(format!("data set {s} has no points")));
        }
    }
    let (g_auto, w_auto) = auto_init(points);
    let g0 = init.g.unwrap_or(g_auto);
    let w0 = init.w_tls.unwrap_or(w_auto);
    let mut p0 = vec![g0, w0, model.calibration.offset];
    p0.extend(std::iter::repeat_n(0.0, n_sets - 1));
    let mut lower = vec![0.0, 0.0, f64::NEG_INFINITY];
    let mut upper = vec![f64::INFINITY; 3];
    lower.extend(std::iter::repeat_n(f64::NEG_INFINITY, n_sets - 1));
    upper.extend(std::iter::repeat_n(f64::INFINITY, n_sets - 1));

    let residuals = |p: &[f64]| -> Result<Vec<f64>> {
        points
            .iter()
            .map(|pt| {
                let shift = if pt.set == 0 { 0.0 } else { p[2 + pt.set] };
                let nu_q = model.qubit_frequency(pt.current, p[2])? + shift;
                Ok(CrossingModel::branch_frequency(nu_q, p[0], p[1], pt.branch) - pt.frequency)
            })
            .collect()
    };
    let mut fit = nlls_fit(residuals, &p0, Some(&Bounds::new(lower, upper)), &FitOptions::default())?;
    let mut names = vec!["g".to_string(), "w_tls".into(), "current_offset".into()];
    names.extend((1..n_sets).map(|s| format!("set_offset_{s}")));
    fit.names = names;

    let mut above = false;
    let mut below = false;
    for pt in points {
        let shift = if pt.set == 0 { 0.0 } else { fit.params[2 + pt.set] };
        let nu_q = model.qubit_frequency(pt.current, fit.params[2])? + shift;
        if nu_q > fit.params[1] {
            above = true;
        } else {
            below = true;
        }
    }
    if !(above && below) {
        return Err(Error::IllConditioned(
            "all points lie on one side of the crossing; g_C and ω_TLS are not separately identifiable"
                .into(),
        ));
    }
    Ok(fit)
}
