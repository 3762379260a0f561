//! Dispersive-shift curves fitted with the exact coupled-model forward map.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{nlls_fit, Bounds, FitOptions, FitResult};
use crate::coupling::{coupled_spectrum, dispersive_shift_with, CoupledSystem, CouplingSpec, LabelMode};
use crate::error::{Error, Result};
use crate::spectra::{flux_for_frequency, TlsParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftPoint {
    /// Parity-averaged bare ν̄01 (GHz) locating the flux bias.
    pub nu01_bar: f64,
    /// Measured δ_b (GHz).
    pub shift: f64,
    pub transition: (usize, usize),
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftFitOptions {
    /// Parameters held at their template values, in [`model_params`] order.
    #[serde(default)]
    pub fixed: Vec<bool>,
    /// Grid points per free parameter for the landscape scan reported on failure.
    #[serde(default)]
    pub landscape_points: Option<usize>,
}

/// Names and values of the fitted parameters for the template's model:
/// ChargeDipole `[lambda, theta, w_tls]`, CriticalCurrent/FluxLoop
/// `[jc, theta, w_tls]`, TlsTf `[jc, dw_tls, w_tls]`.
pub fn model_params(template: &CoupledSystem) -> (Vec<&'static str>, Vec<f64>) {
    let w = template.tls.frequency();
    match template.coupling {
        CouplingSpec::ChargeDipole { lambda, .. } => {
            (vec!["lambda", "theta", "w_tls"], vec![lambda, template.tls.theta(), w])
        }
        CouplingSpec::CriticalCurrent { jc, theta } | CouplingSpec::FluxLoop { jc, theta } => {
            (vec!["jc", "theta", "w_tls"], vec![jc, theta, w])
        }
        CouplingSpec::TlsTf { jc, dw_tls } => (vec!["jc", "dw_tls", "w_tls"], vec![jc, dw_tls, w]),
    }
}

fn param_bounds(template: &CoupledSystem) -> Bounds {
    match template.coupling {
        CouplingSpec::ChargeDipole { .. } => {
            Bounds::new(vec![0.0, 0.0, 1e-6], vec![f64::INFINITY, PI / 2.0, f64::INFINITY])
        }
        CouplingSpec::CriticalCurrent { .. } | CouplingSpec::FluxLoop { .. } => {
            Bounds::new(vec![0.0, 0.0, 1e-6], vec![f64::INFINITY, PI, f64::INFINITY])
        }
        CouplingSpec::TlsTf { .. } => Bounds::new(
            vec![f64::NEG_INFINITY, f64::NEG_INFINITY, 1e-6],
            vec![f64::INFINITY; 3],
        ),
    }
}

fn system_with(template: &CoupledSystem, p: &[f64]) -> CoupledSystem {
    let mut sys = *template;
    match template.coupling {
        CouplingSpec::ChargeDipole { .. } => {
            sys.tls = TlsParams::from_frequency(p[2], p[1]);
            sys.coupling = CouplingSpec::ChargeDipole {
                lambda: p[0],
                jc: None,
            };
        }
        CouplingSpec::CriticalCurrent { .. } => {
            sys.tls = TlsParams::from_frequency(p[2], template.tls.theta());
            sys.coupling = CouplingSpec::CriticalCurrent { jc: p[0], theta: p[1] };
        }
        CouplingSpec::FluxLoop { .. } => {
            sys.tls = TlsParams::from_frequency(p[2], template.tls.theta());
            sys.coupling = CouplingSpec::FluxLoop { jc: p[0], theta: p[1] };
        }
        CouplingSpec::TlsTf { .. } => {
            sys.tls = TlsParams::from_frequency(p[2], template.tls.theta());
            sys.coupling = CouplingSpec::TlsTf {
                jc: p[0],
                dw_tls: p[1],
            };
        }
    }
    sys
}

fn fluxes_for(template: &CoupledSystem, data: &[ShiftPoint]) -> Result<Vec<f64>> {
    data.iter()
        .map(|d| flux_for_frequency(&template.transmon, d.nu01_bar))
        .collect()
}

fn predict_at(template: &CoupledSystem, p: &[f64], fluxes: &[f64], data: &[ShiftPoint]) -> Result<Vec<f64>> {
    let sys = system_with(template, p);
    fluxes
        .par_iter()
        .zip(data.par_iter())
        .map(|(&flux, d)| {
            let s = sys.with_transmon(sys.transmon.with_flux(flux));
            dispersive_shift_with(&s, d.transition, LabelMode::BestEffort)
        })
        .collect()
}

/// Forward model: δ_b at each data point's bias for parameter vector `p`.
pub fn predict_shifts(template: &CoupledSystem, p: &[f64], data: &[ShiftPoint]) -> Result<Vec<f64>> {
    let fluxes = fluxes_for(template, data)?;
    predict_at(template, p, &fluxes, data)
}

fn landscape(
    template: &CoupledSystem,
    p0: &[f64],
    free: &[usize],
    bounds: &Bounds,
    fluxes: &[f64],
    data: &[ShiftPoint],
    per_axis: usize,
) -> Option<(Vec<f64>, f64)> {
    let per_axis = per_axis.max(2);
    let total = per_axis.pow(free.len() as u32);
    (0..total)
        .into_par_iter()
        .filter_map(|mut idx| {
            let mut p = p0.to_vec();
            for &k in free {
                let t = (idx % per_axis) as f64 / (per_axis - 1) as f64;
                idx /= per_axis;
                let (lo, hi) = if p0[k] != 0.0 {
                    (0.5 * p0[k], 1.5 * p0[k])
                } else {
                    (-0.1, 0.1)
                };
                let (lo, hi) = (lo.min(hi), lo.max(hi));
                p[k] = (lo + t * (hi - lo)).clamp(bounds.lower[k], bounds.upper[k]);
            }
            let pred = predict_at(template, &p, fluxes, data).ok()?;
            let cost: f64 = pred
                .iter()
                .zip(data)
                .map(|(y, d)| ((y - d.shift) / d.sigma.unwrap_or(1.0)).powi(2))
                .sum();
            Some((p, cost.sqrt()))
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
}

/// Fit the template's coupling parameters to measured shifts. Data inside a
/// resonance window of the template are rejected.
pub fn fit_shift_curve(
    data: &[ShiftPoint],
    template: &CoupledSystem,
    opts: &ShiftFitOptions,
) -> Result<FitResult> {
    template.validate()?;
    if data.is_empty() {
        return Err(Error::InsufficientData("no shift data".into()));
    }
    if data.iter().any(|d| d.sigma.is_some_and(|s| !(s > 0.0))) {
        return Err(Error::invalid("sigma must be > 0"));
    }
    let fluxes = fluxes_for(template, data)?;
    for (k, (d, &flux)) in data.iter().zip(&fluxes).enumerate() {
        let spec = coupled_spectrum(&template.with_transmon(template.transmon.with_flux(flux)))?;
        if spec.in_window(d.transition) {
            return Err(Error::invalid(format!(
                "data point {k} (ν̄01 = {} GHz, transition {:?}) lies inside a resonance window",
                d.nu01_bar, d.transition
            )));
        }
    }
    let (names, p0) = model_params(template);
    let bounds = param_bounds(template);
    let fit_opts = FitOptions {
        fixed: opts.fixed.clone(),
        absolute_sigma: data.iter().all(|d| d.sigma.is_some()),
        ..Default::default()
    };
    let mut fit = nlls_fit(
        |p| {
            let pred = predict_at(template, p, &fluxes, data)?;
            Ok(pred
                .iter()
                .zip(data)
                .map(|(y, d)| (y - d.shift) / d.sigma.unwrap_or(1.0))
                .collect())
        },
        &p0,
        Some(&bounds),
        &fit_opts,
    )?;
    fit = fit.with_names(&names);
    if !fit.converged {
        let free: Vec<usize> = (0..p0.len())
            .filter(|&k| opts.fixed.get(k).map_or(true, |f| !f))
            .collect();
        let best = landscape(
            template,
            &p0,
            &free,
            &bounds,
            &fluxes,
            data,
            opts.landscape_points.unwrap_or(5),
        );
        let detail = match best {
            Some((p, norm)) => format!(
                "best landscape point {} with residual norm {norm:.4e}",
                names
                    .iter()
                    .zip(&p)
                    .map(|(n, v)| format!("{n}={v:.6}"))
                    .collect::<Vec<_>>()
                    .join(", ")
            ),
            None => "landscape scan produced no valid point".into(),
        };
        return Err(Error::NotConverged(format!(
            "{} model after {} iterations (residual norm {:.4e}); {detail}",
            template.coupling.name(),
            fit.iterations,
            fit.residual_norm
        )));
    }
    Ok(fit)
}
