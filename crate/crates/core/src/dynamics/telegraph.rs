//! Telegraph traces: autocorrelation rate estimators and extrapolation to
//! zero measurement rate.

use serde::{Deserialize, Serialize};

use super::JointState;
use crate::error::{Error, Result};
use crate::fitting::{curve_fit, Bounds, FitOptions};
use crate::spectra::{Parity, TlsState};

/// Binary record sampled every `period` seconds. For parity traces bit 1
/// means even; for TLS traces bit 1 means `e`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelegraphTrace {
    pub values: Vec<u8>,
    pub period: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceLevel {
    Even,
    Odd,
    G,
    E,
}

impl TraceLevel {
    fn bit(self) -> u8 {
        match self {
            TraceLevel::Even | TraceLevel::E => 1,
            TraceLevel::Odd | TraceLevel::G => 0,
        }
    }
}

impl std::str::FromStr for TraceLevel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "even" => Ok(TraceLevel::Even),
            "odd" => Ok(TraceLevel::Odd),
            "g" => Ok(TraceLevel::G),
            "e" => Ok(TraceLevel::E),
            _ => Err(Error::invalid(format!("unknown trace level {s:?}; expected even, odd, g or e"))),
        }
    }
}

impl TelegraphTrace {
    pub fn new(values: Vec<u8>, period: f64) -> Result<Self> {
        if !(period.is_finite() && period > 0.0) {
            return Err(Error::invalid(format!("sampling period must be > 0, got {period}")));
        }
        if let Some(k) = values.iter().position(|&v| v > 1) {
            return Err(Error::invalid(format!("trace value {} at index {k} is not 0 or 1", values[k])));
        }
        Ok(TelegraphTrace { values, period })
    }

    pub fn parity_of(states: &[JointState], period: f64) -> Result<Self> {
        Self::new(
            states.iter().map(|s| u8::from(s.parity() == Parity::Even)).collect(),
            period,
        )
    }

    pub fn tls_of(states: &[JointState], period: f64) -> Result<Self> {
        Self::new(
            states.iter().map(|s| u8::from(s.tls() == TlsState::E)).collect(),
            period,
        )
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Every `k`-th sample, i.e. the same signal at `k` times the period.
    pub fn decimate(&self, k: usize) -> Self {
        TelegraphTrace {
            values: self.values.iter().step_by(k.max(1)).copied().collect(),
            period: self.period * k.max(1) as f64,
        }
    }

    fn indicator(&self, level: TraceLevel) -> Vec<bool> {
        let b = level.bit();
        self.values.iter().map(|&v| v == b).collect()
    }
}

fn lag_products(x: &[bool], n: usize) -> (f64, f64) {
    let m = x.len() - n;
    let mut num = 0u64;
    let mut den = 0u64;
    for i in 0..m {
        if x[i] {
            den += 1;
            if x[i + n] {
                num += 1;
            }
        }
    }
    (num as f64, den as f64)
}

/// `P_n = Σ S_i S_{i+n} / Σ S_i S_i` (sums over `i < N − n`) for `n = 0..=max_lag`;
/// `S_i` is 1 while the trace is at `level`. Lags with no occupancy give NaN.
pub fn autocorrelation(trace: &TelegraphTrace, level: TraceLevel, max_lag: usize) -> Vec<f64> {
    let x = trace.indicator(level);
    (0..=max_lag.min(x.len().saturating_sub(1)))
        .map(|n| {
            let (num, den) = lag_products(&x, n);
            if den > 0.0 {
                num / den
            } else {
                f64::NAN
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutocorrFit {
    pub level: TraceLevel,
    /// Correlation time (s).
    pub tau: f64,
    /// Decay constant along the lag axis, in samples (`tau / period`).
    pub tau_samples: f64,
    /// Long-lag plateau, the stationary occupation of `level`.
    pub s: f64,
    /// `s / τ`: rate into `level` (s⁻¹).
    pub gamma: f64,
    /// `(1 − s) / τ`: rate out of `level` (s⁻¹).
    pub rate_out: f64,
    pub lags: Vec<f64>,
}

const MIN_TRACE: usize = 1000;

/// Exponential-plus-offset fit of `P_n` out to about five correlation times.
pub fn autocorr_rate(trace: &TelegraphTrace, level: TraceLevel) -> Result<AutocorrFit> {
    if trace.len() < MIN_TRACE {
        return Err(Error::InsufficientData(format!(
            "trace has {} samples, need at least {MIN_TRACE}",
            trace.len()
        )));
    }
    let x = trace.indicator(level);
    let occ = x.iter().filter(|&&b| b).count() as f64 / x.len() as f64;
    if occ == 0.0 || occ == 1.0 {
        return Err(Error::InsufficientData(
            "trace never leaves (or never visits) the level; no decay resolvable, record a longer trace".into(),
        ));
    }
    // first guess of τ from the 1/e point of the normalized correlation
    let limit = x.len() / 10;
    let target = occ + (1.0 - occ) / std::f64::consts::E;
    let mut tau0 = None;
    let mut pc = Vec::new();
    for n in 0..=limit {
        let (num, den) = lag_products(&x, n);
        let p = num / den;
        pc.push(p);
        if n > 0 && p <= target {
            let prev = pc[n - 1];
            let frac = (prev - target) / (prev - p);
            tau0 = Some((n as f64 - 1.0 + frac).max(0.2));
            break;
        }
    }
    let tau0 = tau0.ok_or_else(|| {
        Error::InsufficientData(format!(
            "autocorrelation does not decay within {limit} lags; record a longer trace"
        ))
    })?;
    let n_max = ((5.0 * tau0).ceil() as usize).max(5).min(x.len() / 2);
    let mut lags = pc.clone();
    for n in lags.len()..=n_max {
        let (num, den) = lag_products(&x, n);
        lags.push(num / den);
    }
    lags.truncate(n_max + 1);

    let xs: Vec<f64> = (1..=n_max).map(|n| n as f64).collect();
    let ys: Vec<f64> = xs.iter().map(|&n| lags[n as usize]).collect();
    let model = |n: f64, p: &[f64]| p[0] + p[1] * (-n / p[2]).exp();
    let bounds = Bounds::new(vec![0.0, 0.0, 1e-3], vec![1.0, 2.0, 1e3 * n_max as f64]);
    let fit = curve_fit(
        model,
        &xs,
        &ys,
        None,
        &[occ, 1.0 - occ, tau0],
        Some(&bounds),
        &FitOptions::default(),
    )?;
    let (s, tau_n) = (fit.params[0], fit.params[2]);
    let tau = tau_n * trace.period;
    Ok(AutocorrFit {
        level,
        tau,
        tau_samples: tau_n,
        s,
        gamma: s / tau,
        rate_out: (1.0 - s) / tau,
        lags,
    })
}

/// Estimate from the whole trace with a standard error from `blocks`
/// contiguous sub-traces.
pub fn autocorr_rate_blocked(trace: &TelegraphTrace, level: TraceLevel, blocks: usize) -> Result<(AutocorrFit, f64)> {
    let full = autocorr_rate(trace, level)?;
    if blocks < 2 {
        return Err(Error::invalid("need at least 2 blocks"));
    }
    let size = trace.len() / blocks;
    let gammas: Vec<f64> = (0..blocks)
        .filter_map(|k| {
            let sub = TelegraphTrace {
                values: trace.values[k * size..(k + 1) * size].to_vec(),
                period: trace.period,
            };
            autocorr_rate(&sub, level).ok().map(|f| f.gamma)
        })
        .collect();
    if gammas.len() < 2 {
        return Err(Error::InsufficientData("too few blocks produced an estimate".into()));
    }
    let m = gammas.len() as f64;
    let mean = gammas.iter().sum::<f64>() / m;
    let var = gammas.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (m - 1.0);
    Ok((full, (var / m).sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParityRate {
    /// Even → odd (rate into odd).
    pub gamma_eo: f64,
    /// Odd → even (rate into even).
    pub gamma_oe: f64,
    /// Mean of the two.
    pub gamma_p: f64,
}

pub fn parity_rate(trace: &TelegraphTrace) -> Result<ParityRate> {
    let gamma_eo = autocorr_rate(trace, TraceLevel::Odd)?.gamma;
    let gamma_oe = autocorr_rate(trace, TraceLevel::Even)?.gamma;
    Ok(ParityRate {
        gamma_eo,
        gamma_oe,
        gamma_p: 0.5 * (gamma_eo + gamma_oe),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Extrapolation {
    pub intercept: f64,
    pub intercept_se: f64,
    pub slope: f64,
    pub slope_se: f64,
    pub ci95: (f64, f64),
    /// Intercept negative by more than two standard errors.
    pub unphysical: bool,
}

/// Weighted straight-line fit of `(measurement rate, Γ, σ)` points, evaluated
/// at zero measurement rate.
pub fn extrapolate_rate(points: &[(f64, f64, f64)]) -> Result<Extrapolation> {
    if points.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "{} points, need at least 3",
            points.len()
        )));
    }
    if points
        .iter()
        .any(|&(x, y, s)| !(x.is_finite() && y.is_finite() && s.is_finite() && s > 0.0))
    {
        return Err(Error::invalid("points must be finite with sigma > 0"));
    }
    let w: Vec<f64> = points.iter().map(|p| 1.0 / (p.2 * p.2)).collect();
    let sw: f64 = w.iter().sum();
    let xm = points.iter().zip(&w).map(|(p, w)| w * p.0).sum::<f64>() / sw;
    let ym = points.iter().zip(&w).map(|(p, w)| w * p.1).sum::<f64>() / sw;
    let sxx: f64 = points.iter().zip(&w).map(|(p, w)| w * (p.0 - xm).powi(2)).sum();
    let sxy: f64 = points
        .iter()
        .zip(&w)
        .map(|(p, w)| w * (p.0 - xm) * (p.1 - ym))
        .sum();
    if !(sxx > 0.0) {
        return Err(Error::IllConditioned("all measurement rates are equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let intercept_se = (1.0 / sw + xm * xm / sxx).sqrt();
    let slope_se = (1.0 / sxx).sqrt();
    Ok(Extrapolation {
        intercept,
        intercept_se,
        slope,
        slope_se,
        ci95: (intercept - 1.96 * intercept_se, intercept + 1.96 * intercept_se),
        unphysical: intercept < -2.0 * intercept_se,
    })
}
