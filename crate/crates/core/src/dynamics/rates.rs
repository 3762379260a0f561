//! Weighted least-squares inference of the 12 joint-state transition rates.

use serde::{Deserialize, Serialize};

use super::counts::CondProbs;
use super::{GeneratorMatrix, JointState};
use crate::error::{Error, Result};
use crate::fitting::{nlls_fit, Bounds, FitOptions, FitResult};

/// Rates at or below this value (s⁻¹) are reported as effectively zero.
pub const RATE_FLOOR: f64 = 1e-4;
const RATE_CEIL: f64 = 1e8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateFitOptions {
    /// Rows with fewer shots are left out of the fit.
    pub min_shots: f64,
    pub min_bins: usize,
    pub fit: FitOptions,
}

impl Default for RateFitOptions {
    fn default() -> Self {
        RateFitOptions {
            min_shots: 50.0,
            min_bins: 4,
            fit: FitOptions {
                max_iter: 300,
                ..FitOptions::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub from: JointState,
    pub to: JointState,
    pub rate: f64,
    pub std_error: f64,
    pub at_floor: bool,
}

impl RateEstimate {
    pub fn name(&self) -> String {
        rate_name(self.from, self.to)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub generator: GeneratorMatrix,
    pub rates: Vec<RateEstimate>,
    /// Fit in log-rate space; names are `ln(gO->gE)` etc.
    pub fit: FitResult,
    pub converged: bool,
    /// Longest delay times the fastest fitted exit rate.
    pub span: f64,
}

impl RateFit {
    pub fn rate(&self, from: JointState, to: JointState) -> Option<&RateEstimate> {
        self.rates.iter().find(|r| r.from == from && r.to == to)
    }

    /// Rates in the fixed `(from, to)` order of [`rate_pairs`].
    pub fn values(&self) -> Vec<f64> {
        self.rates.iter().map(|r| r.rate).collect()
    }
}

pub fn rate_name(from: JointState, to: JointState) -> String {
    format!("{from}->{to}")
}

/// The 12 off-diagonal `(from, to)` pairs, `from`-major.
pub fn rate_pairs() -> Vec<(JointState, JointState)> {
    let mut out = Vec::with_capacity(12);
    for from in JointState::ALL {
        for to in JointState::ALL {
            if from != to {
                out.push((from, to));
            }
        }
    }
    out
}

fn generator_from(pairs: &[(JointState, JointState)], rates: &[f64]) -> Result<GeneratorMatrix> {
    let triples: Vec<_> = pairs
        .iter()
        .zip(rates)
        .map(|(&(f, t), &r)| (f, t, r))
        .collect();
    GeneratorMatrix::from_rates(&triples)
}

struct Row {
    bin: usize,
    from: usize,
    p: [f64; 4],
    sigma: [f64; 4],
}

/// Fit all 16 conditional-probability curves simultaneously.
pub fn fit_rates(cp: &CondProbs, opts: &RateFitOptions) -> Result<RateFit> {
    let mut rows = Vec::new();
    let mut used_bins = Vec::new();
    let data = if cp.unclipped.len() == cp.cond.len() { &cp.unclipped } else { &cp.cond };
    for (b, p) in data.iter().enumerate() {
        let mut any = false;
        for i in 0..4 {
            let n = cp.row_shots[b][i];
            if n < opts.min_shots || p[i].iter().any(|v| !v.is_finite()) {
                continue;
            }
            let raw = cp.raw[b][i];
            if raw.iter().any(|v| !v.is_finite()) {
                continue;
            }
            let mut sigma = [0.0; 4];
            for j in 0..4 {
                let k = raw[j].clamp(0.0, 1.0) * n;
                let pt = (k + 1.0) / (n + 2.0);
                sigma[j] = (pt * (1.0 - pt) / n).sqrt();
            }
            rows.push(Row {
                bin: b,
                from: i,
                p: p[i],
                sigma,
            });
            any = true;
        }
        if any {
            used_bins.push(b);
        }
    }
    if used_bins.len() < opts.min_bins {
        return Err(Error::InsufficientData(format!(
            "{} usable delay bins (>= {} shots per row), need {}",
            used_bins.len(),
            opts.min_shots,
            opts.min_bins
        )));
    }
    let max_delay = used_bins.iter().map(|&b| cp.delays[b]).fold(0.0, f64::max);
    if max_delay <= 0.0 {
        return Err(Error::InsufficientData("all usable delays are zero".into()));
    }

    let pairs = rate_pairs();
    let p0 = initial_log_rates(cp, &used_bins, &pairs);
    let residuals = |x: &[f64]| -> Result<Vec<f64>> {
        let rates: Vec<f64> = x.iter().map(|v| v.exp()).collect();
        let gen = generator_from(&pairs, &rates)?;
        let mut out = Vec::with_capacity(rows.len() * 4);
        let mut cache: Option<(usize, nalgebra::Matrix4<f64>)> = None;
        for row in &rows {
            let cond = match cache {
                Some((b, m)) if b == row.bin => m,
                _ => {
                    let m = gen.conditional(cp.delays[row.bin])?;
                    cache = Some((row.bin, m));
                    m
                }
            };
            for j in 0..4 {
                out.push((cond[(row.from, j)] - row.p[j]) / row.sigma[j]);
            }
        }
        Ok(out)
    };
    let n = pairs.len();
    let bounds = Bounds::new(vec![RATE_FLOOR.ln(); n], vec![RATE_CEIL.ln(); n]);
    let mut fit = nlls_fit(&residuals, &p0, Some(&bounds), &opts.fit)?;
    // In log space the gradient of a vanishing rate vanishes too, so LM stalls
    // short of the floor; move each small rate there if that does not cost anything.
    let floor_ln = RATE_FLOOR.ln();
    let cost = |x: &[f64]| residuals(x).map(|r| r.iter().map(|v| v * v).sum::<f64>());
    let mut best = cost(&fit.params)?;
    for k in 0..n {
        if fit.params[k] <= floor_ln || fit.params[k].exp() * max_delay > 0.01 {
            continue;
        }
        let mut trial = fit.params.clone();
        trial[k] = floor_ln;
        let c = cost(&trial)?;
        if c <= best {
            best = c;
            fit.params = trial;
        }
    }
    fit.residual_norm = best.sqrt();
    fit.names = pairs
        .iter()
        .map(|&(f, t)| format!("ln({})", rate_name(f, t)))
        .collect();

    let values: Vec<f64> = fit.params.iter().map(|v| v.exp()).collect();
    let rates: Vec<RateEstimate> = pairs
        .iter()
        .enumerate()
        .map(|(k, &(from, to))| RateEstimate {
            from,
            to,
            rate: values[k],
            // delta method: σ_r = r σ_ln r
            std_error: values[k] * fit.std_errors[k],
            at_floor: fit.params[k] <= floor_ln + 1e-6,
        })
        .collect();
    let generator = generator_from(&pairs, &values)?;
    let span = max_delay * generator.max_rate();
    let converged = fit.converged;
    if span < 1.0 && fit.message.is_none() {
        fit.message = Some(format!(
            "delays span only {span:.2} characteristic times; rates poorly constrained"
        ));
    }
    Ok(RateFit {
        generator,
        rates,
        fit,
        converged,
        span,
    })
}

/// Log-rates from the first-order expansion `P(t) ≈ I + Γᵀt` at the shortest
/// positive delay.
fn initial_log_rates(cp: &CondProbs, bins: &[usize], pairs: &[(JointState, JointState)]) -> Vec<f64> {
    let first = bins
        .iter()
        .copied()
        .filter(|&b| cp.delays[b] > 0.0)
        .min_by(|&a, &b| cp.delays[a].total_cmp(&cp.delays[b]));
    let max_delay = bins.iter().map(|&b| cp.delays[b]).fold(0.0, f64::max);
    let fallback = 0.1 / max_delay;
    pairs
        .iter()
        .map(|&(from, to)| {
            let guess = first
                .map(|b| {
                    let p = cp.cond[b][from.index()][to.index()];
                    let t = cp.delays[b];
                    // saturated transitions carry no slope information
                    if p.is_finite() && p < 0.5 {
                        -(1.0 - p).ln() / t
                    } else {
                        fallback
                    }
                })
                .unwrap_or(fallback);
            guess.clamp(fallback.min(1.0), RATE_CEIL / 10.0).max(RATE_FLOOR * 10.0).ln()
        })
        .collect()
}
