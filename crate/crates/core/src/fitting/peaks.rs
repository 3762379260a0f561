//! Multi-Lorentzian spectroscopy fits.

use serde::{Deserialize, Serialize};

use super::{nlls_fit, Bounds, FitOptions, FitResult};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectroscopyTrace {
    /// Probe frequencies (GHz), strictly increasing.
    pub freqs: Vec<f64>,
    /// Excited-state probability.
    pub response: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_sigma: Option<Vec<f64>>,
}

impl SpectroscopyTrace {
    pub fn new(freqs: Vec<f64>, response: Vec<f64>, noise_sigma: Option<Vec<f64>>) -> Result<Self> {
        let t = SpectroscopyTrace {
            freqs,
            response,
            noise_sigma,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.freqs.len() != self.response.len() {
            return Err(Error::invalid("freqs and response lengths differ"));
        }
        if let Some(s) = &self.noise_sigma {
            if s.len() != self.freqs.len() {
                return Err(Error::invalid("noise_sigma length differs from freqs"));
            }
            if s.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(Error::invalid("noise_sigma entries must be > 0"));
            }
        }
        if self.freqs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("freqs must be strictly increasing"));
        }
        if self.response.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::invalid("response must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }
}

/// `baseline + Σ A_k / (1 + ((f − c_k)/γ_k)²)` with parameters
/// `[c_0, γ_0, A_0, c_1, …, baseline]`; γ is the half width at half maximum.
pub fn lorentzian_sum(f: f64, p: &[f64]) -> f64 {
    let n = (p.len() - 1) / 3;
    let mut y = p[3 * n];
    for k in 0..n {
        let (c, w, a) = (p[3 * k], p[3 * k + 1], p[3 * k + 2]);
        let x = (f - c) / w;
        y += a / (1.0 + x * x);
    }
    y
}

fn moving_average(y: &[f64], half: usize) -> Vec<f64> {
    (0..y.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(y.len());
            y[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Noise from the median absolute deviation of first differences.
fn noise_estimate(y: &[f64]) -> f64 {
    let mut d: Vec<f64> = y.windows(2).map(|w| w[1] - w[0]).collect();
    if d.is_empty() {
        return 0.0;
    }
    let med = median(&mut d.clone());
    let mut dev: Vec<f64> = d.iter_mut().map(|x| (*x - med).abs()).collect();
    1.4826 * median(&mut dev) / 2f64.sqrt()
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    index: usize,
    prominence: f64,
}

/// Local maxima with topographic prominence.
fn prominences(y: &[f64]) -> Vec<Candidate> {
    let n = y.len();
    let mut out = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if y[i] > y[i - 1] {
            // walk across a plateau
            let mut j = i;
            while j + 1 < n && y[j + 1] == y[i] {
                j += 1;
            }
            if j + 1 < n && y[j + 1] < y[i] {
                let peak = (i + j) / 2;
                let h = y[peak];
                let mut left_min = h;
                let mut k = peak;
                while k > 0 {
                    k -= 1;
                    if y[k] > h {
                        break;
                    }
                    left_min = left_min.min(y[k]);
                }
                let mut right_min = h;
                let mut k = peak;
                while k + 1 < n {
                    k += 1;
                    if y[k] > h {
                        break;
                    }
                    right_min = right_min.min(y[k]);
                }
                out.push(Candidate {
                    index: peak,
                    prominence: h - left_min.max(right_min),
                });
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    out
}

fn half_width(f: &[f64], y: &[f64], peak: usize, level: f64) -> f64 {
    let mut l = peak;
    while l > 0 && y[l] > level {
        l -= 1;
    }
    let mut r = peak;
    while r + 1 < y.len() && y[r] > level {
        r += 1;
    }
    let spacing = (f[f.len() - 1] - f[0]) / (f.len() - 1) as f64;
    (0.5 * (f[r] - f[l])).max(spacing)
}

/// Fit `n_peaks` Lorentzians plus a constant baseline. Parameters are returned
/// with centers in ascending order and named `center_k`, `width_k`,
/// `amplitude_k`, `baseline`.
pub fn fit_lorentzians(trace: &SpectroscopyTrace, n_peaks: usize) -> Result<FitResult> {
    trace.validate()?;
    if n_peaks == 0 {
        return Err(Error::invalid("n_peaks must be >= 1"));
    }
    if trace.len() < 3 * n_peaks + 2 {
        return Err(Error::InsufficientData(format!(
            "{} points for {n_peaks} peaks",
            trace.len()
        )));
    }
    let f = &trace.freqs;
    let y = &trace.response;
    let smooth = moving_average(y, 2);
    let sigma = match &trace.noise_sigma {
        Some(s) => median(&mut s.clone()),
        None => noise_estimate(y),
    };
    // averaging five points reduces white noise by √5
    let threshold = 3.0 * sigma / 5f64.sqrt();
    let mut cands: Vec<Candidate> = prominences(&smooth)
        .into_iter()
        .filter(|c| c.prominence > threshold)
        .collect();
    if cands.len() < n_peaks {
        return Err(Error::InsufficientPeaks {
            found: cands.len(),
            wanted: n_peaks,
        });
    }
    cands.sort_by(|a, b| b.prominence.total_cmp(&a.prominence));
    cands.truncate(n_peaks);
    cands.sort_by_key(|c| c.index);

    let baseline = {
        let mut s = smooth.clone();
        s.sort_by(f64::total_cmp);
        s[s.len() / 10]
    };
    let span = f[f.len() - 1] - f[0];
    let spacing = span / (f.len() - 1) as f64;
    let mut p0 = Vec::with_capacity(3 * n_peaks + 1);
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    for c in &cands {
        let h = smooth[c.index];
        let w = half_width(f, &smooth, c.index, h - 0.5 * c.prominence);
        p0.extend([f[c.index], w, (h - baseline).max(1e-6)]);
        lower.extend([f[0], 0.05 * spacing, 0.0]);
        upper.extend([f[f.len() - 1], span, 2.0]);
    }
    p0.push(baseline);
    lower.push(-1.0);
    upper.push(1.0);
    for k in 0..p0.len() {
        p0[k] = p0[k].clamp(lower[k], upper[k]);
    }
    let bounds = Bounds::new(lower, upper);
    let weights: Vec<f64> = match &trace.noise_sigma {
        Some(s) => s.iter().map(|v| 1.0 / v).collect(),
        None => vec![1.0; f.len()],
    };
    let opts = FitOptions {
        absolute_sigma: trace.noise_sigma.is_some(),
        ..Default::default()
    };
    let mut fit = nlls_fit(
        |p| {
            Ok(f.iter()
                .zip(y)
                .zip(&weights)
                .map(|((&fi, &yi), &w)| (lorentzian_sum(fi, p) - yi) * w)
                .collect())
        },
        &p0,
        Some(&bounds),
        &opts,
    )?;
    let mut names = Vec::new();
    for k in 0..n_peaks {
        names.extend([format!("center_{k}"), format!("width_{k}"), format!("amplitude_{k}")]);
    }
    names.push("baseline".into());
    fit.names = names;

    let mut order: Vec<usize> = (0..n_peaks).collect();
    order.sort_by(|&a, &b| fit.params[3 * a].total_cmp(&fit.params[3 * b]));
    let mut perm: Vec<usize> = order.iter().flat_map(|&k| [3 * k, 3 * k + 1, 3 * k + 2]).collect();
    perm.push(3 * n_peaks);
    let names_sorted = fit.names.clone();
    fit.permute(&perm);
    fit.names = names_sorted;

    for k in 1..n_peaks {
        let gap = fit.params[3 * k] - fit.params[3 * (k - 1)];
        let width = fit.params[3 * k + 1].max(fit.params[3 * (k - 1) + 1]);
        if gap < 0.5 * width {
            fit.degenerate = true;
            fit.message = Some(format!(
                "peaks {} and {k} closer ({gap:.3e} GHz) than half their width",
                k - 1
            ));
        }
    }
    Ok(fit)
}
