//! Stratified nonparametric bootstrap over shot records.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::counts::ShotRecord;
use crate::error::{Error, Result};

pub const DEFAULT_RESAMPLES: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    /// Estimator applied to the original records.
    pub estimate: Vec<f64>,
    pub ci68: Vec<(f64, f64)>,
    pub ci95: Vec<(f64, f64)>,
    pub std: Vec<f64>,
    pub resamples: usize,
    pub failed: usize,
}

impl BootstrapResult {
    pub fn contains95(&self, k: usize, value: f64) -> bool {
        let (lo, hi) = self.ci95[k];
        lo <= value && value <= hi
    }
}

/// Linear-interpolation percentile (`q` in [0, 1]) of sorted data.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Resample valid records with replacement inside each `(S, delay)` group,
/// rerun `estimator` and report percentile intervals. Resample `b` draws from
/// its own stream of `seed`, so results do not depend on thread scheduling.
pub fn bootstrap<E>(records: &[ShotRecord], estimator: E, b: usize, seed: u64) -> Result<BootstrapResult>
where
    E: Fn(&[ShotRecord]) -> Result<Vec<f64>> + Sync,
{
    if b < 100 {
        return Err(Error::invalid(format!("bootstrap needs at least 100 resamples, got {b}")));
    }
    let valid: Vec<ShotRecord> = records.iter().copied().filter(|r| r.valid).collect();
    let mut groups: BTreeMap<(usize, i64), Vec<ShotRecord>> = BTreeMap::new();
    for r in &valid {
        groups
            .entry((r.s.index(), (r.delay_s * 1e12).round() as i64))
            .or_default()
            .push(*r);
    }
    let groups: Vec<Vec<ShotRecord>> = groups.into_values().collect();
    let estimate = estimator(&valid)?;
    let k = estimate.len();

    let draws: Vec<Option<Vec<f64>>> = (0..b)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut sample = Vec::with_capacity(valid.len());
            for g in &groups {
                for _ in 0..g.len() {
                    sample.push(g[rng.random_range(0..g.len())]);
                }
            }
            match estimator(&sample) {
                Ok(v) if v.len() == k && v.iter().all(|x| x.is_finite()) => Some(v),
                _ => None,
            }
        })
        .collect();
    let ok: Vec<Vec<f64>> = draws.into_iter().flatten().collect();
    let failed = b - ok.len();
    if failed * 10 > b {
        return Err(Error::BootstrapFailure { failed, total: b });
    }

    let mut ci68 = Vec::with_capacity(k);
    let mut ci95 = Vec::with_capacity(k);
    let mut std = Vec::with_capacity(k);
    for p in 0..k {
        let mut col: Vec<f64> = ok.iter().map(|v| v[p]).collect();
        col.sort_by(f64::total_cmp);
        ci68.push((percentile(&col, 0.16), percentile(&col, 0.84)));
        ci95.push((percentile(&col, 0.025), percentile(&col, 0.975)));
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (col.len().max(2) - 1) as f64;
        std.push(var.sqrt());
    }
    Ok(BootstrapResult {
        estimate,
        ci68,
        ci95,
        std,
        resamples: b,
        failed,
    })
}
