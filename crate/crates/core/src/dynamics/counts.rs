//! Shot records, conditional probabilities and confusion-matrix correction.

use std::collections::BTreeMap;

use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};

use super::JointState;
use crate::error::{Error, Result};

pub type Mat4 = [[f64; 4]; 4];

pub(crate) fn to_matrix(a: &Mat4) -> Matrix4<f64> {
    Matrix4::from_fn(|i, j| a[i][j])
}

pub(crate) fn from_matrix(m: &Matrix4<f64>) -> Mat4 {
    let mut out = [[0.0; 4]; 4];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = m[(i, j)];
        }
    }
    out
}

/// One protocol outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShotRecord {
    /// Wall-clock time at which the shot started (s).
    pub t: f64,
    #[serde(rename = "S")]
    pub s: JointState,
    pub delay_s: f64,
    #[serde(rename = "S_prime")]
    pub s_prime: JointState,
    pub valid: bool,
}

/// Raw counts `counts[S][S']` at one delay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayBin {
    pub delay: f64,
    pub counts: [[u64; 4]; 4],
}

impl DelayBin {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_total(&self, s: usize) -> u64 {
        self.counts[s].iter().sum()
    }
}

/// Per-delay joint frequencies `A`, conditional probabilities `P` and their
/// binomial standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CondProbs {
    pub delays: Vec<f64>,
    /// `A_ij(t)`, normalized over all records at `t`.
    pub joint: Vec<Mat4>,
    /// `P_ij(t) = A_ij / Σ_j A_ij`; rows with no shots are NaN.
    pub cond: Vec<Mat4>,
    /// Uncorrected conditional probabilities; binomial weights come from these
    /// so that a confusion correction does not sharpen them.
    pub raw: Vec<Mat4>,
    /// Corrected conditional probabilities before clipping. Clipping biases
    /// near-zero entries upward, so rate fits use these when present.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unclipped: Vec<Mat4>,
    pub std_err: Vec<Mat4>,
    /// Shots behind each row (effective after correction).
    pub row_shots: Vec<[f64; 4]>,
    /// `(delay index, S)` rows without any shots.
    pub empty: Vec<(usize, JointState)>,
}

impl CondProbs {
    /// Build from joint frequencies and total shots per delay.
    pub fn from_joint(delays: Vec<f64>, joint: Vec<Mat4>, totals: &[f64]) -> Self {
        let mut cond = Vec::with_capacity(joint.len());
        let mut std_err = Vec::with_capacity(joint.len());
        let mut row_shots = Vec::with_capacity(joint.len());
        let mut empty = Vec::new();
        for (b, a) in joint.iter().enumerate() {
            let mut p = [[f64::NAN; 4]; 4];
            let mut se = [[f64::NAN; 4]; 4];
            let mut rows = [0.0; 4];
            for i in 0..4 {
                let row: f64 = a[i].iter().sum();
                rows[i] = row * totals[b];
                if row <= 0.0 {
                    empty.push((b, JointState::ALL[i]));
                    continue;
                }
                for j in 0..4 {
                    p[i][j] = a[i][j] / row;
                    se[i][j] = (p[i][j] * (1.0 - p[i][j]) / rows[i]).max(0.0).sqrt();
                }
            }
            cond.push(p);
            std_err.push(se);
            row_shots.push(rows);
        }
        CondProbs {
            delays,
            joint,
            raw: cond.clone(),
            unclipped: Vec::new(),
            cond,
            std_err,
            row_shots,
            empty,
        }
    }

    /// Apply `(Mᵀ)⁻¹ A M⁻¹` to every delay bin.
    pub fn corrected(&self, m: &ConfusionMatrix) -> Result<CondProbs> {
        let totals: Vec<f64> = self
            .row_shots
            .iter()
            .map(|r| r.iter().sum::<f64>())
            .collect();
        let joint = self
            .joint
            .iter()
            .map(|a| correct_counts(a, m))
            .collect::<Result<Vec<_>>>()?;
        let linear: Vec<Mat4> = self.joint.iter().map(|a| sandwich(a, m)).collect::<Result<_>>()?;
        let mut out = CondProbs::from_joint(self.delays.clone(), joint, &totals);
        out.unclipped = CondProbs::from_joint(self.delays.clone(), linear, &totals).cond;
        out.raw = self.raw.clone();
        out.std_err = self.std_err.clone();
        Ok(out)
    }

    pub fn index_of_delay(&self, delay: f64) -> Option<usize> {
        self.delays
            .iter()
            .position(|d| (d - delay).abs() <= 1e-12 + 1e-9 * delay.abs())
    }
}

fn delay_key(d: f64) -> i64 {
    // picosecond bins
    (d * 1e12).round() as i64
}

pub fn bin_records(records: &[ShotRecord]) -> Result<Vec<DelayBin>> {
    let mut bins: BTreeMap<i64, DelayBin> = BTreeMap::new();
    for r in records.iter().filter(|r| r.valid) {
        if !(r.delay_s.is_finite() && r.delay_s >= 0.0) {
            return Err(Error::invalid(format!("negative or non-finite delay {}", r.delay_s)));
        }
        let b = bins.entry(delay_key(r.delay_s)).or_insert_with(|| DelayBin {
            delay: r.delay_s,
            counts: [[0; 4]; 4],
        });
        b.counts[r.s.index()][r.s_prime.index()] += 1;
    }
    if bins.is_empty() {
        return Err(Error::InsufficientData("no valid shot records".into()));
    }
    Ok(bins.into_values().collect())
}

/// Conditional probabilities per delay from valid records.
pub fn conditional_probs(records: &[ShotRecord]) -> Result<CondProbs> {
    let bins = bin_records(records)?;
    let delays = bins.iter().map(|b| b.delay).collect();
    let totals: Vec<f64> = bins.iter().map(|b| b.total() as f64).collect();
    let joint = bins
        .iter()
        .zip(&totals)
        .map(|(b, &n)| {
            let mut a = [[0.0; 4]; 4];
            for i in 0..4 {
                for j in 0..4 {
                    a[i][j] = b.counts[i][j] as f64 / n;
                }
            }
            a
        })
        .collect();
    Ok(CondProbs::from_joint(delays, joint, &totals))
}

/// Symmetric, row-stochastic assignment matrix: `m[i][j]` is the probability
/// that true state `i` is recorded as `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub m: Mat4,
    /// 2-norm condition number.
    pub condition: f64,
}

impl ConfusionMatrix {
    pub fn new(m: Mat4) -> Result<Self> {
        for i in 0..4 {
            let row: f64 = m[i].iter().sum();
            if (row - 1.0).abs() > 1e-9 || m[i].iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Calibration(format!("row {i} is not a probability vector")));
            }
        }
        let sv = to_matrix(&m).singular_values();
        let max = sv.max();
        let min = sv.min();
        let condition = if min > 0.0 { max / min } else { f64::INFINITY };
        Ok(ConfusionMatrix { m, condition })
    }

    pub fn identity() -> Self {
        let mut m = [[0.0; 4]; 4];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        ConfusionMatrix { m, condition: 1.0 }
    }

    /// Equal misassignment `total` per state, spread over the three other states.
    pub fn uniform(total: f64) -> Result<Self> {
        let off = total / 3.0;
        let mut m = [[off; 4]; 4];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = 1.0 - total;
        }
        Self::new(m)
    }

    /// Recorded joint frequencies `Mᵀ A_r M` for true joint frequencies `A_r`.
    pub fn forward(&self, a_true: &Mat4) -> Mat4 {
        let m = to_matrix(&self.m);
        from_matrix(&(m.transpose() * to_matrix(a_true) * m))
    }
}

/// Confusion matrix from zero-delay coincidences, assuming `M_ij = M_ji` and
/// neglecting double assignment errors.
pub fn confusion_from_t0(a0: &Mat4) -> Result<ConfusionMatrix> {
    let total: f64 = a0.iter().flatten().sum();
    if !(total > 0.0) || a0.iter().flatten().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::Calibration("zero-delay frequencies must be >= 0 and not all zero".into()));
    }
    let a: Vec<Vec<f64>> = a0.iter().map(|r| r.iter().map(|v| v / total).collect()).collect();
    let diag: f64 = (0..4).map(|i| a[i][i]).sum();
    if diag <= 0.5 {
        return Err(Error::Calibration(format!(
            "zero-delay data not diagonal-dominant (diagonal weight {diag:.3})"
        )));
    }
    let mut m = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            if i == j {
                continue;
            }
            let den = a[i][i] + a[i][j] + a[j][i] + a[j][j];
            m[i][j] = if den > 0.0 {
                0.5 * (a[i][j] + a[j][i]) / den
            } else {
                0.0
            };
        }
    }
    for i in 0..4 {
        let off: f64 = (0..4).filter(|&j| j != i).map(|j| m[i][j]).sum();
        m[i][i] = 1.0 - off;
        if m[i][i] < 0.0 {
            return Err(Error::Calibration(format!(
                "row {i} misassignment {off:.3} exceeds one"
            )));
        }
    }
    ConfusionMatrix::new(m)
}

fn sandwich(a: &Mat4, m: &ConfusionMatrix) -> Result<Mat4> {
    let inv = to_matrix(&m.m)
        .try_inverse()
        .ok_or_else(|| Error::Calibration("confusion matrix singular".into()))?;
    Ok(from_matrix(&(inv.transpose() * to_matrix(a) * inv)))
}

/// `A_r = (Mᵀ)⁻¹ A M⁻¹`. Negative entries above −1e-3 are clipped and the
/// result renormalized to the input total; larger negatives are a calibration failure.
pub fn correct_counts(a: &Mat4, m: &ConfusionMatrix) -> Result<Mat4> {
    if !(m.condition <= 100.0) {
        return Err(Error::Calibration(format!(
            "confusion matrix ill-conditioned (condition {:.3e} > 100)",
            m.condition
        )));
    }
    let mut out = sandwich(a, m)?;
    let min = out.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    if min < -1e-3 {
        return Err(Error::Calibration(format!(
            "corrected probability {min:.3e} below clipping threshold -1e-3"
        )));
    }
    if min < 0.0 {
        let target: f64 = a.iter().flatten().sum();
        for v in out.iter_mut().flatten() {
            *v = v.max(0.0);
        }
        let sum: f64 = out.iter().flatten().sum();
        if sum > 0.0 {
            for v in out.iter_mut().flatten() {
                *v *= target / sum;
            }
        }
    }
    Ok(out)
}
