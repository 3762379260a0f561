//! Nonlinear least squares and the spectroscopy fit models built on it.

mod crossing;
mod ng;
mod peaks;
mod shift;

pub use crossing::{fit_avoided_crossing, Branch, CrossingInit, CrossingModel, CrossingPoint};
pub use ng::{delta_ng, extract_ng, NgEstimate};
pub use peaks::{fit_lorentzians, lorentzian_sum, SpectroscopyTrace};
pub use shift::{
    fit_shift_curve, model_params, predict_shifts, ShiftFitOptions, ShiftPoint,
};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Relative parameter step below which the fit stops.
    pub xtol: f64,
    /// Relative cost decrease below which the fit stops.
    pub ftol: f64,
    /// Treat residuals as already normalized by their true standard deviations.
    pub absolute_sigma: bool,
    /// Per-parameter mask; fixed parameters stay at their initial values.
    pub fixed: Vec<bool>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iter: 500,
            xtol: 1e-8,
            ftol: 1e-10,
            absolute_sigma: false,
            fixed: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        Bounds { lower, upper }
    }

    pub fn unbounded(n: usize) -> Self {
        Bounds {
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    fn clamp(&self, p: &mut [f64]) {
        for (k, x) in p.iter_mut().enumerate() {
            *x = x.clamp(self.lower[k], self.upper[k]);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub names: Vec<String>,
    pub params: Vec<f64>,
    /// Row-major covariance of `params`.
    pub covariance: Vec<Vec<f64>>,
    pub std_errors: Vec<f64>,
    /// Euclidean norm of the (weighted) residual vector.
    pub residual_norm: f64,
    pub converged: bool,
    pub iterations: usize,
    /// JᵀJ singular or condition number above 1e12.
    pub degenerate: bool,
    /// Residual norm after each accepted step, starting from the initial point.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub history: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

impl FitResult {
    pub fn param(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|k| self.params[k])
    }

    pub fn std_error(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|k| self.std_errors[k])
    }

    pub fn with_names(mut self, names: &[&str]) -> Self {
        self.names = names.iter().map(|s| s.to_string()).collect();
        self
    }

    /// Reorder parameters (and covariance) by `perm`, where new index `k` takes old `perm[k]`.
    pub(crate) fn permute(&mut self, perm: &[usize]) {
        let p = self.params.clone();
        let e = self.std_errors.clone();
        let n = self.names.clone();
        let c = self.covariance.clone();
        for (k, &old) in perm.iter().enumerate() {
            self.params[k] = p[old];
            self.std_errors[k] = e[old];
            self.names[k] = n[old].clone();
            for (l, &old2) in perm.iter().enumerate() {
                self.covariance[k][l] = c[old][old2];
            }
        }
    }
}

fn cost_of(r: &[f64]) -> f64 {
    0.5 * r.iter().map(|x| x * x).sum::<f64>()
}

fn check_residuals(r: &[f64]) -> Result<()> {
    if r.iter().any(|x| !x.is_finite()) {
        return Err(Error::NotConverged(
            "residual function returned a non-finite value".into(),
        ));
    }
    Ok(())
}

/// Central-difference Jacobian over the free parameters, one-sided at bounds.
fn jacobian<F>(f: &F, p: &[f64], r0: &[f64], free: &[usize], bounds: &Bounds) -> Result<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let m = r0.len();
    let mut jac = DMatrix::zeros(m, free.len());
    let step = f64::EPSILON.cbrt();
    for (c, &k) in free.iter().enumerate() {
        let h = step * p[k].abs().max(1e-6);
        let (lo, hi) = (bounds.lower[k], bounds.upper[k]);
        let mut pp = p.to_vec();
        let col: Vec<f64> = if p[k] + h <= hi && p[k] - h >= lo {
            pp[k] = p[k] + h;
            let rp = f(&pp)?;
            pp[k] = p[k] - h;
            let rm = f(&pp)?;
            rp.iter().zip(&rm).map(|(a, b)| (a - b) / (2.0 * h)).collect()
        } else if p[k] + h <= hi {
            pp[k] = p[k] + h;
            let rp = f(&pp)?;
            rp.iter().zip(r0).map(|(a, b)| (a - b) / h).collect()
        } else {
            pp[k] = p[k] - h;
            let rm = f(&pp)?;
            r0.iter().zip(&rm).map(|(a, b)| (a - b) / h).collect()
        };
        check_residuals(&col)?;
        for (i, v) in col.into_iter().enumerate() {
            jac[(i, c)] = v;
        }
    }
    Ok(jac)
}

/// Pseudo-inverse of a symmetric PSD matrix together with its condition number.
fn psd_pinv(a: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let n = a.nrows();
    if n == 0 {
        return (DMatrix::zeros(0, 0), 1.0);
    }
    let eig = SymmetricEigen::new(a.clone());
    let max = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let tol = max * n as f64 * f64::EPSILON;
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let cond = if min > tol { max / min } else { f64::INFINITY };
    let mut inv = DMatrix::zeros(n, n);
    for k in 0..n {
        let l = eig.eigenvalues[k];
        if l > tol {
            let v = eig.eigenvectors.column(k);
            inv += (v * v.transpose()) / l;
        }
    }
    (inv, cond)
}

/// Levenberg–Marquardt minimization of ½‖r(p)‖².
///
/// `residuals` maps the full parameter vector to the residual vector; any error
/// it returns aborts the fit. Bounds are enforced by clamping each trial step.
pub fn nlls_fit<F>(residuals: F, p0: &[f64], bounds: Option<&Bounds>, opts: &FitOptions) -> Result<FitResult>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let n = p0.len();
    if n == 0 {
        return Err(Error::invalid("no parameters to fit"));
    }
    let bounds = bounds.cloned().unwrap_or_else(|| Bounds::unbounded(n));
    if bounds.lower.len() != n || bounds.upper.len() != n {
        return Err(Error::invalid("bounds length does not match parameters"));
    }
    for k in 0..n {
        if !p0[k].is_finite() || p0[k] < bounds.lower[k] || p0[k] > bounds.upper[k] {
            return Err(Error::invalid(format!(
                "initial parameter {k} = {} outside bounds [{}, {}]",
                p0[k], bounds.lower[k], bounds.upper[k]
            )));
        }
    }
    if !opts.fixed.is_empty() && opts.fixed.len() != n {
        return Err(Error::invalid("fixed mask length does not match parameters"));
    }
    let free: Vec<usize> = (0..n)
        .filter(|&k| opts.fixed.get(k).map_or(true, |f| !f))
        .collect();

    let mut p = p0.to_vec();
    let mut r = residuals(&p)?;
    check_residuals(&r)?;
    let m = r.len();
    if m < free.len() {
        return Err(Error::InsufficientData(format!(
            "{m} residuals for {} free parameters",
            free.len()
        )));
    }
    let mut cost = cost_of(&r);
    let mut history = vec![(2.0 * cost).sqrt()];
    let mut mu = 1e-3;
    let mut converged = free.is_empty() || cost == 0.0;
    let mut iterations = 0;
    let mut message = None;

    while !converged && iterations < opts.max_iter {
        iterations += 1;
        let jac = jacobian(&residuals, &p, &r, &free, &bounds)?;
        let jtj = jac.transpose() * &jac;
        let grad = jac.transpose() * DVector::from_column_slice(&r);
        let diag: Vec<f64> = (0..free.len())
            .map(|k| jtj[(k, k)].max(1e-12 * jtj.diagonal().amax().max(1e-300)))
            .collect();
        let mut accepted = false;
        while mu < 1e20 {
            let mut a = jtj.clone();
            for k in 0..free.len() {
                a[(k, k)] += mu * diag[k];
            }
            let Some(delta) = a.cholesky().map(|c| c.solve(&(-&grad))) else {
                mu *= 10.0;
                continue;
            };
            let mut trial = p.clone();
            for (c, &k) in free.iter().enumerate() {
                trial[k] += delta[c];
            }
            bounds.clamp(&mut trial);
            let rt = match residuals(&trial) {
                Ok(rt) if rt.iter().all(|x| x.is_finite()) => rt,
                _ => {
                    mu *= 10.0;
                    continue;
                }
            };
            let ct = cost_of(&rt);
            if ct < cost {
                let step: f64 = free
                    .iter()
                    .map(|&k| (trial[k] - p[k]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                let scale: f64 = free.iter().map(|&k| p[k].powi(2)).sum::<f64>().sqrt();
                let rel_drop = (cost - ct) / cost;
                p = trial;
                r = rt;
                cost = ct;
                history.push((2.0 * cost).sqrt());
                mu /= 3.0;
                accepted = true;
                if step <= opts.xtol * (scale + opts.xtol) || rel_drop < opts.ftol || cost == 0.0 {
                    converged = true;
                }
                break;
            }
            mu *= 10.0;
        }
        if !accepted {
            // no descent direction left at working precision
            converged = true;
            message = Some("stopped: damping exhausted without further decrease".into());
        }
    }
    if !converged {
        message = Some(format!("maximum iterations ({}) exhausted", opts.max_iter));
    }

    let jac = if free.is_empty() {
        DMatrix::zeros(m, 0)
    } else {
        jacobian(&residuals, &p, &r, &free, &bounds)?
    };
    let (inv, cond) = psd_pinv(&(jac.transpose() * &jac));
    let dof = m.saturating_sub(free.len());
    let s2 = if opts.absolute_sigma || dof == 0 {
        1.0
    } else {
        2.0 * cost / dof as f64
    };
    let mut covariance = vec![vec![0.0; n]; n];
    for (a, &i) in free.iter().enumerate() {
        for (b, &j) in free.iter().enumerate() {
            covariance[i][j] = inv[(a, b)] * s2;
        }
    }
    // exact symmetry
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (covariance[i][j] + covariance[j][i]);
            covariance[i][j] = v;
            covariance[j][i] = v;
        }
    }
    let std_errors = (0..n).map(|k| covariance[k][k].max(0.0).sqrt()).collect();
    Ok(FitResult {
        names: (0..n).map(|k| format!("p{k}")).collect(),
        params: p,
        covariance,
        std_errors,
        residual_norm: (2.0 * cost).sqrt(),
        converged,
        iterations,
        degenerate: !free.is_empty() && !(cond <= 1e12),
        history,
        message,
    })
}

/// Fit `y ≈ model(x, p)` with optional per-point standard deviations.
pub fn curve_fit<M>(
    model: M,
    x: &[f64],
    y: &[f64],
    sigma: Option<&[f64]>,
    p0: &[f64],
    bounds: Option<&Bounds>,
    opts: &FitOptions,
) -> Result<FitResult>
where
    M: Fn(f64, &[f64]) -> f64,
{
    if x.len() != y.len() || sigma.is_some_and(|s| s.len() != x.len()) {
        return Err(Error::invalid("x, y and sigma lengths differ"));
    }
    if let Some(s) = sigma {
        if s.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::invalid("sigma entries must be > 0"));
        }
    }
    nlls_fit(
        |p| {
            Ok(x.iter()
                .zip(y)
                .enumerate()
                .map(|(i, (&xi, &yi))| {
                    let w = sigma.map_or(1.0, |s| s[i]);
                    (model(xi, p) - yi) / w
                })
                .collect())
        },
        p0,
        bounds,
        opts,
    )
}
