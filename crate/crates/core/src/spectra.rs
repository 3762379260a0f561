//! Charge-basis transmon and bare TLS.
//!
//! The transmon Hamiltonian `4 E_C (n - n_g)^2 - E_J(Φ) cos φ` is built on the
//! charge states `n = -N_c ..= N_c`. `cos φ` and `sin φ` are realized from the
//! charge shift operators, so every operator used by the coupled models lives in
//! the same basis. All energies are ordinary frequencies in GHz.
//!
//! Odd charge parity is the even Hamiltonian at `n_g + 1/2`, and the
//! symmetric-SQUID flux dependence is `E_J(Φ) = E_J,max |cos(π Φ)|`.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{Complex, DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Complex64 = Complex<f64>;

/// Default charge-basis truncation.
pub const DEFAULT_CUTOFF: usize = 15;
const MIN_CUTOFF: usize = 5;
const MAX_CUTOFF: usize = 60;
const EIGEN_MAX_ITER: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    #[default]
    Even,
    Odd,
}

impl Parity {
    /// `(-1)^β` with even = +1.
    pub fn sign(self) -> f64 {
        match self {
            Parity::Even => 1.0,
            Parity::Odd => -1.0,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Parity::Even => Parity::Odd,
            Parity::Odd => Parity::Even,
        }
    }
}

fn default_cutoff() -> usize {
    DEFAULT_CUTOFF
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransmonParams {
    /// Josephson energy at zero flux (GHz).
    pub ej_max: f64,
    /// Charging energy (GHz).
    pub ec: f64,
    /// Offset charge in units of 2e.
    #[serde(default)]
    pub ng: f64,
    #[serde(default)]
    pub parity: Parity,
    /// Reduced external flux Φ/Φ0.
    #[serde(default)]
    pub flux: f64,
    #[serde(default = "default_cutoff")]
    pub cutoff: usize,
}

impl TransmonParams {
    pub fn new(ej_max: f64, ec: f64) -> Self {
        TransmonParams {
            ej_max,
            ec,
            ng: 0.0,
            parity: Parity::Even,
            flux: 0.0,
            cutoff: DEFAULT_CUTOFF,
        }
    }

    /// Table S1 device: E_J = 10.88 GHz, E_C = 0.303 GHz, zero flux.
    pub fn paper_device() -> Self {
        TransmonParams::new(10.88, 0.303)
    }

    pub fn with_ng(mut self, ng: f64) -> Self {
        self.ng = ng;
        self
    }

    pub fn with_parity(mut self, parity: Parity) -> Self {
        self.parity = parity;
        self
    }

    pub fn with_flux(mut self, flux: f64) -> Self {
        self.flux = flux;
        self
    }

    pub fn with_cutoff(mut self, cutoff: usize) -> Self {
        self.cutoff = cutoff;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ec.is_finite() && self.ec > 0.0) {
            return Err(Error::invalid(format!("ec must be > 0, got {}", self.ec)));
        }
        if !(self.ej_max.is_finite() && self.ej_max >= 0.0) {
            return Err(Error::invalid(format!(
                "ej_max must be >= 0, got {}",
                self.ej_max
            )));
        }
        if self.cutoff < MIN_CUTOFF {
            return Err(Error::invalid(format!(
                "cutoff must be >= {MIN_CUTOFF}, got {}",
                self.cutoff
            )));
        }
        if !self.ng.is_finite() || !self.flux.is_finite() {
            return Err(Error::invalid("ng and flux must be finite"));
        }
        Ok(())
    }

    /// Flux-tuned Josephson energy of the symmetric SQUID.
    pub fn ej(&self) -> f64 {
        self.ej_max * (PI * self.flux).cos().abs()
    }

    /// Offset charge seen by the Hamiltonian, including the odd-parity half shift.
    pub fn effective_ng(&self) -> f64 {
        match self.parity {
            Parity::Even => self.ng,
            Parity::Odd => self.ng + 0.5,
        }
    }

    pub fn dim(&self) -> usize {
        2 * self.cutoff + 1
    }
}

/// TLS in the standard tunneling model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TlsParams {
    /// Tunneling rate Δ (GHz).
    pub delta: f64,
    /// Asymmetry energy ε (GHz).
    pub epsilon: f64,
}

impl TlsParams {
    pub fn new(delta: f64, epsilon: f64) -> Self {
        TlsParams { delta, epsilon }
    }

    /// Build from eigen-frequency and mixing angle.
    pub fn from_frequency(w_tls: f64, theta: f64) -> Self {
        TlsParams {
            delta: w_tls * theta.sin(),
            epsilon: w_tls * theta.cos(),
        }
    }

    pub fn frequency(&self) -> f64 {
        self.delta.hypot(self.epsilon)
    }

    /// Mixing angle θ = arctan(Δ/ε).
    pub fn theta(&self) -> f64 {
        self.delta.atan2(self.epsilon)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.delta.is_finite() || !self.epsilon.is_finite() {
            return Err(Error::invalid("TLS parameters must be finite"));
        }
        if self.frequency() <= 0.0 {
            return Err(Error::invalid("TLS frequency must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TlsState {
    G,
    E,
}

impl TlsState {
    /// Eigenvalue of η_z: g → −1, e → +1.
    pub fn sign(self) -> f64 {
        match self {
            TlsState::G => -1.0,
            TlsState::E => 1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TlsState::G => "g",
            TlsState::E => "e",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisLabel {
    pub charge: i32,
    pub tls: Option<TlsState>,
    pub tf: Option<TlsState>,
}

/// Dense Hermitian Hamiltonian. The imaginary part is absent for every model
/// without a `sin φ` term, in which case the matrix is real symmetric.
#[derive(Debug, Clone)]
pub struct HamiltonianMatrix {
    pub dim: usize,
    pub re: DMatrix<f64>,
    pub im: Option<DMatrix<f64>>,
    pub basis_labels: Vec<BasisLabel>,
    /// Offset charge entering `n̂ = n - n_g` (parity shift included).
    pub ng: f64,
}

impl HamiltonianMatrix {
    pub fn is_real(&self) -> bool {
        self.im.is_none()
    }

    /// Largest violation of Hermiticity relative to the largest entry.
    pub fn hermiticity_error(&self) -> f64 {
        let scale = self.re.amax().max(self.im.as_ref().map_or(0.0, |m| m.amax())).max(1e-300);
        let mut worst: f64 = 0.0;
        for i in 0..self.dim {
            for j in 0..i {
                worst = worst.max((self.re[(i, j)] - self.re[(j, i)]).abs());
                if let Some(im) = &self.im {
                    worst = worst.max((im[(i, j)] + im[(j, i)]).abs());
                }
            }
            if let Some(im) = &self.im {
                worst = worst.max(im[(i, i)].abs());
            }
        }
        worst / scale
    }

    /// Charge operator `n - n_g` as a diagonal over the basis.
    pub fn charge_diagonal(&self) -> Vec<f64> {
        self.basis_labels
            .iter()
            .map(|l| l.charge as f64 - self.ng)
            .collect()
    }

    pub fn to_complex(&self) -> DMatrix<Complex64> {
        let mut out = DMatrix::from_fn(self.dim, self.dim, |i, j| Complex64::new(self.re[(i, j)], 0.0));
        if let Some(im) = &self.im {
            for i in 0..self.dim {
                for j in 0..self.dim {
                    out[(i, j)].im = im[(i, j)];
                }
            }
        }
        out
    }

    fn frobenius(&self) -> f64 {
        let re = self.re.norm_squared();
        let im = self.im.as_ref().map_or(0.0, |m| m.norm_squared());
        (re + im).sqrt()
    }
}

/// Charge values `-N_c ..= N_c`.
pub fn charge_values(cutoff: usize) -> Vec<i32> {
    let n = cutoff as i32;
    (-n..=n).collect()
}

/// `cos φ = (e^{iφ} + e^{-iφ})/2` in the charge basis: 1/2 on the first off-diagonals.
pub fn cos_phi(dim: usize) -> DMatrix<f64> {
    DMatrix::from_fn(dim, dim, |i, j| if i.abs_diff(j) == 1 { 0.5 } else { 0.0 })
}

/// Imaginary part of `sin φ = (e^{iφ} - e^{-iφ})/(2i)`; the real part is zero.
///
/// `e^{iφ}` raises the charge, so `(sin φ)_{k+1,k} = -i/2` and `(sin φ)_{k,k+1} = +i/2`.
pub fn sin_phi_im(dim: usize) -> DMatrix<f64> {
    DMatrix::from_fn(dim, dim, |i, j| {
        if i == j + 1 {
            -0.5
        } else if j == i + 1 {
            0.5
        } else {
            0.0
        }
    })
}

/// Bare transmon block `4E_C(n - n_g)^2 - E_J cos φ` with an explicit offset charge.
pub(crate) fn transmon_block(ec: f64, ej: f64, ng: f64, cutoff: usize) -> DMatrix<f64> {
    let charges = charge_values(cutoff);
    let dim = charges.len();
    let mut h = DMatrix::zeros(dim, dim);
    for (k, &n) in charges.iter().enumerate() {
        let x = n as f64 - ng;
        h[(k, k)] = 4.0 * ec * x * x;
        if k + 1 < dim {
            h[(k, k + 1)] = -0.5 * ej;
            h[(k + 1, k)] = -0.5 * ej;
        }
    }
    h
}

pub fn build_transmon(params: &TransmonParams) -> Result<HamiltonianMatrix> {
    params.validate()?;
    let ng = params.effective_ng();
    let re = transmon_block(params.ec, params.ej(), ng, params.cutoff);
    let basis_labels = charge_values(params.cutoff)
        .into_iter()
        .map(|charge| BasisLabel {
            charge,
            tls: None,
            tf: None,
        })
        .collect();
    Ok(HamiltonianMatrix {
        dim: params.dim(),
        re,
        im: None,
        basis_labels,
        ng,
    })
}

/// Full eigendecomposition with ascending eigenvalues; eigenvectors in columns.
#[derive(Debug, Clone)]
pub(crate) struct Eigen {
    pub values: Vec<f64>,
    pub vectors: DMatrix<Complex64>,
}

pub(crate) fn eigh(re: &DMatrix<f64>, im: Option<&DMatrix<f64>>) -> Result<Eigen> {
    let dim = re.nrows();
    let (values, vectors) = match im {
        None => {
            let eig = SymmetricEigen::try_new(re.clone(), f64::EPSILON, EIGEN_MAX_ITER)
                .ok_or(Error::EigenNotConverged {
                    iterations: EIGEN_MAX_ITER,
                    dim,
                })?;
            let v = eig.eigenvectors.map(|x| Complex64::new(x, 0.0));
            (eig.eigenvalues.as_slice().to_vec(), v)
        }
        Some(im) => {
            let m = DMatrix::from_fn(dim, dim, |i, j| Complex64::new(re[(i, j)], im[(i, j)]));
            let eig = SymmetricEigen::try_new(m, f64::EPSILON, EIGEN_MAX_ITER).ok_or(
                Error::EigenNotConverged {
                    iterations: EIGEN_MAX_ITER,
                    dim,
                },
            )?;
            (eig.eigenvalues.as_slice().to_vec(), eig.eigenvectors)
        }
    };
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let sorted_values = order.iter().map(|&k| values[k]).collect();
    let sorted_vectors = DMatrix::from_fn(dim, dim, |i, c| vectors[(i, order[c])]);
    Ok(Eigen {
        values: sorted_values,
        vectors: sorted_vectors,
    })
}

/// Real-symmetric eigenvalues only, ascending.
pub(crate) fn eigvalsh(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    let dim = m.nrows();
    let mut vals = SymmetricEigen::try_new(m.clone(), f64::EPSILON, EIGEN_MAX_ITER)
        .ok_or(Error::EigenNotConverged {
            iterations: EIGEN_MAX_ITER,
            dim,
        })?
        .eigenvalues
        .as_slice()
        .to_vec();
    vals.sort_by(f64::total_cmp);
    Ok(vals)
}

#[derive(Debug, Clone)]
pub struct SpectrumResult {
    pub levels: Vec<f64>,
    /// ν_ij = levels[j] - levels[i] for i < j.
    pub transitions: BTreeMap<(usize, usize), f64>,
    /// |⟨i|n̂|j⟩| for i < j.
    pub matrix_elements: BTreeMap<(usize, usize), f64>,
    /// Worst ‖Hv − λv‖ over the returned levels.
    pub max_residual: f64,
    pub(crate) vectors: DMatrix<Complex64>,
}

impl SpectrumResult {
    pub fn transition(&self, i: usize, j: usize) -> f64 {
        self.levels[j] - self.levels[i]
    }

    pub fn nu01(&self) -> f64 {
        self.transition(0, 1)
    }

    /// α = ν01 − ν12.
    pub fn anharmonicity(&self) -> f64 {
        self.transition(0, 1) - self.transition(1, 2)
    }

    pub fn n_element(&self, i: usize, j: usize) -> f64 {
        let key = if i < j { (i, j) } else { (j, i) };
        self.matrix_elements.get(&key).copied().unwrap_or(0.0)
    }

    /// Eigenvector `k` as a complex column.
    pub fn vector(&self, k: usize) -> Vec<Complex64> {
        self.vectors.column(k).iter().copied().collect()
    }
}

pub fn diagonalize(h: &HamiltonianMatrix, n_levels: usize) -> Result<SpectrumResult> {
    if n_levels == 0 || n_levels > h.dim {
        return Err(Error::invalid(format!(
            "n_levels must be in 1..={}, got {n_levels}",
            h.dim
        )));
    }
    let herm = h.hermiticity_error();
    if herm > 1e-12 {
        return Err(Error::invalid(format!(
            "matrix not Hermitian (relative error {herm:.2e})"
        )));
    }
    let eig = eigh(&h.re, h.im.as_ref())?;
    let hc = h.to_complex();
    let bound = 1e-9 * h.frobenius().max(1e-300);
    let mut max_residual: f64 = 0.0;
    for k in 0..n_levels {
        let v = eig.vectors.column(k);
        let r = &hc * v - v * Complex64::new(eig.values[k], 0.0);
        max_residual = max_residual.max(r.norm());
    }
    if max_residual > bound {
        return Err(Error::EigenResidual {
            residual: max_residual,
            bound,
        });
    }
    let charge = h.charge_diagonal();
    let levels = eig.values[..n_levels].to_vec();
    let mut transitions = BTreeMap::new();
    let mut matrix_elements = BTreeMap::new();
    for i in 0..n_levels {
        for j in (i + 1)..n_levels {
            transitions.insert((i, j), levels[j] - levels[i]);
            let mut acc = Complex64::new(0.0, 0.0);
            for (b, &q) in charge.iter().enumerate() {
                acc += eig.vectors[(b, i)].conj() * eig.vectors[(b, j)] * q;
            }
            matrix_elements.insert((i, j), acc.norm());
        }
    }
    let vectors = eig.vectors.columns(0, n_levels).into_owned();
    Ok(SpectrumResult {
        levels,
        transitions,
        matrix_elements,
        max_residual,
        vectors,
    })
}

/// Lowest `n_levels` transmon levels.
pub fn transmon_spectrum(params: &TransmonParams, n_levels: usize) -> Result<SpectrumResult> {
    diagonalize(&build_transmon(params)?, n_levels)
}

/// Transmon eigenvalues only (no residual bookkeeping), ascending.
pub fn transmon_levels(params: &TransmonParams) -> Result<Vec<f64>> {
    params.validate()?;
    eigvalsh(&transmon_block(
        params.ec,
        params.ej(),
        params.effective_ng(),
        params.cutoff,
    ))
}

fn transition_at(params: &TransmonParams, (i, j): (usize, usize)) -> Result<f64> {
    let levels = transmon_levels(params)?;
    Ok(levels[j] - levels[i])
}

fn check_pair(params: &TransmonParams, (i, j): (usize, usize)) -> Result<()> {
    if i >= j || j >= params.dim() {
        return Err(Error::invalid(format!("invalid level pair ({i}, {j})")));
    }
    Ok(())
}

/// Peak-to-peak swing δ_c = ν_ij(n_g = 0) − ν_ij(n_g = 1/2) of the even-parity branch.
pub fn charge_dispersion(params: &TransmonParams, pair: (usize, usize)) -> Result<f64> {
    check_pair(params, pair)?;
    let base = params.with_parity(Parity::Even);
    Ok(transition_at(&base.with_ng(0.0), pair)? - transition_at(&base.with_ng(0.5), pair)?)
}

/// Least-squares fit of `ν̄ + (−1)^β (δ_c/2) cos(2π n_g)` to exact transition frequencies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DispersionFit {
    pub mean: f64,
    pub dispersion: f64,
    pub rms: f64,
}

pub fn fit_charge_dispersion(
    params: &TransmonParams,
    pair: (usize, usize),
    n_points: usize,
) -> Result<DispersionFit> {
    check_pair(params, pair)?;
    if n_points < 4 {
        return Err(Error::invalid("need at least 4 offset-charge points"));
    }
    let sign = params.parity.sign();
    let mut xs = Vec::with_capacity(n_points);
    let mut ys = Vec::with_capacity(n_points);
    for k in 0..n_points {
        let ng = k as f64 / n_points as f64;
        xs.push(sign * 0.5 * (2.0 * PI * ng).cos());
        ys.push(transition_at(&params.with_ng(ng), pair)?);
    }
    // y = mean + dc * x, ordinary least squares
    let n = n_points as f64;
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| x * y).sum();
    let dispersion = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    let mean = (sy - dispersion * sx) / n;
    let rms = (xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - mean - dispersion * x).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    Ok(DispersionFit {
        mean,
        dispersion,
        rms,
    })
}

/// Parity-averaged ν̄_ij = (ν_ij(n_g) + ν_ij(n_g + 1/2))/2, i.e. the center of the
/// charge-dispersion band.
pub fn mean_transition(params: &TransmonParams, pair: (usize, usize)) -> Result<f64> {
    check_pair(params, pair)?;
    let even = params.with_parity(Parity::Even);
    let odd = params.with_parity(Parity::Odd);
    Ok(0.5 * (transition_at(&even, pair)? + transition_at(&odd, pair)?))
}

/// Linear coil-current to reduced-flux calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluxCalibration {
    /// Current at zero flux (A).
    pub offset: f64,
    /// Current per flux quantum (A).
    pub period: f64,
}

impl FluxCalibration {
    pub fn new(offset: f64, period: f64) -> Result<Self> {
        if !(period.is_finite() && period != 0.0) {
            return Err(Error::invalid("flux calibration period must be nonzero"));
        }
        if !offset.is_finite() {
            return Err(Error::invalid("flux calibration offset must be finite"));
        }
        Ok(FluxCalibration { offset, period })
    }

    pub fn flux(&self, current: f64) -> f64 {
        (current - self.offset) / self.period
    }

    pub fn current(&self, flux: f64) -> f64 {
        flux * self.period + self.offset
    }
}

pub fn flux_map(current: f64, cal: (f64, f64)) -> Result<f64> {
    Ok(FluxCalibration::new(cal.0, cal.1)?.flux(current))
}

/// Smallest cutoff whose lowest four levels move by less than 1e-7 GHz when the
/// cutoff is raised by five.
pub fn convergence_check(params: &TransmonParams) -> Result<usize> {
    const TOL: f64 = 1e-7;
    let mut prev = transmon_levels(&params.with_cutoff(MIN_CUTOFF))?;
    let mut cutoff = MIN_CUTOFF;
    while cutoff <= MAX_CUTOFF {
        let next = transmon_levels(&params.with_cutoff(cutoff + 5))?;
        if (0..4).all(|k| (next[k] - prev[k]).abs() < TOL) {
            return Ok(cutoff);
        }
        cutoff += 1;
        prev = transmon_levels(&params.with_cutoff(cutoff))?;
    }
    Err(Error::CutoffExceeded { cap: MAX_CUTOFF })
}

/// Flux in [0, 1/2) at which the parity-averaged ν̄01 equals `target` (GHz).
pub fn flux_for_frequency(params: &TransmonParams, target: f64) -> Result<f64> {
    let f = |flux: f64| mean_transition(&params.with_flux(flux), (0, 1)).map(|v| v - target);
    let (mut lo, mut hi) = (0.0, 0.499);
    let (flo, fhi) = (f(lo)?, f(hi)?);
    if flo < 0.0 || fhi > 0.0 {
        return Err(Error::invalid(format!(
            "target ν̄01 = {target} GHz outside the tunable range [{:.4}, {:.4}]",
            fhi + target,
            flo + target
        )));
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if f(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-14 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paper() -> TransmonParams {
        TransmonParams::paper_device()
    }

    #[test]
    fn zero_tunneling_is_diagonal() {
        let p = TransmonParams::new(0.0, 0.303).with_cutoff(5);
        let h = build_transmon(&p).unwrap();
        for i in 0..h.dim {
            for j in 0..h.dim {
                if i != j {
                    assert_eq!(h.re[(i, j)], 0.0);
                }
            }
        }
        let s = diagonalize(&h, 3).unwrap();
        assert!(s.levels[0].abs() < 1e-14);
        assert!((s.levels[1] - 1.212).abs() < 1e-12);
    }

    #[test]
    fn paper_device_frequency_and_anharmonicity() {
        let s = transmon_spectrum(&paper().with_ng(0.25), 3).unwrap();
        assert!((s.nu01() - 4.811).abs() / 4.811 < 0.01, "nu01 {}", s.nu01());
        let alpha = s.anharmonicity();
        assert!((alpha - 0.350).abs() / 0.350 < 0.10, "alpha {alpha}");
    }

    #[test]
    fn identity_like_input() {
        let h = HamiltonianMatrix {
            dim: 3,
            re: DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 2.0, 3.0])),
            im: None,
            basis_labels: vec![
                BasisLabel {
                    charge: 0,
                    tls: None,
                    tf: None
                };
                3
            ],
            ng: 0.0,
        };
        let s = diagonalize(&h, 3).unwrap();
        assert_eq!(s.levels, vec![1.0, 2.0, 3.0]);
        for k in 0..3 {
            let v = s.vector(k);
            for (b, c) in v.iter().enumerate() {
                let expect = if b == k { 1.0 } else { 0.0 };
                assert!((c.norm() - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn residual_bound_holds() {
        let h = build_transmon(&paper().with_ng(0.1)).unwrap();
        let s = diagonalize(&h, 6).unwrap();
        let bound = 1e-9 * h.re.norm();
        assert!(s.max_residual <= bound);
    }

    /// Next-order asymptote of |⟨0|n̂|1⟩|; the leading term alone is 3% high near E_J/E_C ≈ 36.
    fn n01_asymptote(ej: f64, ec: f64, corrected: bool) -> f64 {
        let lead = (ej / (8.0 * ec)).powf(0.25) / 2f64.sqrt();
        if corrected {
            lead * (1.0 - 0.25 * (ec / (2.0 * ej)).sqrt())
        } else {
            lead
        }
    }

    #[test]
    fn charge_matrix_element_matches_asymptote() {
        let s = transmon_spectrum(&paper(), 2).unwrap();
        let n01 = s.n_element(0, 1);
        let oracle = n01_asymptote(10.88, 0.303, true);
        assert!((n01 - oracle).abs() / oracle < 0.02, "{n01} vs {oracle}");
        for ratio in [30.0, 50.0, 100.0, 400.0] {
            let p = TransmonParams::new(ratio * 0.3, 0.3).with_cutoff(30);
            let n01 = transmon_spectrum(&p, 2).unwrap().n_element(0, 1);
            let corrected = n01_asymptote(p.ej_max, p.ec, true);
            assert!((n01 - corrected).abs() / corrected < 0.03);
            // leading-order deviation scales like sqrt(E_C/E_J) with coefficient ≈ 1/(4√2)
            let lead = n01_asymptote(p.ej_max, p.ec, false);
            let scaled = (1.0 - n01 / lead) * ratio.sqrt();
            assert!(scaled > 0.17 && scaled < 0.21, "ratio {ratio}: {scaled}");
        }
    }

    #[test]
    fn harmonic_limit_anharmonicity() {
        let p = TransmonParams::new(1e4 * 0.2, 0.2).with_cutoff(60);
        let s = transmon_spectrum(&p, 3).unwrap();
        let ratio = s.anharmonicity() / p.ec;
        assert!((ratio - 1.0).abs() < 0.05, "{ratio}");
    }

    #[test]
    fn dispersion_pure_charge_limit() {
        let p = TransmonParams::new(0.0, 0.303);
        let dc = charge_dispersion(&p, (0, 1)).unwrap();
        assert!((dc - 4.0 * 0.303).abs() < 1e-12);
    }

    #[test]
    fn dispersion_decreases_with_ratio() {
        let mut last = f64::INFINITY;
        for k in 0..=8 {
            let ratio = 20.0 + 5.0 * k as f64;
            let dc = charge_dispersion(&TransmonParams::new(ratio * 0.303, 0.303), (0, 1)).unwrap();
            assert!(dc > 0.0 && dc < last, "ratio {ratio}: {dc}");
            last = dc;
        }
    }

    #[test]
    fn dispersion_follows_cosine() {
        for parity in [Parity::Even, Parity::Odd] {
            let fit = fit_charge_dispersion(&paper().with_parity(parity), (0, 1), 24).unwrap();
            assert!(fit.rms <= 0.01 * fit.dispersion.abs());
            let dc = charge_dispersion(&paper(), (0, 1)).unwrap();
            assert!((fit.dispersion - dc).abs() / dc < 0.01);
        }
    }

    #[test]
    fn flux_map_examples() {
        assert_eq!(flux_map(0.3, (0.3, 2.0)).unwrap(), 0.0);
        assert!((flux_map(2.3, (0.3, 2.0)).unwrap() - 1.0).abs() < 1e-15);
        assert!(flux_map(1.0, (0.0, 0.0)).is_err());
        let cal = FluxCalibration::new(-1.2e-3, 4.7e-3).unwrap();
        let x = 3.3e-3;
        assert!((cal.current(cal.flux(x)) - x).abs() < 1e-12);
    }

    #[test]
    fn cutoff_convergence() {
        let n = convergence_check(&paper()).unwrap();
        assert!(n <= 15, "{n}");
        let n0 = convergence_check(&TransmonParams::new(0.0, 0.303)).unwrap();
        assert_eq!(n0, 5);
        // adequacy is monotone in the cutoff
        let base = transmon_levels(&paper().with_cutoff(n + 10)).unwrap();
        for c in n..n + 4 {
            let lv = transmon_levels(&paper().with_cutoff(c)).unwrap();
            assert!((0..4).all(|k| (lv[k] - base[k]).abs() < 1e-7));
        }
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(build_transmon(&TransmonParams::new(1.0, 0.0)).is_err());
        assert!(build_transmon(&TransmonParams::new(-1.0, 0.2)).is_err());
        assert!(build_transmon(&TransmonParams::new(1.0, 0.2).with_cutoff(4)).is_err());
    }

    #[test]
    fn working_point_search() {
        let flux = flux_for_frequency(&paper().with_ng(0.25), 2.881).unwrap();
        let nu = mean_transition(&paper().with_ng(0.25).with_flux(flux), (0, 1)).unwrap();
        assert!((nu - 2.881).abs() < 1e-9);
        assert!(flux_for_frequency(&paper(), 6.0).is_err());
    }

    #[test]
    fn tls_derived_quantities() {
        let t = TlsParams::new(1.331, 2.555);
        assert!(t.frequency() >= 1.331_f64.max(2.555));
        assert!((t.frequency() - 2.881).abs() < 1e-3);
        let th = t.theta();
        assert!((0.0..=PI / 2.0).contains(&th));
        let back = TlsParams::from_frequency(t.frequency(), th);
        assert!((back.delta - t.delta).abs() < 1e-12);
    }
}
