//! Joint transmon–TLS Hamiltonians under four coupling models, level labeling,
//! dispersive shifts and dipole bookkeeping.
//!
//! Basis ordering is `sector * d + k` where `d = 2N_c + 1` and `k` runs over
//! charge states. Two-body models have sectors `[g, e]` (TLS eigenstates); the
//! TLS–TF model has `[(g,g), (e,g), (g,e), (e,e)]` as `(tls, tf)`.
//! All couplings are either diagonal in the sector (longitudinal) or connect
//! the TLS `g` and `e` sectors with equal TF state (transverse).

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectra::{
    charge_values, cos_phi, eigh, mean_transition, sin_phi_im, transmon_block, BasisLabel,
    Complex64, Eigen, HamiltonianMatrix, Parity, TlsParams, TlsState, TransmonParams,
};

/// Debye per e·Å.
pub const DEBYE_PER_E_ANGSTROM: f64 = 4.8032;

/// Qubit levels carried through labeling.
const TRACKED_QUBIT_LEVELS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", deny_unknown_fields)]
pub enum CouplingSpec {
    /// Charged TLS shifting the island charge; θ comes from the TLS parameters.
    ChargeDipole {
        lambda: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        jc: Option<f64>,
    },
    /// TLS modulating one junction's critical current.
    CriticalCurrent { jc: f64, theta: f64 },
    /// TLS modulating the flux through the SQUID loop.
    FluxLoop { jc: f64, theta: f64 },
    /// Transverse charge coupling plus a static thermal fluctuator shifting the TLS.
    TlsTf { jc: f64, dw_tls: f64 },
}

impl CouplingSpec {
    pub fn name(&self) -> &'static str {
        match self {
            CouplingSpec::ChargeDipole { .. } => "ChargeDipole",
            CouplingSpec::CriticalCurrent { .. } => "CriticalCurrent",
            CouplingSpec::FluxLoop { .. } => "FluxLoop",
            CouplingSpec::TlsTf { .. } => "TlsTf",
        }
    }

    /// Same model with the coupling strength set to zero.
    pub fn decoupled(&self) -> Self {
        match *self {
            CouplingSpec::ChargeDipole { .. } => CouplingSpec::ChargeDipole {
                lambda: 0.0,
                jc: None,
            },
            CouplingSpec::CriticalCurrent { theta, .. } => {
                CouplingSpec::CriticalCurrent { jc: 0.0, theta }
            }
            CouplingSpec::FluxLoop { theta, .. } => CouplingSpec::FluxLoop { jc: 0.0, theta },
            CouplingSpec::TlsTf { dw_tls, .. } => CouplingSpec::TlsTf { jc: 0.0, dw_tls },
        }
    }

    pub fn has_tf(&self) -> bool {
        matches!(self, CouplingSpec::TlsTf { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoupledSystem {
    pub transmon: TransmonParams,
    pub tls: TlsParams,
    pub coupling: CouplingSpec,
}

impl CoupledSystem {
    pub fn new(transmon: TransmonParams, tls: TlsParams, coupling: CouplingSpec) -> Self {
        CoupledSystem {
            transmon,
            tls,
            coupling,
        }
    }

    pub fn with_transmon(mut self, transmon: TransmonParams) -> Self {
        self.transmon = transmon;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.transmon.validate()?;
        self.tls.validate()?;
        let finite = |name: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be finite")))
            }
        };
        match self.coupling {
            CouplingSpec::ChargeDipole { lambda, jc } => {
                finite("lambda", lambda)?;
                if lambda < 0.0 {
                    return Err(Error::invalid("lambda must be >= 0"));
                }
                let theta = self.tls.theta();
                if !(0.0..=PI / 2.0 + 1e-12).contains(&theta) {
                    return Err(Error::invalid(format!(
                        "ChargeDipole mixing angle {theta} outside [0, π/2]; use nonnegative Δ and ε"
                    )));
                }
                if let Some(jc) = jc {
                    finite("jc", jc)?;
                    let implied = 8.0 * lambda * theta.sin() * self.transmon.ec;
                    if (jc - implied).abs() > 1e-10 * jc.abs().max(1.0) {
                        return Err(Error::invalid(format!(
                            "jc = {jc} inconsistent with 8·lambda·sin(theta)·ec = {implied}"
                        )));
                    }
                }
            }
            CouplingSpec::CriticalCurrent { jc, theta } | CouplingSpec::FluxLoop { jc, theta } => {
                finite("jc", jc)?;
                finite("theta", theta)?;
                if !(0.0..=PI).contains(&theta) {
                    return Err(Error::invalid(format!("theta {theta} outside [0, π]")));
                }
            }
            CouplingSpec::TlsTf { jc, dw_tls } => {
                finite("jc", jc)?;
                finite("dw_tls", dw_tls)?;
                if self.tls.frequency() - dw_tls.abs() <= 0.0 {
                    return Err(Error::invalid("dw_tls must be smaller than the TLS frequency"));
                }
            }
        }
        Ok(())
    }

    /// Transverse coupling energy J_C (GHz).
    pub fn jc(&self) -> f64 {
        match self.coupling {
            CouplingSpec::ChargeDipole { lambda, .. } => {
                8.0 * lambda * self.tls.theta().sin() * self.transmon.ec
            }
            CouplingSpec::CriticalCurrent { jc, .. }
            | CouplingSpec::FluxLoop { jc, .. }
            | CouplingSpec::TlsTf { jc, .. } => jc,
        }
    }

    pub fn dim(&self) -> usize {
        self.sectors().len() * self.transmon.dim()
    }

    pub fn sectors(&self) -> Vec<Sector> {
        if self.coupling.has_tf() {
            vec![
                Sector::new(TlsState::G, Some(TlsState::G)),
                Sector::new(TlsState::E, Some(TlsState::G)),
                Sector::new(TlsState::G, Some(TlsState::E)),
                Sector::new(TlsState::E, Some(TlsState::E)),
            ]
        } else {
            vec![Sector::new(TlsState::G, None), Sector::new(TlsState::E, None)]
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Sector {
    pub tls: TlsState,
    pub tf: Option<TlsState>,
}

impl Sector {
    fn new(tls: TlsState, tf: Option<TlsState>) -> Self {
        Sector { tls, tf }
    }
}

/// Sector-diagonal block without its constant offset.
#[derive(Debug, Clone)]
struct Block {
    re: DMatrix<f64>,
    im: Option<DMatrix<f64>>,
    offset: f64,
}

/// Operator connecting sector `from` (TLS g) to sector `to` (TLS e), placed at
/// rows of `from` and columns of `to`.
#[derive(Debug, Clone)]
struct Link {
    from: usize,
    to: usize,
    re: DMatrix<f64>,
    im: Option<DMatrix<f64>>,
}

#[derive(Debug, Clone)]
struct Parts {
    d: usize,
    sectors: Vec<Sector>,
    blocks: Vec<Block>,
    links: Vec<Link>,
}

impl Parts {
    fn coupled(&self) -> bool {
        self.links
            .iter()
            .any(|l| l.re.amax() > 0.0 || l.im.as_ref().is_some_and(|m| m.amax() > 0.0))
    }
}

fn nonzero(m: DMatrix<f64>) -> Option<DMatrix<f64>> {
    if m.amax() > 0.0 {
        Some(m)
    } else {
        None
    }
}

fn build_parts(sys: &CoupledSystem) -> Result<Parts> {
    sys.validate()?;
    let t = &sys.transmon;
    let d = t.dim();
    let ng = t.effective_ng();
    let ej = t.ej();
    let w = sys.tls.frequency();
    let sectors = sys.sectors();
    let charge = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        d,
        charge_values(t.cutoff).into_iter().map(|n| n as f64 - ng),
    ));
    let bare = transmon_block(t.ec, ej, ng, t.cutoff);

    let mut blocks = Vec::with_capacity(sectors.len());
    let mut links = Vec::new();
    match sys.coupling {
        CouplingSpec::ChargeDipole { lambda, .. } => {
            let theta = sys.tls.theta();
            for s in &sectors {
                let sig = s.tls.sign();
                blocks.push(Block {
                    re: transmon_block(t.ec, ej, ng - lambda * theta.cos() * sig, t.cutoff),
                    im: None,
                    offset: 0.5 * w * sig,
                });
            }
            links.push(Link {
                from: 0,
                to: 1,
                re: &charge * (-8.0 * lambda * theta.sin() * t.ec),
                im: None,
            });
        }
        CouplingSpec::CriticalCurrent { jc, theta } | CouplingSpec::FluxLoop { jc, theta } => {
            // phase a = π·flux; CC couples through cos(φ − a), FL through −sin(φ − a)
            let a = PI * t.flux;
            let (c_re, c_im) = match sys.coupling {
                CouplingSpec::CriticalCurrent { .. } => (a.cos(), a.sin()),
                _ => (a.sin(), -a.cos()),
            };
            let op_re = cos_phi(d) * c_re;
            let op_im = sin_phi_im(d) * c_im;
            for s in &sectors {
                let k = -jc * theta.cos() * s.tls.sign();
                blocks.push(Block {
                    re: &bare + &op_re * k,
                    im: nonzero(&op_im * k),
                    offset: 0.5 * w * s.tls.sign(),
                });
            }
            let k = -jc * theta.sin();
            links.push(Link {
                from: 0,
                to: 1,
                re: &op_re * k,
                im: nonzero(&op_im * k),
            });
        }
        CouplingSpec::TlsTf { jc, dw_tls } => {
            for s in &sectors {
                let v = s.tf.map_or(0.0, |x| x.sign());
                blocks.push(Block {
                    re: bare.clone(),
                    im: None,
                    offset: 0.5 * (w + dw_tls * v) * s.tls.sign(),
                });
            }
            for (g, e) in [(0, 1), (2, 3)] {
                links.push(Link {
                    from: g,
                    to: e,
                    re: &charge * jc,
                    im: None,
                });
            }
        }
    }
    Ok(Parts {
        d,
        sectors,
        blocks,
        links,
    })
}

fn assemble(parts: &Parts, sys: &CoupledSystem) -> HamiltonianMatrix {
    let d = parts.d;
    let dim = d * parts.sectors.len();
    let mut re = DMatrix::zeros(dim, dim);
    let has_im =
        parts.blocks.iter().any(|b| b.im.is_some()) || parts.links.iter().any(|l| l.im.is_some());
    let mut im = if has_im {
        Some(DMatrix::zeros(dim, dim))
    } else {
        None
    };
    for (s, b) in parts.blocks.iter().enumerate() {
        let o = s * d;
        for i in 0..d {
            for j in 0..d {
                re[(o + i, o + j)] = b.re[(i, j)];
            }
            re[(o + i, o + i)] += b.offset;
        }
        if let (Some(dst), Some(src)) = (im.as_mut(), b.im.as_ref()) {
            for i in 0..d {
                for j in 0..d {
                    dst[(o + i, o + j)] = src[(i, j)];
                }
            }
        }
    }
    for l in &parts.links {
        let (r, c) = (l.from * d, l.to * d);
        for i in 0..d {
            for j in 0..d {
                re[(r + i, c + j)] = l.re[(i, j)];
                re[(c + j, r + i)] = l.re[(i, j)];
            }
        }
        if let (Some(dst), Some(src)) = (im.as_mut(), l.im.as_ref()) {
            for i in 0..d {
                for j in 0..d {
                    dst[(r + i, c + j)] = src[(i, j)];
                    dst[(c + j, r + i)] = -src[(i, j)];
                }
            }
        }
    }
    let charges = charge_values(sys.transmon.cutoff);
    let basis_labels = parts
        .sectors
        .iter()
        .flat_map(|s| {
            charges.iter().map(move |&charge| BasisLabel {
                charge,
                tls: Some(s.tls),
                tf: s.tf,
            })
        })
        .collect();
    HamiltonianMatrix {
        dim,
        re,
        im,
        basis_labels,
        ng: sys.transmon.effective_ng(),
    }
}

pub fn build_coupled(sys: &CoupledSystem) -> Result<HamiltonianMatrix> {
    let parts = build_parts(sys)?;
    Ok(assemble(&parts, sys))
}

/// Identity of a joint eigenstate in terms of the bare product basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LevelLabel {
    pub qubit: usize,
    pub tls: TlsState,
    pub tf: Option<TlsState>,
}

impl std::fmt::Display for LevelLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "|{},{}", self.qubit, self.tls.as_str())?;
        if let Some(tf) = self.tf {
            write!(f, ",{}", tf.as_str())?;
        }
        write!(f, ">")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledLevel {
    pub energy: f64,
    pub label: LevelLabel,
    /// Probability weight on the bare product state.
    pub overlap: f64,
    /// Largest weight of the same bare state on any other eigenstate.
    pub runner_up: f64,
    /// Index of the eigenstate in the ascending joint spectrum.
    pub index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    /// Labels used by a computation must carry overlap ≥ 0.5.
    #[default]
    Strict,
    /// Greedy maximal-overlap assignment with no overlap threshold.
    BestEffort,
}

/// Resonance window `|ν_ij − ω_TLS| < 3 g_ij` of the bare system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResonanceWindow {
    pub transition: (usize, usize),
    /// Bare ν_ij − ω_TLS (GHz).
    pub detuning: f64,
    /// Transverse matrix element ⟨i,e|H|j,g⟩ (GHz).
    pub coupling: f64,
    pub tf: Option<TlsState>,
    pub inside: bool,
}

impl std::fmt::Display for ResonanceWindow {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "resonance window of transition {}-{} (detuning {:.4} GHz, 3g = {:.4} GHz)",
            self.transition.0,
            self.transition.1,
            self.detuning,
            3.0 * self.coupling
        )
    }
}

/// Diagonalized joint system with labels for the tracked bare product states.
#[derive(Debug, Clone)]
pub struct CoupledSpectrum {
    pub levels: Vec<f64>,
    pub labeled: Vec<LabeledLevel>,
    pub windows: Vec<ResonanceWindow>,
    /// Labeled energies minus their sector's constant TLS offset, in `labeled` order.
    relative: Vec<f64>,
    offsets: Vec<(Sector, f64)>,
    /// Eigenvectors of the labeled states, in `labeled` order.
    vectors: Vec<Vec<Complex64>>,
    /// Candidate eigenvectors considered for labeling (continuity relabeling).
    candidates: Vec<Vec<Complex64>>,
}

impl LabeledLevel {
    /// Below one half, or shared with a second eigenstate at more than one quarter.
    pub fn ambiguous(&self) -> bool {
        self.overlap < 0.5 || self.runner_up > 0.25
    }
}

impl CoupledSpectrum {
    pub fn level(&self, label: LevelLabel) -> Option<&LabeledLevel> {
        self.labeled.iter().find(|l| l.label == label)
    }

    /// Energy of `label` with the sector's constant TLS energy removed, so that
    /// transition differences inside one sector cancel exactly when decoupled.
    fn energy(&self, label: LevelLabel, mode: LabelMode) -> Result<f64> {
        let pos = self.labeled.iter().position(|l| l.label == label);
        let lv = pos.map(|p| &self.labeled[p]).ok_or_else(|| Error::LabelAmbiguity {
            label: label.to_string(),
            overlap: 0.0,
            window: "state not among labeled levels".into(),
        })?;
        if mode == LabelMode::Strict && lv.ambiguous() {
            let window = self
                .windows
                .iter()
                .find(|w| {
                    w.inside
                        && (w.transition.0 == label.qubit || w.transition.1 == label.qubit)
                })
                .map_or_else(
                    || "outside declared resonance windows".to_string(),
                    |w| format!("inside {w}"),
                );
            return Err(Error::LabelAmbiguity {
                label: label.to_string(),
                overlap: lv.overlap,
                window,
            });
        }
        Ok(self.relative[pos.unwrap_or_default()])
    }

    fn offset_of(&self, label: LevelLabel) -> f64 {
        self.offsets
            .iter()
            .find(|(s, _)| s.tls == label.tls && s.tf == label.tf)
            .map_or(0.0, |(_, o)| *o)
    }

    fn refresh_relative(&mut self) {
        self.relative = self
            .labeled
            .iter()
            .map(|l| l.energy - self.offset_of(l.label))
            .collect();
    }

    /// Whether any window touching `transition` is active.
    pub fn in_window(&self, transition: (usize, usize)) -> bool {
        self.windows.iter().any(|w| {
            w.inside
                && [w.transition.0, w.transition.1]
                    .iter()
                    .any(|q| *q == transition.0 || *q == transition.1)
        })
    }
}

fn sector_eigs(parts: &Parts) -> Result<Vec<Eigen>> {
    parts
        .blocks
        .iter()
        .map(|b| eigh(&b.re, b.im.as_ref()))
        .collect()
}

fn windows_from_bare(parts: &Parts, bare: &[Eigen]) -> Vec<ResonanceWindow> {
    let d = parts.d;
    let mut out = Vec::new();
    for l in &parts.links {
        let (g, e) = (&bare[l.from], &bare[l.to]);
        let w_eff = (e.values[0] + parts.blocks[l.to].offset)
            - (g.values[0] + parts.blocks[l.from].offset);
        for (i, j) in [(0usize, 1usize), (1, 2), (2, 3)] {
            let nu = g.values[j] - g.values[i];
            // ⟨j,g|V|i,e⟩ with V the g→e block
            let mut acc = Complex64::new(0.0, 0.0);
            for r in 0..d {
                for c in 0..d {
                    let v = Complex64::new(l.re[(r, c)], l.im.as_ref().map_or(0.0, |m| m[(r, c)]));
                    acc += g.vectors[(r, j)].conj() * v * e.vectors[(c, i)];
                }
            }
            let coupling = acc.norm();
            let detuning = nu - w_eff;
            out.push(ResonanceWindow {
                transition: (i, j),
                detuning,
                coupling,
                tf: parts.sectors[l.from].tf,
                inside: detuning.abs() < 3.0 * coupling,
            });
        }
    }
    out
}

fn overlap_weight(bare: &Eigen, q: usize, psi_sector: &[Complex64]) -> f64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for (r, c) in psi_sector.iter().enumerate() {
        acc += bare.vectors[(r, q)].conj() * c;
    }
    acc.norm_sqr()
}

/// Unique assignment of labels to eigenstates in order of decreasing weight.
/// Returns `(eigenstate, weight, runner-up weight)` per label.
fn greedy(weights: &[(usize, usize, f64)], n_labels: usize) -> Vec<Option<(usize, f64, f64)>> {
    let mut sorted = weights.to_vec();
    sorted.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    let mut assigned = vec![None; n_labels];
    let mut used = std::collections::HashSet::new();
    for (label, k, w) in sorted {
        if assigned[label].is_none() && !used.contains(&k) {
            assigned[label] = Some((k, w, 0.0));
            used.insert(k);
        }
    }
    for &(label, k, w) in weights {
        if let Some((best, _, second)) = assigned[label].as_mut() {
            if *best != k && w > *second {
                *second = w;
            }
        }
    }
    assigned
}

fn tracked_labels(parts: &Parts) -> Vec<(usize, LevelLabel)> {
    let mut out = Vec::new();
    for (s, sec) in parts.sectors.iter().enumerate() {
        for q in 0..TRACKED_QUBIT_LEVELS {
            out.push((
                s,
                LevelLabel {
                    qubit: q,
                    tls: sec.tls,
                    tf: sec.tf,
                },
            ));
        }
    }
    out
}

/// Diagonalize the joint Hamiltonian and label the lowest qubit levels in every
/// TLS (and TF) sector by maximal overlap with bare product states.
pub fn coupled_spectrum(sys: &CoupledSystem) -> Result<CoupledSpectrum> {
    let parts = build_parts(sys)?;
    let bare = sector_eigs(&parts)?;
    let windows = windows_from_bare(&parts, &bare);
    let labels = tracked_labels(&parts);
    let d = parts.d;
    let offsets: Vec<(Sector, f64)> = parts
        .sectors
        .iter()
        .zip(&parts.blocks)
        .map(|(s, b)| (*s, b.offset))
        .collect();

    if !parts.coupled() {
        // product states are exact; energies from the blocks keep λ = 0 shifts exactly zero
        let mut levels: Vec<f64> = bare
            .iter()
            .zip(&parts.blocks)
            .flat_map(|(e, b)| e.values.iter().map(move |v| v + b.offset))
            .collect();
        levels.sort_by(f64::total_cmp);
        let dim = d * parts.sectors.len();
        let mut labeled = Vec::new();
        let mut relative = Vec::new();
        let mut vectors = Vec::new();
        for &(s, label) in &labels {
            relative.push(bare[s].values[label.qubit]);
            let energy = bare[s].values[label.qubit] + parts.blocks[s].offset;
            let index = levels.partition_point(|v| *v < energy);
            labeled.push(LabeledLevel {
                energy,
                label,
                overlap: 1.0,
                runner_up: 0.0,
                index,
            });
            let mut v = vec![Complex64::new(0.0, 0.0); dim];
            for r in 0..d {
                v[s * d + r] = bare[s].vectors[(r, label.qubit)];
            }
            vectors.push(v);
        }
        let candidates = vectors.clone();
        return Ok(CoupledSpectrum {
            levels,
            labeled,
            windows,
            relative,
            offsets,
            vectors,
            candidates,
        });
    }

    let h = assemble(&parts, sys);
    let eig = eigh(&h.re, h.im.as_ref())?;
    let n_cand = (parts.sectors.len() * (TRACKED_QUBIT_LEVELS + 4)).min(h.dim);
    let candidates: Vec<Vec<Complex64>> = (0..n_cand)
        .map(|k| eig.vectors.column(k).iter().copied().collect())
        .collect();
    let mut weights = Vec::new();
    for (li, &(s, label)) in labels.iter().enumerate() {
        for (k, psi) in candidates.iter().enumerate() {
            let w = overlap_weight(&bare[s], label.qubit, &psi[s * d..(s + 1) * d]);
            weights.push((li, k, w));
        }
    }
    let assigned = greedy(&weights, labels.len());
    let mut labeled = Vec::new();
    let mut vectors = Vec::new();
    for (li, &(_, label)) in labels.iter().enumerate() {
        if let Some((k, w, runner_up)) = assigned[li] {
            labeled.push(LabeledLevel {
                energy: eig.values[k],
                label,
                overlap: w,
                runner_up,
                index: k,
            });
            vectors.push(candidates[k].clone());
        }
    }
    let mut out = CoupledSpectrum {
        levels: eig.values,
        labeled,
        windows,
        relative: Vec::new(),
        offsets,
        vectors,
        candidates,
    };
    out.refresh_relative();
    Ok(out)
}

/// Reassign labels by maximal overlap with the previous sweep point's labeled
/// eigenvectors. Used where bare-state overlaps fall below one half.
fn relabel_by_continuity(current: &mut CoupledSpectrum, previous: &CoupledSpectrum) {
    let mut weights = Vec::new();
    for (li, prev_vec) in previous.vectors.iter().enumerate() {
        for (k, psi) in current.candidates.iter().enumerate() {
            let mut acc = Complex64::new(0.0, 0.0);
            for (a, b) in prev_vec.iter().zip(psi) {
                acc += a.conj() * b;
            }
            weights.push((li, k, acc.norm_sqr()));
        }
    }
    let assigned = greedy(&weights, previous.labeled.len());
    let mut labeled = Vec::new();
    let mut vectors = Vec::new();
    for (li, prev) in previous.labeled.iter().enumerate() {
        if let Some((k, w, runner_up)) = assigned[li] {
            labeled.push(LabeledLevel {
                energy: current.levels[k],
                label: prev.label,
                overlap: w,
                runner_up,
                index: k,
            });
            vectors.push(current.candidates[k].clone());
        }
    }
    current.labeled = labeled;
    current.vectors = vectors;
    current.refresh_relative();
}

fn shift_from(spec: &CoupledSpectrum, sys: &CoupledSystem, pair: (usize, usize), mode: LabelMode) -> Result<f64> {
    let (i, j) = pair;
    if i >= j || j >= TRACKED_QUBIT_LEVELS {
        return Err(Error::invalid(format!(
            "transition ({i}, {j}) not supported; need i < j < {TRACKED_QUBIT_LEVELS}"
        )));
    }
    let lab = |q, tls, tf| LevelLabel { qubit: q, tls, tf };
    if sys.coupling.has_tf() {
        let g = TlsState::G;
        let (tf_g, tf_e) = (Some(TlsState::G), Some(TlsState::E));
        let e = |l| spec.energy(l, mode);
        Ok((e(lab(j, g, tf_e))? - e(lab(i, g, tf_e))?) - (e(lab(j, g, tf_g))? - e(lab(i, g, tf_g))?))
    } else {
        let e = |l| spec.energy(l, mode);
        Ok((e(lab(j, TlsState::E, None))? - e(lab(i, TlsState::E, None))?)
            - (e(lab(j, TlsState::G, None))? - e(lab(i, TlsState::G, None))?))
    }
}

/// δ_b = ν_ij(TLS = e) − ν_ij(TLS = g). For the TLS–TF model this is instead
/// δ_B = ν_ij(TLS g, TF e) − ν_ij(TLS g, TF g).
pub fn dispersive_shift(sys: &CoupledSystem, transition: (usize, usize)) -> Result<f64> {
    dispersive_shift_with(sys, transition, LabelMode::Strict)
}

pub fn dispersive_shift_with(
    sys: &CoupledSystem,
    transition: (usize, usize),
    mode: LabelMode,
) -> Result<f64> {
    let spec = coupled_spectrum(sys)?;
    shift_from(&spec, sys, transition, mode)
}

/// TLS-state shift ν_ij(e) − ν_ij(g) for the TLS–TF model at a fixed TF state.
pub fn tls_shift_at_tf(sys: &CoupledSystem, transition: (usize, usize), tf: TlsState) -> Result<f64> {
    let spec = coupled_spectrum(sys)?;
    let (i, j) = transition;
    let e = |q, tls| {
        spec.energy(
            LevelLabel {
                qubit: q,
                tls,
                tf: Some(tf),
            },
            LabelMode::Strict,
        )
    };
    Ok((e(j, TlsState::E)? - e(i, TlsState::E)?) - (e(j, TlsState::G)? - e(i, TlsState::G)?))
}

/// Extrema of δ_b over a uniform grid of `n_points` offset charges in [0, 1/2]
/// for both parities.
pub fn dispersive_shift_band(
    sys: &CoupledSystem,
    transition: (usize, usize),
    n_points: usize,
    mode: LabelMode,
) -> Result<(f64, f64)> {
    if n_points < 2 {
        return Err(Error::invalid("band needs at least 2 offset-charge points"));
    }
    let grid: Vec<(f64, Parity)> = (0..n_points)
        .flat_map(|k| {
            let ng = 0.5 * k as f64 / (n_points - 1) as f64;
            [(ng, Parity::Even), (ng, Parity::Odd)]
        })
        .collect();
    let shifts: Result<Vec<f64>> = grid
        .par_iter()
        .map(|&(ng, parity)| {
            let s = sys.with_transmon(sys.transmon.with_ng(ng).with_parity(parity));
            dispersive_shift_with(&s, transition, mode)
        })
        .collect();
    let shifts = shifts?;
    let lo = shifts.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = shifts.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((lo, hi))
}

pub const DEFAULT_BAND_POINTS: usize = 21;

/// One point of a flux sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepPoint {
    pub flux: f64,
    /// Parity-averaged bare ν̄01 (GHz).
    pub nu01_bar: f64,
    /// δ_b per requested transition; `None` where labeling failed.
    pub shifts: Vec<Option<f64>>,
    pub bands: Vec<Option<(f64, f64)>>,
    /// True when any resonance window touching a requested transition is active.
    pub excluded: bool,
}

/// δ_b along a flux grid. Points are evaluated independently; where bare-state
/// overlaps fall below one half, labels are carried over from the preceding grid
/// point by eigenvector continuity.
pub fn shift_sweep(
    sys: &CoupledSystem,
    fluxes: &[f64],
    transitions: &[(usize, usize)],
    band_points: Option<usize>,
) -> Result<Vec<SweepPoint>> {
    let spectra: Vec<CoupledSpectrum> = fluxes
        .par_iter()
        .map(|&f| coupled_spectrum(&sys.with_transmon(sys.transmon.with_flux(f))))
        .collect::<Result<_>>()?;
    let mut tracked: Vec<CoupledSpectrum> = Vec::with_capacity(spectra.len());
    for spec in spectra {
        let mut spec = spec;
        let weak = spec.labeled.iter().any(|l| l.ambiguous());
        if weak {
            if let Some(prev) = tracked.last() {
                relabel_by_continuity(&mut spec, prev);
            }
        }
        tracked.push(spec);
    }
    fluxes
        .par_iter()
        .zip(tracked.par_iter())
        .map(|(&flux, spec)| {
            let s = sys.with_transmon(sys.transmon.with_flux(flux));
            let nu01_bar = mean_transition(&s.transmon, (0, 1))?;
            let shifts = transitions
                .iter()
                .map(|&t| shift_from(spec, &s, t, LabelMode::BestEffort).ok())
                .collect();
            let bands = transitions
                .iter()
                .map(|&t| {
                    band_points.and_then(|n| dispersive_shift_band(&s, t, n, LabelMode::BestEffort).ok())
                })
                .collect();
            let excluded = transitions.iter().any(|&t| spec.in_window(t));
            Ok(SweepPoint {
                flux,
                nu01_bar,
                shifts,
                bands,
                excluded,
            })
        })
        .collect()
}

/// Rotating-wave estimate δ_B ≈ 2 g_C² / (ν̄01 − ω_TLS − α).
pub fn rwa_shift(gc: f64, w01: f64, w_tls: f64, alpha: f64) -> Result<f64> {
    let den = w01 - w_tls - alpha;
    if !den.is_finite() || den.abs() < 1e-12 {
        return Err(Error::Resonance(format!(
            "ν̄01 − ω_TLS − α = {den:.3e} GHz; estimate undefined"
        )));
    }
    Ok(2.0 * gc * gc / den)
}

/// δ_b(ω_TLS) for a transverse charge dipole of dimensionless size
/// `p_z sinθ / (e d)`, with the qubit held at zero flux.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShiftCurve {
    pub w_tls: Vec<f64>,
    pub shift: Vec<Option<f64>>,
    /// Grid frequencies dropped for lying in a resonance window.
    pub excluded: Vec<f64>,
}

pub fn shift_vs_tls_frequency(
    dipole_fraction: f64,
    qubit: &TransmonParams,
    grid: &[f64],
    transition: (usize, usize),
) -> Result<ShiftCurve> {
    if !(dipole_fraction.is_finite() && dipole_fraction >= 0.0) {
        return Err(Error::invalid("dipole_fraction must be >= 0"));
    }
    if grid.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(Error::invalid("TLS frequencies must be > 0"));
    }
    let qubit = qubit.with_flux(0.0);
    // p_z sinθ/(e d) = 4 λ sinθ; fully transverse TLS
    let lambda = dipole_fraction / 4.0;
    let results: Vec<Result<Option<f64>>> = grid
        .par_iter()
        .map(|&w| {
            let sys = CoupledSystem::new(
                qubit,
                TlsParams::from_frequency(w, PI / 2.0),
                CouplingSpec::ChargeDipole { lambda, jc: None },
            );
            let spec = coupled_spectrum(&sys)?;
            if spec.in_window(transition) {
                return Ok(None);
            }
            shift_from(&spec, &sys, transition, LabelMode::Strict).map(Some)
        })
        .collect();
    let mut shift = Vec::with_capacity(grid.len());
    let mut excluded = Vec::new();
    for (w, r) in grid.iter().zip(results) {
        let r = r?;
        if r.is_none() {
            excluded.push(*w);
        }
        shift.push(r);
    }
    Ok(ShiftCurve {
        w_tls: grid.to_vec(),
        shift,
        excluded,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dipole {
    /// Fraction of the barrier the charge traverses, 2δn_g / cosθ.
    pub traversal: f64,
    pub pz_e_angstrom: f64,
    pub pz_debye: f64,
}

/// Dipole moment from the offset-charge shift, the mixing angle and the barrier
/// thickness `d_nm`.
pub fn dipole_from_offset(dng: f64, theta: f64, d_nm: f64) -> Result<Dipole> {
    if !(dng.is_finite() && dng >= 0.0) || !(d_nm.is_finite() && d_nm > 0.0) {
        return Err(Error::invalid("dng must be >= 0 and d > 0"));
    }
    let c = theta.cos();
    if c.abs() < 1e-12 {
        return Err(Error::invalid(
            "cosθ = 0: a transverse TLS has no longitudinal offset-charge signature",
        ));
    }
    let traversal = 2.0 * dng / c;
    let pz = traversal * d_nm * 10.0;
    Ok(Dipole {
        traversal,
        pz_e_angstrom: pz,
        pz_debye: pz * DEBYE_PER_E_ANGSTROM,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TlsInversion {
    pub tls: TlsParams,
    pub lambda: f64,
    pub theta: f64,
}

/// Solve λ cosθ = δn_g/2 and λ sinθ = g_C / (8 E_C n01) for the TLS parameters.
pub fn invert_tls_params(dng: f64, gc: f64, ec: f64, n01: f64, w_tls: f64) -> Result<TlsInversion> {
    for (name, v) in [("dng", dng), ("gc", gc)] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::invalid(format!("{name} must be >= 0, got {v}")));
        }
    }
    for (name, v) in [("ec", ec), ("n01", n01), ("w_tls", w_tls)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::invalid(format!("{name} must be > 0, got {v}")));
        }
    }
    let long = 0.5 * dng;
    let trans = gc / (8.0 * ec * n01);
    if long == 0.0 && trans == 0.0 {
        return Err(Error::invalid(
            "dng and gc both zero: mixing angle undetermined",
        ));
    }
    let theta = trans.atan2(long);
    let lambda = long.hypot(trans);
    Ok(TlsInversion {
        tls: TlsParams::from_frequency(w_tls, theta),
        lambda,
        theta,
    })
}

/// |⟨0|n̂|1⟩| of the bare transmon at the flux where the parity-averaged ν̄01
/// equals `nu01` (GHz).
pub fn n01_at_frequency(qubit: &TransmonParams, nu01: f64) -> Result<f64> {
    let flux = crate::spectra::flux_for_frequency(qubit, nu01)?;
    let s = crate::spectra::transmon_spectrum(&qubit.with_flux(flux), 2)?;
    Ok(s.n_element(0, 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectra::{diagonalize, transmon_levels};

    fn paper_tls() -> TlsParams {
        TlsParams::new(1.331, 2.555)
    }

    fn charge_sys(lambda: f64) -> CoupledSystem {
        CoupledSystem::new(
            TransmonParams::paper_device().with_ng(0.25),
            paper_tls(),
            CouplingSpec::ChargeDipole { lambda, jc: None },
        )
    }

    #[test]
    fn dimensions() {
        let h = build_coupled(&charge_sys(0.02)).unwrap();
        assert_eq!(h.dim, 62);
        let tf = CoupledSystem::new(
            TransmonParams::paper_device(),
            paper_tls(),
            CouplingSpec::TlsTf {
                jc: 0.05,
                dw_tls: -0.02,
            },
        );
        assert_eq!(build_coupled(&tf).unwrap().dim, 124);
    }

    #[test]
    fn decoupled_models_are_tensor_sums() {
        let q = TransmonParams::paper_device().with_ng(0.1).with_flux(0.13);
        let bare = transmon_levels(&q).unwrap();
        let w = paper_tls().frequency();
        for coupling in [
            CouplingSpec::ChargeDipole {
                lambda: 0.0,
                jc: None,
            },
            CouplingSpec::CriticalCurrent {
                jc: 0.0,
                theta: 1.0,
            },
            CouplingSpec::FluxLoop {
                jc: 0.0,
                theta: 1.0,
            },
        ] {
            let sys = CoupledSystem::new(q, paper_tls(), coupling);
            let s = diagonalize(&build_coupled(&sys).unwrap(), 8).unwrap();
            let mut expect: Vec<f64> = bare
                .iter()
                .flat_map(|e| [e - w / 2.0, e + w / 2.0])
                .collect();
            expect.sort_by(f64::total_cmp);
            for k in 0..8 {
                assert!((s.levels[k] - expect[k]).abs() < 1e-10, "{}", coupling.name());
            }
            assert_eq!(dispersive_shift(&sys, (0, 1)).unwrap(), 0.0);
        }
    }

    #[test]
    fn jc_consistency_checked() {
        let theta = paper_tls().theta();
        let jc = 8.0 * 0.02 * theta.sin() * 0.303;
        let mut sys = charge_sys(0.02);
        sys.coupling = CouplingSpec::ChargeDipole {
            lambda: 0.02,
            jc: Some(jc),
        };
        assert!(sys.validate().is_ok());
        sys.coupling = CouplingSpec::ChargeDipole {
            lambda: 0.02,
            jc: Some(jc * 1.001),
        };
        assert!(sys.validate().is_err());
    }

    #[test]
    fn flux_models_are_hermitian_with_imaginary_part() {
        let q = TransmonParams::paper_device().with_ng(0.2).with_flux(0.2);
        for coupling in [
            CouplingSpec::CriticalCurrent {
                jc: 0.0463,
                theta: 1.2,
            },
            CouplingSpec::FluxLoop {
                jc: 0.0505,
                theta: 1.2,
            },
        ] {
            let h = build_coupled(&CoupledSystem::new(q, paper_tls(), coupling)).unwrap();
            assert!(h.im.is_some());
            assert!(h.hermiticity_error() < 1e-12);
        }
    }

    #[test]
    fn zero_flux_charge_shift_magnitude() {
        let db = dispersive_shift(&charge_sys(0.020297), (0, 1)).unwrap();
        assert!((0.23e-3..=0.69e-3).contains(&db.abs()), "{db}");
    }

    #[test]
    fn rwa_algebra() {
        assert_eq!(rwa_shift(0.0, 4.8, 2.88, 0.36).unwrap(), 0.0);
        let a = rwa_shift(0.01, 4.8, 2.88, 0.36).unwrap();
        let b = rwa_shift(0.02, 4.8, 2.88, 0.36).unwrap();
        assert!((b / a - 4.0).abs() < 1e-12);
        assert!(rwa_shift(0.01, 3.24, 2.88, 0.36).is_err());
    }

    #[test]
    fn dipole_examples() {
        let d = dipole_from_offset(0.036, 0.480, 1.5).unwrap();
        assert!((d.traversal - 0.081).abs() < 0.001);
        assert!((d.pz_e_angstrom - 1.2).abs() < 0.05);
        assert!((d.pz_debye - 5.8).abs() / 5.8 < 0.02);
        let z = dipole_from_offset(0.0, 0.48, 1.5).unwrap();
        assert_eq!(z.traversal, 0.0);
        let d2 = dipole_from_offset(0.036, 0.480, 3.0).unwrap();
        assert!((d2.pz_debye / d.pz_debye - 2.0).abs() < 1e-12);
        assert_eq!(d2.traversal, d.traversal);
        assert!(dipole_from_offset(0.036, PI / 2.0, 1.5).is_err());
    }

    #[test]
    fn inversion_limits() {
        let sym = invert_tls_params(0.0, 0.0175, 0.303, 0.77, 2.881).unwrap();
        assert!((sym.theta - PI / 2.0).abs() < 1e-15);
        assert!(sym.tls.epsilon.abs() < 1e-12);
        let cls = invert_tls_params(0.036, 0.0, 0.303, 0.77, 2.881).unwrap();
        assert_eq!(cls.theta, 0.0);
        assert_eq!(cls.tls.delta, 0.0);
        assert!(invert_tls_params(-0.01, 0.0175, 0.303, 0.77, 2.881).is_err());
    }

    #[test]
    fn strict_labels_fail_inside_window() {
        // qubit tuned onto the TLS: |1,g> and |0,e> hybridize
        let base = charge_sys(0.020297);
        let detuning = |flux: f64| {
            let s = base.with_transmon(base.transmon.with_flux(flux));
            coupled_spectrum(&s).unwrap().windows[0].detuning
        };
        let (mut lo, mut hi) = (0.0, 0.45);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if detuning(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let sys = base.with_transmon(base.transmon.with_flux(lo));
        match dispersive_shift(&sys, (0, 1)) {
            Err(Error::LabelAmbiguity { window, .. }) => assert!(window.contains("0-1"), "{window}"),
            other => panic!("expected ambiguity, got {other:?}"),
        }
        assert!(dispersive_shift_with(&sys, (0, 1), LabelMode::BestEffort).is_ok());
    }

    #[test]
    fn coupling_spec_json() {
        let s: CouplingSpec =
            serde_json::from_str(r#"{"model":"CriticalCurrent","jc":0.0463,"theta":1.573}"#)
                .unwrap();
        assert_eq!(
            s,
            CouplingSpec::CriticalCurrent {
                jc: 0.0463,
                theta: 1.573
            }
        );
        assert!(serde_json::from_str::<CouplingSpec>(
            r#"{"model":"CriticalCurrent","jc":0.0463,"theta":1.573,"lambda":0.1}"#
        )
        .is_err());
        assert!(serde_json::from_str::<CouplingSpec>(r#"{"model":"FluxLoop","jc":0.05}"#).is_err());
    }
}
