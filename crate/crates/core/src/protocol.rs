//! Discrete-event simulation of the adaptive measure-and-confirm protocol that
//! assigns the joint TLS / parity state, run over a hidden Markov process.
//!
//! Each measurement has two stages. The C/F stage distinguishes close states
//! `{gE, eO}` from far states `{gO, eE}`: a pulse maps its own class to qubit
//! ground, two consecutive 0s confirm, and any 1 triggers a qubit reset and a
//! swap to the other pulse. The g/e stage is a Ramsey sequence whose idle is
//! matched to the confirmed class, confirmed the same way.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    bootstrap, conditional_probs, confusion_from_t0, fit_rates, rate_pairs, BootstrapResult, CondProbs,
    ConfusionMatrix, GeneratorMatrix, JointState, RateFit, RateFitOptions, ShotRecord, TelegraphTrace,
};
use crate::error::{Error, Result};
use crate::spectra::TlsState;

fn default_readout_duration() -> f64 {
    3e-6
}

fn default_prep() -> f64 {
    0.5
}

fn default_cap() -> usize {
    12
}

/// Piecewise-constant random walk of the offset charge, one ±`step` move
/// every `interval_shots` shots.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NgWalk {
    pub step: f64,
    pub interval_shots: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolConfig {
    /// TLS-induced dispersive shift δ_b (Hz).
    pub db_hz: f64,
    /// Charge dispersion δ_c (Hz).
    pub dc_hz: f64,
    pub ng: f64,
    /// Symmetric bit-flip probability per readout.
    pub readout_error: f64,
    /// Probability per readout that the TLS is driven g → e.
    #[serde(default)]
    pub backaction_exc: f64,
    /// Probability that a reset after a 1 leaves the qubit excited.
    #[serde(default)]
    pub reset_error: f64,
    #[serde(default = "default_readout_duration")]
    pub readout_duration_s: f64,
    pub generator: GeneratorMatrix,
    #[serde(default)]
    pub seed: u64,
    /// Probability that a shot starts with the TLS excited.
    #[serde(default = "default_prep")]
    pub tls_prep_excited: f64,
    /// Readouts allowed per stage before the shot is discarded.
    #[serde(default = "default_cap")]
    pub max_readouts_per_stage: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ng_walk: Option<NgWalk>,
}

impl ProtocolConfig {
    /// Operating point from the measured device: δ_b = 460 kHz, δ_c = 160 kHz, n_g = 0.
    pub fn paper_scale(generator: GeneratorMatrix) -> Self {
        ProtocolConfig {
            db_hz: 460e3,
            dc_hz: 160e3,
            ng: 0.0,
            readout_error: 0.05,
            backaction_exc: 0.0,
            reset_error: 0.01,
            readout_duration_s: default_readout_duration(),
            generator,
            seed: 0,
            tls_prep_excited: default_prep(),
            max_readouts_per_stage: default_cap(),
            ng_walk: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("readout_error", self.readout_error),
            ("backaction_exc", self.backaction_exc),
            ("reset_error", self.reset_error),
            ("tls_prep_excited", self.tls_prep_excited),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("{name} must be a probability, got {p}")));
            }
        }
        if self.readout_error >= 0.5 {
            return Err(Error::invalid("readout_error must be below 0.5"));
        }
        if !(self.readout_duration_s.is_finite() && self.readout_duration_s >= 0.0) {
            return Err(Error::invalid("readout_duration_s must be >= 0"));
        }
        if self.max_readouts_per_stage < 2 {
            return Err(Error::invalid("max_readouts_per_stage must be >= 2"));
        }
        if let Some(w) = &self.ng_walk {
            if !(w.step.is_finite() && w.step >= 0.0) || w.interval_shots == 0 {
                return Err(Error::invalid("ng_walk needs step >= 0 and interval_shots >= 1"));
            }
        }
        self.timings().map(|_| ())
    }

    /// Detunings and idle times at the calibrated offset charge.
    pub fn timings(&self) -> Result<Timings> {
        Timings::new(self.db_hz, self.dc_hz, self.ng)
    }
}

/// Detunings of the far and close classes from the drive, and the idle times
/// derived from them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub delta_f: f64,
    pub delta_c: f64,
    pub t_cf: f64,
    pub t_ge_c: f64,
    pub t_ge_f: f64,
}

impl Timings {
    pub fn new(db: f64, dc: f64, ng: f64) -> Result<Self> {
        let (delta_f, delta_c) = detunings(db, dc, ng);
        if !(delta_f > 0.0 && delta_c > 0.0) {
            return Err(Error::invalid(format!(
                "operating point needs positive detunings, got Δ_F = {delta_f:.4e} Hz, Δ_C = {delta_c:.4e} Hz"
            )));
        }
        Ok(Timings {
            delta_f,
            delta_c,
            t_cf: 1.0 / (2.0 * delta_f),
            t_ge_c: 1.0 / (4.0 * delta_c),
            t_ge_f: 1.0 / (4.0 * delta_f),
        })
    }
}

fn detunings(db: f64, dc: f64, ng: f64) -> (f64, f64) {
    let c = 0.5 * dc * (2.0 * std::f64::consts::PI * ng).cos();
    (0.5 * db + c, 0.5 * db - c)
}

/// Drive detuning (Hz) seen by the qubit in `s`.
fn signed_detuning(s: JointState, delta_f: f64, delta_c: f64) -> f64 {
    match s {
        JointState::GO => delta_f,
        JointState::GE => delta_c,
        JointState::EO => -delta_c,
        JointState::EE => -delta_f,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pulse {
    #[serde(rename = "D_C")]
    DC,
    #[serde(rename = "D_F")]
    DF,
    #[serde(rename = "D_g")]
    Dg,
    #[serde(rename = "D_e")]
    De,
}

impl Pulse {
    fn swapped(self) -> Pulse {
        match self {
            Pulse::DC => Pulse::DF,
            Pulse::DF => Pulse::DC,
            Pulse::Dg => Pulse::De,
            Pulse::De => Pulse::Dg,
        }
    }

    /// Whether `s` belongs to the class this pulse maps to qubit ground.
    pub fn maps_to_ground(self, s: JointState) -> bool {
        match self {
            Pulse::DC => is_close(s),
            Pulse::DF => !is_close(s),
            Pulse::Dg => s.tls() == TlsState::G,
            Pulse::De => s.tls() == TlsState::E,
        }
    }
}

pub fn is_close(s: JointState) -> bool {
    matches!(s, JointState::GE | JointState::EO)
}

/// Ideal bit for `pulse` on `hidden`, flipped with probability `readout_error`.
pub fn map_outcome<R: Rng + ?Sized>(hidden: JointState, pulse: Pulse, cfg: &ProtocolConfig, rng: &mut R) -> u8 {
    let ideal = u8::from(!pulse.maps_to_ground(hidden));
    ideal ^ u8::from(rng.random::<f64>() < cfg.readout_error)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscardReason {
    CfUnconfirmed,
    GeUnconfirmed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolOutcome {
    pub record: ShotRecord,
    pub readouts: usize,
    pub swaps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discard: Option<DiscardReason>,
    /// Hidden states at the end of the first and second measurement.
    pub true_s: JointState,
    pub true_s_prime: JointState,
    /// Wall time taken by the shot (s).
    pub duration: f64,
}

struct Shot<'a> {
    cfg: &'a ProtocolConfig,
    tim: Timings,
    /// Actual detunings (differ from `tim` under an n_g walk).
    delta_f: f64,
    delta_c: f64,
    state: JointState,
    qubit_excited: bool,
    rng: ChaCha8Rng,
    readouts: usize,
    swaps: usize,
    elapsed: f64,
}

impl Shot<'_> {
    /// Evolve the hidden state for `dt`; returns the accumulated Ramsey phase (rad).
    fn advance(&mut self, dt: f64) -> f64 {
        let mut phase = 0.0;
        let mut left = dt;
        loop {
            let exit = self.cfg.generator.exit_rate(self.state);
            let wait = if exit > 0.0 {
                Exp::new(exit).expect("positive rate").sample(&mut self.rng)
            } else {
                f64::INFINITY
            };
            let d = signed_detuning(self.state, self.delta_f, self.delta_c);
            if wait >= left {
                phase += 2.0 * std::f64::consts::PI * d * left;
                break;
            }
            phase += 2.0 * std::f64::consts::PI * d * wait;
            left -= wait;
            self.jump(exit);
        }
        self.elapsed += dt;
        phase
    }

    fn jump(&mut self, exit: f64) {
        let mut u = self.rng.random::<f64>() * exit;
        let from = self.state;
        for cand in JointState::ALL {
            if cand == from {
                continue;
            }
            let r = self.cfg.generator.rate(from, cand);
            if r <= 0.0 {
                continue;
            }
            self.state = cand;
            if u < r {
                break;
            }
            u -= r;
        }
    }

    fn readout(&mut self, ideal: u8) -> u8 {
        let qubit = ideal ^ u8::from(self.qubit_excited);
        self.advance(self.cfg.readout_duration_s);
        if self.state.tls() == TlsState::G && self.rng.random::<f64>() < self.cfg.backaction_exc {
            self.state = JointState::new(TlsState::E, self.state.parity());
        }
        let observed = qubit ^ u8::from(self.rng.random::<f64>() < self.cfg.readout_error);
        self.qubit_excited = observed == 1 && self.rng.random::<f64>() < self.cfg.reset_error;
        self.readouts += 1;
        observed
    }

    /// Adaptive confirm loop; returns the confirmed pulse.
    fn stage(&mut self, first: Pulse, mut probe: impl FnMut(&mut Self, Pulse) -> u8) -> Option<Pulse> {
        let mut pulse = first;
        let mut zeros = 0;
        for _ in 0..self.cfg.max_readouts_per_stage {
            let ideal = probe(self, pulse);
            if self.readout(ideal) == 0 {
                zeros += 1;
                if zeros == 2 {
                    return Some(pulse);
                }
            } else {
                zeros = 0;
                pulse = pulse.swapped();
                self.swaps += 1;
            }
        }
        None
    }

    fn measure(&mut self) -> std::result::Result<JointState, DiscardReason> {
        let t_cf = self.tim.t_cf;
        let first = if self.rng.random::<bool>() { Pulse::DC } else { Pulse::DF };
        let class = self
            .stage(first, |s, p| {
                s.advance(t_cf);
                u8::from(!p.maps_to_ground(s.state))
            })
            .ok_or(DiscardReason::CfUnconfirmed)?;
        let t_ge = if class == Pulse::DC {
            self.tim.t_ge_c
        } else {
            self.tim.t_ge_f
        };
        let first = if self.rng.random::<bool>() { Pulse::Dg } else { Pulse::De };
        let tls = self
            .stage(first, |s, p| {
                let phi = s.advance(t_ge);
                // D_g leaves g (φ = +π/2) in ground, D_e leaves e (φ = −π/2) in ground
                let p1 = match p {
                    Pulse::Dg => 0.5 * (1.0 - phi.sin()),
                    _ => 0.5 * (1.0 + phi.sin()),
                };
                u8::from(s.rng.random::<f64>() < p1)
            })
            .ok_or(DiscardReason::GeUnconfirmed)?;
        Ok(match (class, tls) {
            (Pulse::DC, Pulse::Dg) => JointState::GE,
            (Pulse::DC, _) => JointState::EO,
            (_, Pulse::Dg) => JointState::GO,
            _ => JointState::EE,
        })
    }
}

fn shot_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn ng_schedule(cfg: &ProtocolConfig, n: usize) -> Vec<f64> {
    match cfg.ng_walk {
        None => vec![cfg.ng; n],
        Some(w) => {
            let mut rng = shot_rng(cfg.seed, u64::MAX);
            let mut ng = cfg.ng;
            (0..n)
                .map(|i| {
                    if i > 0 && i % w.interval_shots == 0 {
                        ng += if rng.random::<bool>() { w.step } else { -w.step };
                    }
                    ng
                })
                .collect()
        }
    }
}

fn prepare(cfg: &ProtocolConfig, rng: &mut ChaCha8Rng) -> JointState {
    let tls = if rng.random::<f64>() < cfg.tls_prep_excited {
        TlsState::E
    } else {
        TlsState::G
    };
    let parity = if rng.random::<bool>() {
        crate::spectra::Parity::Even
    } else {
        crate::spectra::Parity::Odd
    };
    JointState::new(tls, parity)
}

/// `n_shots` shots at each delay, delay-major. Shot `i` uses stream `i` of
/// `cfg.seed`, so the output does not depend on thread scheduling.
pub fn run_protocol(cfg: &ProtocolConfig, n_shots: usize, delays: &[f64]) -> Result<Vec<ProtocolOutcome>> {
    cfg.validate()?;
    if let Some(d) = delays.iter().find(|d| !(d.is_finite() && **d >= 0.0)) {
        return Err(Error::invalid(format!("delays must be >= 0, got {d}")));
    }
    let tim = cfg.timings()?;
    let total = n_shots * delays.len();
    let ngs = ng_schedule(cfg, total);
    let mut out: Vec<ProtocolOutcome> = (0..total)
        .into_par_iter()
        .map(|i| {
            let delay = delays[i / n_shots.max(1)];
            let mut rng = shot_rng(cfg.seed, i as u64);
            let state = prepare(cfg, &mut rng);
            let (delta_f, delta_c) = detunings(cfg.db_hz, cfg.dc_hz, ngs[i]);
            let mut shot = Shot {
                cfg,
                tim,
                delta_f,
                delta_c,
                state,
                qubit_excited: false,
                rng,
                readouts: 0,
                swaps: 0,
                elapsed: 0.0,
            };
            let first = shot.measure();
            let true_s = shot.state;
            shot.advance(delay);
            let second = first.and_then(|_| shot.measure());
            let true_s_prime = shot.state;
            let (s, s_prime, discard) = match (first, second) {
                (Ok(a), Ok(b)) => (a, b, None),
                (Err(r), _) | (_, Err(r)) => (
                    first.unwrap_or(true_s),
                    second.unwrap_or(true_s_prime),
                    Some(r),
                ),
            };
            ProtocolOutcome {
                record: ShotRecord {
                    t: 0.0,
                    s,
                    delay_s: delay,
                    s_prime,
                    valid: discard.is_none(),
                },
                readouts: shot.readouts,
                swaps: shot.swaps,
                discard,
                true_s,
                true_s_prime,
                duration: shot.elapsed,
            }
        })
        .collect();
    let mut t = 0.0;
    for o in out.iter_mut() {
        o.record.t = t;
        t += o.duration;
    }
    Ok(out)
}

pub fn records(outcomes: &[ProtocolOutcome]) -> Vec<ShotRecord> {
    outcomes.iter().map(|o| o.record).collect()
}

/// Fraction of valid shots whose recorded initial state matches the hidden one.
pub fn assignment_fidelity(outcomes: &[ProtocolOutcome]) -> f64 {
    let valid: Vec<_> = outcomes.iter().filter(|o| o.record.valid).collect();
    if valid.is_empty() {
        return f64::NAN;
    }
    valid.iter().filter(|o| o.record.s == o.true_s).count() as f64 / valid.len() as f64
}

pub fn discard_fraction(outcomes: &[ProtocolOutcome]) -> f64 {
    if outcomes.is_empty() {
        return 0.0;
    }
    outcomes.iter().filter(|o| !o.record.valid).count() as f64 / outcomes.len() as f64
}

/// Back-to-back measurements of one long-lived hidden process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousRun {
    /// Measurement start spacing (s).
    pub interval: f64,
    /// Assigned state; `None` where the measurement was discarded.
    pub measured: Vec<Option<JointState>>,
    pub hidden: Vec<JointState>,
}

impl ContinuousRun {
    fn filled(&self) -> Vec<JointState> {
        let mut last = self
            .measured
            .iter()
            .flatten()
            .next()
            .copied()
            .unwrap_or(JointState::GO);
        self.measured
            .iter()
            .map(|m| {
                if let Some(s) = m {
                    last = *s;
                }
                last
            })
            .collect()
    }

    /// Parity trace, discarded points repeating the previous assignment.
    pub fn parity_trace(&self) -> Result<TelegraphTrace> {
        TelegraphTrace::parity_of(&self.filled(), self.interval)
    }

    pub fn tls_trace(&self) -> Result<TelegraphTrace> {
        TelegraphTrace::tls_of(&self.filled(), self.interval)
    }
}

/// Measure the joint state `n` times, starting a measurement every `interval`
/// seconds (or immediately after the previous one if it ran longer).
pub fn run_continuous(cfg: &ProtocolConfig, n: usize, interval: f64) -> Result<ContinuousRun> {
    cfg.validate()?;
    if !(interval.is_finite() && interval > 0.0) {
        return Err(Error::invalid("interval must be > 0"));
    }
    let tim = cfg.timings()?;
    let mut rng = shot_rng(cfg.seed, 0);
    let start = match cfg.generator.stationary() {
        Ok(pi) => {
            let u = rng.random::<f64>();
            let mut acc = 0.0;
            let mut s = JointState::EE;
            for (k, p) in pi.iter().enumerate() {
                acc += p;
                if u < acc {
                    s = JointState::ALL[k];
                    break;
                }
            }
            s
        }
        Err(_) => prepare(cfg, &mut rng),
    };
    let ngs = ng_schedule(cfg, n);
    let (delta_f, delta_c) = detunings(cfg.db_hz, cfg.dc_hz, cfg.ng);
    let mut shot = Shot {
        cfg,
        tim,
        delta_f,
        delta_c,
        state: start,
        qubit_excited: false,
        rng,
        readouts: 0,
        swaps: 0,
        elapsed: 0.0,
    };
    let mut measured = Vec::with_capacity(n);
    let mut hidden = Vec::with_capacity(n);
    for ng in ngs {
        let (f, c) = detunings(cfg.db_hz, cfg.dc_hz, ng);
        shot.delta_f = f;
        shot.delta_c = c;
        let t0 = shot.elapsed;
        let m = shot.measure().ok();
        measured.push(m);
        hidden.push(shot.state);
        let used = shot.elapsed - t0;
        if used < interval {
            shot.advance(interval - used);
        }
    }
    Ok(ContinuousRun {
        interval,
        measured,
        hidden,
    })
}

/// Truth against estimate for one transition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateComparison {
    pub from: JointState,
    pub to: JointState,
    pub truth: f64,
    pub estimate: f64,
    pub std_error: f64,
    pub ci68: (f64, f64),
    pub ci95: (f64, f64),
    pub at_floor: bool,
}

impl RateComparison {
    pub fn relative_error(&self) -> f64 {
        (self.estimate - self.truth).abs() / self.truth
    }

    pub fn ci95_contains_truth(&self) -> bool {
        self.ci95.0 <= self.truth && self.truth <= self.ci95.1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopReport {
    pub confusion: ConfusionMatrix,
    pub fit: RateFit,
    pub bootstrap: BootstrapResult,
    pub table: Vec<RateComparison>,
    pub discard_fraction: f64,
    pub assignment_fidelity: f64,
}

/// Confusion calibration from the zero-delay bin, correction and rate fit.
pub fn infer_rates(records: &[ShotRecord], opts: &RateFitOptions) -> Result<(ConfusionMatrix, CondProbs, RateFit)> {
    let cp = conditional_probs(records)?;
    let k0 = cp
        .index_of_delay(0.0)
        .ok_or_else(|| Error::Calibration("no zero-delay bin to calibrate the confusion matrix".into()))?;
    let m = confusion_from_t0(&cp.joint[k0])?;
    let corrected = cp.corrected(&m)?;
    let fit = fit_rates(&corrected, opts)?;
    Ok((m, corrected, fit))
}

/// Simulate, calibrate, fit and bootstrap; `delays` must include 0.
pub fn closed_loop(
    cfg: &ProtocolConfig,
    n_shots: usize,
    delays: &[f64],
    resamples: usize,
) -> Result<ClosedLoopReport> {
    if !delays.contains(&0.0) {
        return Err(Error::invalid("delay schedule must include 0 for confusion calibration"));
    }
    let outcomes = run_protocol(cfg, n_shots, delays)?;
    let recs = records(&outcomes);
    let opts = RateFitOptions::default();
    let (confusion, _, fit) = infer_rates(&recs, &opts)?;
    let boot = bootstrap(
        &recs,
        |r| infer_rates(r, &opts).map(|(_, _, f)| f.values()),
        resamples,
        cfg.seed ^ 0x9e37_79b9_7f4a_7c15,
    )?;
    let table = rate_pairs()
        .into_iter()
        .enumerate()
        .map(|(k, (from, to))| RateComparison {
            from,
            to,
            truth: cfg.generator.rate(from, to),
            estimate: fit.rates[k].rate,
            std_error: fit.rates[k].std_error,
            ci68: boot.ci68[k],
            ci95: boot.ci95[k],
            at_floor: fit.rates[k].at_floor,
        })
        .collect();
    Ok(ClosedLoopReport {
        confusion,
        fit,
        bootstrap: boot,
        table,
        discard_fraction: discard_fraction(&outcomes),
        assignment_fidelity: assignment_fidelity(&outcomes),
    })
}
