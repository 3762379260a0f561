//! Joint TLS / charge-parity Markov dynamics and rate inference.
//!
//! States are ordered `gO, gE, eO, eE` (indices 0..3) everywhere. A generator
//! entry `(i, j)` with `i != j` is the rate from state `j` to state `i`, so
//! columns sum to zero and `ρ(t) = exp(Γt) ρ(0)` acts on column vectors.

mod bootstrap;
mod counts;
mod expm;
mod gillespie;
mod rates;
mod telegraph;

pub use bootstrap::{bootstrap, percentile, BootstrapResult, DEFAULT_RESAMPLES};
pub use counts::{
    bin_records, conditional_probs, confusion_from_t0, correct_counts, CondProbs, ConfusionMatrix,
    DelayBin, Mat4, ShotRecord,
};
pub use expm::expm;
pub use gillespie::{simulate_trajectory, simulate_with_rng, Trajectory};
pub use rates::{fit_rates, rate_name, rate_pairs, RateEstimate, RateFit, RateFitOptions, RATE_FLOOR};
pub use telegraph::{
    autocorr_rate, autocorr_rate_blocked, autocorrelation, extrapolate_rate, parity_rate,
    AutocorrFit, Extrapolation, ParityRate, TelegraphTrace, TraceLevel,
};

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::spectra::{Parity, TlsState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum JointState {
    GO = 0,
    GE = 1,
    EO = 2,
    EE = 3,
}

impl JointState {
    pub const ALL: [JointState; 4] = [JointState::GO, JointState::GE, JointState::EO, JointState::EE];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn new(tls: TlsState, parity: Parity) -> Self {
        match (tls, parity) {
            (TlsState::G, Parity::Odd) => JointState::GO,
            (TlsState::G, Parity::Even) => JointState::GE,
            (TlsState::E, Parity::Odd) => JointState::EO,
            (TlsState::E, Parity::Even) => JointState::EE,
        }
    }

    pub fn tls(self) -> TlsState {
        match self {
            JointState::GO | JointState::GE => TlsState::G,
            JointState::EO | JointState::EE => TlsState::E,
        }
    }

    pub fn parity(self) -> Parity {
        match self {
            JointState::GO | JointState::EO => Parity::Odd,
            JointState::GE | JointState::EE => Parity::Even,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            JointState::GO => "gO",
            JointState::GE => "gE",
            JointState::EO => "eO",
            JointState::EE => "eE",
        }
    }
}

impl fmt::Display for JointState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for JointState {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        JointState::ALL
            .into_iter()
            .find(|j| j.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown joint state {s:?}; expected gO, gE, eO or eE")))
    }
}

impl Serialize for JointState {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for JointState {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Continuous-time Markov generator over the four joint states (rates in s⁻¹).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorMatrix(Matrix4<f64>);

impl GeneratorMatrix {
    pub fn zero() -> Self {
        GeneratorMatrix(Matrix4::zeros())
    }

    /// Validate off-diagonals and set the diagonal to minus the column sums.
    pub fn new(m: Matrix4<f64>) -> Result<Self> {
        let mut g = m;
        for j in 0..4 {
            let mut sum = 0.0;
            for i in 0..4 {
                if i == j {
                    continue;
                }
                let r = g[(i, j)];
                if !(r.is_finite() && r >= 0.0) {
                    return Err(Error::invalid(format!(
                        "rate {} -> {} must be finite and >= 0, got {r}",
                        JointState::ALL[j],
                        JointState::ALL[i]
                    )));
                }
                sum += r;
            }
            g[(j, j)] = -sum;
        }
        Ok(GeneratorMatrix(g))
    }

    /// Build from `(from, to, rate)` triples; unspecified rates are zero.
    pub fn from_rates(rates: &[(JointState, JointState, f64)]) -> Result<Self> {
        let mut m = Matrix4::zeros();
        for &(from, to, r) in rates {
            if from == to {
                return Err(Error::invalid("self-transition rates are not allowed"));
            }
            m[(to.index(), from.index())] = r;
        }
        Self::new(m)
    }

    /// Row-major rates with `rows[i][j]` the rate from `j` to `i`; diagonal ignored.
    pub fn from_rows(rows: [[f64; 4]; 4]) -> Result<Self> {
        let mut m = Matrix4::zeros();
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    m[(i, j)] = rows[i][j];
                }
            }
        }
        Self::new(m)
    }

    pub fn to_rows(&self) -> [[f64; 4]; 4] {
        let mut out = [[0.0; 4]; 4];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.0[(i, j)];
            }
        }
        out
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.0
    }

    pub fn rate(&self, from: JointState, to: JointState) -> f64 {
        if from == to {
            0.0
        } else {
            self.0[(to.index(), from.index())]
        }
    }

    /// Total escape rate from `s`.
    pub fn exit_rate(&self, s: JointState) -> f64 {
        -self.0[(s.index(), s.index())]
    }

    pub fn max_rate(&self) -> f64 {
        JointState::ALL
            .iter()
            .map(|&s| self.exit_rate(s))
            .fold(0.0, f64::max)
    }

    /// Transition matrix `exp(Γt)`; column `j` is the distribution after starting in `j`.
    pub fn propagator(&self, t: f64) -> Result<Matrix4<f64>> {
        if !(t.is_finite() && t >= 0.0) {
            return Err(Error::invalid(format!("time must be >= 0, got {t}")));
        }
        Ok(expm(&(self.0 * t)))
    }

    /// Conditional probabilities `P[i][j] = Pr(S' = j | S = i)` after `t`.
    pub fn conditional(&self, t: f64) -> Result<Matrix4<f64>> {
        Ok(self.propagator(t)?.transpose())
    }

    /// Stationary distribution (null vector of Γ normalized to one).
    pub fn stationary(&self) -> Result<[f64; 4]> {
        // replace one balance equation by normalization
        let mut a = self.0;
        for j in 0..4 {
            a[(3, j)] = 1.0;
        }
        let b = Vector4::new(0.0, 0.0, 0.0, 1.0);
        let x = a
            .lu()
            .solve(&b)
            .ok_or_else(|| Error::invalid("generator is not ergodic; stationary state not unique"))?;
        Ok([x[0], x[1], x[2], x[3]])
    }

    /// Same generator expressed in a permuted state order: new state `k` is old `perm[k]`.
    pub fn permuted(&self, perm: [usize; 4]) -> Matrix4<f64> {
        Matrix4::from_fn(|i, j| self.0[(perm[i], perm[j])])
    }
}

impl Serialize for GeneratorMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr {
            states: [&'static str; 4],
            rates: [[f64; 4]; 4],
        }
        Repr {
            states: ["gO", "gE", "eO", "eE"],
            rates: self.to_rows(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for GeneratorMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Repr {
            #[serde(default)]
            states: Option<Vec<String>>,
            rates: [[f64; 4]; 4],
        }
        let r = Repr::deserialize(d)?;
        if let Some(states) = r.states {
            if states != ["gO", "gE", "eO", "eE"] {
                return Err(serde::de::Error::custom(
                    "states must be listed in the order gO, gE, eO, eE",
                ));
            }
        }
        GeneratorMatrix::from_rows(r.rates).map_err(serde::de::Error::custom)
    }
}

/// Probability vector after time `t`, with the renormalization drift applied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evolved {
    pub rho: [f64; 4],
    /// |Σρ − 1| before renormalization; zero when no renormalization was needed.
    pub drift: f64,
}

pub fn evolve(gen: &GeneratorMatrix, rho0: &[f64; 4], t: f64) -> Result<Evolved> {
    if rho0.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(Error::invalid("initial probabilities must be >= 0"));
    }
    let total: f64 = rho0.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("initial probabilities sum to {total}, not 1")));
    }
    let p = gen.propagator(t)?;
    let v = p * Vector4::from_column_slice(rho0);
    let mut rho = [v[0], v[1], v[2], v[3]];
    let sum: f64 = rho.iter().sum();
    let drift = (sum - 1.0).abs();
    if drift > 1e-12 {
        for x in rho.iter_mut() {
            *x /= sum;
        }
        Ok(Evolved { rho, drift })
    } else {
        Ok(Evolved { rho, drift: 0.0 })
    }
}

/// Paper-scale truth: parity switching ≈ 167 s⁻¹, TLS relaxation ≈ 250 s⁻¹,
/// weak TLS excitation and small cross (parity-and-TLS) rates.
pub fn paper_scale_generator() -> GeneratorMatrix {
    use JointState::*;
    GeneratorMatrix::from_rates(&[
        (GO, GE, 167.0),
        (GE, GO, 167.0),
        (EO, EE, 167.0),
        (EE, EO, 167.0),
        (EO, GO, 250.0),
        (EE, GE, 250.0),
        (GO, EO, 3.0),
        (GE, EE, 3.0),
        (EO, GE, 10.0),
        (EE, GO, 10.0),
        (GO, EE, 2.0),
        (GE, EO, 2.0),
    ])
    .expect("static rates are valid")
}
