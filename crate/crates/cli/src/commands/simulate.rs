//! Synthetic data: joint TLS-parity trajectories and protocol shot records.

use serde::{Deserialize, Serialize};
use tlscope_core::dynamics::{paper_scale_generator, simulate_trajectory, GeneratorMatrix, JointState, TelegraphTrace};
use tlscope_core::io;
use tlscope_core::protocol::{assignment_fidelity, discard_fraction, records, run_protocol, ProtocolConfig};
use tlscope_core::spectra::TlsState;

use super::{Ctx, Outcome, Task};
use crate::error::{CliError, CliResult};
use crate::output::{Cell, Table};

fn default_generator() -> GeneratorMatrix {
    paper_scale_generator()
}

fn default_initial() -> JointState {
    JointState::GO
}

fn default_duration() -> f64 {
    10.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CtmcConfig {
    #[serde(default = "default_generator")]
    pub generator: GeneratorMatrix,
    #[serde(default = "default_initial")]
    pub initial: JointState,
    #[serde(default = "default_duration")]
    pub duration_s: f64,
    /// Also write parity and TLS telegraph traces sampled at this period.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_period_s: Option<f64>,
}

#[derive(Serialize)]
struct CtmcSummary {
    jumps: usize,
    occupancy: [(JointState, f64); 4],
    /// Mean completed stay per joint state.
    mean_sojourn_s: [(JointState, Option<f64>); 4],
    /// `1 / exit rate` per joint state.
    expected_sojourn_s: [(JointState, Option<f64>); 4],
    /// Mean time between parity switches.
    parity_dwell_mean_s: Option<f64>,
    tls_excited_dwell_mean_s: Option<f64>,
    tls_ground_dwell_mean_s: Option<f64>,
}

/// Mean length of completed runs of `key`, keeping only runs whose value satisfies `keep`.
fn mean_dwell<K: PartialEq + Copy>(
    times: &[f64],
    states: &[JointState],
    key: impl Fn(JointState) -> K,
    keep: impl Fn(K) -> bool,
) -> Option<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    let mut start = 0;
    for k in 1..states.len() {
        if key(states[k]) != key(states[k - 1]) {
            if keep(key(states[start])) {
                total += times[k] - times[start];
                n += 1;
            }
            start = k;
        }
    }
    (n > 0).then(|| total / n as f64)
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

impl Task for CtmcConfig {
    fn fallback() -> Option<Self> {
        Some(CtmcConfig {
            generator: default_generator(),
            initial: default_initial(),
            duration_s: default_duration(),
            sample_period_s: None,
        })
    }

    fn run(&mut self, ctx: &mut Ctx) -> CliResult<Outcome> {
        let traj = simulate_trajectory(&self.generator, self.initial, self.duration_s, ctx.seed)?;
        let mut t = Table::new("trajectory", &["t_s", "state"]);
        for (&time, s) in traj.times.iter().zip(&traj.states) {
            t.push(vec![Cell::Num(time), s.as_str().into()]);
        }
        ctx.sink.table(&t)?;

        let occ = traj.occupancy();
        let summary = CtmcSummary {
            jumps: traj.segments() - 1,
            occupancy: JointState::ALL.map(|s| (s, occ[s.index()])),
            mean_sojourn_s: JointState::ALL.map(|s| (s, mean(&traj.sojourns(s)))),
            expected_sojourn_s: JointState::ALL.map(|s| {
                let r = self.generator.exit_rate(s);
                (s, (r > 0.0).then(|| 1.0 / r))
            }),
            parity_dwell_mean_s: mean_dwell(&traj.times, &traj.states, JointState::parity, |_| true),
            tls_excited_dwell_mean_s: mean_dwell(&traj.times, &traj.states, JointState::tls, |x| x == TlsState::E),
            tls_ground_dwell_mean_s: mean_dwell(&traj.times, &traj.states, JointState::tls, |x| x == TlsState::G),
        };
        ctx.sink.json("summary.json", &summary)?;

        if let Some(period) = self.sample_period_s {
            if !(period.is_finite() && period > 0.0) {
                return Err(CliError::bad_input("sample_period_s must be > 0"));
            }
            let n = (self.duration_s / period).floor() as usize;
            let states = traj.sample(period, n);
            for (name, trace) in [
                ("parity.trace", TelegraphTrace::parity_of(&states, period)?),
                ("tls.trace", TelegraphTrace::tls_of(&states, period)?),
            ] {
                let mut bytes = Vec::new();
                io::write_trace(&mut bytes, &trace)?;
                ctx.sink
                    .file(name, bytes, |b| io::read_trace(b).is_ok_and(|back| back == trace))?;
            }
        }
        Ok(Outcome::Done)
    }
}

fn default_protocol() -> ProtocolConfig {
    ProtocolConfig::paper_scale(paper_scale_generator())
}

fn default_shots() -> usize {
    1000
}

fn default_delays() -> Vec<f64> {
    vec![0.0, 1e-4, 1e-3, 1e-2]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolRun {
    #[serde(default = "default_protocol")]
    pub protocol: ProtocolConfig,
    #[serde(default = "default_shots")]
    pub shots_per_delay: usize,
    #[serde(default = "default_delays")]
    pub delays_s: Vec<f64>,
}

#[derive(Serialize)]
struct ProtocolSummary {
    records: usize,
    valid_records: usize,
    discard_fraction: f64,
    assignment_fidelity: f64,
    /// Valid records whose second assignment repeats the first.
    repeat_fraction: f64,
}

impl Task for ProtocolRun {
    fn fallback() -> Option<Self> {
        Some(ProtocolRun {
            protocol: default_protocol(),
            shots_per_delay: default_shots(),
            delays_s: default_delays(),
        })
    }

    fn seed(&self) -> u64 {
        self.protocol.seed
    }

    fn run(&mut self, ctx: &mut Ctx) -> CliResult<Outcome> {
        self.protocol.seed = ctx.seed;
        let outcomes = run_protocol(&self.protocol, self.shots_per_delay, &self.delays_s)?;
        let recs = records(&outcomes);
        let mut bytes = Vec::new();
        io::write_shots(&mut bytes, &recs)?;
        ctx.sink
            .file("shots.jsonl", bytes, |b| io::read_shots(b).is_ok_and(|back| back == recs))?;
        let valid: Vec<_> = recs.iter().filter(|r| r.valid).collect();
        let repeats = valid.iter().filter(|r| r.s == r.s_prime).count();
        ctx.sink.json(
            "summary.json",
            &ProtocolSummary {
                records: recs.len(),
                valid_records: valid.len(),
                discard_fraction: discard_fraction(&outcomes),
                assignment_fidelity: assignment_fidelity(&outcomes),
                repeat_fraction: if valid.is_empty() { 0.0 } else { repeats as f64 / valid.len() as f64 },
            },
        )?;
        Ok(Outcome::Done)
    }
}
