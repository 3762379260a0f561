//! Fits of spectroscopy data and shot records. Each writes `fit.json` and,
//! where a model curve exists, a residual table.

use serde::{Deserialize, Serialize};
use tlscope_core::coupling::CoupledSystem;
use tlscope_core::dynamics::{
    bootstrap, ConfusionMatrix, GeneratorMatrix, JointState, RateFitOptions, DEFAULT_RESAMPLES,
};
use tlscope_core::fitting::{
    delta_ng, extract_ng, fit_avoided_crossing, fit_lorentzians, fit_shift_curve, lorentzian_sum, predict_shifts,
    Branch, CrossingInit, CrossingModel, FitResult, NgEstimate, ShiftFitOptions,
};
use tlscope_core::io;
use tlscope_core::protocol::infer_rates;

use super::{Ctx, Outcome, Task};
use crate::error::{CliError, CliResult};
use crate::output::{Cell, Table};

fn converged(fit: &FitResult) -> Outcome {
    if fit.converged {
        Outcome::Done
    } else {
        Outcome::NotConverged(fit.message.clone().unwrap_or_else(|| "fit did not converge".into()))
    }
}

fn param(fit: &FitResult, name: &str) -> CliResult<f64> {
    fit.param(name)
        .ok_or_else(|| CliError::bad_input(format!("fit result has no parameter {name}")))
}

fn default_peaks() -> usize {
    4
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeaksConfig {
    #[serde(default = "default_peaks")]
    pub n_peaks: usize,
}

impl Task for PeaksConfig {
    fn fallback() -> Option<Self> {
        Some(PeaksConfig {
            n_peaks: default_peaks(),
        })
    }

    fn run(&mut self, ctx: &mut Ctx) -> CliResult<Outcome> {
        let trace = ctx.parse_input(|b| io::read_spectroscopy(b))?;
        let fit = fit_lorentzians(&trace, self.n_peaks)?;
        ctx.sink.json("fit.json", &fit)?;
        let mut t = Table::new("residuals", &["frequency_GHz", "response", "model", "residual"]);
        for (&f, &y) in trace.freqs.iter().zip(&trace.response) {
            let m = lorentzian_sum(f, &fit.params);
            t.push(vec![f.into(), y.into(), m.into(), (y - m).into()]);
        }
        ctx.sink.table(&t)?;
        Ok(converged(&fit))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NgPair {
    /// Splitting of the parity pair (GHz).
    #[serde(rename = "separation_GHz")]
    pub separation: f64,
    /// Charge dispersion δ_c (GHz).
    #[serde(rename = "dc_GHz")]
    pub dc: f64,
    #[serde(default, rename = "sigma_separation_GHz")]
    pub sigma_separation: f64,
    #[serde(default, rename = "sigma_dc_GHz")]
    pub sigma_dc: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NgConfig {
    pub pairs: Vec<NgPair>,
}

#[derive(Serialize)]
struct NgReport {
    estimates: Vec<NgEstimate>,
    /// Differences of consecutive estimates with combined uncertainty.
    delta_ng: Vec<(f64, f64)>,
}

impl Task for NgConfig {
    fn run(&mut self, ctx: &mut Ctx) -> CliResult<Outcome> {
        if self.pairs.is_empty() {
            return Err(CliError::bad_input("pairs is empty"));
        }
        let estimates = self
            .pairs
            .iter()
            .map(|p| extract_ng(p.separation, p.dc, p.sigma_separation, p.sigma_dc))
            .collect::<tlscope_core::Result<Vec<_>>>()?;
        let delta = estimates.windows(2).map(|w| delta_ng(&w[0], &w[1])).collect();
        ctx.sink.json(
            "fit.json",
            &NgReport {
                estimates,
                delta_ng: delta,
            },
        )?;
        Ok(Outcome::Done)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossingConfig {
    pub model: CrossingModel,
    #[serde(default)]
    pub init: CrossingInit,
}

impl Task for CrossingConfig {
    fn run(&mut self, ctx: &mut Ctx) -> CliResult<Outcome> {
        let points = ctx.parse_input(|b| io::read_crossing(b))?;
        let fit = fit_avoided_crossing(&points, &self.model, &self.init)?;
        ctx.sink.json("fit.json", &fit)?;
        let g = param(&fit, "g")?;
        let w = param(&fit, "w_tls")?;
        let offset = param(&fit, "current_offset")?;
        let mut t = Table::new(
            "residuals",
            &["current_A", "set", "branch", "frequency_GHz", "model_GHz", "residual_GHz"],
        );
        for p in &points {
            let shift = if p.set == 0 { 0.0 } else { param(&fit, &format!("set_offset_{}", p.set))? };
            let nu_q = self.model.qubit_frequency(p.current, offset)? + shift;
            let m = CrossingModel::branch_frequency(nu_q, g, w, p.branch);
            let branch = match p.branch {
                Branch::Upper => "upper",
                Branch::Lower => "lower",
            };
            t.push(vec![
                p.current.into(),
                Cell::Num(p.set as f64),
                branch.into(),
                p.frequency.into(),
                m.into(),
                (p.frequency - m).into(),
            ]);
        }
        ctx.sink.table(&t)?;
        Ok(converged(&fit))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftCurveConfig {
    pub template: CoupledSystem,
    #[serde(default)]
    pub options: ShiftFitOptions,
}

impl Task for ShiftCurveConfig {
    fn run(&mut self, ctx: &mut Ctx) -> CliResult<Outcome> {
        let data = ctx.parse_input(|b| io::read_shift_points(b))?;
        let fit = fit_shift_curve(&data, &self.template, &self.options)?;
        ctx.sink.json("fit.json", &fit)?;
        let model = predict_shifts(&self.template, &fit.params, &data)?;
        let mut t = Table::new(
            "residuals",
            &["nu01_bar_GHz", "transition", "shift_kHz", "model_kHz", "residual_kHz"],
        );
        for (d, m) in data.iter().zip(model) {
            let tr = format!("{}-{}", d.transition.0, d.transition.1);
            t.push(vec![
                d.nu01_bar.into(),
                tr.as_str().into(),
                (d.shift * 1e6).into(),
                (m * 1e6).into(),
                ((d.shift - m) * 1e6).into(),
            ]);
        }
        ctx.sink.table(&t)?;
        Ok(converged(&fit))
    }
}

fn default_resamples() -> usize {
    DEFAULT_RESAMPLES
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatesConfig {
    #[serde(default = "default_resamples")]
    pub resamples: usize,
    #[serde(default)]
    pub options: RateFitOptions,
}

#[derive(Serialize)]
struct RateRow {
    from: JointState,
    to: JointState,
    rate_per_s: f64,
    std_error_per_s: f64,
    ci68_per_s: (f64, f64),
    ci95_per_s: (f64, f64),
    at_floor: bool,
}

#[derive(Serialize)]
struct RatesReport {
    records: usize,
    valid_records: usize,
    delays_s: Vec<f64>,
    confusion: ConfusionMatrix,
    generator: GeneratorMatrix,
    rates: Vec<RateRow>,
    converged: bool,
    /// Longest delay times the fastest fitted exit rate.
    span: f64,
    bootstrap_resamples: usize,
    bootstrap_failed: usize,
    fit: FitResult,
}

impl Task for RatesConfig {
    fn fallback() -> Option<Self> {
        Some(RatesConfig {
            resamples: default_resamples(),
            options: RateFitOptions::default(),
        })
    }

    fn run(&mut self, ctx: &mut Ctx) -> CliResult<Outcome> {
        let records = ctx.parse_input(|b| io::read_shots(b))?;
        let (confusion, cp, fit) = infer_rates(&records, &self.options)?;
        let opts = &self.options;
        let boot = bootstrap(
            &records,
            |r| infer_rates(r, opts).map(|(_, _, f)| f.values()),
            self.resamples,
            ctx.seed,
        )?;
        let rates = fit
            .rates
            .iter()
            .enumerate()
            .map(|(k, r)| RateRow {
                from: r.from,
                to: r.to,
                rate_per_s: r.rate,
                std_error_per_s: r.std_error,
                ci68_per_s: boot.ci68[k],
                ci95_per_s: boot.ci95[k],
                at_floor: r.at_floor,
            })
            .collect();

        let observed = if cp.unclipped.len() == cp.cond.len() { &cp.unclipped } else { &cp.cond };
        let mut t = Table::new(
            "residuals",
            &["delay_s", "from", "to", "observed", "model", "residual"],
        );
        for (b, &delay) in cp.delays.iter().enumerate() {
            let model = fit.generator.conditional(delay)?;
            for (i, s) in JointState::ALL.into_iter().enumerate() {
                if cp.empty.contains(&(b, s)) {
                    continue;
                }
                for (j, s2) in JointState::ALL.into_iter().enumerate() {
                    let p = observed[b][i][j];
                    let m = model[(i, j)];
                    t.push(vec![delay.into(), s.as_str().into(), s2.as_str().into(), p.into(), m.into(), (p - m).into()]);
                }
            }
        }

        let outcome = if fit.converged {
            Outcome::Done
        } else {
            Outcome::NotConverged("rate fit did not converge".into())
        };
        let report = RatesReport {
            records: records.len(),
            valid_records: records.iter().filter(|r| r.valid).count(),
            delays_s: cp.delays.clone(),
            confusion,
            generator: fit.generator,
            rates,
            converged: fit.converged,
            span: fit.span,
            bootstrap_resamples: boot.resamples,
            bootstrap_failed: boot.failed,
            fit: fit.fit,
        };
        ctx.sink.json("fit.json", &report)?;
        ctx.sink.table(&t)?;
        Ok(outcome)
    }
}
