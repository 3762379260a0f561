//! Regenerates the bundled test fixtures in `tests/fixtures/`.
//!
//! ```text
//! cargo run -p tlscope-cli --example make_fixtures
//! ```

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::json;
use tlscope_core::coupling::{coupled_spectrum, CoupledSystem, CouplingSpec, LevelLabel};
use tlscope_core::dynamics::paper_scale_generator;
use tlscope_core::fitting::{Branch, CrossingModel, CrossingPoint, SpectroscopyTrace};
use tlscope_core::io;
use tlscope_core::protocol::{records, run_protocol, ProtocolConfig};
use tlscope_core::spectra::{flux_for_frequency, FluxCalibration, Parity, TlsParams, TlsState, TransmonParams};

type Res = Result<(), Box<dyn std::error::Error>>;

fn create(dir: &Path, name: &str) -> std::io::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

/// Four qubit lines (two parities × two TLS states) at n_g = 0.1 plus noise.
fn four_peaks(dir: &Path) -> Res {
    let sys = CoupledSystem::new(
        TransmonParams::paper_device().with_ng(0.1),
        TlsParams::new(1.331, 2.555),
        CouplingSpec::ChargeDipole {
            lambda: 0.020297,
            jc: None,
        },
    );
    let mut centers = Vec::new();
    for parity in [Parity::Even, Parity::Odd] {
        let spec = coupled_spectrum(&sys.with_transmon(sys.transmon.with_parity(parity)))?;
        for tls in [TlsState::G, TlsState::E] {
            let e = |qubit| spec.level(LevelLabel { qubit, tls, tf: None }).map(|l| l.energy).unwrap();
            centers.push(e(1) - e(0));
        }
    }
    centers.sort_by(f64::total_cmp);

    let width = 20e-6;
    let amps = [0.5, 0.4, 0.45, 0.35];
    let baseline = 0.05;
    let (lo, hi) = (centers[0] - 3e-4, centers[3] + 3e-4);
    let n = ((hi - lo) / 1e-6) as usize;
    let noise = Normal::new(0.0, 0.01)?;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut freqs = Vec::with_capacity(n);
    let mut response = Vec::with_capacity(n);
    for k in 0..n {
        let f = lo + k as f64 * 1e-6;
        let clean = baseline
            + centers
                .iter()
                .zip(amps)
                .map(|(c, a)| a / (1.0 + ((f - c) / width).powi(2)))
                .sum::<f64>();
        freqs.push(f);
        response.push((clean + noise.sample(&mut rng)).clamp(0.0, 1.0));
    }
    io::write_spectroscopy(create(dir, "four_peaks.csv")?, &SpectroscopyTrace::new(freqs, response, None)?)?;
    io::write_json(create(dir, "four_peaks_truth.json")?, &json!({ "centers_GHz": centers, "hwhm_GHz": width }))?;
    Ok(())
}

/// Shot records from the protocol at paper-scale rates. Below about 10⁴ shots
/// per delay, sampling noise alone pushes corrected probabilities past the
/// clipping threshold in a sizable fraction of bootstrap resamples.
fn shots(dir: &Path) -> Res {
    let mut cfg = ProtocolConfig::paper_scale(paper_scale_generator());
    cfg.readout_error = 0.02;
    cfg.reset_error = 0.0;
    cfg.seed = 0;
    let delays = [0.0, 3e-4, 1e-3, 3e-3, 1e-2];
    let out = run_protocol(&cfg, 10_000, &delays)?;
    io::write_shots(create(dir, "shots.jsonl")?, &records(&out))?;
    io::write_json(create(dir, "shots_truth.json")?, &cfg)?;
    Ok(())
}

/// Noiseless avoided crossing in two data sets offset by 3 MHz.
fn crossing(dir: &Path) -> Res {
    let qubit = TransmonParams::paper_device();
    let (g, w, offset, period) = (0.0175, 2.881, 1.2e-4, 2e-3);
    let truth = CrossingModel {
        qubit,
        calibration: FluxCalibration::new(offset, period)?,
    };
    let center = offset + flux_for_frequency(&qubit, w)? * period;
    let mut points = Vec::new();
    for k in -20..=20 {
        let current = center + k as f64 * 2e-6;
        for (set, shift) in [(0usize, 0.0), (1, 0.003)] {
            if set == 1 && k % 2 != 0 {
                continue;
            }
            let nu_q = truth.qubit_frequency(current, offset)? + shift;
            for branch in [Branch::Upper, Branch::Lower] {
                points.push(CrossingPoint {
                    current,
                    frequency: CrossingModel::branch_frequency(nu_q, g, w, branch),
                    branch,
                    set,
                });
            }
        }
    }
    io::write_crossing(create(dir, "crossing.csv")?, &points)?;
    // the fit starts from a calibration offset 20 µA off
    let start = CrossingModel {
        qubit,
        calibration: FluxCalibration::new(1.0e-4, period)?,
    };
    io::write_json(create(dir, "crossing_config.json")?, &json!({ "model": start }))?;
    io::write_json(
        create(dir, "crossing_truth.json")?,
        &json!({ "g_GHz": g, "w_tls_GHz": w, "current_offset_A": offset, "set_offset_1_GHz": 0.003 }),
    )?;
    Ok(())
}

fn main() -> Res {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    std::fs::create_dir_all(&dir)?;
    four_peaks(&dir)?;
    shots(&dir)?;
    crossing(&dir)?;
    println!("fixtures written to {}", dir.display());
    Ok(())
}
