use nalgebra::Matrix4;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use tlscope_core::dynamics::{
    bootstrap, conditional_probs, confusion_from_t0, correct_counts, evolve, extrapolate_rate, fit_rates,
    paper_scale_generator, parity_rate, rate_pairs, simulate_trajectory, ConfusionMatrix, GeneratorMatrix,
    JointState, RateFitOptions, ShotRecord, TelegraphTrace, RATE_FLOOR,
};

fn generators() -> impl Strategy<Value = GeneratorMatrix> {
    prop::array::uniform12(prop_oneof![Just(0.0), 0.0f64..500.0]).prop_map(|r| {
        let triples: Vec<_> = rate_pairs().into_iter().zip(r).map(|((f, t), v)| (f, t, v)).collect();
        GeneratorMatrix::from_rates(&triples).unwrap()
    })
}

fn distributions() -> impl Strategy<Value = [f64; 4]> {
    prop::array::uniform4(0.0f64..1.0).prop_filter_map("nonzero", |v| {
        let s: f64 = v.iter().sum();
        (s > 1e-3).then(|| v.map(|x| x / s))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn probability_is_conserved(gen in generators(), rho in distributions(), u in 0.0f64..1.0) {
        let t = u * 10.0 / gen.max_rate().max(1.0);
        let out = evolve(&gen, &rho, t).unwrap();
        prop_assert!(out.drift < 1e-9);
        prop_assert!((out.rho.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let p = gen.propagator(t).unwrap();
        for j in 0..4 {
            prop_assert!((p.column(j).sum() - 1.0).abs() < 1e-9);
            prop_assert!(p.column(j).iter().all(|&x| x > -1e-9));
        }
    }

    #[test]
    fn semigroup(gen in generators(), rho in distributions(), u1 in 0.0f64..1.0, u2 in 0.0f64..1.0) {
        let scale = 5.0 / gen.max_rate().max(1.0);
        let (t1, t2) = (u1 * scale, u2 * scale);
        let two = evolve(&gen, &evolve(&gen, &rho, t1).unwrap().rho, t2).unwrap().rho;
        let one = evolve(&gen, &rho, t1 + t2).unwrap().rho;
        for k in 0..4 {
            prop_assert!((two[k] - one[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn relabeling_states_permutes_the_propagator(gen in generators(), u in 0.0f64..1.0, perm in Just([0usize, 1, 2, 3]).prop_shuffle()) {
        let t = u * 5.0 / gen.max_rate().max(1.0);
        let relabeled = GeneratorMatrix::new(gen.permuted(perm)).unwrap();
        let a = gen.propagator(t).unwrap();
        let b = relabeled.propagator(t).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                prop_assert!((b[(i, j)] - a[(perm[i], perm[j])]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn two_state_closed_form() {
    let g = 123.0;
    let gen = GeneratorMatrix::from_rates(&[(JointState::GO, JointState::GE, g), (JointState::GE, JointState::GO, g)])
        .unwrap();
    for t in [0.0, 1e-4, 1e-3, 5e-3, 0.05] {
        let rho = evolve(&gen, &[1.0, 0.0, 0.0, 0.0], t).unwrap().rho;
        let expect = 0.5 * (1.0 + (-2.0 * g * t).exp());
        assert!((rho[0] - expect).abs() < 1e-9, "t = {t}");
        assert_eq!(rho[2], 0.0);
    }
}

/// Ergodic chain with every state well visited.
fn balanced() -> GeneratorMatrix {
    use JointState::*;
    GeneratorMatrix::from_rates(&[
        (GO, GE, 120.0),
        (GE, GO, 80.0),
        (EO, EE, 150.0),
        (EE, EO, 60.0),
        (EO, GO, 90.0),
        (EE, GE, 70.0),
        (GO, EO, 40.0),
        (GE, EE, 30.0),
        (GO, EE, 10.0),
        (GE, EO, 15.0),
    ])
    .unwrap()
}

#[test]
fn sojourn_times_match_exit_rates() {
    let gen = balanced();
    let traj = simulate_trajectory(&gen, JointState::GO, 500.0, 11).unwrap();
    for s in JointState::ALL {
        let stays = traj.sojourns(s);
        assert!(stays.len() >= 10_000, "{s}: {} sojourns", stays.len());
        let stays = &stays[..10_000];
        let mean = stays.iter().sum::<f64>() / stays.len() as f64;
        let expect = 1.0 / gen.exit_rate(s);
        assert!((mean - expect).abs() < 0.03 * expect, "{s}: {mean} vs {expect}");
    }
}

#[test]
fn occupancy_matches_null_vector() {
    let gen = balanced();
    let pi = gen.stationary().unwrap();
    let null = gen.matrix() * nalgebra::Vector4::from_column_slice(&pi);
    assert!(null.amax() < 1e-9);
    let occ = simulate_trajectory(&gen, JointState::EE, 200.0, 5).unwrap().occupancy();
    for k in 0..4 {
        assert!((occ[k] - pi[k]).abs() < 0.02 * pi[k], "state {k}: {} vs {}", occ[k], pi[k]);
    }
}

#[test]
fn frozen_process_has_one_segment() {
    let traj = simulate_trajectory(&GeneratorMatrix::zero(), JointState::EO, 10.0, 0).unwrap();
    assert_eq!(traj.segments(), 1);
    assert_eq!(traj.final_state(), JointState::EO);
}

/// Records drawn directly from the conditional distribution, with each recorded
/// state passed through the assignment matrix `m`.
fn synthetic(gen: &GeneratorMatrix, delays: &[f64], shots: usize, m: &ConfusionMatrix, seed: u64) -> Vec<ShotRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pick = |row: &[f64], rng: &mut ChaCha8Rng| {
        let mut u: f64 = rng.random();
        for (k, &p) in row.iter().enumerate() {
            if u < p {
                return k;
            }
            u -= p;
        }
        3
    };
    let mut out = Vec::with_capacity(delays.len() * shots);
    for &d in delays {
        let p = gen.conditional(d).unwrap();
        for _ in 0..shots {
            let s = rng.random_range(0..4);
            let row: Vec<f64> = (0..4).map(|j| p[(s, j)]).collect();
            let sp = pick(&row, &mut rng);
            let rs = pick(&m.m[s], &mut rng);
            let rsp = pick(&m.m[sp], &mut rng);
            out.push(ShotRecord {
                t: out.len() as f64,
                s: JointState::ALL[rs],
                delay_s: d,
                s_prime: JointState::ALL[rsp],
                valid: true,
            });
        }
    }
    out
}

const DELAYS: [f64; 6] = [1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 2e-2];

#[test]
fn conditional_probabilities_match_forward_model() {
    let gen = paper_scale_generator();
    let recs = synthetic(&gen, &DELAYS, 100_000, &ConfusionMatrix::identity(), 1);
    let cp = conditional_probs(&recs).unwrap();
    let mut within3 = 0;
    let mut total = 0;
    for (b, &d) in cp.delays.iter().enumerate() {
        let truth = gen.conditional(d).unwrap();
        for i in 0..4 {
            assert!((cp.cond[b][i].iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for j in 0..4 {
                let p = truth[(i, j)];
                let n = cp.row_shots[b][i];
                let sigma = (p * (1.0 - p) / n).sqrt().max(1.0 / n);
                let z = (cp.cond[b][i][j] - p).abs() / sigma;
                assert!(z < 5.0, "delay {d}, {i}->{j}: z = {z}");
                within3 += (z < 3.0) as usize;
                total += 1;
            }
        }
    }
    assert!(within3 as f64 >= 0.97 * total as f64, "{within3} of {total} within 3σ");
}

fn split_total(total: f64) -> ConfusionMatrix {
    ConfusionMatrix::uniform(total).unwrap()
}

#[test]
fn confusion_recovered_from_zero_delay() {
    let m = split_total(0.04);
    for rho in [[0.25; 4], [0.4, 0.3, 0.2, 0.1]] {
        let a_true: [[f64; 4]; 4] = std::array::from_fn(|i| std::array::from_fn(|j| if i == j { rho[i] } else { 0.0 }));
        let est = confusion_from_t0(&m.forward(&a_true)).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert!((est.m[i][j] - m.m[i][j]).abs() < 3e-3, "{i}{j}: {} vs {}", est.m[i][j], m.m[i][j]);
                assert_eq!(est.m[i][j], est.m[j][i]);
            }
        }
    }
}

#[test]
fn corrected_zero_delay_is_identity() {
    let gen = paper_scale_generator();
    let m = split_total(0.04);
    let recs = synthetic(&gen, &[0.0, 1e-3], 100_000, &m, 2);
    let cp = conditional_probs(&recs).unwrap();
    let est = confusion_from_t0(&cp.joint[0]).unwrap();
    let corrected = cp.corrected(&est).unwrap();
    for i in 0..4 {
        for j in 0..4 {
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((corrected.cond[0][i][j] - want).abs() < 0.01, "{i}{j}: {}", corrected.cond[0][i][j]);
        }
    }
}

#[test]
fn confusion_round_trip_is_exact() {
    let m = ConfusionMatrix::new([
        [0.95, 0.02, 0.02, 0.01],
        [0.02, 0.94, 0.01, 0.03],
        [0.02, 0.01, 0.96, 0.01],
        [0.01, 0.03, 0.01, 0.95],
    ])
    .unwrap();
    let a_r = [
        [0.20, 0.03, 0.01, 0.01],
        [0.02, 0.22, 0.01, 0.00],
        [0.04, 0.01, 0.19, 0.02],
        [0.01, 0.02, 0.03, 0.18],
    ];
    let back = correct_counts(&m.forward(&a_r), &m).unwrap();
    for i in 0..4 {
        for j in 0..4 {
            assert!((back[i][j] - a_r[i][j]).abs() < 1e-12);
        }
    }
}

#[test]
fn paper_scale_rates_recovered() {
    let gen = paper_scale_generator();
    let recs = synthetic(&gen, &DELAYS, 100_000, &ConfusionMatrix::identity(), 3);
    let fit = fit_rates(&conditional_probs(&recs).unwrap(), &RateFitOptions::default()).unwrap();
    assert!(fit.converged);
    for r in &fit.rates {
        let t = gen.rate(r.from, r.to);
        if t >= 100.0 {
            assert!((r.rate - t).abs() < 0.1 * t, "{}: {} vs {t}", r.name(), r.rate);
        }
    }
    // switching and relaxation times
    let parity = fit.rate(JointState::GO, JointState::GE).unwrap().rate;
    let relax = fit.rate(JointState::EO, JointState::GO).unwrap().rate;
    assert!((1.0 / parity - 6e-3).abs() < 0.1 * 6e-3);
    assert!((1.0 / relax - 4e-3).abs() < 0.1 * 4e-3);
}

#[test]
fn relabeling_records_permutes_fitted_rates() {
    let gen = paper_scale_generator();
    let recs = synthetic(&gen, &DELAYS, 50_000, &ConfusionMatrix::identity(), 4);
    // new state k is old perm[k]
    let perm = [2usize, 0, 3, 1];
    let mut inv = [0; 4];
    for (k, &p) in perm.iter().enumerate() {
        inv[p] = k;
    }
    let relabeled: Vec<ShotRecord> = recs
        .iter()
        .map(|r| ShotRecord {
            s: JointState::ALL[inv[r.s.index()]],
            s_prime: JointState::ALL[inv[r.s_prime.index()]],
            ..*r
        })
        .collect();
    let opts = RateFitOptions::default();
    let a = fit_rates(&conditional_probs(&recs).unwrap(), &opts).unwrap();
    let b = fit_rates(&conditional_probs(&relabeled).unwrap(), &opts).unwrap();
    let expect: Matrix4<f64> = a.generator.permuted(perm);
    for i in 0..4 {
        for j in 0..4 {
            let (x, y) = (b.generator.matrix()[(i, j)], expect[(i, j)]);
            assert!((x - y).abs() <= 1e-3 * y.abs().max(1.0), "({i},{j}): {x} vs {y}");
        }
    }
}

fn parity_only(rate: f64) -> GeneratorMatrix {
    use JointState::*;
    GeneratorMatrix::from_rates(&[(GO, GE, rate), (GE, GO, rate), (EO, EE, rate), (EE, EO, rate)]).unwrap()
}

/// Symmetric flip rate from the pooled flip fraction, `p = (1 − e^{−2γt})/2`.
fn flip_rate(recs: &[ShotRecord]) -> tlscope_core::Result<Vec<f64>> {
    let t = recs[0].delay_s;
    let flips = recs.iter().filter(|r| r.s.parity() != r.s_prime.parity()).count() as f64;
    let p = flips / recs.len() as f64;
    Ok(vec![-(1.0 - 2.0 * p).ln() / (2.0 * t)])
}

#[test]
fn bootstrap_width_scales_as_inverse_sqrt() {
    let gen = parity_only(167.0);
    let width = |shots: usize| {
        let recs = synthetic(&gen, &[2e-3], shots, &ConfusionMatrix::identity(), 9);
        let b = bootstrap(&recs, flip_rate, 400, 1).unwrap();
        b.ci95[0].1 - b.ci95[0].0
    };
    let ratio = width(5_000) / width(20_000);
    assert!((ratio - 2.0).abs() < 0.4, "width ratio {ratio}");
}

#[test]
fn bootstrap_intervals_cover_truth() {
    let gen = parity_only(167.0);
    let mut covered = 0;
    for rep in 0..100 {
        let recs = synthetic(&gen, &[2e-3], 4_000, &ConfusionMatrix::identity(), 1000 + rep);
        let b = bootstrap(&recs, flip_rate, 200, rep).unwrap();
        covered += b.contains95(0, 167.0) as usize;
    }
    assert!(covered >= 90, "{covered} of 100");
}

#[test]
fn absent_cross_rates_are_consistent_with_zero() {
    use JointState::*;
    let gen = GeneratorMatrix::from_rates(&[
        (GO, GE, 167.0),
        (GE, GO, 167.0),
        (EO, EE, 167.0),
        (EE, EO, 167.0),
        (EO, GO, 250.0),
        (EE, GE, 250.0),
    ])
    .unwrap();
    let recs = synthetic(&gen, &DELAYS, 20_000, &ConfusionMatrix::identity(), 6);
    let opts = RateFitOptions::default();
    let est = |r: &[ShotRecord]| fit_rates(&conditional_probs(r)?, &opts).map(|f| f.values());
    let b = bootstrap(&recs, est, 100, 6).unwrap();
    for (k, (from, to)) in rate_pairs().into_iter().enumerate() {
        let cross = from.tls() != to.tls() && from.parity() != to.parity();
        if cross {
            // the log parameterization cannot reach 0; its floor stands for it
            let lo = b.ci95[k].0;
            assert!(lo <= 10.0 * RATE_FLOOR, "{from}->{to}: CI starts at {lo}");
        }
    }
}

#[test]
fn rts_parity_rate() {
    let gen = parity_only(150.0);
    let traj = simulate_trajectory(&gen, JointState::GO, 1000.0, 21).unwrap();
    let trace = TelegraphTrace::parity_of(&traj.sample(1e-3, 1_000_000), 1e-3).unwrap();
    let r = parity_rate(&trace).unwrap();
    assert!((r.gamma_p - 150.0).abs() < 0.05 * 150.0, "{}", r.gamma_p);

    // sampling half as often halves the correlation length in samples only
    let coarse = trace.decimate(2);
    let rc = parity_rate(&coarse).unwrap();
    assert!((rc.gamma_p - r.gamma_p).abs() < 0.03 * r.gamma_p, "{} vs {}", rc.gamma_p, r.gamma_p);
    let fine = tlscope_core::dynamics::autocorr_rate(&trace, tlscope_core::dynamics::TraceLevel::Odd).unwrap();
    let half = tlscope_core::dynamics::autocorr_rate(&coarse, tlscope_core::dynamics::TraceLevel::Odd).unwrap();
    assert!((half.tau_samples * 2.0 / fine.tau_samples - 1.0).abs() < 0.03);
}

#[test]
fn extrapolation_interval_coverage() {
    let (g0, kappa) = (3.0, 2e-3);
    let rates = [1e3, 2e3, 5e3, 1e4, 2e4];
    let sigma = 0.5;
    let noise = Normal::new(0.0, sigma).unwrap();
    let mut covered = 0;
    for seed in 0..200 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<_> = rates.iter().map(|&f| (f, g0 + kappa * f + noise.sample(&mut rng), sigma)).collect();
        let e = extrapolate_rate(&pts).unwrap();
        covered += (e.ci95.0 <= g0 && g0 <= e.ci95.1) as usize;
    }
    assert!(covered >= 180, "{covered} of 200");
}
