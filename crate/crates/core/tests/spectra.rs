use proptest::prelude::*;
use tlscope_core::spectra::{
    build_transmon, charge_dispersion, convergence_check, diagonalize, fit_charge_dispersion, flux_map,
    transmon_levels, transmon_spectrum, FluxCalibration, Parity, TransmonParams,
};

fn rel_close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * x.abs().max(y.abs()).max(1.0))
}

fn params() -> impl Strategy<Value = TransmonParams> {
    // E_J/E_C up to 150; the cutoff leaves the lowest levels far from the basis edge
    (1.0f64..30.0, 0.2f64..0.6, 0.0f64..1.0, any::<bool>(), -0.4f64..0.4).prop_map(|(ej, ec, ng, odd, flux)| {
        TransmonParams::new(ej, ec)
            .with_cutoff(25)
            .with_ng(ng)
            .with_parity(if odd { Parity::Odd } else { Parity::Even })
            .with_flux(flux)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn periodic_and_symmetric_in_ng(p in params()) {
        let a = transmon_levels(&p).unwrap();
        let shifted = transmon_levels(&p.with_ng(p.ng + 1.0)).unwrap();
        let mirrored = transmon_levels(&p.with_ng(-p.ng)).unwrap();
        prop_assert!(rel_close(&a[..4], &shifted[..4], 1e-10));
        prop_assert!(rel_close(&a[..4], &mirrored[..4], 1e-10));
    }

    #[test]
    fn odd_parity_is_half_charge_shift(p in params()) {
        let odd = transmon_spectrum(&p.with_parity(Parity::Odd), 3).unwrap();
        let even = transmon_spectrum(&p.with_parity(Parity::Even).with_ng(p.ng + 0.5), 3).unwrap();
        prop_assert_eq!(odd.nu01(), even.nu01());
    }

    #[test]
    fn josephson_sign_convention_is_invisible(p in params()) {
        let h = build_transmon(&p).unwrap();
        let mut flipped = h.clone();
        let d = flipped.dim;
        for i in 0..d {
            for j in 0..d {
                if i != j {
                    flipped.re[(i, j)] = -flipped.re[(i, j)];
                }
            }
        }
        let a = diagonalize(&h, 5).unwrap();
        let b = diagonalize(&flipped, 5).unwrap();
        prop_assert!(rel_close(&a.levels, &b.levels, 1e-12));
    }

    #[test]
    fn levels_sorted_and_transitions_exact(p in params()) {
        let s = transmon_spectrum(&p, 5).unwrap();
        prop_assert!(s.levels.windows(2).all(|w| w[0] <= w[1]));
        for (&(i, j), &v) in &s.transitions {
            prop_assert_eq!(v, s.levels[j] - s.levels[i]);
        }
    }

    #[test]
    fn flux_map_round_trip(current in -1e-3f64..1e-3, offset in -1e-3f64..1e-3, period in 1e-5f64..1e-2) {
        let cal = FluxCalibration::new(offset, period).unwrap();
        let f = flux_map(current, (offset, period)).unwrap();
        prop_assert!((cal.current(f) - current).abs() <= 1e-12 * current.abs().max(1e-3));
    }
}

#[test]
fn adequate_cutoff_stays_adequate() {
    for ratio in [5.0, 20.0, 35.9, 60.0] {
        let p = TransmonParams::new(0.303 * ratio, 0.303);
        let nc = convergence_check(&p).unwrap();
        let reference = transmon_levels(&p.with_cutoff(nc + 30)).unwrap();
        for extra in 0..4 {
            let lv = transmon_levels(&p.with_cutoff(nc + extra)).unwrap();
            for k in 0..4 {
                assert!((lv[k] - reference[k]).abs() < 1e-7, "ratio {ratio}, cutoff {}", nc + extra);
            }
        }
    }
}

#[test]
fn table_device_needs_modest_cutoff() {
    assert!(convergence_check(&TransmonParams::paper_device()).unwrap() <= 15);
    assert_eq!(convergence_check(&TransmonParams::new(0.0, 0.303)).unwrap(), 5);
}

#[test]
fn cosine_form_describes_dispersion() {
    for ratio in [10.0, 20.0, 35.9] {
        let p = TransmonParams::new(0.303 * ratio, 0.303);
        for parity in [Parity::Even, Parity::Odd] {
            let fit = fit_charge_dispersion(&p.with_parity(parity), (0, 1), 64).unwrap();
            let dc = charge_dispersion(&p, (0, 1)).unwrap();
            assert!((fit.dispersion - dc).abs() < 0.05 * dc.abs(), "{ratio}: {} vs {dc}", fit.dispersion);
            assert!(fit.rms <= 0.01 * fit.dispersion.abs(), "{ratio}: rms {}", fit.rms);
        }
    }
}

#[test]
fn cooper_pair_box_limit() {
    let p = TransmonParams::new(0.0, 0.303);
    assert!((charge_dispersion(&p, (0, 1)).unwrap() - 4.0 * 0.303).abs() < 1e-12);
}
