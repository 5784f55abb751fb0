use phinet_core::eigen::{find_equilibria_reduced, regime, rhs_reduced, simsiam_equilibria, sweep_rho, ReducedSystem, default_psi_window, DEFAULT_RESOLUTION};
use phinet_core::Hyper;
use proptest::prelude::*;

fn hyper(s2: f64, rho: f64) -> Hyper {
    Hyper::new(s2, rho).unwrap()
}

fn check_conjugacy(h: &Hyper) -> Result<(), String> {
    let eq = regime(h).unwrap().equilibria;
    let near_axis: Vec<f64> = eq.iter().filter(|e| e.gamma.abs() <= 0.15 * e.psi.abs() + 1e-6).map(|e| e.psi).collect();
    for s in simsiam_equilibria(h) {
        if !near_axis.iter().any(|p| (p - s.psi).abs() <= 0.05) {
            return Err(format!("{h:?}: simsiam ψ={} missing from {near_axis:?}", s.psi));
        }
    }
    Ok(())
}

/// Above this value of ρ(1+σ²) the PhiNet equilibria leave the γ ≈ 0 band (or drift
/// more than 0.05 from the SimSiam ones), so the check is confined below it.
const CONJUGACY_LIMIT: f64 = 0.04;

#[test]
fn simsiam_equilibria_appear_near_the_gamma_axis() {
    for s2 in [0.0, 0.5, 1.5, 3.0] {
        for k in 0..60 {
            let rho = 1e-5 * 10f64.powf(k as f64 / 12.0);
            if rho * (1.0 + s2) <= CONJUGACY_LIMIT {
                check_conjugacy(&hyper(s2, rho)).unwrap();
            }
        }
    }
}

#[test]
fn conjugacy_check_breaks_in_the_medium_regime() {
    assert!(check_conjugacy(&hyper(1.5, 0.03)).is_ok());
    assert!(check_conjugacy(&hyper(1.5, 0.05)).is_err());
}

#[test]
fn sink_counts_never_increase_with_decay() {
    for s2 in [0.5, 1.5, 3.0] {
        let sw = sweep_rho(s2, 1e-5, 0.3, 80, ReducedSystem::PhiNet).unwrap();
        for w in sw.points.windows(2) {
            assert!(w[1].sink_count <= w[0].sink_count, "σ²={s2}: {} → {} at ρ={}", w[0].sink_count, w[1].sink_count, w[1].hyper.rho);
        }
        for b in &sw.boundaries {
            assert!(b.sinks_above < b.sinks_below, "{b:?}");
        }
    }
}

#[test]
fn four_regimes_separated_by_boundaries() {
    let sw = sweep_rho(1.5, 1e-5, 0.3, 80, ReducedSystem::PhiNet).unwrap();
    assert!(sw.boundaries.len() >= 3);
    let counts: Vec<(usize, usize)> = sw.boundaries.iter().map(|b| (b.sinks_below, b.sinks_above)).collect();
    assert_eq!(counts, vec![(4, 3), (3, 2), (2, 1)]);
    for w in sw.boundaries.windows(2) {
        assert!(w[0].rho < w[1].rho);
    }
}

#[test]
fn weaker_augmentation_moves_boundaries_right() {
    let strong_aug = sweep_rho(1.5, 1e-5, 1.0, 80, ReducedSystem::PhiNet).unwrap();
    let weak_aug = sweep_rho(0.0, 1e-5, 1.0, 80, ReducedSystem::PhiNet).unwrap();
    let last = |s: &phinet_core::eigen::Sweep| s.boundaries.iter().find(|b| b.sinks_above == 1).unwrap().rho;
    assert!(last(&weak_aug) > last(&strong_aug));
}

#[test]
fn simsiam_boundary_is_quarter_over_s() {
    for s2 in [0.0, 0.5, 1.5, 3.0] {
        let sw = sweep_rho(s2, 1e-3, 1.0, 40, ReducedSystem::SimSiam).unwrap();
        let b = sw.boundaries.iter().find(|b| b.sinks_below == 2 && b.sinks_above == 1).unwrap();
        let want = 0.25 / (1.0 + s2);
        assert!((b.rho - want).abs() <= 1e-4 * want * 2.0, "σ²={s2}: {} vs {want}", b.rho);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conjugacy_holds_for_random_hypers(s2 in 0.0f64..3.0, frac in 0.0f64..1.0) {
        let top = (CONJUGACY_LIMIT / (1.0 + s2)).log10();
        let h = hyper(s2, 10f64.powf(-5.0 + frac * (top + 5.0)));
        prop_assert!(check_conjugacy(&h).is_ok(), "{:?}", check_conjugacy(&h));
    }

    #[test]
    fn equilibria_are_zeros_of_the_field(s2 in 0.0f64..3.0, log_rho in -5.0f64..0.0) {
        let h = hyper(s2, 10f64.powf(log_rho));
        for e in find_equilibria_reduced(&h, default_psi_window(&h), DEFAULT_RESOLUTION).unwrap() {
            let (a, b) = rhs_reduced(e.psi, e.gamma, &h);
            prop_assert!(a.hypot(b) <= 1e-10, "{e:?}: {a} {b}");
        }
    }
}
