use phinet_core::alignment::{max_asymmetry, track_alignment, AlignmentReport};
use phinet_core::{FlowForm, Hyper, IntegrationOptions, MatrixParams, Method, Mode};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn init(seed: u64) -> MatrixParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    MatrixParams::sample(3, 3, Mode::PhiNet, 1.0, true, &mut rng)
}

fn run(seed: u64, rho: f64, steps: usize, form: FlowForm) -> AlignmentReport {
    let opts = IntegrationOptions::new(0.01, steps, Method::Rk4);
    track_alignment(&init(seed), &Hyper::new(1.5, rho).unwrap(), &opts, form).unwrap()
}

#[test]
fn commutators_decay_and_respect_the_lemma_bound() {
    for seed in 1..=4 {
        for form in [FlowForm::Analysis, FlowForm::Gradient] {
            let rep = run(seed, 0.05, 20_000, form);
            let (first, last) = (rep.xi_norms[0], *rep.xi_norms.last().unwrap());
            assert!(last < 1e-4 * first, "seed {seed} {form:?}: {first} -> {last}");
            for d in &rep.decay_intervals {
                assert!(d.lambda0 > 0.0);
                assert!(d.ratio <= 1.0 + 1e-3, "{d:?}");
                assert!(d.worst_step_ratio <= 1.0 + 1e-3, "{d:?}");
            }
            assert_eq!(rep.times.len(), rep.trajectory_norms.len());
            assert_eq!(rep.times.len(), rep.min_symmetric_eig_full.len());
            assert!(max_asymmetry(&rep.final_params) <= 1e-9);
        }
    }
}

#[test]
fn larger_decay_gives_faster_commutator_decay() {
    for seed in [1, 2] {
        let fast = run(seed, 0.1, 8000, FlowForm::Analysis).fitted_decay_rate.unwrap();
        let slow = run(seed, 0.01, 8000, FlowForm::Analysis).fitted_decay_rate.unwrap();
        assert!(fast < slow, "seed {seed}: {fast} vs {slow}");
    }
}

#[test]
fn per_direction_parabola_residuals_vanish() {
    let rep = run(3, 0.05, 20_000, FlowForm::Analysis);
    let first = rep.parabola_residuals[0].iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let last = rep.parabola_residuals.last().unwrap().iter().fold(0.0f64, |a, b| a.max(b.abs()));
    assert!(first > 1e-2);
    assert!(last < 1e-8, "{last}");
}

#[test]
fn parabola_rate_is_twice_rho() {
    for rho in [0.02, 0.05] {
        let rate = run(4, rho, 4000, FlowForm::Gradient).fitted_parabola_rate.unwrap();
        assert!((rate + 2.0 * rho).abs() <= 0.05 * 2.0 * rho, "{rate}");
    }
}
