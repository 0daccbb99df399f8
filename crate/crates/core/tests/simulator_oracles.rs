use epinit_core::model::{approximation_noise_cov, build_f, ModelParams, NoiseConfig, StateVector};
use epinit_core::simulator::{
    simulate_ctmc, simulate_ctmc_path, simulate_lti, stream_rng, LtiStepper,
};
use nalgebra::{Matrix5, Vector5};

fn no_q0() -> NoiseConfig {
    NoiseConfig::uniform(0.0, 0.1)
}

#[test]
fn lti_increment_moments_match_model() {
    let p = ModelParams::default();
    let x = StateVector::new(10.0, 30.0, 20.0, 40.0, 25.0);
    let stepper = LtiStepper::new(&p, &no_q0()).unwrap();
    let mut rng = stream_rng(11, 0);
    let n = 200_000;

    let incs: Vec<Vector5<f64>> = (0..n)
        .map(|_| stepper.raw_step(&x, &mut rng) - x.to_vector())
        .collect();
    let mean = incs.iter().sum::<Vector5<f64>>() / n as f64;
    let f = build_f(&p).unwrap().f;
    let mean_expected = f * x.to_vector() - x.to_vector();
    let cov_expected = approximation_noise_cov(&p, &x).unwrap();

    for i in 0..5 {
        let se = (cov_expected[(i, i)] / n as f64).sqrt();
        let diff = (mean[i] - mean_expected[i]).abs();
        assert!(diff <= 4.0 * se + 1e-9, "mean {i}: {diff} > 4 * {se}");
    }
    let mut cov = Matrix5::zeros();
    for d in &incs {
        let c = d - mean;
        cov += c * c.transpose();
    }
    cov /= (n - 1) as f64;
    for i in 0..5 {
        for j in 0..5 {
            // Gaussian approximation of var(d_i d_j).
            let var = cov_expected[(i, i)] * cov_expected[(j, j)] + cov_expected[(i, j)].powi(2);
            let se = (var / n as f64).sqrt();
            let diff = (cov[(i, j)] - cov_expected[(i, j)]).abs();
            assert!(diff <= 5.0 * se + 1e-9, "cov ({i},{j}): {diff} > 5 * {se}");
        }
    }
}

#[test]
fn lti_paths_stay_nonnegative() {
    let p = ModelParams::default();
    let x0 = StateVector::new(0.0, 1.0, 0.0, 1.0, 0.5);
    for seed in 0..50 {
        let t = simulate_lti(&p, &x0, 42, &NoiseConfig::uniform(2.0, 0.5), seed).unwrap();
        assert!(t
            .states
            .iter()
            .all(|s| s.to_vector().iter().all(|v| *v >= 0.0)));
    }
}

#[test]
fn ctmc_conserves_population_and_accumulates_incidence() {
    let p = ModelParams::default();
    let population = 20_000;
    let x0 = StateVector::new(3.0, 5.0, 4.0, 8.0, 6.0);
    for seed in 0..40 {
        let path = simulate_ctmc_path(&p, &x0, 60, population, seed).unwrap();
        for w in path.windows(2) {
            assert_eq!(w[1].total(), population);
            assert!(w[1].cumulative >= w[0].cumulative);
        }
        assert_eq!(path[0].total(), population);
    }
}

#[test]
fn ctmc_depletes_susceptibles_in_small_population() {
    let p = ModelParams::default();
    let path = simulate_ctmc_path(
        &p,
        &StateVector::new(0.0, 10.0, 10.0, 10.0, 10.0),
        120,
        500,
        3,
    )
    .unwrap();
    let last = path.last().unwrap();
    assert!(last.susceptible < 250, "{last:?}");
    assert_eq!(last.total(), 500);
}

#[test]
fn identical_seeds_give_identical_paths() {
    let p = ModelParams::default();
    let x0 = StateVector::new(0.0, 2.0, 2.0, 4.0, 2.0);
    let a = simulate_ctmc(&p, &x0, 42, 1_000_000, 99).unwrap();
    let b = simulate_ctmc(&p, &x0, 42, 1_000_000, 99).unwrap();
    assert_eq!(a, b);
    let c = simulate_ctmc(&p, &x0, 42, 1_000_000, 100).unwrap();
    assert_ne!(a, c);

    let noise = NoiseConfig::default();
    let a = simulate_lti(&p, &x0, 42, &noise, 5).unwrap();
    let b = simulate_lti(&p, &x0, 42, &noise, 5).unwrap();
    assert_eq!(a, b);
}

/// With a huge susceptible pool and populations large enough that outflows
/// are never capped, the chain's mean follows the linear model.
#[test]
fn ctmc_mean_follows_linear_model() {
    let p = ModelParams::default();
    let x0 = StateVector::new(0.0, 50.0, 50.0, 50.0, 20.0);
    let d = 8;
    let n = 4000;
    let finals: Vec<Vector5<f64>> = (0..n)
        .map(|seed| {
            simulate_ctmc(&p, &x0, d, 1_000_000_000, seed)
                .unwrap()
                .states[d]
                .to_vector()
        })
        .collect();
    let mean = finals.iter().sum::<Vector5<f64>>() / n as f64;
    let var = finals.iter().fold(Vector5::zeros(), |acc, v| {
        acc + (v - mean).component_mul(&(v - mean))
    }) / (n - 1) as f64;

    let f = build_f(&p).unwrap().f;
    let mut expected = x0.to_vector();
    for _ in 0..d {
        expected = f * expected;
    }
    for i in 0..5 {
        let se = (var[i] / n as f64).sqrt();
        let diff = (mean[i] - expected[i]).abs();
        assert!(
            diff <= 4.0 * se,
            "state {i}: mean {} vs {} (se {se})",
            mean[i],
            expected[i]
        );
    }
}
