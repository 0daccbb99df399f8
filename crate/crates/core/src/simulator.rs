//! Synthetic data generation.
//!
//! Two generators share the six transition channels below:
//!
//! | # | transition      | rate              | increment of (I_c, I, A, E) |
//! |---|-----------------|-------------------|-----------------------------|
//! | 1 | E -> I          | sigma f0 E        | (+1, +1,  0, -1)            |
//! | 2 | E -> A          | sigma (1-f0) E    | ( 0,  0, +1, -1)            |
//! | 3 | A -> I          | gamma_A f1 A      | (+1, +1, -1,  0)            |
//! | 4 | A -> recovered  | gamma_A (1-f1) A  | ( 0,  0, -1,  0)            |
//! | 5 | I -> removed    | gamma_I I         | ( 0, -1,  0,  0)            |
//! | 6 | exposure        | beta phi          | ( 0,  0,  0, +1)            |
//!
//! The infectious pressure is updated deterministically with the last row of
//! `F`. `simulate_lti` propagates the linear model with mean-shifted Poisson
//! channel noise (plus Gaussian `Q0` noise); `simulate_ctmc` is an integer
//! tau-leap chain with a finite susceptible pool.

use std::io::Write;

use nalgebra::{SMatrix, Vector5, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::error::{Error, Result};
use crate::model::{build_f, ModelMatrices, ModelParams, NoiseConfig, StateVector, N_STATES};

pub const N_CHANNELS: usize = 6;

/// Deterministic RNG for one purpose/realization pair under a master seed.
pub fn stream_rng(master_seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream);
    rng
}

/// Channel-to-state increment matrix `B` (5 x 6).
pub fn stoichiometry() -> SMatrix<f64, N_STATES, N_CHANNELS> {
    #[rustfmt::skip]
    let b = SMatrix::<f64, N_STATES, N_CHANNELS>::from_row_slice(&[
        1.0, 0.0,  1.0,  0.0,  0.0, 0.0,
        1.0, 0.0,  1.0,  0.0, -1.0, 0.0,
        0.0, 1.0, -1.0, -1.0,  0.0, 0.0,
       -1.0,-1.0,  0.0,  0.0,  0.0, 1.0,
        0.0, 0.0,  0.0,  0.0,  0.0, 0.0,
    ]);
    b
}

/// Channel rates at state `x`, in table order.
pub fn channel_rates(params: &ModelParams, x: &StateVector) -> Vector6<f64> {
    let ModelParams {
        sigma,
        gamma_a,
        gamma_i,
        f0,
        f1,
        beta,
        ..
    } = *params;
    Vector6::new(
        sigma * f0 * x.e,
        sigma * (1.0 - f0) * x.e,
        gamma_a * f1 * x.a,
        gamma_a * (1.0 - f1) * x.a,
        gamma_i * x.i,
        beta * x.phi,
    )
}

fn poisson<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> f64 {
    if rate > 0.0 {
        Poisson::new(rate)
            .expect("finite positive rate")
            .sample(rng)
    } else {
        0.0
    }
}

/// Next infectious pressure given the populations at the current day.
pub fn next_phi(params: &ModelParams, x: &StateVector) -> f64 {
    let keep = params.phi_retention();
    keep * x.phi + (1.0 - keep) * (x.i + params.theta_a * x.a + params.theta_e * x.e)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// States at days `0..=d`.
    pub states: Vec<StateVector>,
    pub params: ModelParams,
    pub seed: u64,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.states.len() - 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSeries {
    pub y: Vec<f64>,
    /// Measurement variance used to generate (or assumed for) `y`.
    pub r: f64,
}

impl MeasurementSeries {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Linear-model step generator: `x' = max(F x + B (N - rates) + w0, 0)`.
#[derive(Debug, Clone)]
pub struct LtiStepper {
    params: ModelParams,
    mats: ModelMatrices,
    b: SMatrix<f64, N_STATES, N_CHANNELS>,
    q0_normal: [Option<Normal<f64>>; N_STATES],
}

impl LtiStepper {
    pub fn new(params: &ModelParams, noise: &NoiseConfig) -> Result<Self> {
        noise.validate()?;
        let mats = build_f(params)?;
        let q0_normal = noise
            .q0_diag
            .map(|q| (q > 0.0).then(|| Normal::new(0.0, q.sqrt()).expect("finite std")));
        Ok(LtiStepper {
            params: *params,
            mats,
            b: stoichiometry(),
            q0_normal,
        })
    }

    /// One step without clamping. Exposed for moment checks.
    pub fn raw_step<R: Rng + ?Sized>(&self, x: &StateVector, rng: &mut R) -> Vector5<f64> {
        let rates = channel_rates(&self.params, x);
        let shifted = Vector6::from_fn(|c, _| poisson(rng, rates[c]) - rates[c]);
        let mut next = self.mats.f * x.to_vector() + self.b * shifted;
        for (k, dist) in self.q0_normal.iter().enumerate() {
            if let Some(dist) = dist {
                next[k] += dist.sample(rng);
            }
        }
        next
    }

    pub fn step<R: Rng + ?Sized>(&self, x: &StateVector, rng: &mut R) -> StateVector {
        let next = self.raw_step(x, rng);
        StateVector::from_vector(&next.map(|v| v.max(0.0)))
    }
}

fn check_horizon(d: usize) -> Result<()> {
    if d < 1 {
        return Err(Error::InvalidInput("horizon d must be at least 1".into()));
    }
    Ok(())
}

pub fn simulate_lti(
    params: &ModelParams,
    x0: &StateVector,
    d: usize,
    noise: &NoiseConfig,
    seed: u64,
) -> Result<Trajectory> {
    check_horizon(d)?;
    x0.check_nonnegative()?;
    let stepper = LtiStepper::new(params, noise)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut states = Vec::with_capacity(d + 1);
    states.push(*x0);
    for k in 0..d {
        let next = stepper.step(&states[k], &mut rng);
        states.push(next);
    }
    Ok(Trajectory {
        states,
        params: *params,
        seed,
    })
}

/// `x_k = F^k x0` for `k = 0..=d`.
pub fn simulate_lti_noise_free(
    params: &ModelParams,
    x0: &StateVector,
    d: usize,
) -> Result<Trajectory> {
    check_horizon(d)?;
    let mats = build_f(params)?;
    let mut x = x0.to_vector();
    let mut states = vec![*x0];
    for _ in 0..d {
        x = mats.f * x;
        states.push(StateVector::from_vector(&x));
    }
    Ok(Trajectory {
        states,
        params: *params,
        seed: 0,
    })
}

/// Integer compartment state of the tau-leap chain.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CtmcState {
    pub susceptible: u64,
    pub exposed: u64,
    pub asymptomatic: u64,
    pub infected: u64,
    pub cumulative: u64,
    pub removed: u64,
    pub recovered: u64,
    pub phi: f64,
}

impl CtmcState {
    pub fn total(&self) -> u64 {
        self.susceptible
            + self.exposed
            + self.asymptomatic
            + self.infected
            + self.removed
            + self.recovered
    }

    pub fn to_state_vector(&self) -> StateVector {
        StateVector::new(
            self.cumulative as f64,
            self.infected as f64,
            self.asymptomatic as f64,
            self.exposed as f64,
            self.phi,
        )
    }
}

fn as_count(value: f64, name: &'static str) -> Result<u64> {
    if !(value >= 0.0) || value.fract() != 0.0 || value > u32::MAX as f64 {
        return Err(Error::InvalidInput(format!(
            "{name} = {value} is not a nonnegative integer count"
        )));
    }
    Ok(value as u64)
}

/// Daily tau-leap path of the Markov chain, including the bookkeeping
/// compartments.
pub fn simulate_ctmc_path(
    params: &ModelParams,
    x0: &StateVector,
    d: usize,
    population: u64,
    seed: u64,
) -> Result<Vec<CtmcState>> {
    check_horizon(d)?;
    params.validate()?;
    x0.check_nonnegative()?;
    let exposed = as_count(x0.e, "E")?;
    let asymptomatic = as_count(x0.a, "A")?;
    let infected = as_count(x0.i, "I")?;
    let cumulative = as_count(x0.i_c, "I_c")?;
    let occupied = exposed + asymptomatic + infected;
    if occupied > population {
        return Err(Error::InvalidInput(format!(
            "population {population} is smaller than E + A + I = {occupied}"
        )));
    }
    let mut state = CtmcState {
        susceptible: population - occupied,
        exposed,
        asymptomatic,
        infected,
        cumulative,
        phi: x0.phi,
        ..CtmcState::default()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut path = Vec::with_capacity(d + 1);
    path.push(state);
    for _ in 0..d {
        let x = state.to_state_vector();
        let mut rates = channel_rates(params, &x);
        rates[5] *= if population > 0 {
            state.susceptible as f64 / population as f64
        } else {
            0.0
        };
        let draw: Vec<u64> = rates.iter().map(|&r| poisson(&mut rng, r) as u64).collect();

        // Cap outflows so no compartment goes negative.
        let e_to_i = draw[0].min(state.exposed);
        let e_to_a = draw[1].min(state.exposed - e_to_i);
        let a_to_i = draw[2].min(state.asymptomatic);
        let a_to_r = draw[3].min(state.asymptomatic - a_to_i);
        let i_out = draw[4].min(state.infected);
        let exposures = draw[5].min(state.susceptible);

        let phi = next_phi(params, &x);
        state = CtmcState {
            susceptible: state.susceptible - exposures,
            exposed: state.exposed - e_to_i - e_to_a + exposures,
            asymptomatic: state.asymptomatic - a_to_i - a_to_r + e_to_a,
            infected: state.infected - i_out + e_to_i + a_to_i,
            cumulative: state.cumulative + e_to_i + a_to_i,
            removed: state.removed + i_out,
            recovered: state.recovered + a_to_r,
            phi,
        };
        path.push(state);
    }
    Ok(path)
}

pub fn simulate_ctmc(
    params: &ModelParams,
    x0: &StateVector,
    d: usize,
    population: u64,
    seed: u64,
) -> Result<Trajectory> {
    let path = simulate_ctmc_path(params, x0, d, population, seed)?;
    Ok(Trajectory {
        states: path.iter().map(CtmcState::to_state_vector).collect(),
        params: *params,
        seed,
    })
}

/// `y_k = I_c(k) + v_k`, `v_k ~ N(0, r)`.
pub fn generate_measurements(
    traj: &Trajectory,
    noise: &NoiseConfig,
    seed: u64,
) -> Result<MeasurementSeries> {
    noise.validate()?;
    if noise.r == 0.0 {
        return Ok(noise_free_measurements(traj));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, noise.r.sqrt()).expect("finite std");
    let y = traj
        .states
        .iter()
        .map(|s| s.i_c + normal.sample(&mut rng))
        .collect();
    Ok(MeasurementSeries { y, r: noise.r })
}

pub fn noise_free_measurements(traj: &Trajectory) -> MeasurementSeries {
    MeasurementSeries {
        y: traj.states.iter().map(|s| s.i_c).collect(),
        r: 0.0,
    }
}

/// Uniform sampling intervals for each model parameter. The defaults are
/// broad epidemiologically plausible ranges, not fitted priors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorRanges {
    pub sigma: (f64, f64),
    pub gamma_a: (f64, f64),
    pub gamma_i: (f64, f64),
    pub f0: (f64, f64),
    pub f1: (f64, f64),
    pub beta: (f64, f64),
    pub rho: (f64, f64),
    pub theta_a: (f64, f64),
    pub theta_e: (f64, f64),
}

impl Default for PriorRanges {
    fn default() -> Self {
        PriorRanges {
            sigma: (0.2, 0.8),
            gamma_a: (0.1, 0.5),
            gamma_i: (0.1, 0.5),
            f0: (0.3, 0.9),
            f1: (0.1, 0.7),
            beta: (0.5, 2.0),
            rho: (0.2, 1.0),
            theta_a: (0.2, 1.0),
            theta_e: (0.2, 1.0),
        }
    }
}

impl PriorRanges {
    pub fn as_array(&self) -> [(f64, f64); 9] {
        [
            self.sigma,
            self.gamma_a,
            self.gamma_i,
            self.f0,
            self.f1,
            self.beta,
            self.rho,
            self.theta_a,
            self.theta_e,
        ]
    }

    pub fn from_array(v: [(f64, f64); 9]) -> Self {
        PriorRanges {
            sigma: v[0],
            gamma_a: v[1],
            gamma_i: v[2],
            f0: v[3],
            f1: v[4],
            beta: v[5],
            rho: v[6],
            theta_a: v[7],
            theta_e: v[8],
        }
    }

    /// Degenerate ranges pinned at `params`.
    pub fn fixed(params: &ModelParams) -> Self {
        Self::from_array(params.as_array().map(|v| (v, v)))
    }

    pub fn validate(&self) -> Result<()> {
        let ranges = self.as_array();
        for (i, (lo, hi)) in ranges.iter().enumerate() {
            if !(lo <= hi) {
                return Err(Error::InvalidInput(format!(
                    "prior range for {} has lo {lo} > hi {hi}",
                    ModelParams::NAMES[i]
                )));
            }
        }
        ModelParams::from_array(ranges.map(|r| r.0)).validate()?;
        ModelParams::from_array(ranges.map(|r| r.1)).validate()
    }
}

pub fn sample_prior(ranges: &PriorRanges, seed: u64) -> Result<ModelParams> {
    ranges.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(ModelParams::from_array(ranges.as_array().map(
        |(lo, hi)| {
            if lo == hi {
                lo
            } else {
                rng.random_range(lo..=hi)
            }
        },
    )))
}

/// CSV with columns `realization,k,I_c,I,A,E,phi`.
pub fn write_trajectories_csv<W: Write>(out: W, trajectories: &[Trajectory]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["realization", "k", "I_c", "I", "A", "E", "phi"])?;
    for (r, traj) in trajectories.iter().enumerate() {
        for (k, s) in traj.states.iter().enumerate() {
            w.write_record([
                r.to_string(),
                k.to_string(),
                s.i_c.to_string(),
                s.i.to_string(),
                s.a.to_string(),
                s.e.to_string(),
                s.phi.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::approximation_noise_cov;

    #[test]
    fn channel_decomposition_matches_q1() {
        let p = ModelParams::default();
        let x = StateVector::new(3.0, 7.0, 11.0, 13.0, 2.5);
        let b = stoichiometry();
        let rates = channel_rates(&p, &x);
        let q = b * nalgebra::Matrix6::from_diagonal(&rates) * b.transpose();
        let q1 = approximation_noise_cov(&p, &x).unwrap();
        assert!((q - q1).abs().max() < 1e-12);
    }

    #[test]
    fn zero_state_stays_zero() {
        let traj = simulate_lti(
            &ModelParams::default(),
            &StateVector::zeros(),
            20,
            &NoiseConfig::uniform(0.0, 0.1),
            3,
        )
        .unwrap();
        assert!(traj.states.iter().all(|s| *s == StateVector::zeros()));

        let traj =
            simulate_ctmc(&ModelParams::default(), &StateVector::zeros(), 20, 1000, 3).unwrap();
        assert!(traj.states.iter().all(|s| *s == StateVector::zeros()));
    }

    #[test]
    fn noise_free_is_matrix_power() {
        let p = ModelParams::default();
        let x0 = StateVector::new(1.0, 2.0, 3.0, 4.0, 5.0);
        let traj = simulate_lti_noise_free(&p, &x0, 10).unwrap();
        let f = build_f(&p).unwrap().f;
        let mut x = x0.to_vector();
        for s in &traj.states {
            assert_eq!(s.to_vector(), x);
            x = f * x;
        }
    }

    #[test]
    fn ctmc_pure_removal() {
        let p = ModelParams {
            beta: 0.0,
            ..ModelParams::default()
        };
        let x0 = StateVector::new(4.0, 10.0, 0.0, 0.0, 0.0);
        let traj = simulate_ctmc(&p, &x0, 30, 1000, 11).unwrap();
        for w in traj.states.windows(2) {
            assert!(w[1].i <= w[0].i);
            assert_eq!(w[1].i_c, 4.0);
        }
    }

    #[test]
    fn ctmc_rejects_infeasible_start() {
        let p = ModelParams::default();
        let x0 = StateVector::new(0.0, 10.0, 10.0, 10.0, 0.0);
        assert!(simulate_ctmc(&p, &x0, 5, 20, 0).is_err());
        let x0 = StateVector::new(0.0, 1.5, 0.0, 0.0, 0.0);
        assert!(simulate_ctmc(&p, &x0, 5, 20, 0).is_err());
        assert!(simulate_ctmc(&p, &StateVector::zeros(), 0, 20, 0).is_err());
    }

    #[test]
    fn measurement_length_and_exactness() {
        let traj = simulate_lti_noise_free(
            &ModelParams::default(),
            &StateVector::new(1.0, 1.0, 1.0, 1.0, 1.0),
            42,
        )
        .unwrap();
        let y = generate_measurements(&traj, &NoiseConfig::uniform(0.1, 0.0), 5).unwrap();
        assert_eq!(y.len(), 43);
        for (yk, s) in y.y.iter().zip(&traj.states) {
            assert_eq!(*yk, s.i_c);
        }
    }

    #[test]
    fn measurement_noise_variance() {
        let traj =
            simulate_lti_noise_free(&ModelParams::default(), &StateVector::zeros(), 1).unwrap();
        let noise = NoiseConfig::uniform(0.0, 0.5);
        let n = 100_000;
        let mut sum2 = 0.0;
        for seed in 0..(n / 2) as u64 {
            let y = generate_measurements(&traj, &noise, seed).unwrap();
            sum2 += y.y.iter().map(|v| v * v).sum::<f64>();
        }
        let var = sum2 / n as f64;
        assert!((var - 0.5).abs() < 0.05 * 0.5, "variance {var}");
    }

    #[test]
    fn prior_degenerate_and_deterministic() {
        let p = ModelParams::default();
        assert_eq!(sample_prior(&PriorRanges::fixed(&p), 9).unwrap(), p);
        let ranges = PriorRanges::default();
        assert_eq!(
            sample_prior(&ranges, 42).unwrap(),
            sample_prior(&ranges, 42).unwrap()
        );
        assert_ne!(
            sample_prior(&ranges, 42).unwrap(),
            sample_prior(&ranges, 43).unwrap()
        );
    }

    #[test]
    fn prior_draws_within_ranges() {
        let ranges = PriorRanges::default();
        let bounds = ranges.as_array();
        for seed in 0..10_000 {
            let p = sample_prior(&ranges, seed).unwrap();
            for ((lo, hi), v) in bounds.iter().zip(p.as_array()) {
                assert!(*lo <= v && v <= *hi);
            }
        }
    }

    #[test]
    fn prior_rejects_bad_ranges() {
        let mut ranges = PriorRanges {
            f0: (0.5, 1.5),
            ..PriorRanges::default()
        };
        assert!(ranges.validate().is_err());
        ranges.f0 = (0.7, 0.5);
        assert!(ranges.validate().is_err());
    }

    #[test]
    fn trajectory_csv_layout() {
        let traj = simulate_lti_noise_free(
            &ModelParams::default(),
            &StateVector::new(0.0, 1.0, 0.0, 0.0, 0.0),
            1,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_trajectories_csv(&mut buf, &[traj]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("realization,k,I_c,I,A,E,phi"));
        assert_eq!(lines.next(), Some("0,0,0,1,0,0,0"));
        assert_eq!(text.lines().count(), 3);
    }
}
