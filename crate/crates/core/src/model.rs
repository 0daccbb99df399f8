//! Discrete-time linear approximation of the compartment model.
//!
//! The state is `(I_c, I, A, E, phi)`: cumulative infectious incidence,
//! infected, asymptomatic, exposed and infectious pressure. Only `I_c` is
//! measured. Process noise has a state-dependent part coming from the
//! Poisson transitions of the underlying Markov chain plus a constant
//! diagonal model-uncertainty term `Q0`.

use std::fmt;

use nalgebra::{Complex, DMatrix, Matrix5, RowVector5, Vector5};

use crate::error::{Error, Result};

/// Number of model states.
pub const N_STATES: usize = 5;

/// Relative singular-value tolerance used for every numerical rank decision.
pub const RANK_TOL: f64 = 1e-10;

/// Eigenvalues with magnitude below this are treated as zero modes.
pub const ZERO_MODE_TOL: f64 = 1e-6;

/// Named state components, in state-vector order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum State {
    Ic,
    I,
    A,
    E,
    Phi,
}

impl State {
    pub const ALL: [State; N_STATES] = [State::Ic, State::I, State::A, State::E, State::Phi];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<State> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            State::Ic => "I_c",
            State::I => "I",
            State::A => "A",
            State::E => "E",
            State::Phi => "phi",
        }
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Epidemiological rates (per day) and fractions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    /// Transition rate out of the exposed state.
    pub sigma: f64,
    /// Transition rate out of the asymptomatic state.
    pub gamma_a: f64,
    /// Transition rate out of the infected state.
    pub gamma_i: f64,
    /// Fraction of exposed that become infected (rest become asymptomatic).
    pub f0: f64,
    /// Fraction of asymptomatic that become infected (rest recover).
    pub f1: f64,
    /// Indirect transmission rate from the infectious pressure.
    pub beta: f64,
    /// Decay rate of the infectious pressure.
    pub rho: f64,
    /// Asymptomatic shedding weight.
    pub theta_a: f64,
    /// Exposed shedding weight.
    pub theta_e: f64,
}

impl Default for ModelParams {
    /// A generic, observable and unstable parametrization used as the
    /// default throughout the toolkit.
    fn default() -> Self {
        ModelParams {
            sigma: 0.5,
            gamma_a: 0.25,
            gamma_i: 0.2,
            f0: 0.6,
            f1: 0.4,
            beta: 1.2,
            rho: 0.3,
            theta_a: 0.5,
            theta_e: 0.3,
        }
    }
}

impl ModelParams {
    pub const NAMES: [&'static str; 9] = [
        "sigma", "gamma_a", "gamma_i", "f0", "f1", "beta", "rho", "theta_a", "theta_e",
    ];

    pub fn as_array(&self) -> [f64; 9] {
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

    pub fn from_array(v: [f64; 9]) -> Self {
        ModelParams {
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

    pub fn validate(&self) -> Result<()> {
        for (name, value) in Self::NAMES.iter().zip(self.as_array()) {
            if !value.is_finite() || value < 0.0 {
                return Err(Error::InvalidParameter {
                    name,
                    value,
                    reason: "must be finite and nonnegative",
                });
            }
        }
        let unit = [
            ("sigma", self.sigma),
            ("gamma_a", self.gamma_a),
            ("gamma_i", self.gamma_i),
            ("f0", self.f0),
            ("f1", self.f1),
        ];
        for (name, value) in unit {
            if value > 1.0 {
                return Err(Error::InvalidParameter {
                    name,
                    value,
                    reason: "must lie in [0, 1]",
                });
            }
        }
        Ok(())
    }

    /// Per-day retention `exp(-rho)` of the infectious pressure.
    pub fn phi_retention(&self) -> f64 {
        (-self.rho).exp()
    }
}

/// Compartment populations plus infectious pressure.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StateVector {
    pub i_c: f64,
    pub i: f64,
    pub a: f64,
    pub e: f64,
    pub phi: f64,
}

impl StateVector {
    pub fn new(i_c: f64, i: f64, a: f64, e: f64, phi: f64) -> Self {
        StateVector { i_c, i, a, e, phi }
    }

    pub fn zeros() -> Self {
        Self::default()
    }

    pub fn to_vector(&self) -> Vector5<f64> {
        Vector5::new(self.i_c, self.i, self.a, self.e, self.phi)
    }

    pub fn from_vector(v: &Vector5<f64>) -> Self {
        StateVector::new(v[0], v[1], v[2], v[3], v[4])
    }

    pub fn get(&self, s: State) -> f64 {
        match s {
            State::Ic => self.i_c,
            State::I => self.i,
            State::A => self.a,
            State::E => self.e,
            State::Phi => self.phi,
        }
    }

    pub fn check_nonnegative(&self) -> Result<()> {
        for s in State::ALL {
            let value = self.get(s);
            if !(value >= 0.0) {
                return Err(Error::NegativeState {
                    component: s.name(),
                    value,
                });
            }
        }
        Ok(())
    }

    /// Componentwise `max(x, 0)`.
    pub fn clamped(&self) -> Self {
        StateVector::from_vector(&self.to_vector().map(|v| v.max(0.0)))
    }
}

/// State matrix `F` and output row `H`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelMatrices {
    pub f: Matrix5<f64>,
    pub h: RowVector5<f64>,
}

impl ModelMatrices {
    pub fn output_row() -> RowVector5<f64> {
        RowVector5::new(1.0, 0.0, 0.0, 0.0, 0.0)
    }
}

/// Diagonal of `Q0` and the constant measurement variance `R`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    pub q0_diag: [f64; N_STATES],
    pub r: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            q0_diag: [0.1; N_STATES],
            r: 0.1,
        }
    }
}

impl NoiseConfig {
    pub fn uniform(q0: f64, r: f64) -> Self {
        NoiseConfig {
            q0_diag: [q0; N_STATES],
            r,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for &q in &self.q0_diag {
            if !q.is_finite() || q < 0.0 {
                return Err(Error::InvalidParameter {
                    name: "q0",
                    value: q,
                    reason: "must be finite and nonnegative",
                });
            }
        }
        if !self.r.is_finite() || self.r < 0.0 {
            return Err(Error::InvalidParameter {
                name: "r",
                value: self.r,
                reason: "must be finite and nonnegative",
            });
        }
        Ok(())
    }

    pub fn q0(&self) -> Matrix5<f64> {
        Matrix5::from_diagonal(&Vector5::from(self.q0_diag))
    }
}

pub fn build_f(params: &ModelParams) -> Result<ModelMatrices> {
    params.validate()?;
    let ModelParams {
        sigma,
        gamma_a,
        gamma_i,
        f0,
        f1,
        beta,
        theta_a,
        theta_e,
        ..
    } = *params;
    let keep = params.phi_retention();
    let shed = 1.0 - keep;
    #[rustfmt::skip]
    let f = Matrix5::new(
        1.0, 0.0,           gamma_a * f1,    sigma * f0,          0.0,
        0.0, 1.0 - gamma_i, gamma_a * f1,    sigma * f0,          0.0,
        0.0, 0.0,           1.0 - gamma_a,   sigma * (1.0 - f0),  0.0,
        0.0, 0.0,           0.0,             1.0 - sigma,         beta,
        0.0, shed,          theta_a * shed,  theta_e * shed,      keep,
    );
    Ok(ModelMatrices {
        f,
        h: ModelMatrices::output_row(),
    })
}

/// State-dependent part `Q1(x)` of the process-noise covariance.
pub fn approximation_noise_cov(params: &ModelParams, x: &StateVector) -> Result<Matrix5<f64>> {
    x.check_nonnegative()?;
    let ModelParams {
        sigma,
        gamma_a,
        gamma_i,
        f0,
        f1,
        beta,
        ..
    } = *params;
    let a_to_i = gamma_a * f1 * x.a;
    let e_to_i = sigma * f0 * x.e;
    let e_to_a = sigma * (1.0 - f0) * x.e;
    let to_i = a_to_i + e_to_i;
    #[rustfmt::skip]
    let q = Matrix5::new(
        to_i,     to_i,                   -a_to_i,                   -e_to_i,                      0.0,
        to_i,     to_i + gamma_i * x.i,   -a_to_i,                   -e_to_i,                      0.0,
        -a_to_i,  -a_to_i,                gamma_a * x.a + e_to_a,    -e_to_a,                      0.0,
        -e_to_i,  -e_to_i,                -e_to_a,                   sigma * x.e + beta * x.phi,   0.0,
        0.0,      0.0,                    0.0,                       0.0,                          0.0,
    );
    Ok(q)
}

/// Full process-noise covariance `Q(x) = Q1(x) + Q0`.
pub fn process_noise_cov(
    params: &ModelParams,
    x: &StateVector,
    noise: &NoiseConfig,
) -> Result<Matrix5<f64>> {
    Ok(approximation_noise_cov(params, x)? + noise.q0())
}

/// Source of process-noise covariances and the measurement variance, as
/// seen by the estimators.
pub trait NoiseModel {
    /// Covariance of the process noise driving the step out of state `x`.
    /// Must accept any finite `x`, including negative components.
    fn process_cov(&self, x: &Vector5<f64>) -> Matrix5<f64>;

    fn measurement_var(&self) -> f64;
}

/// `Q(max(x, 0))` with the Poisson-channel covariance.
#[derive(Debug, Clone, Copy)]
pub struct StateDependentNoise {
    pub params: ModelParams,
    pub config: NoiseConfig,
}

impl StateDependentNoise {
    pub fn new(params: ModelParams, config: NoiseConfig) -> Self {
        StateDependentNoise { params, config }
    }
}

impl NoiseModel for StateDependentNoise {
    fn process_cov(&self, x: &Vector5<f64>) -> Matrix5<f64> {
        let x = StateVector::from_vector(x).clamped();
        process_noise_cov(&self.params, &x, &self.config).expect("clamped state is nonnegative")
    }

    fn measurement_var(&self) -> f64 {
        self.config.r
    }
}

/// State-independent process noise.
#[derive(Debug, Clone, Copy)]
pub struct ConstantNoise {
    pub q: Matrix5<f64>,
    pub r: f64,
}

impl NoiseModel for ConstantNoise {
    fn process_cov(&self, _x: &Vector5<f64>) -> Matrix5<f64> {
        self.q
    }

    fn measurement_var(&self) -> f64 {
        self.r
    }
}

/// Stacked `[H; HF; HF^2; HF^3; HF^4]`.
pub fn observability_matrix(mats: &ModelMatrices) -> Matrix5<f64> {
    let mut obs = Matrix5::zeros();
    let mut row = mats.h;
    for k in 0..N_STATES {
        obs.set_row(k, &row);
        row *= mats.f;
    }
    obs
}

/// Number of singular values above `RANK_TOL * sigma_max`.
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.singular_values();
    let max = sv.max();
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOL * max).count()
}

pub fn observability_rank(mats: &ModelMatrices) -> usize {
    let obs = observability_matrix(mats);
    numerical_rank(&DMatrix::from_column_slice(
        N_STATES,
        N_STATES,
        obs.as_slice(),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralReport {
    pub eigenvalues: Vec<Complex<f64>>,
    /// Some eigenvalue has magnitude above one.
    pub unstable: bool,
    /// State most aligned with the smallest near-zero mode, if any.
    pub near_zero_state: Option<usize>,
}

impl SpectralReport {
    pub fn spectral_radius(&self) -> f64 {
        self.eigenvalues
            .iter()
            .map(|l| l.norm())
            .fold(0.0, f64::max)
    }
}

/// Eigenvalues of `F`, instability flag and near-zero mode detection.
///
/// For a near-zero eigenvalue the left eigenvector is used: its dominant
/// component is the state whose next value is (almost) annihilated by `F`.
pub fn spectral_report(mats: &ModelMatrices) -> SpectralReport {
    let eigenvalues: Vec<Complex<f64>> = mats.f.complex_eigenvalues().iter().copied().collect();
    let unstable = eigenvalues.iter().any(|l| l.norm() > 1.0);

    let smallest = eigenvalues
        .iter()
        .copied()
        .filter(|l| l.norm() < ZERO_MODE_TOL)
        .min_by(|a, b| a.norm().total_cmp(&b.norm()));

    let near_zero_state = smallest.map(|lambda| {
        let shifted = mats.f.transpose() - Matrix5::identity() * lambda.re;
        let svd = shifted.svd(false, true);
        let v_t = svd.v_t.expect("requested v_t");
        let (imin, _) = svd
            .singular_values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("five singular values");
        let v = v_t.row(imin);
        v.iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(i, _)| i)
            .expect("nonempty eigenvector")
    });

    SpectralReport {
        eigenvalues,
        unstable,
        near_zero_state,
    }
}
