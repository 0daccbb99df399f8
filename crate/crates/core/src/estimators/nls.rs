//! Iteratively reweighted (generalized) least squares with a residual
//! covariance that depends on the estimate itself.

use nalgebra::{DMatrix, DVector};

use super::backcast::{least_squares, PhiSystem};
use super::omega::{build_omega, noise_schedule};
use super::{Method, SmoothedEstimate};
use crate::error::{Error, Result};
use crate::model::NoiseModel;

/// Relative ridge added to an ill-conditioned residual covariance.
pub const OMEGA_RIDGE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NlsConfig {
    /// Stop when the weighted objective changes by less than this,
    /// relative to `max(1, s)`.
    pub s_tol: f64,
    pub max_iters: usize,
}

impl Default for NlsConfig {
    fn default() -> Self {
        NlsConfig {
            s_tol: 1e-6,
            max_iters: 50,
        }
    }
}

impl NlsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.s_tol > 0.0) || self.max_iters < 1 {
            return Err(Error::InvalidInput(format!(
                "NLS needs s_tol > 0 and max_iters >= 1, got {} and {}",
                self.s_tol, self.max_iters
            )));
        }
        Ok(())
    }
}

/// Minimizes `(y - A x)^T Omega^{-1} (y - A x)` by Cholesky whitening.
/// Returns the minimizer and the minimal objective.
pub fn gls_solve(
    a: &DMatrix<f64>,
    y: &DVector<f64>,
    omega: &DMatrix<f64>,
) -> Result<(DVector<f64>, f64)> {
    let chol = match omega.clone().cholesky() {
        Some(c) => c,
        None => {
            let ridge = OMEGA_RIDGE * omega.diagonal().max();
            log::debug!("residual covariance not positive definite, adding ridge {ridge:e}");
            let mut reg = omega.clone();
            for i in 0..reg.nrows() {
                reg[(i, i)] += ridge;
            }
            reg.cholesky().ok_or(Error::SingularOmega)?
        }
    };
    let l = chol.l();
    let a_w = l.solve_lower_triangular(a).ok_or(Error::SingularOmega)?;
    let y_w = l.solve_lower_triangular(y).ok_or(Error::SingularOmega)?;
    let x = least_squares(&a_w, &y_w)?;
    let s = (y_w - a_w * &x).norm_squared();
    Ok((x, s))
}

/// Ordinary least-squares seed followed by reweighting with
/// `Omega(Q(F^{k-m} x))` until the objective settles.
///
/// `iterations` counts weighted solves; with a state-independent noise model
/// the second solve reproduces the first and the loop stops there.
pub fn nls_estimate<N: NoiseModel + ?Sized>(
    sys: &PhiSystem,
    noise: &N,
    cfg: &NlsConfig,
) -> Result<SmoothedEstimate> {
    cfg.validate()?;
    let mut x = least_squares(&sys.phi, &sys.y)?;
    let mut s = f64::INFINITY;
    let mut objective = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iters {
        let s0 = s;
        let schedule = noise_schedule(noise, &sys.model, &x, sys.m, sys.d)?;
        let omega = build_omega(
            &schedule,
            &sys.model,
            sys.m,
            sys.k_min,
            sys.d,
            noise.measurement_var(),
        )?;
        let (x_hat, s_new) = gls_solve(&sys.phi, &sys.y, &omega.omega)?;
        s = s_new;
        x = x_hat;
        iterations += 1;
        objective.push(s);
        if (s0 - s).abs() < cfg.s_tol * s.abs().max(1.0) {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("NLS did not converge within {} iterations", cfg.max_iters);
    }

    Ok(SmoothedEstimate {
        m: sys.m,
        x: sys.model.expand(&x),
        cov: None,
        method: Method::Nls,
        iterations,
        converged,
        objective,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::backcast::{build_phi, ols_estimate};
    use crate::model::{
        build_f, spectral_report, ConstantNoise, ModelParams, NoiseConfig, StateDependentNoise,
        StateVector,
    };
    use crate::simulator::{generate_measurements, simulate_lti};
    use nalgebra::Matrix5;

    fn system(seed: u64) -> PhiSystem {
        let p = ModelParams::default();
        let mats = build_f(&p).unwrap();
        let noise = NoiseConfig::default();
        let traj = simulate_lti(
            &p,
            &StateVector::new(0.0, 4.0, 4.0, 6.0, 2.0),
            42,
            &noise,
            seed,
        )
        .unwrap();
        let y = generate_measurements(&traj, &noise, seed + 1000).unwrap();
        build_phi(&mats, &y.y, 30, 42, 19, &spectral_report(&mats)).unwrap()
    }

    #[test]
    fn identity_weighting_reduces_to_ols() {
        let sys = system(1);
        let noise = ConstantNoise {
            q: Matrix5::zeros(),
            r: 1.0,
        };
        let nls = nls_estimate(&sys, &noise, &NlsConfig::default()).unwrap();
        let ols = ols_estimate(&sys, false).unwrap();
        assert!((nls.x - ols.x).norm() <= 1e-10 * ols.x.norm());
    }

    #[test]
    fn constant_noise_is_a_fixed_point() {
        let sys = system(2);
        let noise = ConstantNoise {
            q: Matrix5::identity() * 0.3,
            r: 0.2,
        };
        let nls = nls_estimate(&sys, &noise, &NlsConfig::default()).unwrap();
        assert!(nls.converged);
        assert_eq!(nls.iterations, 2);
        assert!((nls.objective[0] - nls.objective[1]).abs() < 1e-6);
    }

    #[test]
    fn state_dependent_run_converges() {
        let sys = system(3);
        let noise = StateDependentNoise::new(ModelParams::default(), NoiseConfig::default());
        let nls = nls_estimate(&sys, &noise, &NlsConfig::default()).unwrap();
        assert!(nls.converged, "objective trace {:?}", nls.objective);
        assert!(nls.iterations >= 2);
        assert_eq!(nls.method, Method::Nls);
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let sys = system(4);
        let noise = StateDependentNoise::new(ModelParams::default(), NoiseConfig::default());
        let cfg = NlsConfig {
            s_tol: 1e-300,
            max_iters: 1,
        };
        let nls = nls_estimate(&sys, &noise, &cfg).unwrap();
        assert!(!nls.converged);
        assert_eq!(nls.iterations, 1);
    }

    #[test]
    fn ridge_rescues_singular_omega() {
        let a = DMatrix::from_row_slice(3, 1, &[1.0, 1.0, 1.0]);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        // Rank-one covariance.
        let omega = DMatrix::from_element(3, 3, 1.0);
        let (x, _) = gls_solve(&a, &y, &omega).unwrap();
        assert!(x[0].is_finite());
    }

    #[test]
    fn rejects_bad_config() {
        let sys = system(5);
        let noise = ConstantNoise {
            q: Matrix5::zeros(),
            r: 1.0,
        };
        let cfg = NlsConfig {
            s_tol: 0.0,
            max_iters: 10,
        };
        assert!(nls_estimate(&sys, &noise, &cfg).is_err());
    }
}
