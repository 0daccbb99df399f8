//! Kalman filter forward pass and Rauch-Tung-Striebel backward pass.
//!
//! The process-noise covariance for the prediction into step `k` is
//! evaluated at the a-priori estimate `x_{k|k-1}` because the true state is
//! unknown.

use nalgebra::{Matrix5, Vector5};

use super::{Method, SmoothedEstimate};
use crate::error::{Error, Result};
use crate::model::{ModelMatrices, NoiseModel};

/// Everything the backward pass needs from the forward pass.
///
/// State and covariance sequences are indexed by `k = 0..=d`; index 0 holds
/// the initial condition in both the prior and posterior slots. Innovation
/// quantities exist only for `k = 1..=d` and are stored at position `k - 1`.
#[derive(Debug, Clone)]
pub struct KalmanPass {
    pub x_prior: Vec<Vector5<f64>>,
    pub x_post: Vec<Vector5<f64>>,
    pub p_prior: Vec<Matrix5<f64>>,
    pub p_post: Vec<Matrix5<f64>>,
    pub innovations: Vec<f64>,
    pub gains: Vec<Vector5<f64>>,
    pub innovation_vars: Vec<f64>,
    pub init_state: Vector5<f64>,
    pub init_cov: Matrix5<f64>,
}

impl KalmanPass {
    pub fn horizon(&self) -> usize {
        self.x_post.len() - 1
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RtsOptions {
    /// Use a pseudo-inverse when a predicted covariance is singular instead
    /// of failing.
    pub pseudo_inverse_fallback: bool,
}

pub(crate) fn symmetrize(p: &Matrix5<f64>) -> Matrix5<f64> {
    (p + p.transpose()) * 0.5
}

/// Symmetric with eigenvalues `>= -tol * |trace|`.
pub fn is_symmetric_psd(p: &Matrix5<f64>, tol: f64) -> bool {
    let scale = p.trace().abs().max(f64::MIN_POSITIVE);
    if (p - p.transpose()).abs().max() > tol * scale {
        return false;
    }
    symmetrize(p)
        .symmetric_eigenvalues()
        .iter()
        .all(|&l| l >= -tol * scale)
}

pub fn kalman_forward<N: NoiseModel + ?Sized>(
    mats: &ModelMatrices,
    noise: &N,
    y: &[f64],
    init_state: &Vector5<f64>,
    init_cov: &Matrix5<f64>,
) -> Result<KalmanPass> {
    if y.is_empty() {
        return Err(Error::InvalidInput("measurement series is empty".into()));
    }
    if let Some(k) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "measurement y[{k}] is not finite"
        )));
    }
    if !is_symmetric_psd(init_cov, 1e-10) {
        return Err(Error::InvalidInput(
            "initial covariance must be symmetric PSD".into(),
        ));
    }

    let d = y.len() - 1;
    let r = noise.measurement_var();
    let f = &mats.f;
    let ht = mats.h.transpose();

    let mut pass = KalmanPass {
        x_prior: Vec::with_capacity(d + 1),
        x_post: Vec::with_capacity(d + 1),
        p_prior: Vec::with_capacity(d + 1),
        p_post: Vec::with_capacity(d + 1),
        innovations: Vec::with_capacity(d),
        gains: Vec::with_capacity(d),
        innovation_vars: Vec::with_capacity(d),
        init_state: *init_state,
        init_cov: *init_cov,
    };
    pass.x_prior.push(*init_state);
    pass.x_post.push(*init_state);
    pass.p_prior.push(*init_cov);
    pass.p_post.push(*init_cov);

    for k in 1..=d {
        let x_pred = f * pass.x_post[k - 1];
        let q = noise.process_cov(&x_pred);
        let p_pred = symmetrize(&(f * pass.p_post[k - 1] * f.transpose() + q));

        let innovation = y[k] - (mats.h * x_pred)[0];
        let s = (mats.h * p_pred * ht)[0] + r;
        if !(s > 0.0) {
            return Err(Error::SingularInnovation { step: k, value: s });
        }
        let gain = p_pred * ht / s;
        let x_upd = x_pred + gain * innovation;
        let a = Matrix5::identity() - gain * mats.h;
        let p_upd = symmetrize(&(a * p_pred * a.transpose() + gain * gain.transpose() * r));

        pass.x_prior.push(x_pred);
        pass.p_prior.push(p_pred);
        pass.x_post.push(x_upd);
        pass.p_post.push(p_upd);
        pass.innovations.push(innovation);
        pass.gains.push(gain);
        pass.innovation_vars.push(s);
    }
    Ok(pass)
}

/// Smoothed estimates for every `k = 0..=d`.
///
/// The covariance recursion is `P_{k|d} = P_{k|k} + C_k (P_{k+1|d} - P_{k+1|k}) C_k^T`.
pub fn rts_backward(pass: &KalmanPass, mats: &ModelMatrices) -> Result<Vec<SmoothedEstimate>> {
    rts_backward_with(pass, mats, RtsOptions::default())
}

pub fn rts_backward_with(
    pass: &KalmanPass,
    mats: &ModelMatrices,
    options: RtsOptions,
) -> Result<Vec<SmoothedEstimate>> {
    let d = pass.horizon();
    let mut xs = vec![Vector5::zeros(); d + 1];
    let mut ps = vec![Matrix5::zeros(); d + 1];
    xs[d] = pass.x_post[d];
    ps[d] = pass.p_post[d];

    for k in (0..d).rev() {
        let p_pred = &pass.p_prior[k + 1];
        // C_k^T = P_{k+1|k}^{-1} F P_{k|k}
        let rhs = mats.f * pass.p_post[k];
        let c_t = match p_pred.cholesky() {
            Some(chol) => chol.solve(&rhs),
            None if options.pseudo_inverse_fallback => {
                let pinv = p_pred
                    .pseudo_inverse(1e-12 * p_pred.norm())
                    .map_err(|_| Error::SingularCovariance { step: k + 1 })?;
                pinv * rhs
            }
            None => return Err(Error::SingularCovariance { step: k + 1 }),
        };
        let c = c_t.transpose();
        xs[k] = pass.x_post[k] + c * (xs[k + 1] - pass.x_prior[k + 1]);
        ps[k] = symmetrize(&(pass.p_post[k] + c * (ps[k + 1] - p_pred) * c_t));
    }

    Ok(xs
        .into_iter()
        .zip(ps)
        .enumerate()
        .map(|(k, (x, p))| SmoothedEstimate {
            m: k,
            x,
            cov: Some(p),
            method: Method::Rts,
            iterations: 0,
            converged: true,
            objective: Vec::new(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        build_f, ConstantNoise, ModelParams, NoiseConfig, StateDependentNoise, StateVector,
    };
    use crate::simulator::{generate_measurements, simulate_lti, simulate_lti_noise_free};

    fn diffuse() -> Matrix5<f64> {
        Matrix5::identity() * 1e4
    }

    #[test]
    fn zero_gain_limit_propagates_prior() {
        let p = ModelParams::default();
        let mats = build_f(&p).unwrap();
        let noise = ConstantNoise {
            q: Matrix5::zeros(),
            r: 1e12,
        };
        let x0 = Vector5::new(5.0, 3.0, 2.0, 4.0, 1.0);
        let y: Vec<f64> = (0..=20).map(|k| 100.0 + k as f64).collect();
        let pass = kalman_forward(&mats, &noise, &y, &x0, &(Matrix5::identity() * 1.0)).unwrap();
        for k in 0..=20 {
            let expect = mats.f.pow(k as u32) * x0;
            let err = (pass.x_post[k] - expect).norm() / expect.norm();
            assert!(err < 1e-6, "k={k} rel err {err}");
        }
    }

    #[test]
    fn measurement_dominant_limit_tracks_observation() {
        let p = ModelParams::default();
        let mats = build_f(&p).unwrap();
        let noise = StateDependentNoise::new(p, NoiseConfig::uniform(0.1, 1e-12));
        let traj = simulate_lti(
            &p,
            &StateVector::new(0.0, 5.0, 5.0, 5.0, 2.0),
            30,
            &NoiseConfig::default(),
            4,
        )
        .unwrap();
        let y = generate_measurements(&traj, &NoiseConfig::default(), 5)
            .unwrap()
            .y;
        let x0 = Vector5::repeat(y[0]);
        let pass = kalman_forward(&mats, &noise, &y, &x0, &diffuse()).unwrap();
        for k in 1..=30 {
            assert!((pass.x_post[k][0] - y[k]).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_nonpositive_innovation_variance() {
        let mats = build_f(&ModelParams::default()).unwrap();
        let noise = ConstantNoise {
            q: Matrix5::zeros(),
            r: 0.0,
        };
        let err = kalman_forward(
            &mats,
            &noise,
            &[0.0, 1.0],
            &Vector5::zeros(),
            &Matrix5::zeros(),
        );
        assert!(matches!(
            err,
            Err(Error::SingularInnovation { step: 1, .. })
        ));
    }

    #[test]
    fn rts_base_case_and_psd() {
        let p = ModelParams::default();
        let mats = build_f(&p).unwrap();
        let noise = StateDependentNoise::new(p, NoiseConfig::default());
        let traj = simulate_lti(
            &p,
            &StateVector::new(0.0, 5.0, 5.0, 5.0, 2.0),
            42,
            &NoiseConfig::default(),
            1,
        )
        .unwrap();
        let y = generate_measurements(&traj, &NoiseConfig::default(), 2)
            .unwrap()
            .y;
        let pass = kalman_forward(&mats, &noise, &y, &Vector5::repeat(y[0]), &diffuse()).unwrap();
        let smoothed = rts_backward(&pass, &mats).unwrap();
        assert_eq!(smoothed.len(), 43);
        assert_eq!(smoothed[42].x, pass.x_post[42]);
        for k in 0..=42 {
            assert!(is_symmetric_psd(&pass.p_prior[k], 1e-8));
            assert!(is_symmetric_psd(&pass.p_post[k], 1e-8));
            assert!(is_symmetric_psd(smoothed[k].cov.as_ref().unwrap(), 1e-8));
        }
    }

    #[test]
    fn rts_recovers_noise_free_trajectory() {
        let p = ModelParams::default();
        let mats = build_f(&p).unwrap();
        let x0 = StateVector::new(3.0, 4.0, 6.0, 8.0, 2.0);
        let traj = simulate_lti_noise_free(&p, &x0, 42).unwrap();
        let y: Vec<f64> = traj.states.iter().map(|s| s.i_c).collect();
        let noise = ConstantNoise {
            q: Matrix5::zeros(),
            r: 1e-12,
        };
        let pass = kalman_forward(&mats, &noise, &y, &Vector5::repeat(y[0]), &diffuse()).unwrap();
        let smoothed = rts_backward_with(
            &pass,
            &mats,
            RtsOptions {
                pseudo_inverse_fallback: true,
            },
        )
        .unwrap();
        for k in 5..=42 {
            let truth = traj.states[k].to_vector();
            let err = (smoothed[k].x - truth).norm() / truth.norm();
            assert!(err < 1e-4, "k={k} rel err {err}");
        }
    }
}
