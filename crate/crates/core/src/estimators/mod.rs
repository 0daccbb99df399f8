//! Fixed-interval smoothing of the state at the initialization index.
//!
//! Three methods are provided: a Kalman forward pass followed by a
//! Rauch-Tung-Striebel backward pass, ordinary least squares on the
//! backcasting system, and nonlinear (iteratively reweighted) least squares
//! with a state-dependent residual covariance.

pub mod backcast;
pub mod kalman;
pub mod nls;
pub mod omega;

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::{Matrix5, Vector5};

pub use backcast::{
    build_phi, least_squares, nonnegative_least_squares, ols_estimate, BackcastModel, PhiSystem,
};
pub use kalman::{kalman_forward, rts_backward, rts_backward_with, KalmanPass, RtsOptions};
pub use nls::{gls_solve, nls_estimate, NlsConfig};
pub use omega::{build_omega, noise_schedule, omega_element, OmegaMatrix, OutputPowers};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::model::{build_f, spectral_report, ModelParams, NoiseModel, State, StateDependentNoise};
use crate::simulator::MeasurementSeries;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Rts,
    Ols,
    Nls,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Rts, Method::Ols, Method::Nls];

    pub fn name(self) -> &'static str {
        match self {
            Method::Rts => "RTS",
            Method::Ols => "OLS",
            Method::Nls => "NLS",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rts" => Ok(Method::Rts),
            "ols" => Ok(Method::Ols),
            "nls" => Ok(Method::Nls),
            other => Err(Error::InvalidInput(format!("unknown method '{other}'"))),
        }
    }
}

/// Estimate of the full state at index `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedEstimate {
    pub m: usize,
    pub x: Vector5<f64>,
    /// Smoothed covariance; only the RTS smoother provides one.
    pub cov: Option<Matrix5<f64>>,
    pub method: Method,
    /// Weighted solves performed (NLS only).
    pub iterations: usize,
    pub converged: bool,
    /// Objective after each solve.
    pub objective: Vec<f64>,
}

impl SmoothedEstimate {
    pub fn get(&self, s: State) -> f64 {
        self.x[s.index()]
    }
}

/// Kalman + RTS over the full series, estimate extracted at `m`.
pub fn rts_estimate<N: NoiseModel + ?Sized>(
    params: &ModelParams,
    noise: &N,
    y: &[f64],
    m: usize,
    init_cov_scale: f64,
) -> Result<SmoothedEstimate> {
    if m >= y.len() {
        return Err(Error::InvalidInput(format!(
            "initialization index {m} outside series of length {}",
            y.len()
        )));
    }
    let mats = build_f(params)?;
    let x0 = Vector5::repeat(y[0]);
    let p0 = Matrix5::identity() * init_cov_scale;
    let pass = kalman_forward(&mats, noise, y, &x0, &p0)?;
    let mut smoothed = rts_backward(&pass, &mats)?;
    Ok(smoothed.swap_remove(m))
}

/// Uniform entry point over the three methods.
///
/// RTS consumes `y[0..=d]`; the batch methods use `y[k_min..=d]` with
/// near-zero-mode truncation.
pub fn estimate_initial_state(
    method: Method,
    y: &MeasurementSeries,
    params: &ModelParams,
    cfg: &ExperimentConfig,
) -> Result<SmoothedEstimate> {
    cfg.validate()?;
    if y.len() < cfg.d + 1 {
        return Err(Error::InvalidInput(format!(
            "measurement series has {} points, need d + 1 = {}",
            y.len(),
            cfg.d + 1
        )));
    }
    let noise = StateDependentNoise::new(*params, cfg.noise);
    let series = &y.y[..=cfg.d];
    match method {
        Method::Rts => rts_estimate(params, &noise, series, cfg.m, cfg.init_cov_scale),
        Method::Ols | Method::Nls => {
            let mats = build_f(params)?;
            let spectral = spectral_report(&mats);
            let sys = build_phi(&mats, series, cfg.m, cfg.d, cfg.k_min, &spectral)?;
            if method == Method::Ols {
                ols_estimate(&sys, cfg.ols_nonneg)
            } else {
                nls_estimate(&sys, &noise, &cfg.nls)
            }
        }
    }
}

/// One exported estimate row.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRow {
    pub county: String,
    pub estimate: SmoothedEstimate,
}

/// Population counts as exported: clamped at zero and rounded.
pub fn export_count(v: f64) -> i64 {
    v.max(0.0).round() as i64
}

/// CSV with columns `county,method,I,E,A,I_c,phi,converged,iterations`.
/// Populations are clamped at zero and rounded; `phi` is clamped only.
pub fn write_estimates_csv<W: Write>(out: W, rows: &[EstimateRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "county",
        "method",
        "I",
        "E",
        "A",
        "I_c",
        "phi",
        "converged",
        "iterations",
    ])?;
    for row in rows {
        let e = &row.estimate;
        w.write_record([
            row.county.clone(),
            e.method.name().to_string(),
            export_count(e.get(State::I)).to_string(),
            export_count(e.get(State::E)).to_string(),
            export_count(e.get(State::A)).to_string(),
            export_count(e.get(State::Ic)).to_string(),
            e.get(State::Phi).max(0.0).to_string(),
            e.converged.to_string(),
            e.iterations.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
