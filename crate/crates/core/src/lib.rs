//! Initial-state estimation for an epidemic compartment model observed only
//! through cumulative incidence.
//!
//! The crate is organised bottom-up:
//!
//! - [`model`]: the discrete-time linear approximation, its state-dependent
//!   process-noise covariance and structural analysis (observability, spectrum).
//! - [`simulator`]: synthetic data from the linear model with Poisson channel
//!   noise and from an integer tau-leap Markov chain.
//! - [`estimators`]: RTS smoothing, ordinary least squares and nonlinear least
//!   squares estimates of the state at the initialization index.
//! - [`analysis`]: ensemble error studies, kernel density estimates and the
//!   re-initialization study.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analysis;
pub mod config;
pub mod error;
pub mod estimators;
pub mod model;
pub mod simulator;

pub use config::{ExperimentConfig, Source};
pub use error::{Error, Result};
pub use estimators::{estimate_initial_state, Method, SmoothedEstimate};
pub use model::{
    build_f, process_noise_cov, spectral_report, ModelMatrices, ModelParams, NoiseConfig, State,
    StateVector,
};
pub use simulator::{MeasurementSeries, PriorRanges, Trajectory};
