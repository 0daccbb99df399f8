use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter {name} = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("negative state component {component} = {value}")]
    NegativeState { component: &'static str, value: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("innovation variance is not positive at step {step} (S = {value})")]
    SingularInnovation { step: usize, value: f64 },

    #[error("predicted covariance is singular at step {step}")]
    SingularCovariance { step: usize },

    #[error("state matrix is singular and has no truncatable near-zero mode")]
    SingularDynamics,

    #[error("design matrix is rank deficient: numerical rank {rank} < {cols} columns")]
    RankDeficient { rank: usize, cols: usize },

    #[error("residual covariance is not positive definite, even after ridge regularization")]
    SingularOmega,

    #[error("degenerate samples: {0}")]
    DegenerateSamples(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
