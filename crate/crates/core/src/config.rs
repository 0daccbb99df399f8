use crate::error::{Error, Result};
use crate::estimators::NlsConfig;
use crate::model::{ModelParams, NoiseConfig, StateVector};

/// Which generator produces synthetic data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Lti,
    Ctmc,
}

impl Source {
    pub fn name(self) -> &'static str {
        match self {
            Source::Lti => "lti",
            Source::Ctmc => "ctmc",
        }
    }
}

impl std::str::FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lti" => Ok(Source::Lti),
            "ctmc" => Ok(Source::Ctmc),
            other => Err(Error::InvalidInput(format!("unknown source '{other}'"))),
        }
    }
}

/// Settings shared by estimation runs and ensemble studies.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Last measurement index.
    pub d: usize,
    /// Initialization index.
    pub m: usize,
    /// First measurement used by the batch methods.
    pub k_min: usize,
    pub realizations: usize,
    pub noise: NoiseConfig,
    pub seed: u64,
    /// National case count that defines day 0 when ingesting real data.
    pub threshold: u64,

    /// Model parameters; sampled once from the prior when absent.
    pub params: Option<ModelParams>,
    /// Initial state of the synthetic runs.
    pub x0: StateVector,
    /// Population of the Markov-chain stand-in.
    pub population: u64,
    /// Add Gaussian measurement noise with variance `noise.r` to synthetic data.
    pub measurement_noise: bool,
    /// Fraction of realizations, ranked by final incidence, kept for analysis.
    pub top_fraction: f64,
    pub ols_nonneg: bool,
    /// Diagonal of the initial Kalman covariance.
    pub init_cov_scale: f64,
    pub nls: NlsConfig,
    pub kde_grid: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            d: 42,
            m: 30,
            k_min: 19,
            realizations: 100,
            noise: NoiseConfig::default(),
            seed: 0,
            threshold: 100,
            params: Some(ModelParams::default()),
            x0: StateVector::new(0.0, 2.0, 2.0, 4.0, 2.0),
            population: 1_000_000,
            measurement_noise: true,
            top_fraction: 1.0,
            ols_nonneg: false,
            init_cov_scale: 1e4,
            nls: NlsConfig::default(),
            kde_grid: 256,
        }
    }
}

impl ExperimentConfig {
    /// Linear-model synthetic-data protocol.
    pub fn lti_protocol() -> Self {
        ExperimentConfig::default()
    }

    /// Markov-chain synthetic-data protocol: larger model discrepancy and
    /// exact case counts.
    pub fn ctmc_protocol() -> Self {
        ExperimentConfig {
            realizations: 50,
            noise: NoiseConfig::uniform(2.0, 0.5),
            measurement_noise: false,
            ..ExperimentConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k_min <= self.m && self.m <= self.d) {
            return Err(Error::InvalidInput(format!(
                "need k_min <= m <= d, got k_min={}, m={}, d={}",
                self.k_min, self.m, self.d
            )));
        }
        if self.realizations < 1 {
            return Err(Error::InvalidInput(
                "realizations must be at least 1".into(),
            ));
        }
        if !(self.top_fraction > 0.0 && self.top_fraction <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "top_fraction must lie in (0, 1], got {}",
                self.top_fraction
            )));
        }
        if !(self.init_cov_scale > 0.0) || !self.init_cov_scale.is_finite() {
            return Err(Error::InvalidInput(
                "init_cov_scale must be positive".into(),
            ));
        }
        if self.kde_grid < 2 {
            return Err(Error::InvalidInput("kde_grid must be at least 2".into()));
        }
        self.noise.validate()?;
        self.nls.validate()?;
        if let Some(p) = &self.params {
            p.validate()?;
        }
        self.x0.check_nonnegative()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        ExperimentConfig::default().validate().unwrap();
        ExperimentConfig::ctmc_protocol().validate().unwrap();
    }

    #[test]
    fn rejects_inverted_window() {
        let cfg = ExperimentConfig {
            k_min: 31,
            ..ExperimentConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = ExperimentConfig {
            realizations: 0,
            ..ExperimentConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
