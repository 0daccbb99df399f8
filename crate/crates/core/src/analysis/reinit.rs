//! Re-initialization study: run the Markov chain forward from the initial
//! conditions produced by each estimator and compare the spread of the
//! resulting log-populations.

use rayon::prelude::*;

use super::kde::{interquartile_range, kde_fit, KdeCurve};
use super::study::derive_seed;
use crate::error::{Error, Result};
use crate::model::{ModelParams, State, StateVector};
use crate::simulator::simulate_ctmc;

/// States reported by the re-initialization study.
pub const REINIT_STATES: [State; 3] = [State::I, State::E, State::A];

/// Integer initial condition produced by one estimator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InitialCondition {
    pub label: String,
    pub i: u64,
    pub e: u64,
    pub a: u64,
}

impl InitialCondition {
    pub fn new(label: impl Into<String>, i: u64, e: u64, a: u64) -> Self {
        InitialCondition {
            label: label.into(),
            i,
            e,
            a,
        }
    }

    /// Chain start with zero incidence and the pressure at its quasi-steady
    /// level `I + theta_A A + theta_E E` for these populations.
    pub fn to_state(&self, params: &ModelParams) -> StateVector {
        let (i, e, a) = (self.i as f64, self.e as f64, self.a as f64);
        StateVector::new(0.0, i, a, e, i + params.theta_a * a + params.theta_e * e)
    }
}

/// Published per-county estimates (I, E, A) from the RTS, OLS and NLS
/// methods for one Markov-chain realization.
pub fn county_initials() -> Vec<(&'static str, Vec<InitialCondition>)> {
    type Row = (&'static str, [(u64, u64, u64); 3]);
    let rows: [Row; 3] = [
        ("Stockholm", [(2, 3, 3), (0, 4, 4), (0, 4, 4)]),
        ("Skåne", [(24, 28, 24), (7, 30, 31), (12, 30, 29)]),
        (
            "Västra Götaland",
            [(24, 39, 30), (36, 40, 28), (29, 40, 31)],
        ),
    ];
    rows.iter()
        .map(|(county, ests)| {
            let ics = ["RTS", "OLS", "NLS"]
                .iter()
                .zip(ests)
                .map(|(m, &(i, e, a))| InitialCondition::new(*m, i, e, a))
                .collect();
            (*county, ics)
        })
        .collect()
}

/// Density of one set of log-populations.
#[derive(Debug, Clone, PartialEq)]
pub enum Density {
    Kde(KdeCurve),
    /// All realizations ended in the same value.
    PointMass(f64),
}

impl Density {
    pub fn median(&self) -> f64 {
        match self {
            Density::Kde(c) => c.median(),
            Density::PointMass(v) => *v,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReinitEntry {
    pub label: String,
    pub state: State,
    /// `log10(population + 1)` at day `d`, one per realization.
    pub samples: Vec<f64>,
    pub density: Density,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReinitOutput {
    pub entries: Vec<ReinitEntry>,
}

impl ReinitOutput {
    pub fn entry(&self, label: &str, state: State) -> Option<&ReinitEntry> {
        self.entries
            .iter()
            .find(|e| e.label == label && e.state == state)
    }

    /// Largest pairwise difference of density medians across labels, and
    /// the interquartile range of all realizations pooled, for `state`.
    pub fn median_spread(&self, state: State) -> (f64, f64) {
        let medians: Vec<f64> = self
            .entries
            .iter()
            .filter(|e| e.state == state)
            .map(|e| e.density.median())
            .collect();
        let max = medians.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = medians.iter().copied().fold(f64::INFINITY, f64::min);
        let pooled: Vec<f64> = self
            .entries
            .iter()
            .filter(|e| e.state == state)
            .flat_map(|e| e.samples.iter().copied())
            .collect();
        (max - min, interquartile_range(&pooled))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReinitConfig {
    pub realizations: usize,
    pub d: usize,
    pub population: u64,
    pub seed: u64,
    pub kde_grid: usize,
}

impl Default for ReinitConfig {
    fn default() -> Self {
        ReinitConfig {
            realizations: 50,
            d: 42,
            population: 1_000_000,
            seed: 0,
            kde_grid: 256,
        }
    }
}

pub fn run_reinit_study(
    initials: &[InitialCondition],
    params: &ModelParams,
    cfg: &ReinitConfig,
) -> Result<ReinitOutput> {
    if cfg.realizations < 1 {
        return Err(Error::InvalidInput(
            "realizations must be at least 1".into(),
        ));
    }
    let n = cfg.realizations;
    let mut entries = Vec::new();
    for (idx, ic) in initials.iter().enumerate() {
        let x0 = ic.to_state(params);
        let finals: Vec<StateVector> = (0..n)
            .into_par_iter()
            .map(|r| {
                let seed = derive_seed(cfg.seed, (idx * n + r) as u64);
                simulate_ctmc(params, &x0, cfg.d, cfg.population, seed).map(|t| t.states[cfg.d])
            })
            .collect::<Result<_>>()?;
        for state in REINIT_STATES {
            let samples: Vec<f64> = finals
                .iter()
                .map(|s| (s.get(state) + 1.0).log10())
                .collect();
            let density = match kde_fit(&samples, cfg.kde_grid) {
                Ok(curve) => Density::Kde(curve),
                Err(Error::DegenerateSamples(_)) if !samples.is_empty() => {
                    Density::PointMass(samples[0])
                }
                Err(e) => return Err(e),
            };
            entries.push(ReinitEntry {
                label: ic.label.clone(),
                state,
                samples,
                density,
            });
        }
    }
    Ok(ReinitOutput { entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::kde::ks_two_sample;

    fn small() -> ReinitConfig {
        ReinitConfig {
            realizations: 40,
            d: 20,
            population: 100_000,
            seed: 5,
            kde_grid: 128,
        }
    }

    #[test]
    fn table_contains_stockholm_rts() {
        let t = county_initials();
        assert_eq!(t[0].0, "Stockholm");
        assert_eq!(t[0].1[0], InitialCondition::new("RTS", 2, 3, 3));
        assert_eq!(t[1].1[0], InitialCondition::new("RTS", 24, 28, 24));
    }

    #[test]
    fn zero_start_is_point_mass_at_zero() {
        let out = run_reinit_study(
            &[InitialCondition::new("zero", 0, 0, 0)],
            &ModelParams::default(),
            &small(),
        )
        .unwrap();
        for state in REINIT_STATES {
            assert_eq!(
                out.entry("zero", state).unwrap().density,
                Density::PointMass(0.0)
            );
        }
    }

    #[test]
    fn identical_starts_are_indistinguishable() {
        let ics = [
            InitialCondition::new("a", 24, 28, 24),
            InitialCondition::new("b", 24, 28, 24),
        ];
        let out = run_reinit_study(&ics, &ModelParams::default(), &small()).unwrap();
        for state in REINIT_STATES {
            let a = &out.entry("a", state).unwrap().samples;
            let b = &out.entry("b", state).unwrap().samples;
            assert_ne!(a, b);
            let (_, p) = ks_two_sample(a, b);
            assert!(p > 0.01, "{state}: p = {p}");
        }
    }

    #[test]
    fn densities_are_normalized() {
        let t = county_initials();
        let out = run_reinit_study(&t[1].1, &ModelParams::default(), &small()).unwrap();
        for e in &out.entries {
            if let Density::Kde(c) = &e.density {
                assert!((c.integral() - 1.0).abs() < 0.01);
            }
        }
    }
}
