//! Ensemble error study: simulate, measure, estimate with all three methods
//! and collect the estimation errors at the initialization index.

use rand::RngCore;
use rayon::prelude::*;

use super::kde::{kde_fit, mean, median, std_dev, KdeCurve};
use crate::config::{ExperimentConfig, Source};
use crate::error::Result;
use crate::estimators::{estimate_initial_state, Method};
use crate::model::{ModelParams, State, StateVector};
use crate::simulator::{
    generate_measurements, noise_free_measurements, sample_prior, simulate_ctmc, simulate_lti,
    stream_rng, MeasurementSeries, PriorRanges, Trajectory,
};

/// Independent seed for stream `stream` under `master`.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    stream_rng(master, stream).next_u64()
}

// Stream layout under the master seed.
const PRIOR_STREAM: u64 = u64::MAX;

fn sim_stream(realization: usize) -> u64 {
    2 * realization as u64
}

fn measurement_stream(realization: usize) -> u64 {
    2 * realization as u64 + 1
}

/// Errors (estimate - truth at `m`) of one method for one state component.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorEnsemble {
    pub method: Method,
    pub state: State,
    pub errors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: Method,
    pub state: State,
    pub mean_err: f64,
    pub std_err: f64,
    /// Median absolute error.
    pub mae: f64,
    pub n: usize,
    pub n_failed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorFailure {
    pub realization: usize,
    pub method: Method,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct StudyOutput {
    pub source: Source,
    pub params: ModelParams,
    /// Realization indices analyzed, in increasing order.
    pub analyzed: Vec<usize>,
    pub ensembles: Vec<ErrorEnsemble>,
    /// One entry per ensemble; `None` when the ensemble is too small or degenerate.
    pub kdes: Vec<Option<KdeCurve>>,
    pub summary: Vec<SummaryRow>,
    pub failures: Vec<EstimatorFailure>,
}

impl StudyOutput {
    pub fn ensemble(&self, method: Method, state: State) -> &ErrorEnsemble {
        self.ensembles
            .iter()
            .find(|e| e.method == method && e.state == state)
            .expect("every method/state pair is present")
    }

    pub fn summary_for(&self, method: Method, state: State) -> &SummaryRow {
        self.summary
            .iter()
            .find(|r| r.method == method && r.state == state)
            .expect("every method/state pair is present")
    }
}

/// Parameters used by a study: the configured ones, or one prior draw.
pub fn study_params(cfg: &ExperimentConfig, ranges: &PriorRanges) -> Result<ModelParams> {
    match cfg.params {
        Some(p) => Ok(p),
        None => sample_prior(ranges, derive_seed(cfg.seed, PRIOR_STREAM)),
    }
}

/// One synthetic realization with its measurements.
pub fn synthesize(
    cfg: &ExperimentConfig,
    params: &ModelParams,
    source: Source,
    realization: usize,
) -> Result<(Trajectory, MeasurementSeries)> {
    let sim_seed = derive_seed(cfg.seed, sim_stream(realization));
    let traj = match source {
        Source::Lti => simulate_lti(params, &cfg.x0, cfg.d, &cfg.noise, sim_seed)?,
        Source::Ctmc => {
            let x0 = StateVector::new(
                cfg.x0.i_c.round(),
                cfg.x0.i.round(),
                cfg.x0.a.round(),
                cfg.x0.e.round(),
                cfg.x0.phi,
            );
            simulate_ctmc(params, &x0, cfg.d, cfg.population, sim_seed)?
        }
    };
    let y = if cfg.measurement_noise {
        generate_measurements(
            &traj,
            &cfg.noise,
            derive_seed(cfg.seed, measurement_stream(realization)),
        )?
    } else {
        noise_free_measurements(&traj)
    };
    Ok((traj, y))
}

/// Indices of the top `fraction` realizations by final cumulative incidence,
/// returned in increasing index order.
pub fn select_top(final_incidence: &[f64], fraction: f64) -> Vec<usize> {
    let keep =
        ((final_incidence.len() as f64 * fraction).ceil() as usize).min(final_incidence.len());
    let mut order: Vec<usize> = (0..final_incidence.len()).collect();
    order.sort_by(|&a, &b| {
        final_incidence[b]
            .total_cmp(&final_incidence[a])
            .then(a.cmp(&b))
    });
    let mut kept: Vec<usize> = order.into_iter().take(keep).collect();
    kept.sort_unstable();
    kept
}

pub fn run_error_study(
    cfg: &ExperimentConfig,
    ranges: &PriorRanges,
    source: Source,
) -> Result<StudyOutput> {
    cfg.validate()?;
    let params = study_params(cfg, ranges)?;

    let data: Vec<(Trajectory, MeasurementSeries)> = (0..cfg.realizations)
        .into_par_iter()
        .map(|r| synthesize(cfg, &params, source, r))
        .collect::<Result<_>>()?;

    let finals: Vec<f64> = data.iter().map(|(t, _)| t.states[cfg.d].i_c).collect();
    let analyzed = select_top(&finals, cfg.top_fraction);

    type Outcome = Vec<(Method, std::result::Result<[f64; 5], String>)>;
    let outcomes: Vec<(usize, Outcome)> = analyzed
        .par_iter()
        .map(|&r| {
            let (traj, y) = &data[r];
            let truth = traj.states[cfg.m].to_vector();
            let per_method = Method::ALL
                .iter()
                .map(|&method| {
                    let res = estimate_initial_state(method, y, &params, cfg)
                        .map(|est| {
                            let err = est.x - truth;
                            [err[0], err[1], err[2], err[3], err[4]]
                        })
                        .map_err(|e| e.to_string());
                    (method, res)
                })
                .collect();
            (r, per_method)
        })
        .collect();

    let mut failures = Vec::new();
    let mut ensembles: Vec<ErrorEnsemble> = Method::ALL
        .iter()
        .flat_map(|&method| {
            State::ALL.iter().map(move |&state| ErrorEnsemble {
                method,
                state,
                errors: Vec::new(),
            })
        })
        .collect();
    for (r, per_method) in outcomes {
        for (method, res) in per_method {
            match res {
                Ok(err) => {
                    for ens in ensembles.iter_mut().filter(|e| e.method == method) {
                        let v = err[ens.state.index()];
                        if v.is_finite() {
                            ens.errors.push(v);
                        }
                    }
                }
                Err(message) => {
                    log::warn!("realization {r}: {method} failed: {message}");
                    failures.push(EstimatorFailure {
                        realization: r,
                        method,
                        message,
                    });
                }
            }
        }
    }

    let kdes = ensembles
        .iter()
        .map(|ens| match kde_fit(&ens.errors, cfg.kde_grid) {
            Ok(curve) => Some(curve),
            Err(e) => {
                log::warn!("skipping KDE for {} {}: {e}", ens.method, ens.state);
                None
            }
        })
        .collect();

    let summary = ensembles
        .iter()
        .map(|ens| {
            let n_failed = failures.iter().filter(|f| f.method == ens.method).count();
            let abs: Vec<f64> = ens.errors.iter().map(|v| v.abs()).collect();
            let (mean_err, mae) = if ens.errors.is_empty() {
                (f64::NAN, f64::NAN)
            } else {
                (mean(&ens.errors), median(&abs))
            };
            SummaryRow {
                method: ens.method,
                state: ens.state,
                mean_err,
                std_err: std_dev(&ens.errors),
                mae,
                n: ens.errors.len(),
                n_failed,
            }
        })
        .collect();

    Ok(StudyOutput {
        source,
        params,
        analyzed,
        ensembles,
        kdes,
        summary,
        failures,
    })
}
