//! Subcommand bodies. Each writes its outputs into a fresh run directory
//! next to a manifest of the resolved settings.

use std::io::Write;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use epinit_core::analysis::kde::quantile;
use epinit_core::analysis::reinit::REINIT_STATES;
use epinit_core::analysis::study::{study_params, synthesize};
use epinit_core::analysis::{
    county_initials, derive_seed, run_error_study, run_reinit_study, write_study_kdes,
    write_summary_csv, InitialCondition, KdeCsv, ReinitConfig, ReinitOutput,
};
use epinit_core::estimators::{estimate_initial_state, write_estimates_csv, EstimateRow};
use epinit_core::simulator::write_trajectories_csv;
use epinit_core::{ModelParams, Source};
use rayon::prelude::*;

use crate::incidence::{ingest_incidence, write_incidence, CountySeries};
use crate::output::{RunDir, MANIFEST};
use crate::settings::Settings;

fn params(settings: &Settings) -> Result<ModelParams> {
    study_params(&settings.experiment, &settings.ranges).context("simulator: parameter draw")
}

fn write_manifest(dir: &mut RunDir, settings: &Settings, params: &ModelParams) -> Result<()> {
    dir.write(MANIFEST, |w| {
        w.write_all(settings.render().as_bytes())?;
        if settings.sample_params {
            writeln!(w, "# sampled parameters")?;
            for (name, v) in ModelParams::NAMES.iter().zip(params.as_array()) {
                writeln!(w, "# {name} = {v}")?;
            }
        }
        Ok(())
    })
}

pub fn estimate(settings: &Settings, dir: &mut RunDir) -> Result<()> {
    let data = settings
        .data
        .as_deref()
        .ok_or_else(|| anyhow!("estimate: no incidence file given (--data)"))?;
    let mut counties = ingest_incidence(data, settings.threshold)?;
    if let Some(name) = &settings.county {
        counties.retain(|c| &c.county == name);
        if counties.is_empty() {
            bail!("incidence: county '{name}' not found in {}", data.display());
        }
    }
    let p = params(settings)?;
    let cfg = &settings.experiment;

    let jobs: Vec<(&CountySeries, _)> = counties
        .iter()
        .flat_map(|c| settings.methods.iter().map(move |&m| (c, m)))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(county, method)| {
            let y = county.to_measurements(cfg.noise.r);
            estimate_initial_state(method, &y, &p, cfg)
                .map(|estimate| EstimateRow {
                    county: county.county.clone(),
                    estimate,
                })
                .with_context(|| format!("estimators: {method} for county '{}'", county.county))
        })
        .collect::<Result<Vec<_>>>()?;

    write_manifest(dir, settings, &p)?;
    dir.write("estimates.csv", |w| Ok(write_estimates_csv(w, &rows)?))
}

pub fn simulate(settings: &Settings, dir: &mut RunDir) -> Result<()> {
    let p = params(settings)?;
    let cfg = &settings.experiment;
    let data = (0..cfg.realizations)
        .into_par_iter()
        .map(|r| synthesize(cfg, &p, settings.source, r))
        .collect::<epinit_core::Result<Vec<_>>>()
        .context("simulator")?;

    write_manifest(dir, settings, &p)?;
    let trajectories: Vec<_> = data.iter().map(|(t, _)| t.clone()).collect();
    dir.write("trajectories.csv", |w| {
        Ok(write_trajectories_csv(w, &trajectories)?)
    })?;
    dir.write("measurements.csv", |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["realization", "k", "y"])?;
        for (r, (_, y)) in data.iter().enumerate() {
            for (k, v) in y.y.iter().enumerate() {
                csv.write_record([r.to_string(), k.to_string(), v.to_string()])?;
            }
        }
        csv.flush()?;
        Ok(())
    })?;
    if settings.source == Source::Ctmc {
        let series: Vec<CountySeries> = trajectories
            .iter()
            .enumerate()
            .map(|(r, t)| CountySeries {
                county: format!("realization-{r}"),
                start: settings.start_date,
                cases: t.states.iter().map(|s| s.i_c as u64).collect(),
            })
            .collect();
        dir.write("incidence.csv", |w| write_incidence(w, &series))?;
    }
    Ok(())
}

pub fn study(settings: &Settings, dir: &mut RunDir) -> Result<()> {
    let out = run_error_study(&settings.experiment, &settings.ranges, settings.source)
        .context("analysis")?;
    write_manifest(dir, settings, &out.params)?;
    dir.write("kde.csv", |w| {
        Ok(write_study_kdes(w, settings.source.name(), &out)?)
    })?;
    dir.write("summary.csv", |w| Ok(write_summary_csv(w, &out.summary)?))?;
    dir.write("failures.csv", |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["realization", "method", "message"])?;
        for f in &out.failures {
            csv.write_record([
                f.realization.to_string(),
                f.method.name().to_string(),
                f.message.clone(),
            ])?;
        }
        csv.flush()?;
        Ok(())
    })
}

/// Initial conditions per county from an estimates CSV
/// (`county,method,I,E,A,...`), in order of first appearance.
pub fn read_initials(path: &Path) -> Result<Vec<(String, Vec<InitialCondition>)>> {
    let mut rdr = csv::Reader::from_path(path)
        .with_context(|| format!("initials: cannot open {}", path.display()))?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| anyhow!("initials {}: missing column '{name}'", path.display()))
    };
    let (c_county, c_method, c_i, c_e, c_a) = (
        col("county")?,
        col("method")?,
        col("I")?,
        col("E")?,
        col("A")?,
    );
    let mut groups: Vec<(String, Vec<InitialCondition>)> = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let count = |c: usize| {
            row[c].parse::<u64>().map_err(|e| {
                anyhow!(
                    "initials {}: line {line}: invalid count '{}': {e}",
                    path.display(),
                    &row[c]
                )
            })
        };
        let ic = InitialCondition::new(&row[c_method], count(c_i)?, count(c_e)?, count(c_a)?);
        match groups.iter_mut().find(|(c, _)| c == &row[c_county]) {
            Some((_, ics)) => ics.push(ic),
            None => groups.push((row[c_county].to_string(), vec![ic])),
        }
    }
    Ok(groups)
}

fn write_spread<W: Write>(out: W, results: &[(String, ReinitOutput)]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(out);
    csv.write_record([
        "study",
        "label",
        "state",
        "median",
        "q25",
        "q75",
        "max_median_diff",
        "pooled_iqr",
    ])?;
    for (county, out) in results {
        for state in REINIT_STATES {
            let (diff, iqr) = out.median_spread(state);
            for e in out.entries.iter().filter(|e| e.state == state) {
                csv.write_record([
                    county.clone(),
                    e.label.clone(),
                    state.name().to_string(),
                    e.density.median().to_string(),
                    quantile(&e.samples, 0.25).to_string(),
                    quantile(&e.samples, 0.75).to_string(),
                    diff.to_string(),
                    iqr.to_string(),
                ])?;
            }
        }
    }
    csv.flush()?;
    Ok(())
}

pub fn reinit(settings: &Settings, dir: &mut RunDir) -> Result<()> {
    let mut groups = match &settings.initials {
        Some(path) => read_initials(path)?,
        None => county_initials()
            .into_iter()
            .map(|(c, ics)| (c.to_string(), ics))
            .collect(),
    };
    if let Some(name) = &settings.county {
        groups.retain(|(c, _)| c == name);
        if groups.is_empty() {
            bail!("initials: county '{name}' not found");
        }
    }
    let p = params(settings)?;
    let cfg = &settings.experiment;
    let results = groups
        .iter()
        .enumerate()
        .map(|(idx, (county, ics))| {
            let rc = ReinitConfig {
                realizations: cfg.realizations,
                d: cfg.d,
                population: cfg.population,
                seed: derive_seed(cfg.seed, idx as u64),
                kde_grid: cfg.kde_grid,
            };
            run_reinit_study(ics, &p, &rc)
                .map(|out| (county.clone(), out))
                .with_context(|| format!("analysis: re-initialization for county '{county}'"))
        })
        .collect::<Result<Vec<_>>>()?;

    write_manifest(dir, settings, &p)?;
    dir.write("kde.csv", |w| {
        let mut kde = KdeCsv::new(w)?;
        for (county, out) in &results {
            for e in &out.entries {
                kde.density(county, &e.label, e.state.name(), &e.density)?;
            }
        }
        Ok(kde.finish()?)
    })?;
    dir.write("spread.csv", |w| write_spread(w, &results))
}
