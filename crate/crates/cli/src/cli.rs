use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};

use crate::commands;
use crate::output::{create_run_dir, output_root, RunDir, OUT_ENV};
use crate::settings::{RawSettings, Settings};

#[derive(Debug, Parser)]
#[command(
    name = "epinit",
    version,
    about = "Initial-state estimation from cumulative incidence"
)]
pub struct Cli {
    /// Root of the run directories [env: EPINIT_OUT, default: out].
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Worker threads; all cores by default.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Increase log verbosity.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate initial states from a county incidence file.
    Estimate(RunArgs),
    /// Generate synthetic trajectories and measurements.
    Simulate(RunArgs),
    /// Run an ensemble error study.
    Study(RunArgs),
    /// Re-initialize the Markov chain from estimated initial conditions.
    Reinit(RunArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Estimate(_) => "estimate",
            Command::Simulate(_) => "simulate",
            Command::Study(_) => "study",
            Command::Reinit(_) => "reinit",
        }
    }

    pub fn args(&self) -> &RunArgs {
        match self {
            Command::Estimate(a)
            | Command::Simulate(a)
            | Command::Study(a)
            | Command::Reinit(a) => a,
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// Settings file; a previous run's manifest.txt works.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one setting, KEY=VALUE; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub realizations: Option<usize>,
    /// Last measurement day.
    #[arg(long)]
    pub d: Option<usize>,
    /// Initialization day.
    #[arg(long)]
    pub m: Option<usize>,
    /// First day used by the batch estimators.
    #[arg(long)]
    pub k_min: Option<usize>,
    /// Process-noise floor, one value or five comma-separated.
    #[arg(long)]
    pub q0: Option<String>,
    /// Measurement-noise variance.
    #[arg(long)]
    pub r: Option<f64>,
    /// Synthetic data source: lti or ctmc.
    #[arg(long)]
    pub source: Option<String>,
    /// Estimators, comma-separated (rts, ols, nls) or all.
    #[arg(long)]
    pub method: Option<String>,
    /// County incidence CSV.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub county: Option<String>,
    /// Summed case count that defines day 0.
    #[arg(long)]
    pub threshold: Option<u64>,
    /// Estimates CSV with initial conditions for reinit.
    #[arg(long)]
    pub initials: Option<PathBuf>,
}

impl RunArgs {
    /// Config file first, then `--set`, then dedicated flags.
    pub fn raw_settings(&self) -> Result<RawSettings> {
        let mut raw = match &self.config {
            Some(path) => RawSettings::load(path)?,
            None => RawSettings::default(),
        };
        for item in &self.set {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| anyhow!("--set: expected KEY=VALUE, got '{item}'"))?;
            raw.set(k.trim(), v.trim(), &format!("--set {}", k.trim()));
        }
        let flags: [(&str, Option<String>); 13] = [
            ("seed", self.seed.map(|v| v.to_string())),
            ("realizations", self.realizations.map(|v| v.to_string())),
            ("d", self.d.map(|v| v.to_string())),
            ("m", self.m.map(|v| v.to_string())),
            ("k_min", self.k_min.map(|v| v.to_string())),
            ("q0", self.q0.clone()),
            ("r", self.r.map(|v| v.to_string())),
            ("source", self.source.clone()),
            ("method", self.method.clone()),
            ("data", self.data.as_ref().map(|p| p.display().to_string())),
            ("county", self.county.clone()),
            ("threshold", self.threshold.map(|v| v.to_string())),
            (
                "initials",
                self.initials.as_ref().map(|p| p.display().to_string()),
            ),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                raw.set(key, v, &format!("--{}", key.replace('_', "-")));
            }
        }
        Ok(raw)
    }
}

/// Runs one command into a fresh run directory and returns its path.
pub fn run(cli: &Cli) -> Result<PathBuf> {
    let name = cli.command.name();
    let settings = Settings::resolve(name, &cli.command.args().raw_settings()?)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.workers {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().context("cannot start worker pool")?;
    let root = output_root(cli.out_dir.as_deref());
    log::info!(
        "writing under {} (override with --out-dir or {OUT_ENV})",
        root.display()
    );
    pool.install(|| execute(name, &settings, &root))
}

pub fn execute(name: &str, settings: &Settings, root: &Path) -> Result<PathBuf> {
    let mut dir = RunDir::new(create_run_dir(root, name)?);
    let result = match name {
        "estimate" => commands::estimate(settings, &mut dir),
        "simulate" => commands::simulate(settings, &mut dir),
        "study" => commands::study(settings, &mut dir),
        "reinit" => commands::reinit(settings, &mut dir),
        other => Err(anyhow!("unknown command '{other}'")),
    };
    if let Err(e) = result {
        // Leave no half-written run behind.
        let _ = std::fs::remove_dir_all(&dir.path);
        return Err(e);
    }
    log::info!("wrote {}", dir.files.join(", "));
    Ok(dir.path)
}
