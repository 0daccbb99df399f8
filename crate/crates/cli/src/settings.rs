//! Flat `key = value` run settings.
//!
//! Values are layered as protocol defaults, then a config file, then
//! command-line overrides. The resolved settings render back to the same
//! format as the run manifest, so a manifest can be fed to `--config` to
//! repeat a run.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use chrono::NaiveDate;
use epinit_core::estimators::Method;
use epinit_core::model::{ModelParams, NoiseConfig, StateVector, N_STATES};
use epinit_core::simulator::PriorRanges;
use epinit_core::{ExperimentConfig, Source};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Keys accepted in config files and `--set`, besides `prior.<param>`.
pub const KEYS: &[&str] = &[
    "command",
    "version",
    "source",
    "method",
    "data",
    "county",
    "threshold",
    "initials",
    "start_date",
    "d",
    "m",
    "k_min",
    "realizations",
    "seed",
    "q0",
    "r",
    "params",
    "sigma",
    "gamma_a",
    "gamma_i",
    "f0",
    "f1",
    "beta",
    "rho",
    "theta_a",
    "theta_e",
    "x0",
    "population",
    "measurement_noise",
    "top_fraction",
    "ols_nonneg",
    "init_cov_scale",
    "s_tol",
    "max_iters",
    "kde_grid",
];

/// Raw key/value pairs with a description of where each came from.
#[derive(Debug, Clone, Default)]
pub struct RawSettings {
    values: BTreeMap<String, (String, String)>,
}

impl RawSettings {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut raw = RawSettings::default();
        for (idx, line) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = match line.find('#') {
                Some(pos) => &line[..pos],
                None => line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                anyhow!("{origin}: line {lineno}: expected `key = value`, got '{line}'")
            })?;
            let key = key.trim();
            if key.is_empty() {
                bail!("{origin}: line {lineno}: empty key");
            }
            let at = format!("{origin}: line {lineno}");
            if raw.values.contains_key(key) {
                bail!("{at}: duplicate key '{key}'");
            }
            raw.values
                .insert(key.to_string(), (value.trim().to_string(), at));
        }
        Ok(raw)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("config: cannot read {}", path.display()))?;
        Self::parse(&text, &format!("config {}", path.display()))
    }

    /// Later values win.
    pub fn set(&mut self, key: &str, value: impl Into<String>, origin: &str) {
        self.values
            .insert(key.to_string(), (value.into(), origin.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|(v, _)| v.as_str())
    }

    fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.values.get(key) {
            None => Ok(None),
            Some((v, at)) => v
                .parse::<T>()
                .map(Some)
                .map_err(|e| anyhow!("{at}: invalid value '{v}' for '{key}': {e}")),
        }
    }

    fn list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.values.get(key) {
            None => Ok(None),
            Some((v, at)) => v
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|e| anyhow!("{at}: invalid number '{}' in '{key}': {e}", s.trim()))
                })
                .collect::<Result<Vec<_>>>()
                .map(Some),
        }
    }

    fn origin(&self, key: &str) -> &str {
        self.values
            .get(key)
            .map(|(_, at)| at.as_str())
            .unwrap_or("settings")
    }
}

fn parse_bool(s: &str) -> std::result::Result<bool, String> {
    match s {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        other => Err(format!("expected true or false, got '{other}'")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Flag(bool);

impl FromStr for Flag {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        parse_bool(s).map(Flag)
    }
}

/// Fully resolved settings for one command.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub command: String,
    pub source: Source,
    pub methods: Vec<Method>,
    pub data: Option<PathBuf>,
    pub county: Option<String>,
    /// National case count that defines day 0; first date in the file when absent.
    pub threshold: Option<u64>,
    pub initials: Option<PathBuf>,
    pub start_date: NaiveDate,
    /// Sample the parameters from `ranges` instead of using `experiment.params`.
    pub sample_params: bool,
    pub ranges: PriorRanges,
    pub experiment: ExperimentConfig,
}

impl Settings {
    pub fn resolve(command: &str, raw: &RawSettings) -> Result<Self> {
        for key in raw.values.keys() {
            let known = KEYS.contains(&key.as_str())
                || key
                    .strip_prefix("prior.")
                    .is_some_and(|p| ModelParams::NAMES.contains(&p));
            if !known {
                bail!("{}: unknown key '{key}'", raw.origin(key));
            }
        }
        if let Some(c) = raw.get("command") {
            if c != command {
                bail!(
                    "{}: settings were written for '{c}', not '{command}'",
                    raw.origin("command")
                );
            }
        }
        if let Some(v) = raw.get("version") {
            if v != TOOL_VERSION {
                log::warn!("settings were written by version {v}, running {TOOL_VERSION}");
            }
        }

        let source: Source = raw
            .parsed::<String>("source")?
            .map(|s| s.parse::<Source>())
            .transpose()
            .map_err(|e| anyhow!("{}: {e}", raw.origin("source")))?
            .unwrap_or(Source::Lti);
        // Re-initialization always runs the Markov chain.
        let mut cfg = if command == "reinit" || source == Source::Ctmc {
            ExperimentConfig::ctmc_protocol()
        } else {
            ExperimentConfig::lti_protocol()
        };

        let methods = match raw.get("method") {
            None | Some("all") => Method::ALL.to_vec(),
            Some(list) => list
                .split(',')
                .map(|m| m.trim().parse::<Method>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| anyhow!("{}: {e}", raw.origin("method")))?,
        };

        if let Some(v) = raw.parsed("d")? {
            cfg.d = v;
        }
        if let Some(v) = raw.parsed("m")? {
            cfg.m = v;
        }
        if let Some(v) = raw.parsed("k_min")? {
            cfg.k_min = v;
        }
        if let Some(v) = raw.parsed("realizations")? {
            cfg.realizations = v;
        }
        if let Some(v) = raw.parsed("seed")? {
            cfg.seed = v;
        }
        if let Some(q0) = raw.list("q0")? {
            cfg.noise.q0_diag = match q0.len() {
                1 => [q0[0]; N_STATES],
                N_STATES => q0.try_into().expect("length checked"),
                n => bail!(
                    "{}: q0 needs 1 or {N_STATES} values, got {n}",
                    raw.origin("q0")
                ),
            };
        }
        if let Some(v) = raw.parsed("r")? {
            cfg.noise.r = v;
        }
        let threshold: Option<u64> = raw.parsed("threshold")?;
        if let Some(t) = threshold {
            cfg.threshold = t;
        }

        let sample_params = match raw.get("params") {
            None | Some("fixed") => false,
            Some("prior") => true,
            Some(other) => bail!(
                "{}: params must be 'fixed' or 'prior', got '{other}'",
                raw.origin("params")
            ),
        };
        let mut params = ModelParams::default().as_array();
        let mut any_param = false;
        for (i, name) in ModelParams::NAMES.iter().enumerate() {
            if let Some(v) = raw.parsed(name)? {
                params[i] = v;
                any_param = true;
            }
        }
        if sample_params && any_param {
            bail!("settings: individual parameter values conflict with params = prior");
        }
        cfg.params = (!sample_params).then(|| ModelParams::from_array(params));

        let mut ranges = PriorRanges::default().as_array();
        for (i, name) in ModelParams::NAMES.iter().enumerate() {
            let key = format!("prior.{name}");
            if let Some(v) = raw.list(&key)? {
                if v.len() != 2 {
                    bail!("{}: {key} needs two values 'lo, hi'", raw.origin(&key));
                }
                ranges[i] = (v[0], v[1]);
            }
        }
        let ranges = PriorRanges::from_array(ranges);

        if let Some(x0) = raw.list("x0")? {
            if x0.len() != N_STATES {
                bail!(
                    "{}: x0 needs {N_STATES} values (I_c, I, A, E, phi)",
                    raw.origin("x0")
                );
            }
            cfg.x0 = StateVector::new(x0[0], x0[1], x0[2], x0[3], x0[4]);
        }
        if let Some(v) = raw.parsed("population")? {
            cfg.population = v;
        }
        if let Some(Flag(v)) = raw.parsed("measurement_noise")? {
            cfg.measurement_noise = v;
        }
        if let Some(v) = raw.parsed("top_fraction")? {
            cfg.top_fraction = v;
        }
        if let Some(Flag(v)) = raw.parsed("ols_nonneg")? {
            cfg.ols_nonneg = v;
        }
        if let Some(v) = raw.parsed("init_cov_scale")? {
            cfg.init_cov_scale = v;
        }
        if let Some(v) = raw.parsed("s_tol")? {
            cfg.nls.s_tol = v;
        }
        if let Some(v) = raw.parsed("max_iters")? {
            cfg.nls.max_iters = v;
        }
        if let Some(v) = raw.parsed("kde_grid")? {
            cfg.kde_grid = v;
        }
        let start_date = match raw.get("start_date") {
            None => NaiveDate::from_ymd_opt(2020, 1, 1).expect("valid date"),
            Some(s) => NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|e| {
                anyhow!(
                    "{}: invalid start_date '{s}': {e}",
                    raw.origin("start_date")
                )
            })?,
        };

        cfg.validate().context("config")?;
        ranges.validate().context("config")?;

        Ok(Settings {
            command: command.to_string(),
            source,
            methods,
            data: raw.get("data").map(PathBuf::from),
            county: raw.get("county").map(str::to_string),
            threshold,
            initials: raw.get("initials").map(PathBuf::from),
            start_date,
            sample_params,
            ranges,
            experiment: cfg,
        })
    }

    pub fn noise(&self) -> &NoiseConfig {
        &self.experiment.noise
    }

    /// Settings in config-file syntax, every key spelled out.
    pub fn render(&self) -> String {
        let cfg = &self.experiment;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            writeln!(out, "{k} = {v}").expect("write to string");
        };
        kv("command", self.command.clone());
        kv("version", TOOL_VERSION.to_string());
        kv("source", self.source.name().to_string());
        kv(
            "method",
            self.methods
                .iter()
                .map(|m| m.name().to_ascii_lowercase())
                .collect::<Vec<_>>()
                .join(","),
        );
        if let Some(p) = &self.data {
            kv("data", p.display().to_string());
        }
        if let Some(c) = &self.county {
            kv("county", c.clone());
        }
        if let Some(t) = self.threshold {
            kv("threshold", t.to_string());
        }
        if let Some(p) = &self.initials {
            kv("initials", p.display().to_string());
        }
        kv("start_date", self.start_date.format("%Y-%m-%d").to_string());
        kv("d", cfg.d.to_string());
        kv("m", cfg.m.to_string());
        kv("k_min", cfg.k_min.to_string());
        kv("realizations", cfg.realizations.to_string());
        kv("seed", cfg.seed.to_string());
        kv("q0", join(&cfg.noise.q0_diag));
        kv("r", cfg.noise.r.to_string());
        match &cfg.params {
            Some(p) => {
                kv("params", "fixed".into());
                for (name, v) in ModelParams::NAMES.iter().zip(p.as_array()) {
                    kv(name, v.to_string());
                }
            }
            None => kv("params", "prior".into()),
        }
        for (name, (lo, hi)) in ModelParams::NAMES.iter().zip(self.ranges.as_array()) {
            kv(&format!("prior.{name}"), format!("{lo},{hi}"));
        }
        let x = &cfg.x0;
        kv("x0", join(&[x.i_c, x.i, x.a, x.e, x.phi]));
        kv("population", cfg.population.to_string());
        kv("measurement_noise", cfg.measurement_noise.to_string());
        kv("top_fraction", cfg.top_fraction.to_string());
        kv("ols_nonneg", cfg.ols_nonneg.to_string());
        kv("init_cov_scale", cfg.init_cov_scale.to_string());
        kv("s_tol", cfg.nls.s_tol.to_string());
        kv("max_iters", cfg.nls.max_iters.to_string());
        kv("kde_grid", cfg.kde_grid.to_string());
        out
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comments_and_blank_lines() {
        let raw = RawSettings::parse("# header\n\nseed = 7  # trailing\n d=10\n", "t").unwrap();
        assert_eq!(raw.get("seed"), Some("7"));
        assert_eq!(raw.get("d"), Some("10"));
    }

    #[test]
    fn malformed_line_is_numbered() {
        let err = RawSettings::parse("seed = 1\nnonsense\n", "cfg").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        let err = RawSettings::parse("seed = 1\nseed = 2\n", "cfg").unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }

    #[test]
    fn unknown_and_invalid_keys() {
        let raw = RawSettings::parse("sede = 1\n", "cfg").unwrap();
        assert!(Settings::resolve("study", &raw)
            .unwrap_err()
            .to_string()
            .contains("unknown key"));
        let raw = RawSettings::parse("seed = x\n", "cfg").unwrap();
        let err = Settings::resolve("study", &raw).unwrap_err().to_string();
        assert!(err.contains("cfg: line 1") && err.contains("seed"), "{err}");
    }

    #[test]
    fn source_selects_protocol_defaults() {
        let raw = RawSettings::parse("source = ctmc\n", "cfg").unwrap();
        let s = Settings::resolve("study", &raw).unwrap();
        assert_eq!(s.experiment.realizations, 50);
        assert_eq!(s.noise().q0_diag, [2.0; 5]);
        assert_eq!(s.noise().r, 0.5);
    }

    #[test]
    fn rendered_settings_resolve_to_themselves() {
        let raw = RawSettings::parse(
            "source = ctmc\nq0 = 1,2,3,4,5\nbeta = 0.9\nmethod = rts,nls\nprior.rho = 0.1,0.2\ncounty = Skåne\n",
            "cfg",
        )
        .unwrap();
        let s = Settings::resolve("estimate", &raw).unwrap();
        let again = Settings::resolve(
            "estimate",
            &RawSettings::parse(&s.render(), "manifest").unwrap(),
        )
        .unwrap();
        assert_eq!(s, again);
        assert_eq!(s.render(), again.render());
    }

    #[test]
    fn prior_conflicts_with_fixed_values() {
        let raw = RawSettings::parse("params = prior\nsigma = 0.3\n", "cfg").unwrap();
        assert!(Settings::resolve("study", &raw).is_err());
        let raw = RawSettings::parse("params = prior\n", "cfg").unwrap();
        assert!(Settings::resolve("study", &raw)
            .unwrap()
            .experiment
            .params
            .is_none());
    }

    #[test]
    fn manifest_for_other_command_is_rejected() {
        let raw = RawSettings::parse("command = reinit\n", "cfg").unwrap();
        assert!(Settings::resolve("study", &raw).is_err());
    }
}
