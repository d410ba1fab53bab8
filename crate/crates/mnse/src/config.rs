//! Flat `key = value` configuration files.
//!
//! Lines starting with `#` and blank lines are ignored. Every key must be
//! known; a misspelt `mu4` is an error rather than a silently ignored line.
//! `preset = classification | retrieval` resets the objective weights before
//! the other keys are applied, wherever it appears in the file.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use mnse_core::dataset::{SynthConfig, Warp};
use mnse_core::eval::{Metric, SearchMode};
use mnse_core::optimizer::HyperParams;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("unknown key `{key}` (line {line})")]
    UnknownKey { key: String, line: usize },
    #[error("key `{key}` given twice (line {line})")]
    Duplicate { key: String, line: usize },
    #[error("invalid value for `{key}`: {reason}")]
    InvalidValue { key: String, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub value: String,
    pub line: usize,
}

/// Splits a config text into its entries without interpreting them.
pub fn parse_flat(text: &str) -> Result<BTreeMap<String, Entry>, ConfigError> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line: n + 1,
            reason: format!("expected `key = value`, got `{line}`"),
        })?;
        let key = key.trim().to_string();
        if key.is_empty() {
            return Err(ConfigError::Syntax {
                line: n + 1,
                reason: "empty key".into(),
            });
        }
        let entry = Entry {
            value: value.trim().to_string(),
            line: n + 1,
        };
        if out.insert(key.clone(), entry).is_some() {
            return Err(ConfigError::Duplicate { key, line: n + 1 });
        }
    }
    Ok(out)
}

pub const KEYS: &[&str] = &[
    "preset",
    "mu1",
    "mu2",
    "mu3",
    "mu4",
    "mu5",
    "dim",
    "max_iters",
    "tol",
    "sigma_grid_count",
    "sigma_grid_min",
    "sigma_grid_max",
    "theta",
    "initial_sigma",
    "classes",
    "modalities",
    "per_class",
    "dims",
    "separation",
    "noise",
    "warp",
    "cross_noise",
    "seed",
    "metric",
    "mode",
    "k",
    "trials",
    "pool",
];

/// Everything a command can be configured with.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub hyper: HyperParams,
    pub synth: SynthConfig,
    pub metric: Metric,
    pub mode: SearchMode,
    /// Retrieval depth.
    pub k: Option<usize>,
    pub trials: usize,
    /// Pool size for the ball-measure estimate in `validate`.
    pub pool: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            hyper: HyperParams::classification(),
            synth: SynthConfig::default(),
            metric: Metric::Cosine,
            mode: SearchMode::AllModalities,
            k: None,
            trials: 1000,
            pool: None,
        }
    }
}

fn invalid(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::InvalidValue {
        key: key.to_string(),
        reason: reason.into(),
    }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value
        .parse()
        .map_err(|_| invalid(key, format!("cannot parse `{value}`")))
}

fn list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError> {
    value.split(',').map(|s| num(key, s.trim())).collect()
}

pub fn parse_metric(value: &str) -> Result<Metric, ConfigError> {
    match value {
        "euclidean" => Ok(Metric::Euclidean),
        "cosine" => Ok(Metric::Cosine),
        _ => Err(invalid("metric", format!("expected euclidean or cosine, got `{value}`"))),
    }
}

pub fn parse_mode(value: &str) -> Result<SearchMode, ConfigError> {
    match value {
        "all" => Ok(SearchMode::AllModalities),
        "own" => Ok(SearchMode::OwnModality),
        _ => Err(invalid("mode", format!("expected all or own, got `{value}`"))),
    }
}

fn warp_name(w: Warp) -> &'static str {
    match w {
        Warp::Identity => "identity",
        Warp::Affine => "affine",
        Warp::Cubic => "cubic",
    }
}

fn join<T: std::fmt::Display>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

impl RunConfig {
    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let entries = parse_flat(text)?;
        let mut cfg = RunConfig::default();
        for (key, entry) in &entries {
            if !KEYS.contains(&key.as_str()) {
                return Err(ConfigError::UnknownKey {
                    key: key.clone(),
                    line: entry.line,
                });
            }
        }
        if let Some(p) = entries.get("preset") {
            cfg.set("preset", &p.value)?;
        }
        for (key, entry) in entries.iter().filter(|(k, _)| k.as_str() != "preset") {
            cfg.set(key, &entry.value)?;
        }
        Ok(cfg)
    }

    /// Applies one setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let w = &mut self.hyper.weights;
        match key {
            "preset" => {
                self.hyper.weights = match value {
                    "classification" => HyperParams::classification().weights,
                    "retrieval" => HyperParams::retrieval().weights,
                    _ => return Err(invalid(key, format!("expected classification or retrieval, got `{value}`"))),
                }
            }
            "mu1" => w.mu1 = num(key, value)?,
            "mu2" => w.mu2 = num(key, value)?,
            "mu3" => w.mu3 = num(key, value)?,
            "mu4" => w.mu4 = num(key, value)?,
            "mu5" => w.mu5 = num(key, value)?,
            "dim" => {
                self.hyper.dim = if value == "auto" { None } else { Some(num(key, value)?) }
            }
            "max_iters" => self.hyper.max_iters = num(key, value)?,
            "tol" => self.hyper.tol = num(key, value)?,
            "sigma_grid_count" => self.hyper.sigma_grid.count = num(key, value)?,
            "sigma_grid_min" => self.hyper.sigma_grid.min_factor = num(key, value)?,
            "sigma_grid_max" => self.hyper.sigma_grid.max_factor = num(key, value)?,
            "theta" => self.hyper.theta = Some(list(key, value)?),
            "initial_sigma" => self.hyper.initial_sigma = Some(list(key, value)?),
            "classes" => self.synth.num_classes = num(key, value)?,
            "modalities" => self.synth.num_modalities = num(key, value)?,
            "per_class" => self.synth.per_class = num(key, value)?,
            "dims" => self.synth.dims = list(key, value)?,
            "separation" => self.synth.separation = num(key, value)?,
            "noise" => self.synth.noise = num(key, value)?,
            "cross_noise" => self.synth.cross_noise = num(key, value)?,
            "warp" => {
                self.synth.warp = match value {
                    "identity" => Warp::Identity,
                    "affine" => Warp::Affine,
                    "cubic" => Warp::Cubic,
                    _ => return Err(invalid(key, format!("expected identity, affine or cubic, got `{value}`"))),
                }
            }
            "seed" => self.synth.seed = num(key, value)?,
            "metric" => self.metric = parse_metric(value)?,
            "mode" => self.mode = parse_mode(value)?,
            "k" => self.k = Some(num(key, value)?),
            "trials" => self.trials = num(key, value)?,
            "pool" => self.pool = Some(num(key, value)?),
            _ => {
                return Err(ConfigError::UnknownKey {
                    key: key.to_string(),
                    line: 0,
                })
            }
        }
        Ok(())
    }

    /// Checks the objective and evaluation settings.
    pub fn validate_training(&self) -> Result<(), ConfigError> {
        self.hyper.validate().map_err(core_to_config)?;
        if self.k == Some(0) {
            return Err(invalid("k", "must be at least 1"));
        }
        if self.pool == Some(0) {
            return Err(invalid("pool", "must be at least 1"));
        }
        Ok(())
    }

    /// Checks the generator settings.
    pub fn validate_synth(&self) -> Result<(), ConfigError> {
        self.synth.validate().map_err(core_to_config)
    }

    /// The generator settings in config syntax, as stored in `synth.cfg`.
    pub fn synth_text(&self) -> String {
        let s = &self.synth;
        let mut out = String::new();
        let _ = writeln!(out, "classes = {}", s.num_classes);
        let _ = writeln!(out, "modalities = {}", s.num_modalities);
        let _ = writeln!(out, "per_class = {}", s.per_class);
        let _ = writeln!(out, "dims = {}", join(&s.dims));
        let _ = writeln!(out, "separation = {}", s.separation);
        let _ = writeln!(out, "noise = {}", s.noise);
        let _ = writeln!(out, "warp = {}", warp_name(s.warp));
        let _ = writeln!(out, "cross_noise = {}", s.cross_noise);
        let _ = writeln!(out, "seed = {}", s.seed);
        out
    }
}

fn core_to_config(e: mnse_core::Error) -> ConfigError {
    match e {
        mnse_core::Error::InvalidParameter { name, reason } => invalid(name, reason),
        other => invalid("config", other.to_string()),
    }
}
