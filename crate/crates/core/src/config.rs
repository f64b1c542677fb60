//! Run configuration as a single TOML document.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::EnvConfig;
use crate::ic::IcDistribution;
use crate::learner::TrainConfig;
use crate::model::VdgnConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("cannot parse config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Settings for the evaluation suites.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Held-out initial conditions per suite.
    pub ics: usize,
    /// Refinement thresholds swept by the threshold baseline.
    pub thresholds: Vec<f64>,
    pub derefine: f64,
    /// Number of preferences `[α, 1 − α]`, evenly spaced, for multi-objective sweeps.
    pub preferences: usize,
    /// Decision intervals compared by the error-vs-time suite.
    pub tau_steps: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            ics: 30,
            thresholds: vec![5e-3, 5e-4, 5e-5, 5e-6, 5e-7, 5e-8],
            derefine: 4e-15,
            preferences: 20,
            tau_steps: vec![0.25, 0.05],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub output: PathBuf,
    pub env: EnvConfig,
    pub model: VdgnConfig,
    pub train: TrainConfig,
    pub ics: IcDistribution,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output: PathBuf::from("runs/default"),
            env: EnvConfig::default(),
            model: VdgnConfig::default(),
            train: TrainConfig::default(),
            ics: IcDistribution::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let parse = |message: String| ConfigError::Parse {
            path: origin.to_string(),
            message,
        };
        let raw: toml::Table = text.parse().map_err(|e: toml::de::Error| parse(e.message().to_string()))?;
        let mut cfg: RunConfig = RunConfig::deserialize(raw.clone()).map_err(|e| parse(e.message().to_string()))?;
        // model keys shared with env default to the env values when omitted
        let model = raw.get("model").and_then(|m| m.as_table());
        if !model.is_some_and(|m| m.contains_key("depth_max")) {
            cfg.model.depth_max = cfg.env.depth_max;
        }
        if !model.is_some_and(|m| m.contains_key("multi_objective")) {
            cfg.model.multi_objective = cfg.env.multi_objective;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serialises")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let inv = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.env.validate().map_err(|e| inv(&e))?;
        self.model.validate().map_err(|e| inv(&e))?;
        self.train.validate().map_err(|e| inv(&e))?;
        if self.model.depth_max != self.env.depth_max {
            return Err(ConfigError::Invalid(format!(
                "model.depth_max = {} but env.depth_max = {}",
                self.model.depth_max, self.env.depth_max
            )));
        }
        if self.model.multi_objective != self.env.multi_objective {
            return Err(ConfigError::Invalid("model.multi_objective and env.multi_objective differ".into()));
        }
        if self.ics.speed[0] > self.ics.speed[1] || self.ics.center[0] > self.ics.center[1] || self.ics.angle[0] > self.ics.angle[1] {
            return Err(ConfigError::Invalid("IC ranges must be [low, high]".into()));
        }
        if self.eval.tau_steps.iter().any(|t| !(*t > 0.0)) {
            return Err(ConfigError::Invalid("eval.tau_steps must be positive".into()));
        }
        if self.eval.ics == 0 {
            return Err(ConfigError::Invalid("eval.ics must be positive".into()));
        }
        if !(self.eval.derefine >= 0.0) || self.eval.thresholds.iter().any(|t| !(*t > self.eval.derefine)) {
            return Err(ConfigError::Invalid("every eval threshold must exceed eval.derefine ≥ 0".into()));
        }
        Ok(())
    }
}
