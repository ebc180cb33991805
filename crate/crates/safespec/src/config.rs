//! Run configuration files.
//!
//! A configuration is a TOML document with top-level run keys and optional
//! `[cmdp]`, `[policy]`, `[spi]` and `[model]` sections. Every key has a
//! default, so an empty file is a valid cart-pole balance run:
//!
//! ```toml
//! env = "cartpole-balance"
//! algorithm = "smfpi"
//! shaping = "hprs"
//! seeds = [0, 1, 2, 3, 4]
//! output = "runs/balance"
//!
//! [spi]
//! lr = 0.25
//! episodes_per_epoch = 50
//! ```
//!
//! A relative `task` path is resolved against the directory holding the
//! configuration file. Without `task` the preset's built-in task is used.

use std::fs;
use std::path::{Path, PathBuf};

use safespec_core::cmdp::CmdpConfig;
use safespec_core::env::{ActionSpace, Environment, FeatureMap, Preset};
use safespec_core::policy::{Architecture, Head};
use safespec_core::spi::{
    Algorithm, EnsembleConfig, ModelConfig, SafetyMode, SpiConfig, ThresholdMode,
};
use safespec_core::{parse_task, TaskSpec};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("task file {path}: {message}")]
    Task { path: PathBuf, message: String },
    #[error("{0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Task file; the preset's own task when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub task: Option<PathBuf>,
    pub env: String,
    pub algorithm: String,
    /// `none` or `hprs`.
    pub shaping: String,
    pub seeds: Vec<u64>,
    pub output: PathBuf,
    pub cmdp: CmdpSection,
    pub policy: PolicySection,
    pub spi: SpiSection,
    pub model: ModelSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            task: None,
            env: Preset::CartpoleBalance.name().into(),
            algorithm: Algorithm::Smfpi.name().into(),
            shaping: "hprs".into(),
            seeds: vec![0],
            output: PathBuf::from("runs/default"),
            cmdp: CmdpSection::default(),
            policy: PolicySection::default(),
            spi: SpiSection::default(),
            model: ModelSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CmdpSection {
    pub gamma: f64,
    pub horizon: usize,
    /// Per-constraint `d_i`; one value is broadcast to every constraint.
    pub thresholds: Vec<f64>,
}

impl Default for CmdpSection {
    fn default() -> Self {
        let d = CmdpConfig::with_defaults(1);
        CmdpSection {
            gamma: d.gamma,
            horizon: d.horizon,
            thresholds: d.thresholds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicySection {
    pub hidden: Vec<usize>,
    pub log_std_init: f64,
}

impl Default for PolicySection {
    fn default() -> Self {
        PolicySection {
            hidden: vec![32, 32],
            log_std_init: -0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpiSection {
    pub epochs: usize,
    pub inner_rounds: usize,
    pub updates_per_round: usize,
    pub split_fraction: f64,
    pub delta: f64,
    pub lr: f64,
    pub episodes_per_epoch: usize,
    pub min_ess_fraction: f64,
    /// Fixed release thresholds `ρ_+`; on-policy bounds when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho_plus: Option<Vec<f64>>,
}

impl Default for SpiSection {
    fn default() -> Self {
        let d = SpiConfig::default();
        SpiSection {
            epochs: d.epochs,
            inner_rounds: d.inner_rounds,
            updates_per_round: d.updates_per_round,
            split_fraction: d.split_fraction,
            delta: d.delta,
            lr: d.lr,
            episodes_per_epoch: d.episodes_per_epoch,
            min_ess_fraction: d.min_ess_fraction,
            rho_plus: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub horizon: usize,
    pub particles: usize,
    pub starts: usize,
    pub buffer_capacity: usize,
    pub warm_start: bool,
    pub refit_each_round: bool,
    /// `pessimistic` or `lagrangian`.
    pub safety_mode: String,
    pub penalty: f64,
    pub lambda_init: f64,
    pub lambda_lr: f64,
    pub members: usize,
    pub hidden: Vec<usize>,
    pub fit_epochs: usize,
    pub fit_lr: f64,
    pub batch_size: usize,
    pub min_transitions: usize,
    pub holdout_fraction: f64,
    pub bootstrap: bool,
    pub log_std_min: f64,
    pub log_std_max: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        let e = m.ensemble;
        ModelSection {
            horizon: m.horizon,
            particles: m.particles,
            starts: m.starts,
            buffer_capacity: m.buffer_capacity,
            warm_start: m.warm_start,
            refit_each_round: m.refit_each_round,
            safety_mode: m.safety_mode.name().into(),
            penalty: m.penalty,
            lambda_init: m.lambda_init,
            lambda_lr: m.lambda_lr,
            members: e.members,
            hidden: e.hidden,
            fit_epochs: e.epochs,
            fit_lr: e.lr,
            batch_size: e.batch_size,
            min_transitions: e.min_transitions,
            holdout_fraction: e.holdout_fraction,
            bootstrap: e.bootstrap,
            log_std_min: e.log_std_min,
            log_std_max: e.log_std_max,
        }
    }
}

/// A configuration with names resolved and the task loaded.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub preset: Preset,
    /// Bound to the environment's feature names.
    pub task: TaskSpec,
    /// Source text of the task as written.
    pub task_text: String,
    pub algorithm: Algorithm,
    pub shaping: bool,
    pub seeds: Vec<u64>,
    pub cmdp: CmdpConfig,
    pub architecture: Architecture,
    pub log_std_init: f64,
    pub spi: SpiConfig,
    pub output: PathBuf,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    /// Reads a file and makes a relative `task` path relative to it.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(task) = &cfg.task {
            if task.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                cfg.task = Some(base.join(task));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn resolve(&self) -> Result<Experiment, ConfigError> {
        let preset = Preset::parse(&self.env).map_err(|e| invalid(e.to_string()))?;
        let algorithm = Algorithm::parse(&self.algorithm).ok_or_else(|| {
            invalid(format!(
                "unknown algorithm `{}` (expected vpg, smfpi or smbpi)",
                self.algorithm
            ))
        })?;
        let shaping = match self.shaping.as_str() {
            "none" => false,
            "hprs" => true,
            other => return Err(invalid(format!("unknown shaping `{other}` (none or hprs)"))),
        };
        if self.seeds.is_empty() {
            return Err(invalid("seeds must not be empty"));
        }
        let task_text = match &self.task {
            Some(path) => fs::read_to_string(path).map_err(|source| ConfigError::Io {
                path: path.clone(),
                source,
            })?,
            None => preset.task_text().to_string(),
        };
        let task_path = self
            .task
            .clone()
            .unwrap_or_else(|| PathBuf::from("<preset>"));
        let task = parse_task(&task_text).map_err(|e| ConfigError::Task {
            path: task_path.clone(),
            message: e.to_string(),
        })?;
        let env = preset.build().map_err(|e| invalid(e.to_string()))?;
        let task = task
            .rebind(&env.feature_names())
            .map_err(|e| ConfigError::Task {
                path: task_path,
                message: format!(
                    "state variable `{}` is not provided by {}",
                    e.0,
                    preset.name()
                ),
            })?;

        let k = task.num_constraints();
        let thresholds = match self.cmdp.thresholds.len() {
            1 => vec![self.cmdp.thresholds[0]; k],
            n if n == k => self.cmdp.thresholds.clone(),
            n => return Err(invalid(format!("{n} cost thresholds for {k} constraints"))),
        };
        if !(self.cmdp.gamma > 0.0 && self.cmdp.gamma <= 1.0) || self.cmdp.horizon == 0 {
            return Err(invalid("gamma must lie in (0, 1] and horizon be positive"));
        }
        let cmdp = CmdpConfig {
            gamma: self.cmdp.gamma,
            horizon: self.cmdp.horizon,
            thresholds,
        };

        let head = match env.action_space() {
            ActionSpace::Continuous { dim } => Head::Gaussian { action_dim: dim },
            ActionSpace::Discrete { n } => Head::Softmax { num_actions: n },
        };
        let architecture = Architecture {
            input_dim: env.observation_dim(),
            hidden: self.policy.hidden.clone(),
            head,
        };

        let s = &self.spi;
        let m = &self.model;
        let safety_mode = SafetyMode::parse(&m.safety_mode).ok_or_else(|| {
            invalid(format!(
                "unknown safety mode `{}` (pessimistic or lagrangian)",
                m.safety_mode
            ))
        })?;
        let spi = SpiConfig {
            epochs: s.epochs,
            inner_rounds: s.inner_rounds,
            updates_per_round: s.updates_per_round,
            split_fraction: s.split_fraction,
            delta: s.delta,
            lr: s.lr,
            episodes_per_epoch: s.episodes_per_epoch,
            thresholds: match &s.rho_plus {
                None => ThresholdMode::OnPolicy,
                Some(v) if v.len() == k => ThresholdMode::Fixed(v.clone()),
                Some(v) => {
                    return Err(invalid(format!(
                        "{} release thresholds for {k} constraints",
                        v.len()
                    )))
                }
            },
            min_ess_fraction: s.min_ess_fraction,
            model: ModelConfig {
                horizon: m.horizon,
                particles: m.particles,
                starts: m.starts,
                buffer_capacity: m.buffer_capacity,
                warm_start: m.warm_start,
                refit_each_round: m.refit_each_round,
                safety_mode,
                penalty: m.penalty,
                lambda_init: m.lambda_init,
                lambda_lr: m.lambda_lr,
                ensemble: EnsembleConfig {
                    members: m.members,
                    hidden: m.hidden.clone(),
                    epochs: m.fit_epochs,
                    lr: m.fit_lr,
                    batch_size: m.batch_size,
                    min_transitions: m.min_transitions,
                    holdout_fraction: m.holdout_fraction,
                    bootstrap: m.bootstrap,
                    log_std_min: m.log_std_min,
                    log_std_max: m.log_std_max,
                },
            },
        };
        spi.validate().map_err(|e| invalid(e.to_string()))?;

        Ok(Experiment {
            preset,
            task,
            task_text,
            algorithm,
            shaping,
            seeds: self.seeds.clone(),
            cmdp,
            architecture,
            log_std_init: self.policy.log_std_init,
            spi,
            output: self.output.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default_run() {
        let cfg = RunConfig::from_toml("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        let exp = cfg.resolve().unwrap();
        assert_eq!(exp.algorithm, Algorithm::Smfpi);
        assert_eq!(exp.cmdp.thresholds.len(), exp.task.num_constraints());
        assert_eq!(exp.spi, SpiConfig::default());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = RunConfig::default();
        cfg.seeds = vec![3, 4];
        cfg.spi.lr = 0.25;
        cfg.spi.rho_plus = Some(vec![0.5, 0.5]);
        cfg.model.safety_mode = "lagrangian".into();
        let back = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        let exp = back.resolve().unwrap();
        assert_eq!(exp.spi.thresholds, ThresholdMode::Fixed(vec![0.5, 0.5]));
        assert_eq!(exp.spi.model.safety_mode, SafetyMode::Lagrangian);
    }

    #[test]
    fn rejects_bad_values() {
        for text in [
            "seeds = []",
            "algorithm = \"ppo\"",
            "shaping = \"dense\"",
            "env = \"mountain-car\"",
            "[spi]\ndelta = 1.5",
            "[cmdp]\nthresholds = [0.1, 0.1, 0.1]",
            "[model]\nsafety_mode = \"both\"",
            "task = \"/nonexistent/task.txt\"",
        ] {
            let cfg = RunConfig::from_toml(text).unwrap();
            assert!(cfg.resolve().is_err(), "{text}");
        }
        assert!(RunConfig::from_toml("unknown_key = 1").is_err());
    }
}
