//! Master run configuration.
//!
//! ```json
//! {
//!   "scenario":   { "task": "highway", "vehicle_count": 50, ... },
//!   "env":        { "policy_frequency": 5, "K": 6, ... },
//!   "train":      { "episodes": 3072, "seed": 0, ... },
//!   "experiment": { "eval_n": 100, "replicates": 1 },
//!   "levels":     [ { "vehicle_count": 50, "opposite_count": null,
//!                     "density_multiplier": 1.0, "spawn_probability": 0.3 } ],
//!   "seed": 7,
//!   "out": "runs/highway",
//!   "jobs": 4
//! }
//! ```
//!
//! Only `scenario` is required. `env` defaults to the task's bounds, `levels` to the task's
//! sweep schedule. A master `seed` overrides both the scenario and training seeds; its
//! precedence is command-line flag, then `RISKDRIVE_SEED`, then the file.
//! `treatment_scenario`, when present, replaces the derived treatment arm scenario and is
//! always subject to the comparability check.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::TrainConfig;
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::experiment::ExperimentConfig;
use crate::road::{ScenarioConfig, TrafficLevel};
use crate::seeding;

pub const SEED_ENV_VAR: &str = "RISKDRIVE_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub env: Option<EnvConfig>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub experiment: ExperimentConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<TrafficLevel>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub treatment_scenario: Option<ScenarioConfig>,
}

fn default_jobs() -> usize {
    1
}

impl RunConfig {
    pub fn new(scenario: ScenarioConfig) -> Self {
        RunConfig {
            scenario,
            env: None,
            train: TrainConfig::default(),
            experiment: ExperimentConfig::default(),
            levels: None,
            seed: None,
            out: None,
            jobs: 1,
            treatment_scenario: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Json(j) => Error::Config(format!("{}: {j}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Environment settings, falling back to the task defaults.
    pub fn env_config(&self) -> EnvConfig {
        self.env
            .clone()
            .unwrap_or_else(|| EnvConfig::for_task(self.scenario.task))
    }

    pub fn sweep_levels(&self) -> Vec<TrafficLevel> {
        self.levels
            .clone()
            .unwrap_or_else(|| self.scenario.task.sweep_levels())
    }

    /// Checks every section, reporting the first problem with its location.
    pub fn validate(&self) -> Result<()> {
        let at = |section: &str, r: Result<()>| {
            r.map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("{section}: {m}")),
                other => other,
            })
        };
        at("scenario", self.scenario.validate())?;
        at("env", self.env_config().validate())?;
        at("train", self.train.validate())?;
        at("experiment", self.experiment.validate())?;
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        if let Some(levels) = &self.levels {
            if levels.is_empty() {
                return Err(Error::Config("levels: must not be empty".into()));
            }
            for (i, l) in levels.iter().enumerate() {
                at(
                    &format!("levels[{i}]"),
                    self.scenario.clone().with_level(l).validate(),
                )?;
            }
        }
        if let Some(t) = &self.treatment_scenario {
            at("treatment_scenario", t.validate())?;
        }
        Ok(())
    }

    /// Applies a master seed: the scenario uses it directly, training a derived stream.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        self.scenario.seed = seed;
        self.train.seed = seeding::mix(seed, 0x7EED);
        if let Some(t) = &mut self.treatment_scenario {
            t.seed = seed;
        }
    }

    /// Resolves the master seed from a flag, the environment, then the file.
    pub fn resolve_seed(&mut self, flag: Option<u64>, env: Option<&str>) -> Result<()> {
        let from_env = match env {
            Some(v) => Some(v.trim().parse::<u64>().map_err(|_| {
                Error::Config(format!("{SEED_ENV_VAR}={v:?} is not an unsigned integer"))
            })?),
            None => None,
        };
        if let Some(seed) = flag.or(from_env).or(self.seed) {
            self.apply_seed(seed);
        }
        Ok(())
    }
}
