use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Highway,
    TwoWay,
    Roundabout,
    Intersection,
    UTurn,
}

impl Task {
    pub const ALL: [Task; 5] = [
        Task::Highway,
        Task::TwoWay,
        Task::Roundabout,
        Task::Intersection,
        Task::UTurn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Task::Highway => "highway",
            Task::TwoWay => "two_way",
            Task::Roundabout => "roundabout",
            Task::Intersection => "intersection",
            Task::UTurn => "u_turn",
        }
    }

    /// Inclusive background-vehicle count range covered by the traffic sweep.
    /// For the two-way road this is the same-direction count.
    pub fn count_range(self) -> (usize, usize) {
        match self {
            Task::Highway => (50, 150),
            Task::TwoWay => (5, 15),
            Task::Roundabout => (5, 15),
            Task::Intersection => (10, 30),
            Task::UTurn => (3, 12),
        }
    }

    /// Traffic levels of the density sweep, lightest first.
    pub fn sweep_levels(self) -> Vec<TrafficLevel> {
        let level = |count: usize| TrafficLevel {
            vehicle_count: count,
            ..TrafficLevel::base(self)
        };
        match self {
            Task::Highway => (0..5)
                .map(|i| TrafficLevel {
                    vehicle_count: 50 + 25 * i,
                    density_multiplier: 1.0 + 0.25 * i as f64,
                    ..TrafficLevel::base(self)
                })
                .collect(),
            Task::UTurn => [3, 6, 9, 12].into_iter().map(level).collect(),
            Task::TwoWay => [(5, 2), (10, 4), (15, 6)]
                .into_iter()
                .map(|(same, opposite)| TrafficLevel {
                    vehicle_count: same,
                    opposite_count: Some(opposite),
                    ..TrafficLevel::base(self)
                })
                .collect(),
            Task::Intersection => (0..5)
                .map(|i| TrafficLevel {
                    vehicle_count: 10 + 5 * i,
                    spawn_probability: (BASE_SPAWN_PROBABILITY + 0.1 * i as f64).min(1.0),
                    ..TrafficLevel::base(self)
                })
                .collect(),
            Task::Roundabout => [5, 10, 15].into_iter().map(level).collect(),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.name() == s || t.name().replace('_', "-") == s)
            .ok_or_else(|| {
                let names: Vec<_> = Task::ALL.iter().map(|t| t.name()).collect();
                Error::Config(format!(
                    "unknown task '{s}'; valid tasks are {}",
                    names.join(", ")
                ))
            })
    }
}

pub const BASE_SPAWN_PROBABILITY: f64 = 0.6;
pub const TWO_WAY_LENGTH_FACTOR: f64 = 2.0 / 3.0;
/// Hard ceiling on background vehicles when sweep ranges are not enforced.
pub const MAX_VEHICLES: usize = 300;

/// The traffic knobs that vary along a density sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrafficLevel {
    pub vehicle_count: usize,
    pub opposite_count: Option<usize>,
    pub density_multiplier: f64,
    pub spawn_probability: f64,
}

impl TrafficLevel {
    fn base(task: Task) -> Self {
        Self {
            vehicle_count: task.count_range().0,
            opposite_count: None,
            density_multiplier: 1.0,
            spawn_probability: BASE_SPAWN_PROBABILITY,
        }
    }
}

impl fmt::Display for TrafficLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.opposite_count {
            Some(o) => write!(f, "{}+{}", self.vehicle_count, o),
            None => write!(f, "{}", self.vehicle_count),
        }
    }
}

fn default_true() -> bool {
    true
}
fn default_density() -> f64 {
    1.0
}
fn default_spawn() -> f64 {
    BASE_SPAWN_PROBABILITY
}
fn default_length_factor() -> f64 {
    TWO_WAY_LENGTH_FACTOR
}
fn default_fraction() -> f64 {
    0.3
}
fn default_duration() -> f64 {
    20.0
}

/// Declarative description of one environment instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub task: Task,
    pub vehicle_count: usize,
    /// Oncoming vehicles on the two-way road; derived from `vehicle_count` when absent.
    #[serde(default)]
    pub opposite_count: Option<usize>,
    #[serde(default = "default_density")]
    pub density_multiplier: f64,
    #[serde(default = "default_spawn")]
    pub spawn_probability: f64,
    #[serde(default = "default_length_factor")]
    pub road_length_factor: f64,
    #[serde(default)]
    pub treatment: bool,
    #[serde(default = "default_fraction")]
    pub perturbed_fraction: f64,
    #[serde(default = "default_duration")]
    pub episode_duration: f64,
    #[serde(default)]
    pub seed: u64,
    /// Reject counts outside the task's sweep range. Desk-scale runs switch this off.
    #[serde(default = "default_true")]
    pub strict_ranges: bool,
}

impl ScenarioConfig {
    pub fn new(task: Task) -> Self {
        Self {
            task,
            vehicle_count: task.count_range().0,
            opposite_count: None,
            density_multiplier: 1.0,
            spawn_probability: BASE_SPAWN_PROBABILITY,
            road_length_factor: TWO_WAY_LENGTH_FACTOR,
            treatment: false,
            perturbed_fraction: 0.3,
            episode_duration: 20.0,
            seed: 0,
            strict_ranges: true,
        }
    }

    pub fn with_count(mut self, count: usize) -> Self {
        self.vehicle_count = count;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_level(mut self, level: &TrafficLevel) -> Self {
        self.vehicle_count = level.vehicle_count;
        self.opposite_count = level.opposite_count;
        self.density_multiplier = level.density_multiplier;
        self.spawn_probability = level.spawn_probability;
        self
    }

    pub fn level(&self) -> TrafficLevel {
        TrafficLevel {
            vehicle_count: self.vehicle_count,
            opposite_count: (self.task == Task::TwoWay).then(|| self.oncoming_count()),
            density_multiplier: self.density_multiplier,
            spawn_probability: self.spawn_probability,
        }
    }

    /// Oncoming count on the two-way road, interpolating 5→2 … 15→6 when unset.
    pub fn oncoming_count(&self) -> usize {
        self.opposite_count.unwrap_or_else(|| {
            (2.0 + (self.vehicle_count as f64 - 5.0) * 0.4)
                .round()
                .max(0.0) as usize
        })
    }

    pub fn total_background(&self) -> usize {
        match self.task {
            Task::TwoWay => self.vehicle_count + self.oncoming_count(),
            _ => self.vehicle_count,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let (lo, hi) = self.task.count_range();
        if self.strict_ranges {
            if !(lo..=hi).contains(&self.vehicle_count) {
                return bad(format!(
                    "{} vehicle_count {} outside the sweep range {lo}..={hi}",
                    self.task, self.vehicle_count
                ));
            }
            if self.task == Task::TwoWay && !(2..=6).contains(&self.oncoming_count()) {
                return bad(format!(
                    "two_way opposite_count {} outside the sweep range 2..=6",
                    self.oncoming_count()
                ));
            }
        } else if self.total_background() > MAX_VEHICLES {
            return bad(format!(
                "{} background vehicles exceed the limit of {MAX_VEHICLES}",
                self.total_background()
            ));
        }
        if !(self.density_multiplier >= 1.0 && self.density_multiplier.is_finite()) {
            return bad(format!(
                "density_multiplier must be ≥ 1, got {}",
                self.density_multiplier
            ));
        }
        if !(0.0..=1.0).contains(&self.spawn_probability) {
            return bad(format!(
                "spawn_probability must lie in [0, 1], got {}",
                self.spawn_probability
            ));
        }
        if !(0.0..=1.0).contains(&self.perturbed_fraction) {
            return bad(format!(
                "perturbed_fraction must lie in [0, 1], got {}",
                self.perturbed_fraction
            ));
        }
        if !(self.road_length_factor > 0.0 && self.road_length_factor <= 1.0) {
            return bad(format!(
                "road_length_factor must lie in (0, 1], got {}",
                self.road_length_factor
            ));
        }
        if !(self.episode_duration > 0.0 && self.episode_duration.is_finite()) {
            return bad(format!(
                "episode_duration must be positive, got {}",
                self.episode_duration
            ));
        }
        Ok(())
    }

    /// Number of background vehicles flagged risk-prone in a treatment world.
    pub fn perturbed_count(&self) -> usize {
        if self.treatment {
            (self.perturbed_fraction * self.total_background() as f64).round() as usize
        } else {
            0
        }
    }
}

/// Turns a control scenario into its treatment twin. Only the flag changes; everything the
/// flag implies (risk-prone drivers, relaxed lane-change safety, clogged conflict points) is
/// derived from it when the world is built.
pub fn apply_treatment(cfg: &ScenarioConfig) -> ScenarioConfig {
    ScenarioConfig {
        treatment: true,
        ..cfg.clone()
    }
}
