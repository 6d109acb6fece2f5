//! Episodic driving environment with a five-action discrete ego interface.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dynamics::ControlInput;
use crate::error::{Error, Result};
use crate::road::trace::{self, TraceRecord};
use crate::road::{ScenarioConfig, Task, World, WorldEvent};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Action {
    LaneLeft = 0,
    LaneRight = 1,
    Brake = 2,
    Accelerate = 3,
    Idle = 4,
}

impl Action {
    pub const COUNT: usize = 5;
    pub const ALL: [Action; 5] = [
        Action::LaneLeft,
        Action::LaneRight,
        Action::Brake,
        Action::Accelerate,
        Action::Idle,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Action> {
        Action::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::Contract(format!("action index {i} outside 0..5")))
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Action::LaneLeft => "LANE_LEFT",
            Action::LaneRight => "LANE_RIGHT",
            Action::Brake => "BRAKE",
            Action::Accelerate => "ACCELERATE",
            Action::Idle => "IDLE",
        })
    }
}

impl FromStr for Action {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Action::ALL
            .into_iter()
            .find(|a| a.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown action {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// Policy decisions per simulated second.
    pub policy_frequency: f64,
    pub physics_frequency: f64,
    /// Number of nearest background vehicles in the observation.
    #[serde(rename = "K")]
    pub k: usize,
    pub w_speed: f64,
    pub w_progress: f64,
    pub v_min: f64,
    pub v_max: f64,
    /// Target-speed change per ACCELERATE/BRAKE.
    pub speed_step: f64,
    pub max_target_speed: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            policy_frequency: 5.0,
            physics_frequency: 15.0,
            k: 6,
            w_speed: 0.8,
            w_progress: 0.2,
            v_min: 10.0,
            v_max: 30.0,
            speed_step: 5.0,
            max_target_speed: 30.0,
        }
    }
}

impl EnvConfig {
    /// Defaults with speed-reward bounds suited to the task's road speeds.
    pub fn for_task(task: Task) -> Self {
        let (v_min, v_max) = match task {
            Task::Highway => (10.0, 30.0),
            Task::TwoWay => (10.0, 25.0),
            Task::Roundabout => (5.0, 15.0),
            Task::Intersection => (3.0, 12.0),
            Task::UTurn => (5.0, 20.0),
        };
        EnvConfig {
            v_min,
            v_max,
            ..EnvConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.policy_frequency > 0.0 && self.physics_frequency >= self.policy_frequency) {
            return bad(format!(
                "policy_frequency {} must be positive and not exceed physics_frequency {}",
                self.policy_frequency, self.physics_frequency
            ));
        }
        let ratio = self.physics_frequency / self.policy_frequency;
        if (ratio - ratio.round()).abs() > 1e-9 {
            return bad(format!(
                "physics/policy frequency ratio {ratio} is not an integer"
            ));
        }
        if !(self.v_max > self.v_min) {
            return bad(format!(
                "v_max {} must exceed v_min {}",
                self.v_max, self.v_min
            ));
        }
        if self.w_speed < 0.0
            || self.w_progress < 0.0
            || self.w_speed + self.w_progress > 1.0 + 1e-12
        {
            return bad("reward weights must be non-negative and sum to at most 1".into());
        }
        if !(self.speed_step > 0.0 && self.max_target_speed > 0.0) {
            return bad("speed_step and max_target_speed must be positive".into());
        }
        Ok(())
    }

    pub fn ticks_per_step(&self) -> usize {
        (self.physics_frequency / self.policy_frequency).round() as usize
    }

    pub fn observation_len(&self) -> usize {
        5 * (self.k + 1)
    }
}

/// Flat kinematics table: ego row then the `K` nearest vehicles.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation(pub Vec<f64>);

impl Observation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cause {
    Collision,
    OffRoad,
    Timeout,
    Arrived,
}

impl fmt::Display for Cause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Cause::Collision => "collision",
            Cause::OffRoad => "off_road",
            Cause::Timeout => "timeout",
            Cause::Arrived => "arrived",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepInfo {
    pub step: usize,
    pub ego_speed: f64,
    /// Ids of the first collision the ego took part in.
    pub collision: Option<(u32, u32)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub cause: Option<Cause>,
    pub info: StepInfo,
}

pub fn compute_reward(speed: f64, on_route: bool, collided: bool, cfg: &EnvConfig) -> f64 {
    if collided {
        return 0.0;
    }
    let speed_term = ((speed - cfg.v_min) / (cfg.v_max - cfg.v_min)).clamp(0.0, 1.0);
    let route_term = if on_route { 1.0 } else { 0.0 };
    (cfg.w_speed * speed_term + cfg.w_progress * route_term).clamp(0.0, 1.0)
}

/// Builds the kinematics observation around the ego; absent slots stay zero.
pub fn observe(world: &World, k: usize) -> Observation {
    let mut out = vec![0.0; 5 * (k + 1)];
    let ego = &world.ego().state;
    let ev = ego.velocity();
    let norm = |x: f64, scale: f64| (x / scale).clamp(-1.0, 1.0);
    out[0] = 1.0;
    out[3] = norm(ev.x, 30.0);
    out[4] = norm(ev.y, 30.0);

    let mut others: Vec<(f64, u32, usize)> = world
        .vehicles()
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, v)| v.active)
        .map(|(i, v)| (v.state.position.distance(ego.position), v.id, i))
        .collect();
    others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    for (slot, &(_, _, i)) in others.iter().take(k).enumerate() {
        let st = &world.vehicles()[i].state;
        let rel = st.position - ego.position;
        let vel = st.velocity() - ev;
        let row = &mut out[5 * (slot + 1)..5 * (slot + 2)];
        row.copy_from_slice(&[
            1.0,
            norm(rel.x, 100.0),
            norm(rel.y, 100.0),
            norm(vel.x, 30.0),
            norm(vel.y, 30.0),
        ]);
    }
    Observation(out)
}

/// Proportional speed tracking, time constant 0.6 s.
const SPEED_GAIN: f64 = 1.0 / 0.6;
const EGO_ACCEL_LIMITS: (f64, f64) = (-6.0, 5.0);

#[derive(Debug, Clone)]
pub struct DrivingEnv {
    cfg: EnvConfig,
    scenario: ScenarioConfig,
    world: World,
    target_speed: f64,
    steps: usize,
    done: bool,
    trace: Option<Vec<TraceRecord>>,
}

impl DrivingEnv {
    /// Builds a fresh episode; `seed` replaces the scenario's own seed.
    pub fn reset(
        scenario: &ScenarioConfig,
        cfg: &EnvConfig,
        seed: u64,
    ) -> Result<(DrivingEnv, Observation)> {
        cfg.validate()?;
        let scenario = ScenarioConfig {
            seed,
            ..scenario.clone()
        };
        let world = World::build(&scenario)?;
        let target_speed = world.ego().state.speed;
        let env = DrivingEnv {
            cfg: cfg.clone(),
            scenario,
            world,
            target_speed,
            steps: 0,
            done: false,
            trace: None,
        };
        let obs = env.observation();
        Ok((env, obs))
    }

    /// Records every physics tick from now on.
    pub fn enable_trace(&mut self) {
        let first = trace::snapshot(&self.world, &[]);
        self.trace = Some(first);
    }

    pub fn take_trace(&mut self) -> Vec<TraceRecord> {
        self.trace.take().unwrap_or_default()
    }

    pub fn observation(&self) -> Observation {
        observe(&self.world, self.cfg.k)
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn scenario(&self) -> &ScenarioConfig {
        &self.scenario
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn target_speed(&self) -> f64 {
        self.target_speed
    }

    /// Policy steps in a full-length episode.
    pub fn max_steps(&self) -> usize {
        (self.scenario.episode_duration * self.cfg.policy_frequency).round() as usize
    }

    pub fn step(&mut self, action: Action) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::Contract("step called on a finished episode".into()));
        }
        match action {
            Action::LaneLeft => self.world.shift_ego_target_lane(-1),
            Action::LaneRight => self.world.shift_ego_target_lane(1),
            Action::Brake => self.target_speed = (self.target_speed - self.cfg.speed_step).max(0.0),
            Action::Accelerate => {
                self.target_speed =
                    (self.target_speed + self.cfg.speed_step).min(self.cfg.max_target_speed)
            }
            Action::Idle => {}
        }

        let dt = 1.0 / self.cfg.physics_frequency;
        let mut collision = None;
        let mut off_road = false;
        for _ in 0..self.cfg.ticks_per_step() {
            let ego = &self.world.ego().state;
            let accel = (SPEED_GAIN * (self.target_speed - ego.speed))
                .clamp(EGO_ACCEL_LIMITS.0, EGO_ACCEL_LIMITS.1);
            let control = ControlInput::new(accel, self.world.ego_lane_keeping());
            let events = self.world.step(control, dt)?;
            if let Some(trace) = &mut self.trace {
                trace.extend(trace::snapshot(&self.world, &events));
            }
            for e in &events {
                match *e {
                    WorldEvent::Collision { a, b } if a == 0 || b == 0 => {
                        collision.get_or_insert((a, b));
                    }
                    WorldEvent::OffRoad { vehicle: 0 } => off_road = true,
                    _ => {}
                }
            }
            if collision.is_some() {
                break;
            }
        }
        self.steps += 1;
        off_road |= self.world.ego().off_road;

        let cause = if collision.is_some() {
            Some(Cause::Collision)
        } else if off_road {
            Some(Cause::OffRoad)
        } else if self.world.ego_arrived() {
            Some(Cause::Arrived)
        } else if self.steps >= self.max_steps() {
            Some(Cause::Timeout)
        } else {
            None
        };
        let ego_speed = self.world.ego().state.speed;
        let reward = match cause {
            Some(Cause::Arrived) => 1.0,
            _ => compute_reward(
                ego_speed,
                self.world.ego_on_route(),
                collision.is_some(),
                &self.cfg,
            ),
        };
        self.done = cause.is_some();
        Ok(StepOutcome {
            observation: self.observation(),
            reward,
            done: self.done,
            cause,
            info: StepInfo {
                step: self.steps,
                ego_speed,
                collision,
            },
        })
    }

    #[cfg(test)]
    pub(crate) fn world_mut(&mut self) -> &mut World {
        &mut self.world
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec2;
    use proptest::prelude::*;

    fn empty_highway() -> ScenarioConfig {
        let mut cfg = ScenarioConfig::new(Task::Highway).with_count(0);
        cfg.strict_ranges = false;
        cfg
    }

    #[test]
    fn action_encoding_is_stable() {
        for (i, a) in Action::ALL.iter().enumerate() {
            assert_eq!(a.index(), i);
            assert_eq!(Action::from_index(i).unwrap(), *a);
            assert_eq!(a.to_string().parse::<Action>().unwrap(), *a);
        }
        assert!(Action::from_index(5).is_err());
    }

    #[test]
    fn reset_is_deterministic_and_sized() {
        let cfg = ScenarioConfig::new(Task::Highway).with_count(50);
        let (_, a) = DrivingEnv::reset(&cfg, &EnvConfig::default(), 3).unwrap();
        let (_, b) = DrivingEnv::reset(&cfg, &EnvConfig::default(), 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 35);
        let (env, _) = DrivingEnv::reset(&cfg, &EnvConfig::default(), 3).unwrap();
        let v = env.world().ego().state.velocity();
        assert_eq!(&a.0[..5], &[1.0, 0.0, 0.0, v.x / 30.0, v.y / 30.0]);
    }

    #[test]
    fn reward_examples() {
        let cfg = EnvConfig::default();
        assert_eq!(compute_reward(25.0, true, true, &cfg), 0.0);
        assert_eq!(compute_reward(30.0, true, false, &cfg), 1.0);
        assert!((compute_reward(20.0, true, false, &cfg) - 0.6).abs() < 1e-15);
    }

    #[test]
    fn idle_at_target_speed_on_empty_road() {
        let env_cfg = EnvConfig {
            w_progress: 0.0,
            ..EnvConfig::default()
        };
        let (mut env, _) = DrivingEnv::reset(&empty_highway(), &env_cfg, 0).unwrap();
        env.step(Action::Accelerate).unwrap();
        for _ in 0..60 {
            env.step(Action::Idle).unwrap();
        }
        let out = env.step(Action::Idle).unwrap();
        assert!(!out.done);
        assert!(
            (out.reward - env_cfg.w_speed).abs() < 1e-6,
            "{}",
            out.reward
        );
    }

    #[test]
    fn empty_road_observation() {
        let (env, obs) = DrivingEnv::reset(&empty_highway(), &EnvConfig::default(), 0).unwrap();
        assert!(obs.0[5..].iter().all(|&x| x == 0.0));
        assert_eq!(obs.len(), env.config().observation_len());
    }

    #[test]
    fn slot_for_vehicle_ahead() {
        let mut cfg = ScenarioConfig::new(Task::Highway).with_count(1);
        cfg.strict_ranges = false;
        let (mut env, _) = DrivingEnv::reset(&cfg, &EnvConfig::default(), 0).unwrap();
        let ego = env.world().ego().state.clone();
        let w = env.world_mut();
        let other = &mut w.vehicles_mut()[1].state;
        other.position = ego.position + Vec2::new(50.0, 0.0);
        other.heading = ego.heading;
        other.speed = ego.speed;
        let obs = env.observation();
        let slot = &obs.0[5..10];
        let expect = [1.0, 0.5, 0.0, 0.0, 0.0];
        for (a, b) in slot.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12, "{slot:?}");
        }
    }

    #[test]
    fn collision_terminates_with_zero_reward() {
        let mut cfg = ScenarioConfig::new(Task::Highway).with_count(1);
        cfg.strict_ranges = false;
        let (mut env, _) = DrivingEnv::reset(&cfg, &EnvConfig::default(), 0).unwrap();
        let ego = env.world().ego().state.clone();
        let other = &mut env.world_mut().vehicles_mut()[1].state;
        other.position = ego.position + Vec2::new(5.5, 0.0);
        other.heading = ego.heading;
        other.speed = 0.0;
        other.lane = ego.lane;
        other.target_lane = ego.lane;
        let out = env.step(Action::Accelerate).unwrap();
        assert!(out.done);
        assert_eq!(out.cause, Some(Cause::Collision));
        assert_eq!(out.reward, 0.0);
        assert_eq!(out.info.collision, Some((0, 1)));
        assert!(env.step(Action::Idle).is_err());
    }

    #[test]
    fn full_episode_is_one_hundred_steps() {
        let (mut env, _) = DrivingEnv::reset(&empty_highway(), &EnvConfig::default(), 0).unwrap();
        let mut n = 0;
        loop {
            let out = env.step(Action::Idle).unwrap();
            n += 1;
            if out.done {
                assert_eq!(out.cause, Some(Cause::Timeout));
                break;
            }
        }
        assert_eq!(n, 100);
        assert_eq!(env.world().tick(), 300);
    }

    #[test]
    fn frequency_ratio_must_be_integral() {
        let cfg = EnvConfig {
            policy_frequency: 4.0,
            ..EnvConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn fuzzed_episodes_stay_in_bounds(
            task_idx in 0usize..5,
            seed in 0u64..1000,
            actions in prop::collection::vec(0usize..5, 100),
        ) {
            let task = Task::ALL[task_idx];
            let cfg = ScenarioConfig::new(task);
            let env_cfg = EnvConfig::for_task(task);
            let (mut env, obs) = DrivingEnv::reset(&cfg, &env_cfg, seed).unwrap();
            prop_assert!(obs.0.iter().all(|x| (-1.0..=1.0).contains(x)));
            let mut replay = env.clone();
            for (n, &a) in actions.iter().enumerate() {
                let out = env.step(Action::from_index(a).unwrap()).unwrap();
                let again = replay.step(Action::from_index(a).unwrap()).unwrap();
                prop_assert_eq!(&out, &again);
                prop_assert!((0.0..=1.0).contains(&out.reward));
                prop_assert!(out.observation.0.iter().all(|x| (-1.0..=1.0).contains(x)));
                prop_assert_eq!(out.done, out.cause.is_some());
                if out.info.collision.is_some() {
                    prop_assert!(out.done);
                    prop_assert_eq!(out.reward, 0.0);
                }
                prop_assert!(n < 100);
                if out.done {
                    break;
                }
            }
        }
    }
}
