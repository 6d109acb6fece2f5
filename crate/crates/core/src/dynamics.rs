//! Vehicle motion and background-driver behavior.
//!
//! Motion follows a kinematic bicycle referenced at the vehicle center. Longitudinal
//! behavior is the Intelligent Driver Model, lateral decisions use MOBIL, and
//! risk-prone drivers occasionally replace both with uniformly sampled controls.

use std::f64::consts::{FRAC_PI_3, FRAC_PI_4};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{wrap_to_pi, OrientedBox, Vec2};
use crate::road::{Lane, LaneId};

/// Front-wheel angle limit for every vehicle.
pub const STEERING_LIMIT: f64 = FRAC_PI_4;

/// Floor applied to leader gaps before evaluating IDM.
pub const MIN_IDM_GAP: f64 = 1e-3;

/// Hardest braking any vehicle can physically apply.
pub const MAX_BRAKING: f64 = 9.0;

const TAU_HEADING: f64 = 0.2;
const TAU_LATERAL: f64 = 0.6;
/// Pursuit lookahead used by the lane-keeping controller, in seconds.
pub const DEFAULT_LOOKAHEAD: f64 = 0.5 * TAU_HEADING;
const MAX_HEADING_CORRECTION: f64 = FRAC_PI_4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BehaviorParams {
    pub desired_speed: f64,
    pub time_headway: f64,
    pub min_gap: f64,
    pub max_accel: f64,
    pub comfort_decel: f64,
    pub delta: f64,
    pub politeness: f64,
    pub lane_change_min_gain: f64,
    /// Largest deceleration a lane change may impose on the new follower.
    pub safe_decel: f64,
    pub acc_min: f64,
    pub acc_max: f64,
    pub str_min: f64,
    pub str_max: f64,
}

impl Default for BehaviorParams {
    fn default() -> Self {
        Self {
            desired_speed: 25.0,
            time_headway: 1.5,
            min_gap: 5.0,
            max_accel: 3.0,
            comfort_decel: 5.0,
            delta: 4.0,
            politeness: 0.3,
            lane_change_min_gain: 0.2,
            safe_decel: 4.0,
            acc_min: -5.0,
            acc_max: 5.0,
            str_min: -FRAC_PI_3,
            str_max: FRAC_PI_3,
        }
    }
}

impl BehaviorParams {
    /// Imposed-deceleration tolerance used by all background drivers in treatment worlds.
    pub const RELAXED_SAFE_DECEL: f64 = 8.0;

    /// Parameters of a risk-prone driver: impolite, with a relaxed safety criterion.
    pub fn risk_prone(self) -> Self {
        Self {
            politeness: 0.0,
            safe_decel: Self::RELAXED_SAFE_DECEL,
            ..self
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let ok = self.max_accel > 0.0
            && self.comfort_decel > 0.0
            && self.min_gap > 0.0
            && self.time_headway >= 0.0
            && self.desired_speed > 0.0
            && (0.0..=1.0).contains(&self.politeness)
            && self.acc_min <= self.acc_max
            && self.str_min <= self.str_max;
        if ok {
            Ok(())
        } else {
            Err(format!("inconsistent behavior parameters: {self:?}"))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControlInput {
    pub acceleration: f64,
    pub steering: f64,
}

impl ControlInput {
    /// Builds a control, clamping steering to [`STEERING_LIMIT`].
    pub fn new(acceleration: f64, steering: f64) -> Self {
        Self {
            acceleration,
            steering: steering.clamp(-STEERING_LIMIT, STEERING_LIMIT),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleState {
    pub position: Vec2,
    pub heading: f64,
    pub speed: f64,
    pub length: f64,
    pub width: f64,
    pub lane: LaneId,
    pub target_lane: LaneId,
    pub behavior: BehaviorParams,
    pub is_ego: bool,
}

impl VehicleState {
    pub const DEFAULT_LENGTH: f64 = 5.0;
    pub const DEFAULT_WIDTH: f64 = 2.0;

    pub fn footprint(&self) -> OrientedBox {
        OrientedBox {
            center: self.position,
            half_length: self.length / 2.0,
            half_width: self.width / 2.0,
            heading: self.heading,
        }
    }

    pub fn velocity(&self) -> Vec2 {
        Vec2::from_angle(self.heading) * self.speed
    }

    /// One explicit Euler step of the kinematic bicycle. Speed never goes negative.
    pub fn step_bicycle(&self, u: ControlInput, dt: f64) -> VehicleState {
        let steering = u.steering.clamp(-STEERING_LIMIT, STEERING_LIMIT);
        let beta = (0.5 * steering.tan()).atan();
        let direction = Vec2::from_angle(self.heading + beta);
        let yaw_rate = self.speed / (self.length / 2.0) * beta.sin();
        VehicleState {
            position: self.position + direction * (self.speed * dt),
            heading: wrap_to_pi(self.heading + yaw_rate * dt),
            speed: (self.speed + u.acceleration * dt).max(0.0),
            ..self.clone()
        }
    }
}

/// IDM acceleration. `gap` is bumper-to-bumper distance to the leader, `None` for free road;
/// `closing_speed` is own speed minus the leader's.
pub fn idm_acceleration(
    speed: f64,
    gap: Option<f64>,
    closing_speed: f64,
    p: &BehaviorParams,
) -> f64 {
    let free = 1.0 - (speed.max(0.0) / p.desired_speed).powf(p.delta);
    let interaction = match gap {
        None => 0.0,
        Some(gap) => {
            let gap = gap.max(MIN_IDM_GAP);
            let dynamic = speed * p.time_headway
                + speed * closing_speed / (2.0 * (p.max_accel * p.comfort_decel).sqrt());
            let desired = p.min_gap + dynamic.max(0.0);
            (desired / gap).powi(2)
        }
    };
    p.max_accel * (free - interaction)
}

/// A vehicle as seen along one lane: longitudinal coordinate, speed and length.
#[derive(Debug, Clone, Copy)]
pub struct LaneVehicle<'a> {
    pub s: f64,
    pub speed: f64,
    pub length: f64,
    pub params: &'a BehaviorParams,
}

impl LaneVehicle<'_> {
    pub fn gap_to(&self, leader: &LaneVehicle<'_>) -> f64 {
        leader.s - self.s - (leader.length + self.length) / 2.0
    }

    /// IDM acceleration of `self` following `leader`.
    pub fn accel_behind(&self, leader: Option<&LaneVehicle<'_>>) -> f64 {
        match leader {
            None => idm_acceleration(self.speed, None, 0.0, self.params),
            Some(l) => idm_acceleration(
                self.speed,
                Some(self.gap_to(l)),
                self.speed - l.speed,
                self.params,
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LaneNeighbors<'a> {
    pub leader: Option<LaneVehicle<'a>>,
    pub follower: Option<LaneVehicle<'a>>,
}

/// Leaders and followers around a subject in its lane and the adjacent ones
/// (`None` where no adjacent lane is available).
#[derive(Debug, Clone, Copy, Default)]
pub struct NeighborSet<'a> {
    pub current: LaneNeighbors<'a>,
    pub left: Option<LaneNeighbors<'a>>,
    pub right: Option<LaneNeighbors<'a>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LaneChange {
    Stay,
    Left,
    Right,
}

/// Outcome of the MOBIL criteria for one candidate lane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MobilEvaluation {
    pub safe: bool,
    pub incentive: f64,
    /// Post-change acceleration of the new follower, when there is one.
    pub new_follower_accel: Option<f64>,
}

pub fn mobil_evaluate(
    subject: &LaneVehicle<'_>,
    current: &LaneNeighbors<'_>,
    target: &LaneNeighbors<'_>,
    p: &BehaviorParams,
) -> MobilEvaluation {
    let overlaps = target.leader.is_some_and(|l| subject.gap_to(&l) <= 0.0)
        || target.follower.is_some_and(|f| f.gap_to(subject) <= 0.0);

    let new_follower = target.follower.map(|f| {
        let before = f.accel_behind(target.leader.as_ref());
        let after = f.accel_behind(Some(subject));
        (before, after)
    });
    let safe = !overlaps && new_follower.is_none_or(|(_, after)| after >= -p.safe_decel);

    let own_before = subject.accel_behind(current.leader.as_ref());
    let own_after = subject.accel_behind(target.leader.as_ref());
    let new_follower_gain = new_follower.map_or(0.0, |(before, after)| after - before);
    let old_follower_gain = current.follower.map_or(0.0, |f| {
        f.accel_behind(current.leader.as_ref()) - f.accel_behind(Some(subject))
    });
    let incentive = own_after - own_before + p.politeness * (new_follower_gain + old_follower_gain);

    MobilEvaluation {
        safe,
        incentive,
        new_follower_accel: new_follower.map(|(_, after)| after),
    }
}

/// MOBIL lane-change decision over the available adjacent lanes.
pub fn mobil_decide(
    subject: &LaneVehicle<'_>,
    neighbors: &NeighborSet<'_>,
    p: &BehaviorParams,
) -> LaneChange {
    let gain = |lane: &Option<LaneNeighbors<'_>>| {
        lane.as_ref()
            .map(|t| mobil_evaluate(subject, &neighbors.current, t, p))
            .filter(|e| e.safe && e.incentive > p.lane_change_min_gain)
            .map(|e| e.incentive)
    };
    match (gain(&neighbors.left), gain(&neighbors.right)) {
        (None, None) => LaneChange::Stay,
        (Some(_), None) => LaneChange::Left,
        (None, Some(_)) => LaneChange::Right,
        (Some(l), Some(r)) if l > r => LaneChange::Left,
        (Some(l), Some(r)) if r > l => LaneChange::Right,
        _ => LaneChange::Stay,
    }
}

/// Maps unit draws onto the sampling boxes: `acc_min + u·(acc_max − acc_min)` and likewise for
/// steering.
pub fn randomized_control_from_unit(p: &BehaviorParams, u_acc: f64, u_str: f64) -> (f64, f64) {
    (
        p.acc_min + u_acc * (p.acc_max - p.acc_min),
        p.str_min + u_str * (p.str_max - p.str_min),
    )
}

pub fn sample_randomized_control<R: Rng + ?Sized>(p: &BehaviorParams, rng: &mut R) -> (f64, f64) {
    let u_acc: f64 = rng.gen();
    let u_str: f64 = rng.gen();
    randomized_control_from_unit(p, u_acc, u_str)
}

/// Lane-keeping steering toward the centerline of `target`.
///
/// A proportional lateral-offset loop produces a heading reference relative to the lane
/// heading `lookahead` seconds ahead; a proportional heading loop turns that into a yaw rate,
/// which is inverted through the bicycle model into a wheel angle.
pub fn lateral_steering_control(state: &VehicleState, target: &Lane, lookahead: f64) -> f64 {
    let (s, lateral) = target.local_coordinates(state.position);
    let speed = state.speed.max(1e-3);
    let future_heading = target.heading_at(s + state.speed * lookahead);
    let lateral_speed_cmd = -lateral / TAU_LATERAL;
    let heading_cmd = (lateral_speed_cmd / speed).clamp(-1.0, 1.0).asin();
    let heading_ref =
        future_heading + heading_cmd.clamp(-MAX_HEADING_CORRECTION, MAX_HEADING_CORRECTION);
    let yaw_rate_cmd = wrap_to_pi(heading_ref - state.heading) / TAU_HEADING;
    let slip = (state.length / 2.0 / speed * yaw_rate_cmd)
        .clamp(-1.0, 1.0)
        .asin();
    (2.0 * slip.tan())
        .atan()
        .clamp(-STEERING_LIMIT, STEERING_LIMIT)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::road::{EdgeId, LaneGeometry};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vehicle(speed: f64, heading: f64) -> VehicleState {
        VehicleState {
            position: Vec2::ZERO,
            heading,
            speed,
            length: 5.0,
            width: 2.0,
            lane: LaneId(0),
            target_lane: LaneId(0),
            behavior: BehaviorParams::default(),
            is_ego: false,
        }
    }

    fn straight_lane() -> Lane {
        Lane {
            id: LaneId(0),
            edge: EdgeId(0),
            index: 0,
            geometry: LaneGeometry::Straight {
                start: Vec2::new(-100.0, 0.0),
                end: Vec2::new(1000.0, 0.0),
            },
            width: 4.0,
            speed_limit: 30.0,
            overtaking: false,
        }
    }

    #[test]
    fn coasting_straight() {
        let next = vehicle(10.0, 0.0).step_bicycle(ControlInput::new(0.0, 0.0), 0.1);
        assert!((next.position.x - 1.0).abs() < 1e-12 && next.position.y.abs() < 1e-12);
        assert_eq!(next.heading, 0.0);
        assert_eq!(next.speed, 10.0);
    }

    #[test]
    fn euler_acceleration() {
        let next = vehicle(10.0, 0.0).step_bicycle(ControlInput::new(2.0, 0.0), 0.1);
        assert!((next.speed - 10.2).abs() < 1e-12);
    }

    #[test]
    fn steering_step_matches_formula() {
        // Evaluated independently: β = atan(0.5·tan 0.1).
        let next = vehicle(10.0, 0.0).step_bicycle(ControlInput::new(0.0, 0.1), 0.1);
        assert!((next.heading - 0.020041730136956412).abs() < 1e-12);
        assert!((next.position.x - 0.9987439895098164).abs() < 1e-12);
        assert!((next.position.y - 0.05010432534239104).abs() < 1e-12);
    }

    #[test]
    fn speed_never_negative() {
        let next = vehicle(0.5, 0.0).step_bicycle(ControlInput::new(-9.0, 0.0), 0.1);
        assert_eq!(next.speed, 0.0);
    }

    #[test]
    fn idm_free_flow_cases() {
        let p = BehaviorParams::default();
        assert_eq!(idm_acceleration(p.desired_speed, None, 0.0, &p), 0.0);
        assert_eq!(idm_acceleration(0.0, None, 0.0, &p), p.max_accel);
    }

    #[test]
    fn idm_frozen_value() {
        // s* = 5 + 15·1.5 + 15·5 / (2√15); a = 3·(1 − 0.6⁴ − (s*/20)²).
        let p = BehaviorParams {
            desired_speed: 25.0,
            delta: 4.0,
            min_gap: 5.0,
            time_headway: 1.5,
            max_accel: 3.0,
            comfort_decel: 5.0,
            ..BehaviorParams::default()
        };
        let a = idm_acceleration(15.0, Some(20.0), 5.0, &p);
        assert!((a - -7.757814075776397).abs() < 1e-12, "{a}");
    }

    #[test]
    fn idm_gap_floor() {
        let p = BehaviorParams::default();
        assert_eq!(
            idm_acceleration(10.0, Some(-3.0), 0.0, &p),
            idm_acceleration(10.0, Some(MIN_IDM_GAP), 0.0, &p)
        );
    }

    proptest! {
        #[test]
        fn idm_bounded_and_monotone(v in 0.0..40.0f64, gap in 0.01..200.0f64, dv in -20.0..20.0f64,
                                    dgap in 0.0..20.0f64, ddv in 0.0..10.0f64) {
            let p = BehaviorParams::default();
            let a = idm_acceleration(v, Some(gap), dv, &p);
            prop_assert!(a <= p.max_accel);
            prop_assert!(idm_acceleration(v, Some(gap), dv + ddv, &p) <= a + 1e-12);
            prop_assert!(idm_acceleration(v, Some(gap + dgap), dv, &p) >= a - 1e-12);
            if gap < p.min_gap && dv >= 0.0 {
                prop_assert!(a < 0.0);
            }
        }

        #[test]
        fn zero_control_preserves_heading_and_speed(v in 0.0..40.0f64, h in -3.0..3.0f64, dt in 0.01..0.5f64) {
            let s = vehicle(v, h);
            let n = s.step_bicycle(ControlInput::default(), dt);
            prop_assert_eq!(n.speed, v);
            prop_assert!((n.heading - h).abs() < 1e-12);
            let expected = Vec2::from_angle(h) * (v * dt);
            prop_assert!((n.position - expected).norm() < 1e-12);
        }

        #[test]
        fn randomized_control_within_bounds(seed in any::<u64>()) {
            let p = BehaviorParams::default();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..50 {
                let (a, s) = sample_randomized_control(&p, &mut rng);
                prop_assert!(a >= p.acc_min && a <= p.acc_max);
                prop_assert!(s >= p.str_min && s <= p.str_max);
            }
        }

        #[test]
        fn mobil_never_violates_safety(
            subj_v in 0.0..35.0f64,
            lead_ds in 6.0..80.0f64, lead_v in 0.0..35.0f64,
            tl in proptest::option::of((6.0..80.0f64, 0.0..35.0f64)),
            tf in proptest::option::of((-80.0..-0.5f64, 0.0..35.0f64)),
            side in any::<bool>(),
        ) {
            let p = BehaviorParams::default();
            let subject = LaneVehicle { s: 0.0, speed: subj_v, length: 5.0, params: &p };
            let current = LaneNeighbors {
                leader: Some(LaneVehicle { s: lead_ds, speed: lead_v, length: 5.0, params: &p }),
                follower: None,
            };
            let target = LaneNeighbors {
                leader: tl.map(|(s, v)| LaneVehicle { s, speed: v, length: 5.0, params: &p }),
                follower: tf.map(|(s, v)| LaneVehicle { s, speed: v, length: 5.0, params: &p }),
            };
            let set = if side {
                NeighborSet { current, left: Some(target), right: None }
            } else {
                NeighborSet { current, left: None, right: Some(target) }
            };
            let decision = mobil_decide(&subject, &set, &p);
            if decision != LaneChange::Stay {
                if let Some(f) = target.follower {
                    prop_assert!(f.gap_to(&subject) > 0.0);
                    prop_assert!(f.accel_behind(Some(&subject)) >= -p.safe_decel);
                }
                if let Some(l) = target.leader {
                    prop_assert!(subject.gap_to(&l) > 0.0);
                }
            }
        }
    }

    #[test]
    fn mobil_stays_on_empty_road() {
        let p = BehaviorParams::default();
        let subject = LaneVehicle {
            s: 0.0,
            speed: p.desired_speed,
            length: 5.0,
            params: &p,
        };
        let set = NeighborSet {
            current: LaneNeighbors::default(),
            left: Some(LaneNeighbors::default()),
            right: Some(LaneNeighbors::default()),
        };
        assert_eq!(mobil_decide(&subject, &set, &p), LaneChange::Stay);
    }

    #[test]
    fn mobil_overtakes_slow_leader() {
        let p = BehaviorParams::default();
        let subject = LaneVehicle {
            s: 0.0,
            speed: 22.0,
            length: 5.0,
            params: &p,
        };
        let leader = LaneVehicle {
            s: 30.0,
            speed: 10.0,
            length: 5.0,
            params: &p,
        };
        let current = LaneNeighbors {
            leader: Some(leader),
            follower: None,
        };
        // Incentive evaluated directly with the IDM for the three-vehicle layout.
        let before = idm_acceleration(22.0, Some(25.0), 12.0, &p);
        let after = idm_acceleration(22.0, None, 0.0, &p);
        assert!(after - before > p.lane_change_min_gain);
        let set = NeighborSet {
            current,
            left: Some(LaneNeighbors::default()),
            right: None,
        };
        assert_eq!(mobil_decide(&subject, &set, &p), LaneChange::Left);
    }

    #[test]
    fn mobil_safety_veto() {
        let p = BehaviorParams::default();
        let subject = LaneVehicle {
            s: 0.0,
            speed: 15.0,
            length: 5.0,
            params: &p,
        };
        let current = LaneNeighbors {
            leader: Some(LaneVehicle {
                s: 20.0,
                speed: 5.0,
                length: 5.0,
                params: &p,
            }),
            follower: None,
        };
        let fast_follower = LaneVehicle {
            s: -12.0,
            speed: 30.0,
            length: 5.0,
            params: &p,
        };
        assert!(fast_follower.accel_behind(Some(&subject)) < -p.safe_decel);
        let set = NeighborSet {
            current,
            left: None,
            right: Some(LaneNeighbors {
                leader: None,
                follower: Some(fast_follower),
            }),
        };
        assert_eq!(mobil_decide(&subject, &set, &p), LaneChange::Stay);
    }

    #[test]
    fn mobil_prefers_larger_incentive() {
        let p = BehaviorParams::default();
        let subject = LaneVehicle {
            s: 0.0,
            speed: 20.0,
            length: 5.0,
            params: &p,
        };
        let current = LaneNeighbors {
            leader: Some(LaneVehicle {
                s: 20.0,
                speed: 5.0,
                length: 5.0,
                params: &p,
            }),
            follower: None,
        };
        let left = LaneNeighbors {
            leader: Some(LaneVehicle {
                s: 60.0,
                speed: 18.0,
                length: 5.0,
                params: &p,
            }),
            follower: None,
        };
        let set = NeighborSet {
            current,
            left: Some(left),
            right: Some(LaneNeighbors::default()),
        };
        assert_eq!(mobil_decide(&subject, &set, &p), LaneChange::Right);
        let tie = NeighborSet {
            current,
            left: Some(LaneNeighbors::default()),
            right: Some(LaneNeighbors::default()),
        };
        assert_eq!(mobil_decide(&subject, &tie, &p), LaneChange::Stay);
    }

    #[test]
    fn randomized_control_endpoints() {
        let p = BehaviorParams::default();
        assert_eq!(
            randomized_control_from_unit(&p, 0.0, 0.0),
            (p.acc_min, p.str_min)
        );
        assert_eq!(
            randomized_control_from_unit(&p, 1.0, 1.0),
            (p.acc_max, p.str_max)
        );
        assert_eq!(randomized_control_from_unit(&p, 0.5, 0.5).0, 0.0);
    }

    #[test]
    fn steering_zero_on_centerline() {
        let lane = straight_lane();
        assert_eq!(
            lateral_steering_control(&vehicle(20.0, 0.0), &lane, DEFAULT_LOOKAHEAD),
            0.0
        );
    }

    #[test]
    fn steering_sign_toward_centerline() {
        let lane = straight_lane();
        let mut v = vehicle(20.0, 0.0);
        v.position.y = 1.0;
        assert!(lateral_steering_control(&v, &lane, DEFAULT_LOOKAHEAD) < 0.0);
        v.position.y = -1.0;
        assert!(lateral_steering_control(&v, &lane, DEFAULT_LOOKAHEAD) > 0.0);
    }

    #[test]
    fn lateral_step_response_settles() {
        let lane = straight_lane();
        let mut v = vehicle(20.0, 0.0);
        v.position.y = 1.0;
        let dt = 1.0 / 15.0;
        for _ in 0..45 {
            let steer = lateral_steering_control(&v, &lane, DEFAULT_LOOKAHEAD);
            v = v.step_bicycle(ControlInput::new(0.0, steer), dt);
        }
        assert!(v.position.y.abs() < 0.1, "offset {}", v.position.y);
    }
}
