//! The simulated world: vehicle placement, background-driver control and collision events.

use std::collections::VecDeque;
use std::sync::Arc;

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::layouts::{self, PlacementSlot, TaskLayout, YieldKind};
use super::network::{EdgeId, LaneId, RoadNetwork};
use super::scenario::{ScenarioConfig, Task, MAX_VEHICLES};
use crate::dynamics::{
    idm_acceleration, lateral_steering_control, mobil_decide, sample_randomized_control,
    BehaviorParams, ControlInput, LaneChange, LaneNeighbors, LaneVehicle, NeighborSet,
    VehicleState, DEFAULT_LOOKAHEAD, MAX_BRAKING,
};
use crate::error::{Error, Result};
use crate::geometry::sat_intersects;
use crate::seeding;

/// Center distance beyond which two vehicles cannot touch.
pub const BROAD_PHASE_RADIUS: f64 = 10.0;
/// Radius around task conflict points where treatment worlds halve initial spacing.
pub const CLOG_RADIUS: f64 = 40.0;
pub const CLOG_SPACING_FACTOR: f64 = 0.5;
/// Chance per physics tick that a risk-prone driver overrides its IDM/MOBIL control.
pub const PERTURBATION_PROBABILITY: f64 = 0.5;
/// Successive spacing factors tried when a placement group does not fit.
const PLACEMENT_SPACING: [f64; 5] = [1.0, 0.8, 0.65, 0.5, 0.4];

const OCCUPANCY_MARGIN: f64 = 1.0;
const LEADER_HORIZON: f64 = 150.0;
const YIELD_DECISION_DISTANCE: f64 = 60.0;
const WAITING_DISTANCE: f64 = 25.0;
const SPAWN_CLEARANCE: f64 = 12.0;
const SPAWN_SPEED: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum WorldEvent {
    /// Footprints of `a` and `b` (ids, `a < b`) intersect.
    Collision {
        a: u32,
        b: u32,
    },
    OffRoad {
        vehicle: u32,
    },
}

impl WorldEvent {
    pub fn involves(&self, id: u32) -> bool {
        match *self {
            WorldEvent::Collision { a, b } => a == id || b == id,
            WorldEvent::OffRoad { vehicle } => vehicle == id,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vehicle {
    pub id: u32,
    pub state: VehicleState,
    /// Edges still to be driven, next one first.
    pub route: VecDeque<EdgeId>,
    pub risk_prone: bool,
    pub crashed: bool,
    /// Cleared once the vehicle drives off the end of the network.
    pub active: bool,
    pub off_road: bool,
    committed: bool,
    speed_factor: f64,
    next_lane_decision: f64,
}

impl Vehicle {
    fn interacts(&self) -> bool {
        self.active
    }
}

/// Per-lane list of vehicles projected onto it.
#[derive(Debug, Clone, Copy)]
struct Occupant {
    s: f64,
    idx: usize,
    speed_along: f64,
    length: f64,
}

#[derive(Debug, Clone)]
pub struct World {
    network: Arc<RoadNetwork>,
    layout: Arc<TaskLayout>,
    task: Task,
    treatment: bool,
    perturbed_fraction: f64,
    spawn_probability: f64,
    vehicles: Vec<Vehicle>,
    clock: f64,
    tick: u64,
    rng: ChaCha8Rng,
    spawn_rng: ChaCha8Rng,
    route_rng: ChaCha8Rng,
    next_id: u32,
    base: BehaviorParams,
    /// When set the ego is frozen and invisible to everyone else.
    pub ghost_ego: bool,
}

impl World {
    /// Builds the task's road network and places the ego plus background traffic.
    pub fn build(cfg: &ScenarioConfig) -> Result<World> {
        cfg.validate()?;
        let (network, layout) = layouts::build(cfg);
        let mut place_rng = seeding::rng(cfg.seed, 1);
        let base = BehaviorParams::default();

        let ego_lane = layout.ego_lanes[place_rng.gen_range(0..layout.ego_lanes.len())];
        let lane = network.lane(ego_lane);
        let ego_state = VehicleState {
            position: lane.position(layout.ego_s, 0.0),
            heading: lane.heading_at(layout.ego_s),
            speed: layout.ego_speed,
            length: VehicleState::DEFAULT_LENGTH,
            width: VehicleState::DEFAULT_WIDTH,
            lane: ego_lane,
            target_lane: ego_lane,
            behavior: base,
            is_ego: true,
        };
        let mut world = World {
            task: cfg.task,
            treatment: cfg.treatment,
            perturbed_fraction: cfg.perturbed_fraction,
            spawn_probability: cfg.spawn_probability,
            vehicles: vec![Vehicle {
                id: 0,
                state: ego_state,
                route: layout.ego_route.iter().copied().collect(),
                risk_prone: false,
                crashed: false,
                active: true,
                off_road: false,
                committed: false,
                speed_factor: 1.0,
                next_lane_decision: 0.0,
            }],
            network: Arc::new(network),
            layout: Arc::new(layout),
            clock: 0.0,
            tick: 0,
            rng: seeding::rng(cfg.seed, 3),
            spawn_rng: seeding::rng(cfg.seed, 4),
            route_rng: seeding::rng(cfg.seed, 5),
            next_id: 1,
            base,
            ghost_ego: false,
        };

        let layout = Arc::clone(&world.layout);
        let same: Vec<&PlacementSlot> = layout.slots.iter().filter(|s| !s.oncoming).collect();
        let oncoming: Vec<&PlacementSlot> = layout.slots.iter().filter(|s| s.oncoming).collect();
        let oncoming_n = if cfg.task == Task::TwoWay {
            cfg.oncoming_count()
        } else {
            0
        };
        world.place_group(cfg, &same, cfg.vehicle_count, &mut place_rng)?;
        world.place_group(cfg, &oncoming, oncoming_n, &mut place_rng)?;

        let background = world.vehicles.len() - 1;
        if cfg.treatment {
            for v in &mut world.vehicles[1..] {
                v.state.behavior.safe_decel = BehaviorParams::RELAXED_SAFE_DECEL;
            }
            let mut risk_rng = seeding::rng(cfg.seed, 2);
            let k = cfg.perturbed_count().min(background);
            for i in index::sample(&mut risk_rng, background, k) {
                let v = &mut world.vehicles[1 + i];
                v.risk_prone = true;
                v.state.behavior = v.state.behavior.risk_prone();
            }
        }
        for i in 1..world.vehicles.len() {
            world.plan_route(i);
        }
        Ok(world)
    }

    /// Places `count` vehicles along `slots`. When the slots fill up before every vehicle
    /// is placed, the group is redone with tighter spacing; all passes share one budget of
    /// `100 · count` attempts.
    fn place_group(
        &mut self,
        cfg: &ScenarioConfig,
        slots: &[&PlacementSlot],
        count: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<()> {
        if count == 0 {
            return Ok(());
        }
        let mut attempts = 0usize;
        let (len, next_id) = (self.vehicles.len(), self.next_id);
        if !slots.is_empty() {
            for spacing in PLACEMENT_SPACING {
                if self.place_pass(cfg, slots, count, spacing, &mut attempts, rng) {
                    return Ok(());
                }
                self.vehicles.truncate(len);
                self.next_id = next_id;
            }
        }
        Err(Error::Placement {
            task: cfg.task.to_string(),
            requested: count,
        })
    }

    fn place_pass(
        &mut self,
        cfg: &ScenarioConfig,
        slots: &[&PlacementSlot],
        count: usize,
        spacing: f64,
        attempts: &mut usize,
        rng: &mut ChaCha8Rng,
    ) -> bool {
        let mut cursors: Vec<f64> = slots
            .iter()
            .map(|s| s.start + rng.gen_range(0.0..10.0) * spacing)
            .collect();
        let budget = 100 * count;
        let mut placed = 0;
        while placed < count {
            let open: Vec<usize> = (0..slots.len())
                .filter(|&k| cursors[k] <= slots[k].end)
                .collect();
            if open.is_empty() || *attempts >= budget {
                return false;
            }
            *attempts += 1;
            let k = open[rng.gen_range(0..open.len())];
            let slot = slots[k];
            let (lane_pos, lane_id, s) = self.chain_locate(slot, cursors[k]);
            let lane = self.network.lane(lane_id);
            let speed_factor = rng.gen_range(0.85..1.0);
            let desired = self.base.desired_speed.min(lane.speed_limit) * speed_factor;
            let mut gap = (self.base.min_gap + desired * self.base.time_headway)
                / cfg.density_multiplier
                * rng.gen_range(0.75..1.25)
                * spacing;
            let position = lane.position(s, 0.0);
            if cfg.treatment
                && self
                    .layout
                    .conflict_points
                    .iter()
                    .any(|c| c.distance(position) < CLOG_RADIUS)
            {
                gap *= CLOG_SPACING_FACTOR;
            }
            let speed = desired.min(((gap - self.base.min_gap) / self.base.time_headway).max(0.0));
            let state = VehicleState {
                position,
                heading: lane.heading_at(s),
                speed,
                length: VehicleState::DEFAULT_LENGTH,
                width: VehicleState::DEFAULT_WIDTH,
                lane: lane_id,
                target_lane: lane_id,
                behavior: BehaviorParams {
                    desired_speed: desired,
                    ..self.base
                },
                is_ego: false,
            };
            let footprint = state.footprint();
            let clash = self.vehicles.iter().any(|v| {
                v.state.position.distance(position) < BROAD_PHASE_RADIUS + 5.0
                    && sat_intersects(&v.state.footprint(), &footprint)
                    || (v.state.is_ego && v.state.position.distance(position) < 8.0)
            });
            if clash {
                cursors[k] += 2.0;
                continue;
            }
            let route = if slot.follow_chain {
                slot.lanes[lane_pos + 1..]
                    .iter()
                    .map(|&l| self.network.lane(l).edge)
                    .collect()
            } else {
                VecDeque::new()
            };
            let id = self.next_id;
            self.next_id += 1;
            self.vehicles.push(Vehicle {
                id,
                state,
                route,
                risk_prone: false,
                crashed: false,
                active: true,
                off_road: false,
                committed: false,
                speed_factor,
                next_lane_decision: (id % 15) as f64 / 15.0,
            });
            cursors[k] += VehicleState::DEFAULT_LENGTH + gap;
            placed += 1;
        }
        true
    }

    /// Maps a cumulative distance along a placement chain to `(chain index, lane, s)`.
    fn chain_locate(&self, slot: &PlacementSlot, mut d: f64) -> (usize, LaneId, f64) {
        for (i, &l) in slot.lanes.iter().enumerate() {
            let len = self.network.lane(l).length();
            if d < len || i + 1 == slot.lanes.len() {
                return (i, l, d);
            }
            d -= len;
        }
        unreachable!("placement chains are non-empty")
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn is_treatment(&self) -> bool {
        self.treatment
    }

    pub fn network(&self) -> &RoadNetwork {
        &self.network
    }

    pub fn vehicles(&self) -> &[Vehicle] {
        &self.vehicles
    }

    pub fn ego(&self) -> &Vehicle {
        &self.vehicles[0]
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    /// Goal edge and the longitudinal position on it that ends an episode as arrived.
    pub fn goal(&self) -> Option<(EdgeId, f64)> {
        self.layout.goal
    }

    pub fn ego_arrived(&self) -> bool {
        let ego = &self.vehicles[0].state;
        self.layout.goal.is_some_and(|(edge, goal_s)| {
            let lane = self.network.lane(ego.lane);
            lane.edge == edge && lane.local_coordinates(ego.position).0 >= goal_s
        })
    }

    /// Whether the ego drives on a lane of its intended direction of travel.
    pub fn ego_on_route(&self) -> bool {
        let ego = &self.vehicles[0];
        !ego.off_road && !self.network.lane(ego.state.lane).overtaking
    }

    /// Retargets the ego one lane to the left (`-1`) or right (`+1`) of its current target.
    pub fn shift_ego_target_lane(&mut self, direction: i32) {
        let target = self.vehicles[0].state.target_lane;
        let next = match direction {
            d if d < 0 => self.network.left_of(target),
            d if d > 0 => self.network.right_of(target),
            _ => None,
        };
        if let Some(next) = next {
            self.vehicles[0].state.target_lane = next;
        }
    }

    /// Steering that keeps the ego on its target lane.
    pub fn ego_lane_keeping(&self) -> f64 {
        let ego = &self.vehicles[0].state;
        lateral_steering_control(ego, self.network.lane(ego.target_lane), DEFAULT_LOOKAHEAD)
    }

    /// Advances every vehicle by one physics tick of `dt` seconds.
    pub fn step(&mut self, ego_control: ControlInput, dt: f64) -> Result<Vec<WorldEvent>> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Contract(format!(
                "time step must be positive, got {dt}"
            )));
        }
        let occupancy = self.occupancy();
        let mut controls = vec![ControlInput::default(); self.vehicles.len()];
        controls[0] = ego_control;
        for i in 1..self.vehicles.len() {
            if self.vehicles[i].active && !self.vehicles[i].crashed {
                controls[i] = self.background_control(i, &occupancy);
            }
        }

        for (i, v) in self.vehicles.iter_mut().enumerate() {
            if !v.active || v.crashed || (i == 0 && self.ghost_ego) {
                continue;
            }
            v.state = v.state.step_bicycle(controls[i], dt);
        }
        for i in 0..self.vehicles.len() {
            self.advance_lanes(i);
        }

        let mut events = self.detect_collisions();
        events.extend(self.detect_off_road());

        let before = self.clock;
        self.clock += dt;
        self.tick += 1;
        if self.task == Task::Intersection && before.floor() != self.clock.floor() {
            self.spawn_flow(self.spawn_probability)?;
        }
        Ok(events)
    }

    fn visible(&self, i: usize) -> bool {
        self.vehicles[i].interacts() && !(i == 0 && self.ghost_ego)
    }

    fn occupancy(&self) -> Vec<Vec<Occupant>> {
        let net = &self.network;
        let mut occ: Vec<Vec<Occupant>> = vec![Vec::new(); net.lanes().len()];
        let mut candidates: Vec<LaneId> = Vec::with_capacity(12);
        for (idx, v) in self.vehicles.iter().enumerate() {
            if !self.visible(idx) {
                continue;
            }
            let st = &v.state;
            candidates.clear();
            candidates.push(st.lane);
            candidates.push(st.target_lane);
            for l in [st.lane, st.target_lane] {
                candidates.extend(net.left_of(l));
                candidates.extend(net.right_of(l));
                candidates.extend_from_slice(net.overlapping(l));
                let lane = net.lane(l);
                if lane.local_coordinates(st.position).0 > lane.length() - 15.0 {
                    for &succ in &net.edge(lane.edge).successors {
                        candidates.push(net.continuation(l, succ));
                    }
                }
            }
            candidates.sort_unstable();
            candidates.dedup();
            for &c in &candidates {
                let lane = net.lane(c);
                let (s, lat) = lane.local_coordinates(st.position);
                if c == st.lane || lane.contains_local(s, lat, OCCUPANCY_MARGIN) {
                    occ[c.0].push(Occupant {
                        s,
                        idx,
                        speed_along: st.speed * (st.heading - lane.heading_at(s)).cos(),
                        length: st.length,
                    });
                }
            }
        }
        // Vehicles on an entry connector already occupy the circulating lane they merge into.
        for y in &self.layout.yields {
            let YieldKind::Merge {
                merge_lane,
                entry_edge,
            } = y.kind
            else {
                continue;
            };
            for &l in &net.edge(entry_edge).lanes {
                let len = net.lane(l).length();
                let entering: Vec<Occupant> = occ[l.0]
                    .iter()
                    .filter(|o| self.vehicles[o.idx].state.lane == l)
                    .map(|o| Occupant { s: o.s - len, ..*o })
                    .collect();
                for o in entering {
                    if !occ[merge_lane.0].iter().any(|m| m.idx == o.idx) {
                        occ[merge_lane.0].push(o);
                    }
                }
            }
        }
        for list in &mut occ {
            list.sort_by(|a, b| a.s.total_cmp(&b.s).then(a.idx.cmp(&b.idx)));
        }
        occ
    }

    /// Nearest vehicle ahead of `idx` along `lane` and its planned continuation:
    /// `(center distance, speed along lane, length)`.
    fn leader(
        &self,
        occ: &[Vec<Occupant>],
        idx: usize,
        lane: LaneId,
        s: f64,
    ) -> Option<(f64, f64, f64)> {
        let mut lane = lane;
        let mut offset = 0.0;
        let mut from = s;
        let route = &self.vehicles[idx].route;
        let mut hop = 0;
        loop {
            if let Some(o) = occ[lane.0].iter().find(|o| o.idx != idx && o.s > from) {
                return Some((offset + o.s - s, o.speed_along, o.length));
            }
            let len = self.network.lane(lane).length();
            offset += len;
            if offset - s > LEADER_HORIZON {
                return None;
            }
            let next = route.get(hop).copied().or_else(|| {
                let succ = &self.network.edge(self.network.lane(lane).edge).successors;
                (succ.len() == 1).then(|| succ[0])
            })?;
            lane = self.network.continuation(lane, next);
            hop += 1;
            from = f64::NEG_INFINITY;
            if hop > 4 {
                return None;
            }
        }
    }

    fn follower(
        &self,
        occ: &[Vec<Occupant>],
        idx: usize,
        lane: LaneId,
        s: f64,
    ) -> Option<Occupant> {
        occ[lane.0]
            .iter()
            .rev()
            .find(|o| o.idx != idx && o.s < s)
            .copied()
    }

    fn background_control(&mut self, i: usize, occ: &[Vec<Occupant>]) -> ControlInput {
        if self.vehicles[i].risk_prone && self.rng.gen_bool(PERTURBATION_PROBABILITY) {
            let params = self.vehicles[i].state.behavior;
            let (acc, steer) = sample_randomized_control(&params, &mut self.rng);
            return ControlInput::new(acc, steer);
        }
        let net = Arc::clone(&self.network);
        let state = self.vehicles[i].state.clone();
        let p = state.behavior;
        let lane = net.lane(state.lane);
        let (s, _) = lane.local_coordinates(state.position);

        let idm_behind = |leader: Option<(f64, f64, f64)>| match leader {
            None => idm_acceleration(state.speed, None, 0.0, &p),
            Some((dist, v, len)) => idm_acceleration(
                state.speed,
                Some(dist - (len + state.length) / 2.0),
                state.speed - v,
                &p,
            ),
        };
        let mut accel = idm_behind(self.leader(occ, i, state.lane, s));
        if state.target_lane != state.lane {
            let (st, _) = net
                .lane(state.target_lane)
                .local_coordinates(state.position);
            accel = accel.min(idm_behind(self.leader(occ, i, state.target_lane, st)));
        }

        if let Some(y) = self.layout.yields.iter().find(|y| y.lane == state.lane) {
            let to_stop = y.stop_s - s;
            if !self.vehicles[i].committed {
                if to_stop < 0.0 {
                    self.vehicles[i].committed = true;
                } else if to_stop < YIELD_DECISION_DISTANCE {
                    let clear = match y.kind {
                        YieldKind::Merge {
                            merge_lane,
                            entry_edge,
                        } => self.merge_clear(occ, i, merge_lane, entry_edge),
                        YieldKind::Box { approach } => self.box_clear(i, approach),
                    };
                    if clear && to_stop < 15.0 {
                        self.vehicles[i].committed = true;
                    } else {
                        let gap = to_stop - state.length / 2.0;
                        accel =
                            accel.min(idm_acceleration(state.speed, Some(gap), state.speed, &p));
                    }
                }
            }
        }

        if self.clock >= self.vehicles[i].next_lane_decision {
            self.vehicles[i].next_lane_decision += 1.0;
            if state.target_lane == state.lane {
                if let Some(change) = self.lane_change_decision(i, occ, s) {
                    self.vehicles[i].state.target_lane = change;
                }
            }
        }
        self.abort_conflicting_change(i);

        let state = &self.vehicles[i].state;
        let steer = lateral_steering_control(state, net.lane(state.target_lane), DEFAULT_LOOKAHEAD);
        ControlInput::new(accel.clamp(-MAX_BRAKING, p.max_accel), steer)
    }

    fn lane_vehicle<'a>(&'a self, o: &Occupant) -> LaneVehicle<'a> {
        LaneVehicle {
            s: o.s,
            speed: o.speed_along,
            length: o.length,
            params: &self.vehicles[o.idx].state.behavior,
        }
    }

    fn neighbors_on<'a>(
        &'a self,
        occ: &[Vec<Occupant>],
        i: usize,
        lane: LaneId,
    ) -> (f64, LaneNeighbors<'a>) {
        let pos = self.vehicles[i].state.position;
        let (s, _) = self.network.lane(lane).local_coordinates(pos);
        let leader = self
            .leader(occ, i, lane, s)
            .map(|(dist, speed, length)| LaneVehicle {
                s: s + dist,
                speed,
                length,
                params: &self.base,
            });
        let follower = self
            .follower(occ, i, lane, s)
            .map(|o| self.lane_vehicle(&o));
        (s, LaneNeighbors { leader, follower })
    }

    fn lane_change_decision(&self, i: usize, occ: &[Vec<Occupant>], _s: f64) -> Option<LaneId> {
        let net = &self.network;
        let v = &self.vehicles[i];
        let lane = v.state.lane;
        let usable = |l: Option<LaneId>| l.filter(|&l| !net.lane(l).overtaking);
        let left = usable(net.left_of(lane));
        let right = usable(net.right_of(lane));
        if left.is_none() && right.is_none() {
            return None;
        }
        let (s, current) = self.neighbors_on(occ, i, lane);
        // Neighbors are re-expressed in the subject's coordinate on its own lane.
        fn shift<'a>(s: f64, n: (f64, LaneNeighbors<'a>)) -> LaneNeighbors<'a> {
            let d = s - n.0;
            let mv = |x: LaneVehicle<'a>| LaneVehicle { s: x.s + d, ..x };
            LaneNeighbors {
                leader: n.1.leader.map(mv),
                follower: n.1.follower.map(mv),
            }
        }
        let set = NeighborSet {
            current,
            left: left.map(|l| shift(s, self.neighbors_on(occ, i, l))),
            right: right.map(|l| shift(s, self.neighbors_on(occ, i, l))),
        };
        let subject = LaneVehicle {
            s,
            speed: v.state.speed,
            length: v.state.length,
            params: &v.state.behavior,
        };
        match mobil_decide(&subject, &set, &v.state.behavior) {
            LaneChange::Stay => None,
            LaneChange::Left => left,
            LaneChange::Right => right,
        }
    }

    /// A lane change is abandoned when another vehicle heads for the same lane just ahead.
    fn abort_conflicting_change(&mut self, i: usize) {
        let v = &self.vehicles[i];
        let (lane, target) = (v.state.lane, v.state.target_lane);
        if lane == target {
            return;
        }
        let t = self.network.lane(target);
        let (s_i, _) = t.local_coordinates(v.state.position);
        let p = &v.state.behavior;
        let desired = p.min_gap + v.state.speed * p.time_headway;
        let conflict = self.vehicles.iter().enumerate().any(|(j, w)| {
            j != i
                && self.visible(j)
                && w.state.target_lane == target
                && w.state.lane != target
                && {
                    let d = t.local_coordinates(w.state.position).0 - s_i;
                    d > 0.0 && d < desired
                }
        });
        if conflict {
            self.vehicles[i].state.target_lane = lane;
        }
    }

    fn merge_clear(
        &self,
        occ: &[Vec<Occupant>],
        i: usize,
        merge_lane: LaneId,
        entry_edge: EdgeId,
    ) -> bool {
        if occ[merge_lane.0].iter().any(|o| o.idx != i && o.s < 15.0) {
            return false;
        }
        let net = &self.network;
        let mut frontier: Vec<(EdgeId, f64)> = net
            .edge(net.lane(merge_lane).edge)
            .predecessors
            .iter()
            .filter(|&&e| e != entry_edge)
            .map(|&e| (e, 0.0))
            .collect();
        while let Some((edge, offset)) = frontier.pop() {
            for &l in &net.edge(edge).lanes {
                let len = net.lane(l).length();
                for o in &occ[l.0] {
                    if o.idx == i {
                        continue;
                    }
                    let d = offset + len - o.s;
                    if d >= 0.0 && d < 8.0 + 3.5 * o.speed_along.max(0.0) {
                        return false;
                    }
                }
                let next = offset + len;
                if next < 70.0 {
                    frontier.extend(net.edge(edge).predecessors.iter().map(|&p| (p, next)));
                }
            }
        }
        true
    }

    fn box_clear(&self, i: usize, approach: usize) -> bool {
        let layout = &self.layout;
        let approach_of = |lane: LaneId| layout.yields.iter().position(|y| y.lane == lane);
        let mut waiting = [false; 4];
        for (j, w) in self.vehicles.iter().enumerate() {
            if j == i || !self.visible(j) {
                continue;
            }
            for (k, lanes) in layout.box_lanes.iter().enumerate() {
                if k != approach && lanes.contains(&w.state.lane) {
                    return false;
                }
            }
            if let Some(k) = approach_of(w.state.lane) {
                let y = &layout.yields[k];
                let s = self
                    .network
                    .lane(y.lane)
                    .local_coordinates(w.state.position)
                    .0;
                let near = s >= y.stop_s - WAITING_DISTANCE;
                let ego_pushing = w.state.is_ego && near && w.state.speed > 2.0;
                if k != approach && (w.committed || ego_pushing) {
                    return false;
                }
                if near {
                    waiting[k] = true;
                }
            }
        }
        let n = layout.yields.len();
        let right = (approach + 1) % n;
        if !waiting[right] {
            return true;
        }
        // Everyone waits on someone: the lowest approach index breaks the deadlock.
        waiting[..n]
            .iter()
            .enumerate()
            .all(|(k, &w)| w || k == approach)
            && approach == (0..n).find(|&k| waiting[k] || k == approach).unwrap_or(0)
    }

    fn plan_route(&mut self, i: usize) {
        let v = &self.vehicles[i];
        if !v.route.is_empty() || v.state.is_ego {
            return;
        }
        let net = &self.network;
        let edge = net.lane(v.state.lane).edge;
        let succ = &net.edge(edge).successors;
        let choice = match succ.len() {
            0 => return,
            1 => succ[0],
            _ => {
                let exit = succ
                    .iter()
                    .position(|&e| net.edge(e).name.starts_with("exit"));
                match exit {
                    Some(x) => {
                        if self.route_rng.gen_bool(self.layout.exit_probability) {
                            succ[x]
                        } else {
                            succ[(x + 1) % succ.len()]
                        }
                    }
                    None => succ[self.route_rng.gen_range(0..succ.len())],
                }
            }
        };
        self.vehicles[i].route.push_back(choice);
    }

    fn advance_lanes(&mut self, i: usize) {
        if !self.vehicles[i].active {
            return;
        }
        let net = Arc::clone(&self.network);
        loop {
            let v = &mut self.vehicles[i];
            let lane = net.lane(v.state.lane);
            let (s, _) = lane.local_coordinates(v.state.position);
            if s < lane.length() {
                break;
            }
            match v.route.pop_front() {
                Some(next) => {
                    v.state.lane = net.continuation(v.state.lane, next);
                    v.state.target_lane = net.continuation(v.state.target_lane, next);
                    v.committed = false;
                    if !v.state.is_ego {
                        let limit = net.lane(v.state.lane).speed_limit;
                        v.state.behavior.desired_speed =
                            self.base.desired_speed.min(limit) * v.speed_factor;
                        self.plan_route(i);
                    }
                }
                None => {
                    if !v.state.is_ego {
                        v.active = false;
                    }
                    break;
                }
            }
        }
        let v = &mut self.vehicles[i];
        if v.state.target_lane != v.state.lane {
            let (_, lat_t) = net
                .lane(v.state.target_lane)
                .local_coordinates(v.state.position);
            let (_, lat_c) = net.lane(v.state.lane).local_coordinates(v.state.position);
            if lat_t.abs() < lat_c.abs() {
                v.state.lane = v.state.target_lane;
            }
        }
    }

    fn detect_collisions(&mut self) -> Vec<WorldEvent> {
        let mut events = Vec::new();
        let n = self.vehicles.len();
        for i in 0..n {
            if !self.visible(i) {
                continue;
            }
            let bi = self.vehicles[i].state.footprint();
            for j in i + 1..n {
                if !self.visible(j) || (self.vehicles[i].crashed && self.vehicles[j].crashed) {
                    continue;
                }
                let bj = self.vehicles[j].state.footprint();
                if bi.center.distance(bj.center) >= BROAD_PHASE_RADIUS {
                    continue;
                }
                if sat_intersects(&bi, &bj) {
                    let (a, b) = (self.vehicles[i].id, self.vehicles[j].id);
                    events.push(WorldEvent::Collision {
                        a: a.min(b),
                        b: a.max(b),
                    });
                }
            }
        }
        for e in &events {
            if let WorldEvent::Collision { a, b } = *e {
                for v in self.vehicles.iter_mut().filter(|v| v.id == a || v.id == b) {
                    v.crashed = true;
                    v.state.speed = 0.0;
                }
            }
        }
        events
    }

    fn detect_off_road(&mut self) -> Vec<WorldEvent> {
        let mut events = Vec::new();
        for i in 0..self.vehicles.len() {
            if !self.visible(i) {
                continue;
            }
            let on_road = {
                let st = &self.vehicles[i].state;
                [st.lane, st.target_lane].iter().any(|&l| {
                    let lane = self.network.lane(l);
                    let (s, lat) = lane.local_coordinates(st.position);
                    lat.abs() <= lane.width / 2.0 && s >= 0.0 && s <= lane.length()
                }) || self.network.locate(st.position).is_some()
            };
            let v = &mut self.vehicles[i];
            if !on_road && !v.off_road {
                events.push(WorldEvent::OffRoad { vehicle: v.id });
            }
            v.off_road = !on_road;
        }
        events
    }

    /// Draws one spawn opportunity at the crossing approaches. Returns the new vehicle's id.
    pub fn spawn_flow(&mut self, probability: f64) -> Result<Option<u32>> {
        if self.task != Task::Intersection {
            return Err(Error::Contract(format!(
                "spawn flow is only defined for the intersection task, not {}",
                self.task
            )));
        }
        if !self.spawn_rng.gen_bool(probability.clamp(0.0, 1.0)) {
            return Ok(None);
        }
        if self.active_count() >= MAX_VEHICLES {
            return Ok(None);
        }
        let free: Vec<LaneId> = self
            .layout
            .spawn_lanes
            .iter()
            .copied()
            .filter(|&l| {
                let at = self.network.lane(l).position(5.0, 0.0);
                self.vehicles.iter().enumerate().all(|(j, v)| {
                    !self.visible(j) || v.state.position.distance(at) >= SPAWN_CLEARANCE
                })
            })
            .collect();
        if free.is_empty() {
            return Ok(None);
        }
        let lane_id = free[self.spawn_rng.gen_range(0..free.len())];
        let risky = self.treatment && self.spawn_rng.gen_bool(self.perturbed_fraction);
        let speed_factor = self.spawn_rng.gen_range(0.85..1.0);
        let lane = self.network.lane(lane_id);
        let spawn_at = lane.position(5.0, 0.0);
        let mut behavior = BehaviorParams {
            desired_speed: self.base.desired_speed.min(lane.speed_limit) * speed_factor,
            ..self.base
        };
        if self.treatment {
            behavior.safe_decel = BehaviorParams::RELAXED_SAFE_DECEL;
        }
        if risky {
            behavior = behavior.risk_prone();
        }
        let id = self.next_id;
        self.next_id += 1;
        self.vehicles.push(Vehicle {
            id,
            state: VehicleState {
                position: spawn_at,
                heading: lane.heading_at(5.0),
                speed: SPAWN_SPEED,
                length: VehicleState::DEFAULT_LENGTH,
                width: VehicleState::DEFAULT_WIDTH,
                lane: lane_id,
                target_lane: lane_id,
                behavior,
                is_ego: false,
            },
            route: VecDeque::new(),
            risk_prone: risky,
            crashed: false,
            active: true,
            off_road: false,
            committed: false,
            speed_factor,
            next_lane_decision: self.clock + (id % 15) as f64 / 15.0,
        });
        let i = self.vehicles.len() - 1;
        self.plan_route(i);
        Ok(Some(id))
    }

    #[cfg(test)]
    pub(crate) fn vehicles_mut(&mut self) -> &mut [Vehicle] {
        &mut self.vehicles
    }

    /// Number of vehicles currently on the network, ego included.
    pub fn active_count(&self) -> usize {
        self.vehicles.iter().filter(|v| v.active).count()
    }
}

/// Builds the world described by `cfg`.
pub fn build_scenario(cfg: &ScenarioConfig) -> Result<World> {
    World::build(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec2;

    fn initial_collisions(w: &World) -> usize {
        let v = w.vehicles();
        let mut n = 0;
        for i in 0..v.len() {
            for j in i + 1..v.len() {
                if sat_intersects(&v[i].state.footprint(), &v[j].state.footprint()) {
                    n += 1;
                }
            }
        }
        n
    }

    #[test]
    fn highway_fifty() {
        let w = World::build(
            &ScenarioConfig::new(Task::Highway)
                .with_count(50)
                .with_seed(7),
        )
        .unwrap();
        assert_eq!(w.vehicles().len(), 51);
        assert_eq!(initial_collisions(&w), 0);
        assert!(w.vehicles()[0].state.is_ego);
        assert_eq!(w.vehicles().iter().filter(|v| v.state.is_ego).count(), 1);
    }

    #[test]
    fn count_below_range_is_config_error() {
        let err = World::build(&ScenarioConfig::new(Task::UTurn).with_count(0)).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn deterministic_build() {
        let cfg = ScenarioConfig::new(Task::Roundabout)
            .with_count(12)
            .with_seed(99);
        let a = World::build(&cfg).unwrap();
        let b = World::build(&cfg).unwrap();
        assert_eq!(a.vehicles(), b.vehicles());
    }

    #[test]
    fn every_task_builds_at_every_level() {
        for task in Task::ALL {
            for level in task.sweep_levels() {
                for treatment in [false, true] {
                    let mut cfg = ScenarioConfig::new(task).with_level(&level).with_seed(5);
                    cfg.treatment = treatment;
                    let w = World::build(&cfg).unwrap_or_else(|e| panic!("{task} {level}: {e}"));
                    assert_eq!(initial_collisions(&w), 0, "{task} {level}");
                    assert_eq!(w.vehicles().len(), 1 + cfg.total_background());
                }
            }
        }
    }

    #[test]
    fn treatment_flags_exact_fraction() {
        for n in [10, 20, 30] {
            let mut cfg = ScenarioConfig::new(Task::Intersection)
                .with_count(n)
                .with_seed(1);
            cfg.treatment = true;
            let w = World::build(&cfg).unwrap();
            let flagged = w.vehicles().iter().filter(|v| v.risk_prone).count();
            assert_eq!(flagged, (0.3 * n as f64).round() as usize);
        }
    }

    #[test]
    fn treatment_world_is_comparable() {
        let control = ScenarioConfig::new(Task::Highway)
            .with_count(100)
            .with_seed(11);
        let treated = super::super::apply_treatment(&control);
        let a = World::build(&control).unwrap();
        let b = World::build(&treated).unwrap();
        assert_eq!(a.vehicles().len(), b.vehicles().len());
        assert_eq!(a.ego().state, b.ego().state);
        let lanes = |w: &World| {
            let mut v: Vec<_> = w.vehicles().iter().map(|v| v.state.lane).collect();
            v.sort();
            v
        };
        assert_eq!(lanes(&a), lanes(&b));
        assert!(a.vehicles().iter().all(|v| !v.risk_prone));
        assert_eq!(b.vehicles().iter().filter(|v| v.risk_prone).count(), 30);
    }

    #[test]
    fn empty_road_coasting() {
        let mut cfg = ScenarioConfig::new(Task::Highway).with_count(0);
        cfg.strict_ranges = false;
        let mut w = World::build(&cfg).unwrap();
        let x0 = w.ego().state.position.x;
        for _ in 0..15 {
            let events = w.step(ControlInput::default(), 1.0 / 15.0).unwrap();
            assert!(events.is_empty());
        }
        assert!((w.ego().state.position.x - x0 - 25.0).abs() < 1e-9);
    }

    #[test]
    fn forced_overlap_reported_once_per_pair() {
        let mut cfg = ScenarioConfig::new(Task::Highway).with_count(1);
        cfg.strict_ranges = false;
        let mut w = World::build(&cfg).unwrap();
        let ego = w.vehicles[0].state.clone();
        w.vehicles[1].state.position = ego.position + Vec2::new(1.0, 0.5);
        w.vehicles[1].state.heading = ego.heading + 0.3;
        w.vehicles[1].state.lane = ego.lane;
        w.vehicles[1].state.target_lane = ego.lane;
        let events = w.step(ControlInput::default(), 1.0 / 15.0).unwrap();
        let collisions: Vec<_> = events
            .iter()
            .filter(|e| matches!(e, WorldEvent::Collision { .. }))
            .collect();
        assert_eq!(collisions, vec![&WorldEvent::Collision { a: 0, b: 1 }]);
    }

    #[test]
    fn nonpositive_dt_rejected() {
        let mut w = World::build(&ScenarioConfig::new(Task::UTurn).with_count(3)).unwrap();
        assert!(w.step(ControlInput::default(), 0.0).is_err());
    }

    #[test]
    fn spawn_flow_zero_probability() {
        let mut w = World::build(&ScenarioConfig::new(Task::Intersection).with_count(10)).unwrap();
        let n = w.vehicles().len();
        for _ in 0..60 {
            assert_eq!(w.spawn_flow(0.0).unwrap(), None);
        }
        assert_eq!(w.vehicles().len(), n);
    }

    #[test]
    fn spawn_flow_certain_with_free_entries() {
        let mut w = World::build(&ScenarioConfig::new(Task::Intersection).with_count(10)).unwrap();
        w.ghost_ego = true;
        w.spawn_probability = 0.0;
        let mut spawned = 0;
        for _ in 0..10 {
            if w.spawn_flow(1.0).unwrap().is_some() {
                spawned += 1;
            }
            for _ in 0..15 {
                w.step(ControlInput::default(), 1.0 / 15.0).unwrap();
            }
        }
        assert_eq!(spawned, 10);
    }

    #[test]
    fn spawn_flow_rejects_other_tasks() {
        let mut w = World::build(&ScenarioConfig::new(Task::UTurn).with_count(3)).unwrap();
        assert!(w.spawn_flow(1.0).is_err());
    }
    #[test]
    fn random_configs_start_without_overlaps() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
        for k in 0..1000 {
            let task = Task::ALL[k % Task::ALL.len()];
            let (lo, hi) = task.count_range();
            let mut cfg = ScenarioConfig::new(task)
                .with_count(rng.gen_range(lo..=hi))
                .with_seed(rng.gen());
            cfg.treatment = rng.gen_bool(0.5);
            let w =
                World::build(&cfg).unwrap_or_else(|e| panic!("{task} {}: {e}", cfg.vehicle_count));
            assert_eq!(
                initial_collisions(&w),
                0,
                "{task} {} seed {}",
                cfg.vehicle_count,
                cfg.seed
            );
        }
    }

    #[test]
    fn spawn_flow_rate_is_binomial() {
        let mut w = World::build(
            &ScenarioConfig::new(Task::Intersection)
                .with_count(10)
                .with_seed(3),
        )
        .unwrap();
        w.ghost_ego = true;
        w.spawn_probability = 0.0;
        let mut spawned = 0i64;
        for _ in 0..100 {
            if w.spawn_flow(0.5).unwrap().is_some() {
                spawned += 1;
            }
            for _ in 0..15 {
                w.step(ControlInput::default(), 1.0 / 15.0).unwrap();
            }
        }
        assert!((spawned - 50).abs() <= 15, "{spawned} spawns");
    }

    #[test]
    fn control_highway_is_safe_for_lane_keeping_ego() {
        let mut w = World::build(
            &ScenarioConfig::new(Task::Highway)
                .with_count(50)
                .with_seed(21),
        )
        .unwrap();
        for _ in 0..300 {
            let occ = w.occupancy();
            let ego = &w.vehicles[0].state;
            let s = occ[ego.lane.0]
                .iter()
                .find(|o| o.idx == 0)
                .map_or(0.0, |o| o.s);
            let gap = w
                .leader(&occ, 0, ego.lane, s)
                .map(|(d, v, len)| (d - 0.5 * (len + ego.length), ego.speed - v));
            let accel = idm_acceleration(
                ego.speed,
                gap.map(|g| g.0),
                gap.map_or(0.0, |g| g.1),
                &ego.behavior,
            );
            let control = ControlInput::new(accel, w.ego_lane_keeping());
            let events = w.step(control, 1.0 / 15.0).unwrap();
            assert!(
                !events
                    .iter()
                    .any(|e| matches!(e, WorldEvent::Collision { .. })),
                "tick {}",
                w.tick()
            );
        }
    }
}
