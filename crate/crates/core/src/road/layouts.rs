//! Road networks and static layout data for the five tasks.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_3, PI};

use super::network::{EdgeId, LaneGeometry, LaneId, RoadNetwork};
use super::scenario::{ScenarioConfig, Task};
use crate::geometry::Vec2;

/// Where background drivers must stop unless the junction ahead is clear.
#[derive(Debug, Clone)]
pub(crate) struct YieldPoint {
    pub lane: LaneId,
    pub stop_s: f64,
    pub kind: YieldKind,
}

#[derive(Debug, Clone)]
pub(crate) enum YieldKind {
    /// Merge into circulating traffic on `merge_lane`, bypassing `entry_edge`.
    Merge {
        merge_lane: LaneId,
        entry_edge: EdgeId,
    },
    /// Exclusive use of a crossing box; priority to the approach on the right.
    Box { approach: usize },
}

/// A chain of consecutive lanes along which background vehicles are laid out.
#[derive(Debug, Clone)]
pub(crate) struct PlacementSlot {
    pub lanes: Vec<LaneId>,
    pub start: f64,
    pub end: f64,
    /// Vehicles placed here follow the rest of the chain as their route.
    pub follow_chain: bool,
    pub oncoming: bool,
}

#[derive(Debug, Clone)]
pub(crate) struct TaskLayout {
    pub ego_lanes: Vec<LaneId>,
    pub ego_s: f64,
    pub ego_speed: f64,
    pub ego_route: Vec<EdgeId>,
    pub goal: Option<(EdgeId, f64)>,
    pub yields: Vec<YieldPoint>,
    /// Connector lanes inside the crossing box, per approach.
    pub box_lanes: Vec<Vec<LaneId>>,
    pub spawn_lanes: Vec<LaneId>,
    pub conflict_points: Vec<Vec2>,
    pub slots: Vec<PlacementSlot>,
    /// Probability of leaving the ring at each available exit.
    pub exit_probability: f64,
}

fn straight(a: Vec2, b: Vec2) -> LaneGeometry {
    LaneGeometry::Straight { start: a, end: b }
}

fn arc(center: Vec2, radius: f64, start_angle: f64, sweep: f64) -> LaneGeometry {
    LaneGeometry::Arc {
        center,
        radius,
        start_angle,
        sweep,
    }
}

fn rotate(geom: LaneGeometry, angle: f64) -> LaneGeometry {
    match geom {
        LaneGeometry::Straight { start, end } => straight(start.rotated(angle), end.rotated(angle)),
        LaneGeometry::Arc {
            center,
            radius,
            start_angle,
            sweep,
        } => arc(center.rotated(angle), radius, start_angle + angle, sweep),
    }
}

fn single(net: &RoadNetwork, e: EdgeId) -> LaneId {
    net.edge(e).lanes[0]
}

pub(crate) fn build(cfg: &ScenarioConfig) -> (RoadNetwork, TaskLayout) {
    match cfg.task {
        Task::Highway => highway(),
        Task::TwoWay => two_way(cfg.road_length_factor),
        Task::Roundabout => roundabout(),
        Task::Intersection => intersection(),
        Task::UTurn => u_turn(),
    }
}

pub(crate) const HIGHWAY_LANES: usize = 4;
const HIGHWAY_LENGTH: f64 = 4000.0;

fn highway() -> (RoadNetwork, TaskLayout) {
    let mut net = RoadNetwork::new();
    let lanes = (0..HIGHWAY_LANES)
        .map(|i| {
            let y = 4.0 * (HIGHWAY_LANES - 1 - i) as f64;
            (
                straight(Vec2::new(0.0, y), Vec2::new(HIGHWAY_LENGTH, y)),
                30.0,
            )
        })
        .collect();
    let e = net.add_edge("highway", lanes);
    let ids = net.edge(e).lanes.clone();
    let slots = ids
        .iter()
        .map(|&l| PlacementSlot {
            lanes: vec![l],
            start: 80.0,
            end: HIGHWAY_LENGTH - 50.0,
            follow_chain: false,
            oncoming: false,
        })
        .collect();
    let layout = TaskLayout {
        ego_lanes: ids,
        ego_s: 50.0,
        ego_speed: 25.0,
        ego_route: vec![],
        goal: None,
        yields: vec![],
        box_lanes: vec![],
        spawn_lanes: vec![],
        conflict_points: vec![Vec2::new(110.0, 6.0)],
        slots,
        exit_probability: 0.0,
    };
    (net, layout)
}

pub(crate) const TWO_WAY_BASE_LENGTH: f64 = 1000.0;

fn two_way(length_factor: f64) -> (RoadNetwork, TaskLayout) {
    let len = TWO_WAY_BASE_LENGTH * length_factor;
    let mut net = RoadNetwork::new();
    let fwd = net.add_edge(
        "forward",
        vec![
            (straight(Vec2::new(0.0, 4.0), Vec2::new(len, 4.0)), 20.0),
            (straight(Vec2::new(0.0, 0.0), Vec2::new(len, 0.0)), 20.0),
        ],
    );
    let onc = net.add_edge(
        "oncoming",
        vec![(straight(Vec2::new(len, 4.0), Vec2::new(0.0, 4.0)), 20.0)],
    );
    let passing = net.edge(fwd).lanes[0];
    let own = net.edge(fwd).lanes[1];
    let oncoming = single(&net, onc);
    net.mark_overtaking(passing);
    net.set_overlapping(passing, oncoming);
    let layout = TaskLayout {
        ego_lanes: vec![own],
        ego_s: 20.0,
        ego_speed: 20.0,
        ego_route: vec![],
        goal: Some((fwd, len - 10.0)),
        yields: vec![],
        box_lanes: vec![],
        spawn_lanes: vec![],
        conflict_points: vec![Vec2::new(140.0, 2.0)],
        slots: vec![
            PlacementSlot {
                lanes: vec![own],
                start: 60.0,
                end: len - 20.0,
                follow_chain: false,
                oncoming: false,
            },
            PlacementSlot {
                lanes: vec![oncoming],
                start: 20.0,
                end: len - 80.0,
                follow_chain: false,
                oncoming: true,
            },
        ],
        exit_probability: 0.0,
    };
    (net, layout)
}

const RING_RADIUS: f64 = 24.0;
const RING_ENTRY_RADIUS: f64 = 12.0;
const RING_APPROACH_LENGTH: f64 = 100.0;

fn roundabout() -> (RoadNetwork, TaskLayout) {
    let mut net = RoadNetwork::new();
    // Connector arcs of radius 12 leave x = ±6 and meet the ring tangentially 60° from the
    // axis, which puts the connector centers at (±18, −√(36² − 18²)).
    let cy = -((RING_RADIUS + RING_ENTRY_RADIUS).powi(2) - 18.0f64.powi(2)).sqrt();
    let deg = |d: f64| d.to_radians();
    let rot = |k: usize| k as f64 * FRAC_PI_2;

    // Junction angles on the ring: exits at −120° and entries at −60°, rotated per approach.
    let mut marks: Vec<(f64, usize, bool)> = Vec::new();
    for k in 0..4 {
        marks.push((normalize(deg(-120.0) + rot(k)), k, false));
        marks.push((normalize(deg(-60.0) + rot(k)), k, true));
    }
    marks.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut ring = Vec::new();
    for i in 0..marks.len() {
        let a0 = marks[i].0;
        let mut a1 = marks[(i + 1) % marks.len()].0;
        if a1 <= a0 {
            a1 += 2.0 * PI;
        }
        let e = net.add_edge(
            format!("ring_{i}"),
            vec![(arc(Vec2::ZERO, RING_RADIUS, a0, a1 - a0), 12.0)],
        );
        ring.push(e);
    }
    for i in 0..ring.len() {
        net.connect(ring[i], ring[(i + 1) % ring.len()]);
    }
    // Ring edge that starts at a given mark, and the one that ends there.
    let starting_at = |k: usize, entry: bool| {
        marks
            .iter()
            .position(|m| m.1 == k && m.2 == entry)
            .expect("mark exists")
    };

    let mut ins = Vec::new();
    let mut outs = Vec::new();
    let mut entries = Vec::new();
    let mut yields = Vec::new();
    let mut conflict_points = Vec::new();
    for k in 0..4 {
        let r = rot(k);
        let in_e = net.add_edge(
            format!("in_{k}"),
            vec![(
                rotate(
                    straight(
                        Vec2::new(6.0, cy - RING_APPROACH_LENGTH),
                        Vec2::new(6.0, cy),
                    ),
                    r,
                ),
                15.0,
            )],
        );
        let entry = net.add_edge(
            format!("entry_{k}"),
            vec![(
                rotate(
                    arc(Vec2::new(18.0, cy), RING_ENTRY_RADIUS, PI, -FRAC_PI_3),
                    r,
                ),
                10.0,
            )],
        );
        let exit = net.add_edge(
            format!("exit_{k}"),
            vec![(
                rotate(
                    arc(
                        Vec2::new(-18.0, cy),
                        RING_ENTRY_RADIUS,
                        FRAC_PI_3,
                        -FRAC_PI_3,
                    ),
                    r,
                ),
                10.0,
            )],
        );
        let out = net.add_edge(
            format!("out_{k}"),
            vec![(
                rotate(
                    straight(
                        Vec2::new(-6.0, cy),
                        Vec2::new(-6.0, cy - RING_APPROACH_LENGTH),
                    ),
                    r,
                ),
                15.0,
            )],
        );
        let merge_ring = ring[starting_at(k, true)];
        let before_exit = ring[(starting_at(k, false) + ring.len() - 1) % ring.len()];
        net.connect(in_e, entry);
        net.connect(entry, merge_ring);
        net.connect(before_exit, exit);
        net.connect(exit, out);
        let in_lane = single(&net, in_e);
        yields.push(YieldPoint {
            lane: in_lane,
            stop_s: net.lane(in_lane).length() - 1.0,
            kind: YieldKind::Merge {
                merge_lane: single(&net, merge_ring),
                entry_edge: entry,
            },
        });
        conflict_points.push(Vec2::from_angle(deg(-60.0) + r) * RING_RADIUS);
        ins.push(in_e);
        outs.push(out);
        entries.push(entry);
    }

    // Ego: south approach, three quarter-arcs around, out to the north.
    let mut ego_route = vec![entries[0]];
    let mut i = starting_at(0, true);
    loop {
        ego_route.push(ring[i]);
        let exit_here = net
            .edge(ring[i])
            .successors
            .iter()
            .any(|&s| net.edge(s).name == "exit_2");
        if exit_here {
            break;
        }
        i = (i + 1) % ring.len();
    }
    ego_route.push(net.edge_by_name("exit_2").expect("exit_2"));
    ego_route.push(outs[2]);

    let ring_lanes: Vec<LaneId> = ring.iter().map(|&e| single(&net, e)).collect();
    let ring_len: f64 = ring_lanes.iter().map(|&l| net.lane(l).length()).sum();
    let mut slots = vec![PlacementSlot {
        lanes: ring_lanes,
        start: 0.0,
        end: ring_len - 6.0,
        follow_chain: false,
        oncoming: false,
    }];
    for &e in &ins[1..] {
        let lane = single(&net, e);
        slots.push(PlacementSlot {
            lanes: vec![lane],
            start: 10.0,
            end: net.lane(lane).length() - 12.0,
            follow_chain: false,
            oncoming: false,
        });
    }
    let ego_lane = single(&net, ins[0]);
    let layout = TaskLayout {
        ego_lanes: vec![ego_lane],
        ego_s: 40.0,
        ego_speed: 10.0,
        ego_route,
        goal: Some((outs[2], 30.0)),
        yields,
        box_lanes: vec![],
        spawn_lanes: vec![],
        conflict_points,
        slots,
        exit_probability: 0.35,
    };
    (net, layout)
}

fn normalize(a: f64) -> f64 {
    a.rem_euclid(2.0 * PI)
}

const BOX_HALF: f64 = 10.0;
const CROSSING_APPROACH_LENGTH: f64 = 150.0;

fn intersection() -> (RoadNetwork, TaskLayout) {
    let mut net = RoadNetwork::new();
    let rot = |k: usize| k as f64 * FRAC_PI_2;
    let far = BOX_HALF + CROSSING_APPROACH_LENGTH;
    let mut ins = Vec::new();
    let mut outs = Vec::new();
    for k in 0..4 {
        let r = rot(k);
        ins.push(net.add_edge(
            format!("in_{k}"),
            vec![(
                rotate(straight(Vec2::new(2.0, -far), Vec2::new(2.0, -BOX_HALF)), r),
                12.0,
            )],
        ));
        outs.push(net.add_edge(
            format!("out_{k}"),
            vec![(
                rotate(
                    straight(Vec2::new(-2.0, -BOX_HALF), Vec2::new(-2.0, -far)),
                    r,
                ),
                12.0,
            )],
        ));
    }
    let mut box_lanes = vec![Vec::new(); 4];
    let mut yields = Vec::new();
    let mut conflict_points = Vec::new();
    for k in 0..4 {
        let r = rot(k);
        let connectors = [
            (
                "straight",
                (k + 2) % 4,
                straight(Vec2::new(2.0, -BOX_HALF), Vec2::new(2.0, BOX_HALF)),
            ),
            (
                "right",
                (k + 1) % 4,
                arc(
                    Vec2::new(BOX_HALF, -BOX_HALF),
                    BOX_HALF - 2.0,
                    PI,
                    -FRAC_PI_2,
                ),
            ),
            (
                "left",
                (k + 3) % 4,
                arc(
                    Vec2::new(-BOX_HALF, -BOX_HALF),
                    BOX_HALF + 2.0,
                    0.0,
                    FRAC_PI_2,
                ),
            ),
        ];
        for (name, dest, geom) in connectors {
            let e = net.add_edge(format!("cross_{k}_{name}"), vec![(rotate(geom, r), 9.0)]);
            net.connect(ins[k], e);
            net.connect(e, outs[dest]);
            box_lanes[k].push(single(&net, e));
        }
        let lane = single(&net, ins[k]);
        yields.push(YieldPoint {
            lane,
            stop_s: net.lane(lane).length() - 3.0,
            kind: YieldKind::Box { approach: k },
        });
        conflict_points.push(Vec2::new(2.0, -BOX_HALF).rotated(r));
    }
    let mut slots = Vec::new();
    for k in 1..4 {
        let lane = single(&net, ins[k]);
        slots.push(PlacementSlot {
            lanes: vec![lane],
            start: 10.0,
            end: net.lane(lane).length() - 8.0,
            follow_chain: false,
            oncoming: false,
        });
    }
    for k in [0, 1, 2] {
        let lane = single(&net, outs[k]);
        slots.push(PlacementSlot {
            lanes: vec![lane],
            start: 15.0,
            end: net.lane(lane).length() - 10.0,
            follow_chain: false,
            oncoming: false,
        });
    }
    let left = net.edge_by_name("cross_0_left").expect("connector");
    let layout = TaskLayout {
        ego_lanes: vec![single(&net, ins[0])],
        ego_s: CROSSING_APPROACH_LENGTH - 50.0,
        ego_speed: 8.0,
        ego_route: vec![left, outs[3]],
        goal: Some((outs[3], 40.0)),
        yields,
        box_lanes,
        spawn_lanes: ins.iter().map(|&e| single(&net, e)).collect(),
        conflict_points,
        slots,
        exit_probability: 0.0,
    };
    (net, layout)
}

const U_TURN_STRAIGHT: f64 = 120.0;
const U_TURN_CENTER_Y: f64 = 18.0;

fn u_turn() -> (RoadNetwork, TaskLayout) {
    let mut net = RoadNetwork::new();
    let c = Vec2::new(U_TURN_STRAIGHT, U_TURN_CENTER_Y);
    let a = net.add_edge(
        "outbound",
        vec![
            (
                straight(Vec2::new(0.0, 2.0), Vec2::new(U_TURN_STRAIGHT, 2.0)),
                20.0,
            ),
            (
                straight(Vec2::new(0.0, -2.0), Vec2::new(U_TURN_STRAIGHT, -2.0)),
                20.0,
            ),
        ],
    );
    let u = net.add_edge(
        "turn",
        vec![
            (arc(c, U_TURN_CENTER_Y - 2.0, -FRAC_PI_2, PI), 12.0),
            (arc(c, U_TURN_CENTER_Y + 2.0, -FRAC_PI_2, PI), 12.0),
        ],
    );
    let yb = |r: f64| U_TURN_CENTER_Y + r;
    let b = net.add_edge(
        "return",
        vec![
            (
                straight(
                    Vec2::new(U_TURN_STRAIGHT, yb(U_TURN_CENTER_Y - 2.0)),
                    Vec2::new(0.0, yb(U_TURN_CENTER_Y - 2.0)),
                ),
                20.0,
            ),
            (
                straight(
                    Vec2::new(U_TURN_STRAIGHT, yb(U_TURN_CENTER_Y + 2.0)),
                    Vec2::new(0.0, yb(U_TURN_CENTER_Y + 2.0)),
                ),
                20.0,
            ),
        ],
    );
    net.connect(a, u);
    net.connect(u, b);
    let slots = (0..2)
        .map(|i| {
            let lanes: Vec<LaneId> = [a, u, b].iter().map(|&e| net.edge(e).lanes[i]).collect();
            let total: f64 = lanes.iter().map(|&l| net.lane(l).length()).sum();
            PlacementSlot {
                lanes,
                start: 45.0,
                end: total - 15.0,
                follow_chain: true,
                oncoming: false,
            }
        })
        .collect();
    let layout = TaskLayout {
        ego_lanes: net.edge(a).lanes.clone(),
        ego_s: 10.0,
        ego_speed: 15.0,
        ego_route: vec![u, b],
        goal: Some((b, U_TURN_STRAIGHT - 20.0)),
        yields: vec![],
        box_lanes: vec![],
        spawn_lanes: vec![],
        conflict_points: vec![c + Vec2::new(U_TURN_CENTER_Y, 0.0)],
        slots,
        exit_probability: 0.0,
    };
    (net, layout)
}
