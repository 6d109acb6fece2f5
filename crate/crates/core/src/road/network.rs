//! Lanes with Frenet parameterization, grouped into directed edges.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::geometry::{wrap_to_pi, Vec2};

pub const DEFAULT_LANE_WIDTH: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LaneId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EdgeId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LaneGeometry {
    Straight {
        start: Vec2,
        end: Vec2,
    },
    /// Circular arc; `sweep` is signed, positive meaning counterclockwise travel.
    Arc {
        center: Vec2,
        radius: f64,
        start_angle: f64,
        sweep: f64,
    },
}

#[derive(Debug, Clone)]
pub struct Lane {
    pub id: LaneId,
    pub edge: EdgeId,
    /// Position within the edge, 0 being the leftmost lane.
    pub index: usize,
    pub geometry: LaneGeometry,
    pub width: f64,
    pub speed_limit: f64,
    /// Passing lane laid over oncoming traffic; only the ego may use it.
    pub overtaking: bool,
}

impl Lane {
    pub fn length(&self) -> f64 {
        match self.geometry {
            LaneGeometry::Straight { start, end } => (end - start).norm(),
            LaneGeometry::Arc { radius, sweep, .. } => radius * sweep.abs(),
        }
    }

    /// World point at longitudinal `s` and signed lateral offset (positive to the left).
    pub fn position(&self, s: f64, lateral: f64) -> Vec2 {
        match self.geometry {
            LaneGeometry::Straight { start, end } => {
                let dir = (end - start) * (1.0 / (end - start).norm());
                start + dir * s + dir.perp() * lateral
            }
            LaneGeometry::Arc {
                center,
                radius,
                start_angle,
                sweep,
            } => {
                let sign = sweep.signum();
                let phi = start_angle + sign * s / radius;
                center + Vec2::from_angle(phi) * (radius - sign * lateral)
            }
        }
    }

    pub fn heading_at(&self, s: f64) -> f64 {
        match self.geometry {
            LaneGeometry::Straight { start, end } => (end - start).angle(),
            LaneGeometry::Arc {
                radius,
                start_angle,
                sweep,
                ..
            } => {
                let sign = sweep.signum();
                wrap_to_pi(start_angle + sign * s / radius + sign * FRAC_PI_2)
            }
        }
    }

    /// Inverse of [`Lane::position`]: returns `(s, lateral)`.
    pub fn local_coordinates(&self, p: Vec2) -> (f64, f64) {
        match self.geometry {
            LaneGeometry::Straight { start, end } => {
                let dir = (end - start) * (1.0 / (end - start).norm());
                let d = p - start;
                (d.dot(dir), dir.cross(d))
            }
            LaneGeometry::Arc {
                center,
                radius,
                start_angle,
                sweep,
            } => {
                let sign = sweep.signum();
                let d = p - center;
                let mid = start_angle + sweep / 2.0;
                let delta = sign * wrap_to_pi(d.angle() - mid);
                let s = radius * (sweep.abs() / 2.0 + delta);
                (s, sign * (radius - d.norm()))
            }
        }
    }

    /// Whether `p` lies on this lane, widened laterally by `margin` and longitudinally by one
    /// vehicle length at each end.
    pub fn on_lane(&self, p: Vec2, margin: f64) -> bool {
        let (s, lat) = self.local_coordinates(p);
        self.contains_local(s, lat, margin)
    }

    pub fn contains_local(&self, s: f64, lat: f64, margin: f64) -> bool {
        const END_SLACK: f64 = 5.0;
        lat.abs() <= self.width / 2.0 + margin && s >= -END_SLACK && s < self.length() + END_SLACK
    }
}

#[derive(Debug, Clone)]
pub struct Edge {
    pub id: EdgeId,
    pub name: String,
    pub lanes: Vec<LaneId>,
    pub successors: Vec<EdgeId>,
    pub predecessors: Vec<EdgeId>,
}

/// Directed graph of edges, each holding one or more parallel lanes.
#[derive(Debug, Clone, Default)]
pub struct RoadNetwork {
    lanes: Vec<Lane>,
    edges: Vec<Edge>,
    overlaps: Vec<Vec<LaneId>>,
}

impl RoadNetwork {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds an edge whose lanes are listed left to right.
    pub fn add_edge(&mut self, name: impl Into<String>, lanes: Vec<(LaneGeometry, f64)>) -> EdgeId {
        let edge = EdgeId(self.edges.len());
        let mut ids = Vec::with_capacity(lanes.len());
        for (index, (geometry, speed_limit)) in lanes.into_iter().enumerate() {
            let id = LaneId(self.lanes.len());
            self.lanes.push(Lane {
                id,
                edge,
                index,
                geometry,
                width: DEFAULT_LANE_WIDTH,
                speed_limit,
                overtaking: false,
            });
            self.overlaps.push(Vec::new());
            ids.push(id);
        }
        self.edges.push(Edge {
            id: edge,
            name: name.into(),
            lanes: ids,
            successors: Vec::new(),
            predecessors: Vec::new(),
        });
        edge
    }

    pub fn connect(&mut self, from: EdgeId, to: EdgeId) {
        self.edges[from.0].successors.push(to);
        self.edges[to.0].predecessors.push(from);
    }

    /// Declares two lanes as sharing road surface.
    pub fn set_overlapping(&mut self, a: LaneId, b: LaneId) {
        self.overlaps[a.0].push(b);
        self.overlaps[b.0].push(a);
    }

    pub fn mark_overtaking(&mut self, lane: LaneId) {
        self.lanes[lane.0].overtaking = true;
    }

    pub fn lanes(&self) -> &[Lane] {
        &self.lanes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn lane(&self, id: LaneId) -> &Lane {
        &self.lanes[id.0]
    }

    pub fn edge(&self, id: EdgeId) -> &Edge {
        &self.edges[id.0]
    }

    pub fn edge_by_name(&self, name: &str) -> Option<EdgeId> {
        self.edges.iter().find(|e| e.name == name).map(|e| e.id)
    }

    pub fn overlapping(&self, id: LaneId) -> &[LaneId] {
        &self.overlaps[id.0]
    }

    pub fn left_of(&self, id: LaneId) -> Option<LaneId> {
        let lane = self.lane(id);
        let edge = self.edge(lane.edge);
        lane.index.checked_sub(1).map(|i| edge.lanes[i])
    }

    pub fn right_of(&self, id: LaneId) -> Option<LaneId> {
        let lane = self.lane(id);
        self.edge(lane.edge).lanes.get(lane.index + 1).copied()
    }

    /// The lane of `next` that continues `lane`, keeping the lane index where possible.
    pub fn continuation(&self, lane: LaneId, next: EdgeId) -> LaneId {
        let idx = self.lane(lane).index;
        let lanes = &self.edge(next).lanes;
        lanes[idx.min(lanes.len() - 1)]
    }

    /// Closest lane that contains `p`, if any.
    pub fn locate(&self, p: Vec2) -> Option<(LaneId, f64, f64)> {
        self.lanes
            .iter()
            .filter_map(|lane| {
                let (s, lat) = lane.local_coordinates(p);
                (lat.abs() <= lane.width / 2.0 && s >= 0.0 && s <= lane.length())
                    .then_some((lane.id, s, lat))
            })
            .min_by(|a, b| a.2.abs().total_cmp(&b.2.abs()).then(a.0.cmp(&b.0)))
    }
}
