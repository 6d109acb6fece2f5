//! Roads, scenarios and the simulated world.

pub(crate) mod layouts;
pub mod network;
pub mod scenario;
pub mod trace;
pub mod world;

pub use network::{Edge, EdgeId, Lane, LaneGeometry, LaneId, RoadNetwork};
pub use scenario::{apply_treatment, ScenarioConfig, Task, TrafficLevel};
pub use trace::TraceRecord;
pub use world::{build_scenario, Vehicle, World, WorldEvent};
