//! Traffic microsimulation and reinforcement-learning testbed for measuring how much
//! training on risk-prone traffic improves driving agents.
//!
//! The crate is layered bottom-up:
//!
//! * [`geometry`]: vectors, oriented boxes and the separating-axis collision test.
//! * [`dynamics`]: kinematic bicycle, IDM car following, MOBIL lane changes and the
//!   randomized controls used by risk-prone drivers.
//! * [`road`]: lane networks, the five scenario builders, world stepping and traces.
//! * [`env`]: the discrete-action episodic environment around a world.
//! * [`neural`]: a dueling Q-network with hand-written backpropagation and ADAM.
//! * [`agent`]: replay buffer, epsilon-greedy DQN training and greedy evaluation.
//! * [`experiment`]: paired treatment/control arms and average-treatment-effect records.

pub mod agent;
pub mod config;
pub mod dynamics;
pub mod env;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod neural;
pub mod road;
pub(crate) mod seeding;

pub use agent::{evaluate, train, TrainConfig, TrainingCurve, Transition};
pub use dynamics::{BehaviorParams, ControlInput, VehicleState};
pub use env::{Action, DrivingEnv, EnvConfig, Observation, StepOutcome};
pub use neural::{DuelingCombine, NetworkParams, NetworkSpec};

pub use error::{Error, Result};

pub use geometry::{sat_intersects, OrientedBox, Vec2};

pub use road::{ScenarioConfig, Task, World};

pub use config::RunConfig;
pub use experiment::{AteRecord, EvalMatrix};
