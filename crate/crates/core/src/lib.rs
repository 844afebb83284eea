//! Discrete-time simulator and analysis toolkit for a post-disaster data
//! collection network: ground terminals uplink fixed-size packets to data
//! ferrying UAVs (which also beam wireless power), and the UAVs forward the
//! traffic to a low-Earth-orbit constellation under a NOMA uplink.
//!
//! Everything is deterministic given a scenario file and a seed: randomness
//! flows through counter-keyed streams, so any slot's draws are reproducible
//! in isolation.

pub mod analytics;
pub mod baselines;
pub mod channel;
pub mod constellation;
pub mod episode;
pub mod error;
pub mod feasible;
pub mod geometry;
pub mod gt;
pub mod mdp;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod scenario;
pub mod uav;
pub mod world;

pub use error::{Error, Result};
pub use scenario::{load_scenario, ScenarioConfig};
