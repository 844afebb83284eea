//! World state: every device of the network plus the per-slot connectivity
//! and schedule, and deterministic initial placement.
//!
//! Terminals are dropped uniformly at random over the area (keyed by the run
//! seed); UAVs start on a regular grid at mid-altitude so the safety-distance
//! invariant holds from slot 0; orbits are phase-staggered so their service
//! windows interleave.

use rand::Rng;

use crate::channel::OutageMatrix;
use crate::constellation::LeoOrbit;
use crate::geometry::{sense_and_cover, ConnectivityMatrices, Position3D};
use crate::gt::GroundTerminal;
use crate::rng::{Purpose, RngStream};
use crate::scenario::ScenarioConfig;
use crate::uav::Uav;

/// Full simulation state between slots.
#[derive(Debug, Clone)]
pub struct WorldState {
    /// Current slot (0-based; state reflects the end of `slot − 1`).
    pub slot: u64,
    pub gts: Vec<GroundTerminal>,
    pub uavs: Vec<Uav>,
    pub orbits: Vec<LeoOrbit>,
    pub outage: OutageMatrix,
    /// Sense/coverage matrices at the current UAV positions.
    pub conn: ConnectivityMatrices,
    /// Current GT→UAV schedule, N×M.
    pub schedule: Vec<Vec<bool>>,
}

impl WorldState {
    pub fn gt_positions(&self) -> Vec<Position3D> {
        self.gts.iter().map(|g| g.pos).collect()
    }

    pub fn uav_positions(&self) -> Vec<Position3D> {
        self.uavs.iter().map(|u| u.pos).collect()
    }

    /// Recompute sense/coverage matrices from current positions.
    pub fn refresh_connectivity(&mut self, cfg: &ScenarioConfig) {
        self.conn = sense_and_cover(&self.gt_positions(), &self.uav_positions(), cfg);
    }

    /// Mean GT age total at the end of slot `t`.
    pub fn mean_gt_aoi(&self, t: u64) -> f64 {
        self.gts.iter().map(|g| g.aoi(t)).sum::<f64>() / self.gts.len() as f64
    }

    /// Mean UAV buffered age total at the end of slot `t`.
    pub fn mean_uav_aoi(&self, t: u64) -> f64 {
        self.uavs.iter().map(|u| u.aoi(t)).sum::<f64>() / self.uavs.len() as f64
    }

    /// Per-UAV activity flags (standby rule inputs are battery levels; the
    /// flags themselves are maintained by the episode loop).
    pub fn active_flags(&self) -> Vec<bool> {
        self.uavs.iter().map(|u| u.active).collect()
    }
}

/// Regular launch grid: UAVs centered in the cells of the smallest
/// near-square grid holding them all, at mid-altitude.
pub fn uav_grid_positions(cfg: &ScenarioConfig) -> Vec<Position3D> {
    let m = cfg.n_uavs;
    let cols = (m as f64).sqrt().ceil() as usize;
    let rows = m.div_ceil(cols);
    let z = 0.5 * (cfg.alt_min + cfg.alt_max);
    (0..m)
        .map(|i| {
            let (r, c) = (i / cols, i % cols);
            Position3D::new(
                (c as f64 + 0.5) * cfg.area_side / cols as f64,
                (r as f64 + 0.5) * cfg.area_side / rows as f64,
                z,
            )
        })
        .collect()
}

/// Build the initial world for one run.
pub fn init_world(cfg: &ScenarioConfig, stream: &RngStream) -> WorldState {
    let gts = (0..cfg.n_gts)
        .map(|n| {
            let mut rng = stream.rng(Purpose::Placement, n as u64, 0);
            let pos = Position3D::new(
                rng.gen::<f64>() * cfg.area_side,
                rng.gen::<f64>() * cfg.area_side,
                0.0,
            );
            GroundTerminal::new(pos, cfg)
        })
        .collect::<Vec<_>>();
    let uavs = uav_grid_positions(cfg)
        .into_iter()
        .map(|p| Uav::new(p, cfg))
        .collect::<Vec<_>>();
    let orbits = (0..cfg.n_leos).map(|k| LeoOrbit::from_config(cfg, k)).collect();
    let conn = sense_and_cover(
        &gts.iter().map(|g| g.pos).collect::<Vec<_>>(),
        &uavs.iter().map(|u| u.pos).collect::<Vec<_>>(),
        cfg,
    );
    let schedule = vec![vec![false; cfg.n_uavs]; cfg.n_gts];
    WorldState {
        slot: 0,
        gts,
        uavs,
        orbits,
        outage: OutageMatrix::new(cfg.n_uavs, cfg.n_leos, cfg.sats_per_leo),
        conn,
        schedule,
    }
}
