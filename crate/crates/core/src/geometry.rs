//! Positions, distances, elevation angles, and the three connectivity
//! matrices that drive sensing, coverage, and UAV-to-UAV detection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::ScenarioConfig;

/// A point in the local ENU frame of the disaster area, meters. Ground
/// terminals sit at z = 0; UAVs fly inside the altitude band; satellite
/// positions are expressed in the same frame (their z is huge).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position3D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Position3D {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn distance(&self, other: &Position3D) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        (dx * dx + dy * dy + dz * dz).sqrt()
    }

    /// Horizontal (ground-projected) distance.
    pub fn horizontal_distance(&self, other: &Position3D) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        (dx * dx + dy * dy).sqrt()
    }

    pub fn add_scaled(&self, v: [f64; 3], dt: f64) -> Position3D {
        Position3D::new(self.x + v[0] * dt, self.y + v[1] * dt, self.z + v[2] * dt)
    }
}

/// Elevation angle in degrees from a ground point to an airborne point:
/// 90° directly overhead, 0° at the horizon.
pub fn elevation_deg(ground: &Position3D, air: &Position3D) -> Result<f64> {
    let horiz = ground.horizontal_distance(air);
    let dz = air.z - ground.z;
    if horiz == 0.0 && dz == 0.0 {
        return Err(Error::Geometry("zero distance between endpoints".into()));
    }
    Ok(dz.atan2(horiz).to_degrees())
}

/// Binary connectivity between devices at one slot.
///
/// * `g[n][m]` — UAV m senses GT n (distance ≤ sense_range_gt),
/// * `u[i][m]` — UAVs i and m mutually detect each other
///   (distance ≤ sense_range_uav; diagonal fixed to 0, a UAV is not its own
///   neighbor),
/// * `c[n][m]` — UAV m can serve GT n (distance ≤ cover_range).
///
/// All thresholds are inclusive, and `cover_range < sense_range_gt` makes C
/// entrywise ≤ G.
#[derive(Debug, Clone, PartialEq)]
pub struct ConnectivityMatrices {
    pub g: Vec<Vec<bool>>,
    pub u: Vec<Vec<bool>>,
    pub c: Vec<Vec<bool>>,
}

impl ConnectivityMatrices {
    /// GTs covered by UAV m.
    pub fn covered_by(&self, m: usize) -> Vec<usize> {
        (0..self.c.len()).filter(|&n| self.c[n][m]).collect()
    }

    /// UAVs covering GT n, with their index.
    pub fn covering(&self, n: usize) -> Vec<usize> {
        (0..self.c[n].len()).filter(|&m| self.c[n][m]).collect()
    }

    /// Is GT n covered by at least one UAV?
    pub fn is_covered(&self, n: usize) -> bool {
        self.c[n].iter().any(|&b| b)
    }
}

/// Build the sensing/coverage/detection matrices from current positions.
pub fn sense_and_cover(
    gt_pos: &[Position3D],
    uav_pos: &[Position3D],
    cfg: &ScenarioConfig,
) -> ConnectivityMatrices {
    let n = gt_pos.len();
    let m = uav_pos.len();
    let mut g = vec![vec![false; m]; n];
    let mut c = vec![vec![false; m]; n];
    for (ni, gp) in gt_pos.iter().enumerate() {
        for (mi, up) in uav_pos.iter().enumerate() {
            let d = gp.distance(up);
            g[ni][mi] = d <= cfg.sense_range_gt;
            c[ni][mi] = d <= cfg.cover_range;
        }
    }
    let mut u = vec![vec![false; m]; m];
    for i in 0..m {
        for j in (i + 1)..m {
            let within = uav_pos[i].distance(&uav_pos[j]) <= cfg.sense_range_uav;
            u[i][j] = within;
            u[j][i] = within;
        }
    }
    ConnectivityMatrices { g, u, c }
}
