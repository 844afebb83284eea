//! LEO constellation kinematics: circular coplanar orbits over the target
//! area, coverage geometry, per-orbit nearest-satellite selection, and the
//! service/wait interval arithmetic used by the closed-form AoI expectations.
//!
//! Each orbit is a circle of radius `d_E + h_k` in the vertical plane through
//! the area center. A satellite's state is fully described by its central
//! angle φ relative to the zenith of the area center; it is in service
//! exactly when |φ| ≤ ω_C, which is equivalent to its elevation being at
//! least the configured minimum.

use crate::geometry::Position3D;
use crate::scenario::ScenarioConfig;

/// One circular orbit with equally spaced satellites.
#[derive(Debug, Clone, PartialEq)]
pub struct LeoOrbit {
    /// Orbit altitude above ground, m.
    pub altitude: f64,
    /// Number of satellites on the ring.
    pub sat_count: usize,
    /// Tangential speed, m/s.
    pub speed: f64,
    /// Phase offset of satellite 0 at t = 0, rad.
    pub phase: f64,
    /// Earth radius used for the ring geometry, m.
    pub earth_radius: f64,
}

impl LeoOrbit {
    /// Build orbit k of the configured constellation. Orbits are staggered in
    /// phase so their service windows interleave instead of coinciding.
    pub fn from_config(cfg: &ScenarioConfig, k: usize) -> Self {
        let l = cfg.sats_per_leo;
        Self {
            altitude: cfg.leo_altitude,
            sat_count: l,
            speed: cfg.sat_speed,
            phase: 2.0 * std::f64::consts::PI * k as f64 / (l as f64 * cfg.n_leos as f64),
            earth_radius: cfg.earth_radius,
        }
    }

    /// Orbit radius from the Earth's center, m.
    pub fn radius(&self) -> f64 {
        self.earth_radius + self.altitude
    }

    /// Orbital period 2π(d_E+h)/v, s.
    pub fn period(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.radius() / self.speed
    }

    /// Central angle of satellite `l` at time `t`, normalized to (−π, π].
    pub fn sat_angle(&self, l: usize, t: f64) -> f64 {
        let two_pi = 2.0 * std::f64::consts::PI;
        let raw = self.phase + two_pi * l as f64 / self.sat_count as f64
            + self.speed / self.radius() * t;
        let mut a = raw.rem_euclid(two_pi);
        if a > std::f64::consts::PI {
            a -= two_pi;
        }
        a
    }
}

/// Interval arithmetic of one orbit's passes over the area.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SatWindow {
    /// Coverage half-angle ω_C, rad.
    pub omega_c: f64,
    /// Time one satellite stays in service per pass, s.
    pub coverage_time: f64,
    /// Time between consecutive satellites reaching the same phase, s.
    pub inter_sat: f64,
    /// Service time within one inter-satellite interval, s.
    pub service: f64,
    /// Wait time within one inter-satellite interval, s.
    pub wait: f64,
}

/// Coverage half-angle and single-satellite coverage time:
/// ω_C = arccos(d_E·cos(ω_A)/(d_E+h)) − ω_A and T_cov = 2(d_E+h)·ω_C/v.
pub fn coverage_geometry(cfg: &ScenarioConfig) -> (f64, f64) {
    let r = cfg.earth_radius + cfg.leo_altitude;
    let omega_c = (cfg.earth_radius * cfg.min_elevation.cos() / r).acos() - cfg.min_elevation;
    let t_cov = 2.0 * r * omega_c / cfg.sat_speed;
    (omega_c, t_cov)
}

/// Nearest serving satellite of an orbit plus the window arithmetic at time
/// `t`. The nearest satellite is the phase-wise closest one that is above the
/// minimum elevation (|φ| ≤ ω_C); `None` while the orbit has no satellite in
/// service. All UAVs in the (small) area share the same selection.
pub fn sat_schedule(orbit: &LeoOrbit, cfg: &ScenarioConfig, t: f64) -> (Option<usize>, SatWindow) {
    let (omega_c, t_cov) = coverage_geometry(cfg);
    let inter_sat = orbit.period() / orbit.sat_count as f64;
    let window = SatWindow {
        omega_c,
        coverage_time: t_cov,
        inter_sat,
        service: inter_sat.min(t_cov),
        wait: (inter_sat - t_cov).max(0.0),
    };
    let mut nearest: Option<(usize, f64)> = None;
    for l in 0..orbit.sat_count {
        let a = orbit.sat_angle(l, t).abs();
        if a <= omega_c {
            match nearest {
                Some((_, best)) if best <= a => {}
                _ => nearest = Some((l, a)),
            }
        }
    }
    (nearest.map(|(l, _)| l), window)
}

/// ENU positions of all satellites of an orbit at time `t`, in the same
/// local frame as GTs and UAVs (area center at (side/2, side/2, 0), Earth
/// center directly below it).
pub fn sat_positions(orbit: &LeoOrbit, cfg: &ScenarioConfig, t: f64) -> Vec<Position3D> {
    let cx = cfg.area_side / 2.0;
    let cy = cfg.area_side / 2.0;
    let r = orbit.radius();
    (0..orbit.sat_count)
        .map(|l| {
            let a = orbit.sat_angle(l, t);
            Position3D::new(cx + r * a.sin(), cy, r * a.cos() - cfg.earth_radius)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::elevation_deg;
    use crate::scenario::FileScenario;

    fn cfg_zero_elev() -> ScenarioConfig {
        let f: FileScenario = serde_json::from_str(r#"{"min_elevation": 0.0}"#).unwrap();
        ScenarioConfig::try_from(f).unwrap()
    }

    #[test]
    fn coverage_half_angle_matches_hand_computation() {
        // arccos(6371/6921) with zero minimum elevation.
        let (wc, tcov) = coverage_geometry(&cfg_zero_elev());
        assert!((wc - 0.40135697532734116).abs() / 0.40135697532734116 < 1e-12);
        assert!((tcov - 731.9609028301787).abs() / 731.9609028301787 < 1e-12);
    }

    #[test]
    fn coverage_shrinks_with_higher_elevation_floor_and_lower_altitude() {
        let base = cfg_zero_elev();
        let (wc0, _) = coverage_geometry(&base);
        let f: FileScenario = serde_json::from_str(r#"{"min_elevation": 0.3}"#).unwrap();
        let (wc1, _) = coverage_geometry(&ScenarioConfig::try_from(f).unwrap());
        assert!(wc1 < wc0);
        let f: FileScenario =
            serde_json::from_str(r#"{"min_elevation": 0.0, "leo_altitude": 1.0}"#).unwrap();
        let (wc2, tcov2) = coverage_geometry(&ScenarioConfig::try_from(f).unwrap());
        assert!(wc2 < 1e-3 && tcov2 < 2.0, "vanishing altitude collapses coverage");
    }

    #[test]
    fn window_arithmetic_for_22_and_4_satellites() {
        let cfg = cfg_zero_elev();
        let orbit = LeoOrbit::from_config(&cfg, 0);
        let (_, w) = sat_schedule(&orbit, &cfg, 0.0);
        assert!((w.inter_sat - 260.42595227566125).abs() / 260.42595227566125 < 1e-12);
        // Dense ring: coverage exceeds the interval, so no waiting.
        assert_eq!(w.wait, 0.0);
        assert_eq!(w.service, w.inter_sat);

        let f: FileScenario =
            serde_json::from_str(r#"{"min_elevation": 0.0, "sats_per_leo": 4}"#).unwrap();
        let cfg4 = ScenarioConfig::try_from(f).unwrap();
        let orbit4 = LeoOrbit::from_config(&cfg4, 0);
        let (_, w4) = sat_schedule(&orbit4, &cfg4, 0.0);
        assert!((w4.inter_sat - 1432.342737516137).abs() / 1432.342737516137 < 1e-12);
        assert!((w4.wait - 700.3818346859583).abs() / 700.3818346859583 < 1e-12);
        assert!((w4.service + w4.wait - w4.inter_sat).abs() < 1e-9);
    }

    #[test]
    fn positions_are_periodic_and_equally_spaced() {
        let cfg = cfg_zero_elev();
        let orbit = LeoOrbit::from_config(&cfg, 0);
        let p0 = sat_positions(&orbit, &cfg, 0.0);
        let pt = sat_positions(&orbit, &cfg, orbit.period());
        for (a, b) in p0.iter().zip(pt.iter()) {
            assert!(a.distance(b) / orbit.radius() < 1e-9, "period must close the ring");
        }
        // Adjacent arc length 2πr/L ≈ 1976 km for L=22.
        let arc = 2.0 * std::f64::consts::PI * orbit.radius() / 22.0;
        assert!((arc - 1_976_632.9777722692).abs() < 1.0);
        // Chord between adjacent satellites must be constant.
        let chord01 = p0[0].distance(&p0[1]);
        for l in 1..orbit.sat_count {
            let c = p0[l].distance(&p0[(l + 1) % orbit.sat_count]);
            assert!((c - chord01).abs() / chord01 < 1e-9);
        }
    }

    #[test]
    fn zenith_slant_range_is_the_altitude() {
        let cfg = cfg_zero_elev();
        let orbit = LeoOrbit {
            altitude: cfg.leo_altitude,
            sat_count: 1,
            speed: cfg.sat_speed,
            phase: 0.0,
            earth_radius: cfg.earth_radius,
        };
        let center = Position3D::new(cfg.area_side / 2.0, cfg.area_side / 2.0, 0.0);
        let p = sat_positions(&orbit, &cfg, 0.0);
        assert!((center.distance(&p[0]) - cfg.leo_altitude).abs() < 1e-6);
    }

    #[test]
    fn service_condition_matches_elevation_threshold() {
        // Inverse-geometry check: at φ = ω_C the satellite sits exactly at
        // the minimum elevation as seen from the area center.
        let f: FileScenario = serde_json::from_str(r#"{"min_elevation": 0.17}"#).unwrap();
        let cfg = ScenarioConfig::try_from(f).unwrap();
        let (wc, _) = coverage_geometry(&cfg);
        let orbit = LeoOrbit {
            altitude: cfg.leo_altitude,
            sat_count: 1,
            speed: cfg.sat_speed,
            phase: wc,
            earth_radius: cfg.earth_radius,
        };
        let center = Position3D::new(cfg.area_side / 2.0, cfg.area_side / 2.0, 0.0);
        let p = sat_positions(&orbit, &cfg, 0.0);
        let elev = elevation_deg(&center, &p[0]).unwrap().to_radians();
        assert!(
            (elev - cfg.min_elevation).abs() < 1e-9,
            "elevation at the coverage edge must equal the configured floor"
        );
    }

    #[test]
    fn nearest_selection_picks_the_smallest_phase() {
        let cfg = cfg_zero_elev();
        let orbit = LeoOrbit::from_config(&cfg, 0);
        let (nearest, w) = sat_schedule(&orbit, &cfg, 10.0);
        let l = nearest.expect("dense ring always has a serving satellite");
        let chosen = orbit.sat_angle(l, 10.0).abs();
        for other in 0..orbit.sat_count {
            let a = orbit.sat_angle(other, 10.0).abs();
            if a <= w.omega_c {
                assert!(chosen <= a);
            }
        }
    }
}
