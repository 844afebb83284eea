//! Constraint predicates (C1–C12) and the action projections that make raw
//! policy outputs feasible.
//!
//! Motion projection runs per UAV in index order. Each mover's obstacles are
//! the already-projected final positions of lower-indexed UAVs plus the
//! current positions of the rest, so holding position is always feasible
//! (lower-indexed movers kept their distance to it, everyone else hasn't
//! moved) — the α-scan therefore always terminates with a feasible point,
//! and the fully projected configuration is pairwise safe. Feasible inputs
//! pass through bit-exactly.

use std::fmt;

use crate::geometry::Position3D;
use crate::mdp::{ActionL1, ActionL2};
use crate::scenario::ScenarioConfig;
use crate::world::WorldState;

/// Tolerance for floating-point boundary checks.
const EPS: f64 = 1e-9;

/// The twelve operational constraints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintId {
    /// Velocity norm cap.
    C1,
    /// Horizontal position inside the area.
    C2,
    /// At most one serving UAV per terminal.
    C3,
    /// Per-UAV scheduled terminals within the subchannel budget.
    C4,
    /// Flight battery above the return threshold at episode end.
    C5,
    /// Pairwise UAV separation.
    C6,
    /// Altitude band.
    C7,
    /// Serving only covered terminals.
    C8,
    /// Bandwidth fractions sum at most one.
    C9,
    /// Transmit power in (0, P_max].
    C10,
    /// At most one satellite per UAV.
    C11,
    /// Harvest board within [0, capacity].
    C12,
}

impl fmt::Display for ConstraintId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// One failed constraint with context.
#[derive(Debug, Clone)]
pub struct Violation {
    pub id: ConstraintId,
    pub detail: String,
}

fn clamp_box(p: Position3D, cfg: &ScenarioConfig) -> Position3D {
    Position3D::new(
        p.x.clamp(0.0, cfg.area_side),
        p.y.clamp(0.0, cfg.area_side),
        p.z.clamp(cfg.alt_min, cfg.alt_max),
    )
}

/// Evaluate every applicable constraint against the world and the proposed
/// actions; pure. Motion constraints are checked on the positions the
/// actions would produce. `at_episode_end` arms the return-battery check.
pub fn check_feasible(
    world: &WorldState,
    l1: Option<&[ActionL1]>,
    l2: Option<&ActionL2>,
    at_episode_end: bool,
    cfg: &ScenarioConfig,
) -> Vec<Violation> {
    let mut v = Vec::new();
    let mut fail = |id: ConstraintId, detail: String| v.push(Violation { id, detail });

    if let Some(actions) = l1 {
        let post: Vec<Position3D> = world
            .uavs
            .iter()
            .zip(actions)
            .map(|(u, a)| u.pos.add_scaled(a.velocity, cfg.slot_seconds))
            .collect();
        for (m, a) in actions.iter().enumerate() {
            if a.speed() > cfg.v_max + EPS {
                fail(ConstraintId::C1, format!("UAV {m} speed {:.3}", a.speed()));
            }
            let p = post[m];
            if !(-EPS..=cfg.area_side + EPS).contains(&p.x)
                || !(-EPS..=cfg.area_side + EPS).contains(&p.y)
            {
                fail(ConstraintId::C2, format!("UAV {m} at ({:.1}, {:.1})", p.x, p.y));
            }
            if !(cfg.alt_min - EPS..=cfg.alt_max + EPS).contains(&p.z) {
                fail(ConstraintId::C7, format!("UAV {m} altitude {:.1}", p.z));
            }
        }
        for i in 0..post.len() {
            for j in 0..i {
                let d = post[i].distance(&post[j]);
                if d < cfg.d_min - EPS {
                    fail(ConstraintId::C6, format!("UAVs {j},{i} at {d:.2} m"));
                }
            }
        }
    }

    for (n, row) in world.schedule.iter().enumerate() {
        let servers = row.iter().filter(|&&b| b).count();
        if servers > 1 {
            fail(ConstraintId::C3, format!("GT {n} served by {servers} UAVs"));
        }
        for (m, &s) in row.iter().enumerate() {
            if s && !world.conn.c[n][m] {
                fail(ConstraintId::C8, format!("GT {n} scheduled outside UAV {m} coverage"));
            }
        }
    }
    for m in 0..world.uavs.len() {
        let count = world.schedule.iter().filter(|row| row[m]).count();
        if count > cfg.g2a_subchannels {
            fail(ConstraintId::C4, format!("UAV {m} serves {count} terminals"));
        }
    }

    if at_episode_end {
        for (m, u) in world.uavs.iter().enumerate() {
            if u.battery < cfg.uav_batt_min - EPS {
                fail(
                    ConstraintId::C5,
                    format!("UAV {m} ends with {:.1} J < {:.1} J", u.battery, cfg.uav_batt_min),
                );
            }
        }
    }

    if let Some(a) = l2 {
        let sum: f64 = a.rho.iter().sum();
        if sum > 1.0 + EPS || a.rho.iter().any(|&r| r < -EPS) {
            fail(ConstraintId::C9, format!("fractions {:?} (sum {sum:.3})", a.rho));
        }
        for (m, orbit) in a.assigned_orbit.iter().enumerate() {
            if let Some(k) = orbit {
                if *k >= world.orbits.len() {
                    fail(ConstraintId::C11, format!("UAV {m} assigned unknown orbit {k}"));
                }
                let p = a.powers[m];
                if !(p > 0.0 && p <= cfg.uav_tx_power_max + EPS) {
                    fail(ConstraintId::C10, format!("UAV {m} power {p}"));
                }
            }
        }
    }

    for (m, u) in world.uavs.iter().enumerate() {
        if !(-EPS..=cfg.uav_harvest_cap + EPS).contains(&u.harvest_board) {
            fail(ConstraintId::C12, format!("UAV {m} board {:.2} J", u.harvest_board));
        }
    }

    v
}

/// Projection result: corrected actions, the exact final positions they
/// produce, and whether anything was corrected.
#[derive(Debug, Clone)]
pub struct ProjectedL1 {
    pub actions: Vec<ActionL1>,
    pub positions: Vec<Position3D>,
    pub corrected: bool,
}

/// Make a set of first-layer actions feasible. Inactive UAVs are pinned in
/// place; velocities are norm-clamped (direction preserved), endpoints
/// box-clamped, and separation conflicts resolved by shrinking the step
/// along its direction (64-point scan, holding position as the guaranteed
/// fallback). Velocities are rewritten only when the endpoint moved, so
/// feasible actions survive bit-exactly.
pub fn project_l1(
    actions: &[ActionL1],
    positions: &[Position3D],
    active: &[bool],
    cfg: &ScenarioConfig,
) -> ProjectedL1 {
    let tau = cfg.slot_seconds;
    let mut out = Vec::with_capacity(actions.len());
    let mut finals: Vec<Position3D> = Vec::with_capacity(actions.len());
    let mut corrected = false;

    for (m, a) in actions.iter().enumerate() {
        let p = positions[m];
        if !active[m] {
            let mut held = a.clone();
            if held.velocity != [0.0; 3] {
                held.velocity = [0.0; 3];
                corrected = true;
            }
            finals.push(p);
            out.push(held);
            continue;
        }
        let mut vel = a.velocity;
        let speed = a.speed();
        if speed > cfg.v_max {
            let scale = cfg.v_max / speed;
            for c in &mut vel {
                *c *= scale;
            }
            corrected = true;
        }
        let p_try = p.add_scaled(vel, tau);
        let p_box = clamp_box(p_try, cfg);

        let clear = |cand: &Position3D| {
            (0..actions.len()).all(|j| {
                if j == m {
                    true
                } else if j < m {
                    cand.distance(&finals[j]) >= cfg.d_min
                } else {
                    cand.distance(&positions[j]) >= cfg.d_min
                }
            })
        };

        let p_final = if clear(&p_box) {
            p_box
        } else {
            // Shrink the step along its direction; α=0 (hold) is feasible by
            // construction.
            let mut found = p;
            for i in (0..64).rev() {
                let alpha = i as f64 / 63.0;
                let cand = clamp_box(p.add_scaled(vel, alpha * tau), cfg);
                if clear(&cand) {
                    found = cand;
                    break;
                }
            }
            found
        };

        let mut proj = a.clone();
        if p_final == p_try {
            proj.velocity = vel;
        } else {
            proj.velocity = [
                (p_final.x - p.x) / tau,
                (p_final.y - p.y) / tau,
                (p_final.z - p.z) / tau,
            ];
            corrected = true;
        }
        finals.push(p_final);
        out.push(proj);
    }
    ProjectedL1 { actions: out, positions: finals, corrected }
}

/// Make a second-layer action feasible: bandwidth fractions floored at zero
/// and renormalized when their sum exceeds one; powers clamped into
/// (0, P_max] (tiny positive floor). The one-orbit-per-UAV shape is feasible
/// by construction. Feasible inputs pass through unchanged.
pub fn project_l2(action: &ActionL2, cfg: &ScenarioConfig) -> (ActionL2, bool) {
    let mut a = action.clone();
    let mut corrected = false;
    for r in &mut a.rho {
        if *r < 0.0 {
            *r = 0.0;
            corrected = true;
        }
    }
    // Same tolerance as the feasibility checker, so an action the checker
    // accepts is never rewritten here.
    let sum: f64 = a.rho.iter().sum();
    if sum > 1.0 + EPS {
        for r in &mut a.rho {
            *r /= sum;
        }
        corrected = true;
    }
    let floor = cfg.uav_tx_power_max * 1e-6;
    for p in &mut a.powers {
        let clamped = p.clamp(floor, cfg.uav_tx_power_max);
        if clamped != *p {
            *p = clamped;
            corrected = true;
        }
    }
    (a, corrected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::AccessMode;
    use crate::rng::{Purpose, RngStream};
    use crate::world::init_world;
    use rand::Rng;

    fn cfg() -> ScenarioConfig {
        ScenarioConfig::default()
    }

    fn world(cfg: &ScenarioConfig) -> WorldState {
        init_world(cfg, &RngStream::new(1))
    }

    fn l2(rho: Vec<f64>, powers: Vec<f64>) -> ActionL2 {
        ActionL2 {
            assigned_orbit: vec![Some(0); powers.len()],
            powers,
            rho,
            access_mode: AccessMode::Noma,
        }
    }

    #[test]
    fn oversubscribed_fractions_fail_c9() {
        let cfg = cfg();
        let w = world(&cfg);
        let a = l2(vec![0.3, 0.3, 0.3, 0.2], vec![0.5; 4]);
        let v = check_feasible(&w, None, Some(&a), false, &cfg);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].id, ConstraintId::C9);
    }

    #[test]
    fn altitude_breach_fails_c7() {
        let cfg = cfg();
        let w = world(&cfg);
        let mut actions = vec![ActionL1::hold(); cfg.n_uavs];
        actions[0].velocity = [0.0, 0.0, -45.0]; // 90 → 45 m, below 60 m
        let v = check_feasible(&w, Some(&actions), None, false, &cfg);
        assert!(v.iter().any(|x| x.id == ConstraintId::C7));
        assert!(v.iter().any(|x| x.id == ConstraintId::C1), "45 m/s also breaks the cap");
    }

    #[test]
    fn hold_actions_are_clean_mid_episode() {
        let cfg = cfg();
        let w = world(&cfg);
        let actions = vec![ActionL1::hold(); cfg.n_uavs];
        let a2 = l2(vec![0.25; 4], vec![0.5; 4]);
        assert!(check_feasible(&w, Some(&actions), Some(&a2), false, &cfg).is_empty());
    }

    #[test]
    fn return_battery_checked_only_at_the_end() {
        let cfg = cfg();
        let mut w = world(&cfg);
        w.uavs[2].battery = 10.0; // below the 50 J return threshold
        assert!(check_feasible(&w, None, None, false, &cfg).is_empty());
        let v = check_feasible(&w, None, None, true, &cfg);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].id, ConstraintId::C5);
    }

    #[test]
    fn bad_powers_fail_c10() {
        let cfg = cfg();
        let w = world(&cfg);
        let a = l2(vec![0.25; 4], vec![0.0, 0.5, 2.0, 0.5]);
        let v = check_feasible(&w, None, Some(&a), false, &cfg);
        let c10: Vec<_> = v.iter().filter(|x| x.id == ConstraintId::C10).collect();
        assert_eq!(c10.len(), 2, "zero and over-cap power both fail");
    }

    #[test]
    fn uncovered_scheduling_fails_c8() {
        let cfg = cfg();
        let mut w = world(&cfg);
        // Fabricate a schedule entry for a pair that is not covered.
        let pair = (0..cfg.n_gts)
            .flat_map(|n| (0..cfg.n_uavs).map(move |m| (n, m)))
            .find(|&(n, m)| !w.conn.c[n][m])
            .expect("some uncovered pair exists");
        w.schedule[pair.0][pair.1] = true;
        let v = check_feasible(&w, None, None, false, &cfg);
        assert!(v.iter().any(|x| x.id == ConstraintId::C8));
    }

    #[test]
    fn overspeed_is_rescaled_with_direction_preserved() {
        let cfg = cfg();
        let w = world(&cfg);
        let mut actions = vec![ActionL1::hold(); cfg.n_uavs];
        actions[0].velocity = [40.0, 0.0, 0.0];
        let proj = project_l1(&actions, &w.uav_positions(), &[true; 4], &cfg);
        assert!(proj.corrected);
        let v = proj.actions[0].velocity;
        assert!((proj.actions[0].speed() - cfg.v_max).abs() < 1e-9);
        assert_eq!(v[1], 0.0);
        assert_eq!(v[2], 0.0);
        assert!(v[0] > 0.0, "direction preserved");
    }

    #[test]
    fn feasible_actions_pass_through_bit_exactly() {
        let cfg = cfg();
        let w = world(&cfg);
        let mut actions = vec![ActionL1::hold(); cfg.n_uavs];
        actions[1].velocity = [3.0, -2.0, 0.5];
        actions[1].wet_scalar = 0.7;
        let proj = project_l1(&actions, &w.uav_positions(), &[true; 4], &cfg);
        assert!(!proj.corrected);
        assert_eq!(proj.actions, actions);
    }

    #[test]
    fn convergent_uavs_keep_separation() {
        let cfg = cfg();
        let mut w = world(&cfg);
        w.uavs[0].pos = Position3D::new(700.0, 750.0, 90.0);
        w.uavs[1].pos = Position3D::new(800.0, 750.0, 90.0);
        w.uavs[2].pos = Position3D::new(200.0, 200.0, 90.0);
        w.uavs[3].pos = Position3D::new(1300.0, 1300.0, 90.0);
        let mut actions = vec![ActionL1::hold(); 4];
        // Both dive at the midpoint (750, 750).
        actions[0].velocity = [30.0, 0.0, 0.0];
        actions[1].velocity = [-30.0, 0.0, 0.0];
        let proj = project_l1(&actions, &w.uav_positions(), &[true; 4], &cfg);
        let d = proj.positions[0].distance(&proj.positions[1]);
        assert!(d >= cfg.d_min, "post-move separation {d:.2}");
        let v = check_feasible(&w, Some(&proj.actions), None, false, &cfg);
        assert!(v.is_empty());
    }

    #[test]
    fn head_on_at_minimum_distance_holds_position() {
        let cfg = cfg();
        let positions = vec![
            Position3D::new(700.0, 750.0, 90.0),
            Position3D::new(710.0, 750.0, 90.0), // exactly d_min apart
        ];
        let mut actions = vec![ActionL1::hold(); 2];
        actions[0].velocity = [5.0, 0.0, 0.0];
        actions[1].velocity = [-5.0, 0.0, 0.0];
        let proj = project_l1(&actions, &positions, &[true, true], &cfg);
        assert_eq!(proj.positions[0], positions[0]);
        assert_eq!(proj.positions[1], positions[1]);
        assert_eq!(proj.actions[0].velocity, [0.0; 3]);
    }

    #[test]
    fn inactive_uav_is_pinned() {
        let cfg = cfg();
        let w = world(&cfg);
        let mut actions = vec![ActionL1::hold(); cfg.n_uavs];
        actions[0].velocity = [10.0, 0.0, 0.0];
        let proj = project_l1(&actions, &w.uav_positions(), &[false, true, true, true], &cfg);
        assert_eq!(proj.positions[0], w.uavs[0].pos);
        assert_eq!(proj.actions[0].velocity, [0.0; 3]);
    }

    #[test]
    fn box_clamp_reports_exact_displacement() {
        let cfg = cfg();
        let positions = vec![Position3D::new(1490.0, 750.0, 118.0)];
        let mut actions = vec![ActionL1::hold()];
        actions[0].velocity = [20.0, 0.0, 5.0];
        let proj = project_l1(&actions, &positions, &[true], &cfg);
        let p = proj.positions[0];
        assert_eq!(p.x, cfg.area_side);
        assert_eq!(p.z, cfg.alt_max);
        // Reported velocity reproduces the final position exactly.
        let re = positions[0].add_scaled(proj.actions[0].velocity, cfg.slot_seconds);
        assert_eq!(re, p);
    }

    #[test]
    fn projection_fuzz_always_lands_feasible() {
        let cfg = cfg();
        let stream = RngStream::new(77);
        for trial in 0..2000u64 {
            let mut rng = stream.rng(Purpose::MaskNoise, trial, 0);
            // Jittered grid start keeps the precondition (pairwise ≥ d_min).
            let mut w = world(&cfg);
            for u in w.uavs.iter_mut() {
                u.pos.x += rng.gen::<f64>() * 100.0 - 50.0;
                u.pos.y += rng.gen::<f64>() * 100.0 - 50.0;
                u.pos.z = cfg.alt_min + rng.gen::<f64>() * (cfg.alt_max - cfg.alt_min);
            }
            let active: Vec<bool> = (0..cfg.n_uavs).map(|_| rng.gen::<f64>() < 0.9).collect();
            let actions: Vec<ActionL1> = (0..cfg.n_uavs)
                .map(|_| ActionL1 {
                    velocity: [
                        (rng.gen::<f64>() - 0.5) * 4.0 * cfg.v_max,
                        (rng.gen::<f64>() - 0.5) * 4.0 * cfg.v_max,
                        (rng.gen::<f64>() - 0.5) * 4.0 * cfg.v_max,
                    ],
                    wet_scalar: rng.gen::<f64>() * 2.0 - 1.0,
                    wdc_enabled: true,
                })
                .collect();
            let proj = project_l1(&actions, &w.uav_positions(), &active, &cfg);
            let v = check_feasible(&w, Some(&proj.actions), None, false, &cfg);
            assert!(v.is_empty(), "trial {trial}: {:?}", v);
            // The reported positions themselves satisfy the box and the
            // pairwise separation.
            for p in &proj.positions {
                assert!((0.0..=cfg.area_side).contains(&p.x));
                assert!((0.0..=cfg.area_side).contains(&p.y));
                assert!((cfg.alt_min..=cfg.alt_max).contains(&p.z));
            }
            for i in 0..proj.positions.len() {
                for j in 0..i {
                    assert!(proj.positions[i].distance(&proj.positions[j]) >= cfg.d_min);
                }
            }
        }
    }

    #[test]
    fn l2_projection_normalizes_and_clamps() {
        let cfg = cfg();
        let raw = l2(vec![0.5, 0.5, 0.5, -0.1], vec![2.0, 0.0, 0.5, 1.0]);
        let (proj, corrected) = project_l2(&raw, &cfg);
        assert!(corrected);
        let sum: f64 = proj.rho.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(proj.rho.iter().all(|&r| r >= 0.0));
        assert_eq!(proj.rho[3], 0.0);
        assert!(proj.powers.iter().all(|&p| p > 0.0 && p <= cfg.uav_tx_power_max));
        // Already-feasible input is untouched.
        let ok = l2(vec![0.2, 0.2, 0.2, 0.2], vec![0.5; 4]);
        let (same, corrected) = project_l2(&ok, &cfg);
        assert!(!corrected);
        assert_eq!(same, ok);
    }
}
