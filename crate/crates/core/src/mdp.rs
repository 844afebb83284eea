//! Decision-process plumbing for the two control layers: observations and
//! states, action types, rewards, the GT→UAV scheduling rule, and the global
//! and first-layer objectives.
//!
//! Layer 1 (one agent per UAV) picks a velocity and a wireless-power flag
//! from a local observation. Layer 2 (one central agent) picks the UAV→orbit
//! assignment, per-UAV transmit power, and per-orbit bandwidth fractions
//! from a global state.

use crate::geometry::Position3D;
use crate::scenario::ScenarioConfig;
use crate::world::WorldState;

// ---------------------------------------------------------------------------
// Observations and states
// ---------------------------------------------------------------------------

/// A sensed terminal as one UAV sees it.
#[derive(Debug, Clone, PartialEq)]
pub struct GtObs {
    pub idx: usize,
    pub pos: Position3D,
    pub battery: f64,
    pub harvesting: bool,
    pub aoi: f64,
    pub delivered_total: f64,
    pub priority: f64,
}

/// A UAV's own or neighbor summary.
#[derive(Debug, Clone, PartialEq)]
pub struct UavObs {
    pub idx: usize,
    pub pos: Position3D,
    pub battery: f64,
}

/// Local observation of one first-layer agent; lengths vary with the sensing
/// neighborhoods.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationL1 {
    pub own: UavObs,
    pub neighbors: Vec<UavObs>,
    pub gts: Vec<GtObs>,
}

/// Build UAV `m`'s observation from the current matrices. `t` is the slot
/// whose end the ages are read at.
pub fn build_observation(world: &WorldState, m: usize, t: u64) -> ObservationL1 {
    let own = UavObs { idx: m, pos: world.uavs[m].pos, battery: world.uavs[m].battery };
    let neighbors = (0..world.uavs.len())
        .filter(|&i| world.conn.u[m][i])
        .map(|i| UavObs { idx: i, pos: world.uavs[i].pos, battery: world.uavs[i].battery })
        .collect();
    let gts = (0..world.gts.len())
        .filter(|&n| world.conn.g[n][m])
        .map(|n| {
            let g = &world.gts[n];
            GtObs {
                idx: n,
                pos: g.pos,
                battery: g.battery,
                harvesting: g.harvesting,
                aoi: g.aoi(t),
                delivered_total: g.delivered_bits_total,
                priority: g.priority,
            }
        })
        .collect();
    ObservationL1 { own, neighbors, gts }
}

/// One UAV's fields inside the second-layer state.
#[derive(Debug, Clone, PartialEq)]
pub struct UavSatState {
    pub aoi: f64,
    pub pending_bits: f64,
    pub harvest_board: f64,
    /// Link gain to each orbit's serving satellite (`None`: no satellite in
    /// view on that orbit).
    pub gains: Vec<Option<f64>>,
}

/// Global state of the second-layer agent.
#[derive(Debug, Clone, PartialEq)]
pub struct StateL2 {
    pub uavs: Vec<UavSatState>,
    /// Serving satellite position per orbit.
    pub sat_positions: Vec<Option<Position3D>>,
}

/// Build the second-layer state. The per-orbit gains and serving positions
/// are this slot's channel draw, passed in by the episode loop.
pub fn build_state(
    world: &WorldState,
    gains: &[Vec<Option<f64>>],
    sat_positions: &[Option<Position3D>],
    t: u64,
) -> StateL2 {
    let uavs = world
        .uavs
        .iter()
        .enumerate()
        .map(|(m, u)| UavSatState {
            aoi: u.aoi(t),
            pending_bits: u.eligible_bits(t),
            harvest_board: u.harvest_board,
            gains: gains[m].clone(),
        })
        .collect();
    StateL2 { uavs, sat_positions: sat_positions.to_vec() }
}

// ---------------------------------------------------------------------------
// Actions
// ---------------------------------------------------------------------------

/// First-layer action of one UAV. The wireless-power flag is carried as a
/// continuous scalar in [−1, 1]; strictly positive values switch the
/// charger on. `wdc_enabled` lets a policy opt a UAV out of data collection
/// for a slot (the exclusive-mode baseline needs it; learned policies and
/// the other baselines leave it on).
#[derive(Debug, Clone, PartialEq)]
pub struct ActionL1 {
    pub velocity: [f64; 3],
    pub wet_scalar: f64,
    pub wdc_enabled: bool,
}

impl ActionL1 {
    pub fn hold() -> Self {
        Self { velocity: [0.0; 3], wet_scalar: -1.0, wdc_enabled: true }
    }

    pub fn wet_on(&self) -> bool {
        self.wet_scalar > 0.0
    }

    pub fn speed(&self) -> f64 {
        let [x, y, z] = self.velocity;
        (x * x + y * y + z * z).sqrt()
    }
}

/// How the per-orbit subchannel bands are shared among the UAVs assigned to
/// one satellite.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccessMode {
    /// Power-domain sharing with successive interference cancellation.
    Noma,
    /// The orbit's band is split evenly among its UAVs, one sub-band each.
    FdmaWithinSat,
    /// The orbit's band is time-shared evenly among its UAVs.
    TdmaWithinSat,
    /// One UAV at a time over the whole band, global round-robin.
    TdmaGlobal,
}

/// Second-layer action: orbit choice per UAV (the serving satellite of that
/// orbit), per-UAV transmit power, per-orbit bandwidth fractions, and the
/// sharing discipline the capacity evaluator should apply.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionL2 {
    /// One orbit per UAV, or `None` to stay silent this slot.
    pub assigned_orbit: Vec<Option<usize>>,
    /// Transmit power per UAV, W.
    pub powers: Vec<f64>,
    /// Bandwidth fraction per orbit.
    pub rho: Vec<f64>,
    pub access_mode: AccessMode,
}

// ---------------------------------------------------------------------------
// Rewards
// ---------------------------------------------------------------------------

/// First-layer reward parts of one UAV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardsL1 {
    pub wdc: f64,
    pub wet: f64,
    pub total: f64,
    /// True when a zero denominator forced the total to 0.
    pub degenerate: bool,
}

/// First-layer reward of UAV `m`.
///
/// Collection part: Σ_n a_n·W·log2(1+γ_{n,m})·τ. Charging part:
/// Σ_n a_n·E_n^{Gh}·share, where the share is m's fraction of the WET power
/// received by terminal n (keeping the charging gain inside the harvested
/// energy as well — the written form counts it twice, and stays). The total
/// normalizes by mean GT age times the UAV's slot energy; a zero denominator
/// yields 0 and is flagged.
#[allow(clippy::too_many_arguments)]
pub fn rewards_l1(
    m: usize,
    gt_aoi: &[f64],
    mean_gt_aoi: f64,
    sinr: &[Vec<f64>],
    wet_flags: &[bool],
    gains: &[Vec<f64>],
    gt_harvested: &[f64],
    slot_energy: f64,
    cfg: &ScenarioConfig,
) -> RewardsL1 {
    let mut wdc = 0.0;
    for (n, &a) in gt_aoi.iter().enumerate() {
        wdc += a * cfg.g2a_subchannel_hz * (1.0 + sinr[n][m]).log2() * cfg.slot_seconds;
    }
    let mut wet = 0.0;
    if wet_flags[m] {
        for (n, &a) in gt_aoi.iter().enumerate() {
            let total_rx: f64 = (0..wet_flags.len())
                .filter(|&j| wet_flags[j])
                .map(|j| gains[n][j] * cfg.uav_wet_power)
                .sum();
            if total_rx > 0.0 {
                let share = gains[n][m] * cfg.uav_wet_power / total_rx;
                wet += a * gt_harvested[n] * share;
            }
        }
    }
    let numer = cfg.reward_zeta1 * wdc + cfg.reward_zeta2 * wet;
    let denom = mean_gt_aoi * slot_energy;
    if denom > 0.0 {
        RewardsL1 { wdc, wet, total: numer / denom, degenerate: false }
    } else {
        RewardsL1 { wdc, wet, total: 0.0, degenerate: true }
    }
}

/// Second-layer reward: Σ_m a_m·D̂_m/(Ā·Ê_m) over the UAVs, each term
/// dropped to 0 when its denominator vanishes.
pub fn reward_l2(
    uav_aoi: &[f64],
    mean_uav_aoi: f64,
    delivered: &[f64],
    energies: &[f64],
) -> f64 {
    if mean_uav_aoi <= 0.0 {
        return 0.0;
    }
    uav_aoi
        .iter()
        .zip(delivered)
        .zip(energies)
        .map(|((&a, &d), &e)| if e > 0.0 { a * d / (mean_uav_aoi * e) } else { 0.0 })
        .sum()
}

// ---------------------------------------------------------------------------
// Scheduling
// ---------------------------------------------------------------------------

/// GT→UAV schedule of one slot: every transmit-mode covered terminal
/// requests its nearest covering active UAV (allowing for data collection
/// being switched off); a UAV over its subchannel budget keeps the highest
/// priority requests, ties broken by terminal index.
pub fn gt_uav_scheduling(
    world: &WorldState,
    active: &[bool],
    wdc_enabled: &[bool],
    cfg: &ScenarioConfig,
) -> Vec<Vec<bool>> {
    let n_gts = world.gts.len();
    let n_uavs = world.uavs.len();
    let mut requests: Vec<Vec<usize>> = vec![Vec::new(); n_uavs];
    for (n, g) in world.gts.iter().enumerate() {
        if g.harvesting {
            continue;
        }
        let nearest = (0..n_uavs)
            .filter(|&m| world.conn.c[n][m] && active[m] && wdc_enabled[m])
            .min_by(|&a, &b| {
                g.pos
                    .distance(&world.uavs[a].pos)
                    .partial_cmp(&g.pos.distance(&world.uavs[b].pos))
                    .unwrap()
                    .then(a.cmp(&b))
            });
        if let Some(m) = nearest {
            requests[m].push(n);
        }
    }
    let mut schedule = vec![vec![false; n_uavs]; n_gts];
    for (m, mut reqs) in requests.into_iter().enumerate() {
        reqs.sort_by(|&a, &b| {
            world.gts[b]
                .priority
                .partial_cmp(&world.gts[a].priority)
                .unwrap()
                .then(a.cmp(&b))
        });
        for &n in reqs.iter().take(cfg.g2a_subchannels) {
            schedule[n][m] = true;
        }
    }
    schedule
}

// ---------------------------------------------------------------------------
// Objectives
// ---------------------------------------------------------------------------

/// Global per-slot objective: delivered space-uplink bits over the product
/// of total energy and total age, scaled by β. Zero denominator → 0.
pub fn global_objective(
    delivered_to_sat: f64,
    g2a_energy: f64,
    a2s_energy: f64,
    mean_gt_aoi: f64,
    mean_uav_aoi: f64,
    cfg: &ScenarioConfig,
) -> f64 {
    let denom =
        cfg.scale_beta * (g2a_energy + a2s_energy) * (mean_gt_aoi + mean_uav_aoi);
    if denom > 0.0 {
        delivered_to_sat / denom
    } else {
        0.0
    }
}

/// First-layer per-slot objective: collected bits over β·energy·age.
pub fn l1_objective(collected: f64, g2a_energy: f64, mean_gt_aoi: f64, cfg: &ScenarioConfig) -> f64 {
    let denom = cfg.scale_beta * g2a_energy * mean_gt_aoi;
    if denom > 0.0 {
        collected / denom
    } else {
        0.0
    }
}
