//! Named reference policies for both decision layers.
//!
//! Layer-1 policies steer each UAV and switch its wireless-energy-transfer
//! (WET) radiator; layer-2 policies pick an orbit, band share, and transmit
//! power for every UAV's satellite uplink. All of them act on the same
//! observation/state structures the learned controllers use, so any pair can
//! be mixed and matched from the CLI.
//!
//! Layer 1:
//! * `is-uav` — chase the sensed terminal with the highest priority score and
//!   radiate energy whenever a harvesting terminal sits inside coverage,
//!   while always staying available for data collection.
//! * `dc-uav` — same motion, but each slot commits to either energy transfer
//!   or data collection, whichever projects the larger reward term from the
//!   local observation.
//! * `td-uav` — fixed team split: the first ⌊M/2⌋ UAVs only radiate energy,
//!   the rest only collect data.
//! * `pd-uav` — phase split in time: every UAV radiates energy until a
//!   switch-over slot `t'`, then switches to data collection for the rest of
//!   the episode.
//! * `o-uav` — oblivious serpentine patrol lanes at mid-altitude and full
//!   speed, with `pd-uav`'s phase rule for the radiator.
//!
//! Layer 2:
//! * `dmla` — greedy strongest-gain orbit choice, buffer-weighted band split,
//!   non-orthogonal access with received-power equalisation.
//! * `fdpc` — same orbit choice, dedicated per-UAV subchannels inside each
//!   orbit's band.
//! * `tdfp` — one shared band; UAVs take turns globally at maximum power.
//! * `ftpc` — per-orbit bands sized by head-count; UAVs inside an orbit take
//!   turns on their band.
//! * `uafp` — uniform band split, round-robin orbit choice, non-orthogonal
//!   access at maximum power.

use crate::channel::expected_g2a_gain;
use crate::error::{Error, Result};
use crate::geometry::Position3D;
use crate::gt::harvest_dc_power;
use crate::mdp::{AccessMode, ActionL1, ActionL2, GtObs, ObservationL1, StateL2};
use crate::scenario::ScenarioConfig;

/// Layer-1 policy: one action per UAV per slot, from that UAV's observation.
pub trait PolicyL1 {
    fn act(&mut self, obs: &ObservationL1, t: u64, cfg: &ScenarioConfig) -> ActionL1;
}

/// Layer-2 policy: one joint satellite-access action per slot.
pub trait PolicyL2 {
    fn act(&mut self, state: &StateL2, t: u64, cfg: &ScenarioConfig) -> ActionL2;
}

/// Names accepted by [`l1_policy`].
pub const L1_NAMES: [&str; 5] = ["is-uav", "dc-uav", "td-uav", "pd-uav", "o-uav"];
/// Names accepted by [`l2_policy`].
pub const L2_NAMES: [&str; 5] = ["dmla", "fdpc", "tdfp", "ftpc", "uafp"];

/// Switch-over slot used by the phase-division policies when no calibrated
/// value is supplied: half the episode.
pub fn default_t_prime(cfg: &ScenarioConfig) -> u64 {
    cfg.episode_slots / 2
}

/// Look up a layer-1 baseline by name. `t_prime` parameterises the
/// phase-division policies (`pd-uav`, `o-uav`) and is ignored by the rest.
pub fn l1_policy(name: &str, t_prime: u64) -> Result<Box<dyn PolicyL1>> {
    match name {
        "is-uav" => Ok(Box::new(IsUav)),
        "dc-uav" => Ok(Box::new(DcUav)),
        "td-uav" => Ok(Box::new(TdUav)),
        "pd-uav" => Ok(Box::new(PdUav { t_prime })),
        "o-uav" => Ok(Box::new(OUav { t_prime })),
        other => Err(Error::UnknownPolicy(format!(
            "unknown layer-1 policy {other:?}; expected one of {L1_NAMES:?}"
        ))),
    }
}

/// Look up a layer-2 baseline by name.
pub fn l2_policy(name: &str) -> Result<Box<dyn PolicyL2>> {
    match name {
        "dmla" => Ok(Box::new(Dmla)),
        "fdpc" => Ok(Box::new(Fdpc)),
        "tdfp" => Ok(Box::new(Tdfp)),
        "ftpc" => Ok(Box::new(Ftpc)),
        "uafp" => Ok(Box::new(Uafp)),
        other => Err(Error::UnknownPolicy(format!(
            "unknown layer-2 policy {other:?}; expected one of {L2_NAMES:?}"
        ))),
    }
}

// ---------------------------------------------------------------------------
// Shared steering helpers
// ---------------------------------------------------------------------------

/// Velocity that moves from `pos` toward `target` in one slot, clipped to the
/// speed cap (direction preserved).
fn steer(pos: &Position3D, target: &Position3D, cfg: &ScenarioConfig) -> [f64; 3] {
    let dt = cfg.slot_seconds;
    let mut v = [
        (target.x - pos.x) / dt,
        (target.y - pos.y) / dt,
        (target.z - pos.z) / dt,
    ];
    let speed = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if speed > cfg.v_max {
        let s = cfg.v_max / speed;
        for c in &mut v {
            *c *= s;
        }
    }
    v
}

fn is_covered(own: &Position3D, gt: &GtObs, cfg: &ScenarioConfig) -> bool {
    own.distance(&gt.pos) <= cfg.cover_range
}

/// Sensed terminal with the highest priority score (ties to the lowest
/// index), optionally restricted by a predicate on the terminal.
fn best_gt<F>(obs: &ObservationL1, keep: F, key: fn(&GtObs) -> f64) -> Option<&GtObs>
where
    F: Fn(&GtObs) -> bool,
{
    let mut best: Option<&GtObs> = None;
    for g in obs.gts.iter().filter(|g| keep(g)) {
        best = match best {
            Some(b) if key(g) > key(b) => Some(g),
            None => Some(g),
            keep_b => keep_b,
        };
    }
    best
}

/// Approach point directly above a terminal at the lowest allowed altitude
/// (closest legal standoff, hence the strongest expected link).
fn hover_point(gt: &GtObs, cfg: &ScenarioConfig) -> Position3D {
    Position3D::new(gt.pos.x, gt.pos.y, cfg.alt_min)
}

fn chase_priority(obs: &ObservationL1, cfg: &ScenarioConfig) -> [f64; 3] {
    match best_gt(obs, |_| true, |g| g.priority) {
        Some(g) => steer(&obs.own.pos, &hover_point(g, cfg), cfg),
        None => [0.0; 3],
    }
}

// ---------------------------------------------------------------------------
// Layer-1 baselines
// ---------------------------------------------------------------------------

/// Integrated-service policy: chase the highest-priority sensed terminal;
/// radiate energy whenever any covered terminal is harvesting, and collect
/// data every slot.
struct IsUav;

impl PolicyL1 for IsUav {
    fn act(&mut self, obs: &ObservationL1, _t: u64, cfg: &ScenarioConfig) -> ActionL1 {
        let wet = obs
            .gts
            .iter()
            .any(|g| g.harvesting && is_covered(&obs.own.pos, g, cfg));
        ActionL1 {
            velocity: chase_priority(obs, cfg),
            wet_scalar: if wet { 1.0 } else { 0.0 },
            wdc_enabled: true,
        }
    }
}

/// Age-weighted data-collection reward this UAV would earn right now if it
/// collected alone: Σ aoi·W·log2(1+γ̂)·τ over covered transmit-mode
/// terminals, with γ̂ from the expected link gain and no interference.
fn projected_wdc_term(obs: &ObservationL1, cfg: &ScenarioConfig) -> f64 {
    let noise = cfg.noise_psd * cfg.g2a_subchannel_hz;
    let p_tx = cfg.gt_tx_power;
    obs.gts
        .iter()
        .filter(|g| !g.harvesting && is_covered(&obs.own.pos, g, cfg))
        .map(|g| {
            let gain = expected_g2a_gain(&g.pos, &obs.own.pos, &cfg.los_params).unwrap_or(0.0);
            let rate = cfg.g2a_subchannel_hz * (1.0 + gain * p_tx / noise).log2();
            g.aoi * rate * cfg.slot_seconds
        })
        .sum()
}

/// Age-weighted energy-transfer reward this UAV would earn right now if it
/// radiated alone: Σ aoi·harvested(ĥ·P_E)·τ over covered harvesting
/// terminals.
fn projected_wet_term(obs: &ObservationL1, cfg: &ScenarioConfig) -> f64 {
    let p_wet = cfg.uav_wet_power;
    obs.gts
        .iter()
        .filter(|g| g.harvesting && is_covered(&obs.own.pos, g, cfg))
        .map(|g| {
            let gain = expected_g2a_gain(&g.pos, &obs.own.pos, &cfg.los_params).unwrap_or(0.0);
            g.aoi * harvest_dc_power(gain * p_wet, &cfg.eh_params) * cfg.slot_seconds
        })
        .sum()
}

/// Divided-commitment policy: same motion as `is-uav`, but each slot performs
/// exactly one of energy transfer or data collection — whichever projects the
/// larger weighted reward term from the local observation (ties favour data
/// collection).
struct DcUav;

impl PolicyL1 for DcUav {
    fn act(&mut self, obs: &ObservationL1, _t: u64, cfg: &ScenarioConfig) -> ActionL1 {
        let wdc_score = cfg.reward_zeta1 * projected_wdc_term(obs, cfg);
        let wet_score = cfg.reward_zeta2 * projected_wet_term(obs, cfg);
        let wet = wet_score > wdc_score;
        ActionL1 {
            velocity: chase_priority(obs, cfg),
            wet_scalar: if wet { 1.0 } else { 0.0 },
            wdc_enabled: !wet,
        }
    }
}

/// Team-division policy: the first ⌊M/2⌋ UAVs radiate energy all episode and
/// chase the oldest harvesting terminal; the rest collect data all episode
/// and chase the highest-priority transmit-mode terminal.
struct TdUav;

impl PolicyL1 for TdUav {
    fn act(&mut self, obs: &ObservationL1, _t: u64, cfg: &ScenarioConfig) -> ActionL1 {
        let wet_team = obs.own.idx < cfg.n_uavs / 2;
        if wet_team {
            let velocity = match best_gt(obs, |g| g.harvesting, |g| g.aoi) {
                Some(g) => steer(&obs.own.pos, &hover_point(g, cfg), cfg),
                None => [0.0; 3],
            };
            ActionL1 {
                velocity,
                wet_scalar: 1.0,
                wdc_enabled: false,
            }
        } else {
            let velocity = match best_gt(obs, |g| !g.harvesting, |g| g.priority) {
                Some(g) => steer(&obs.own.pos, &hover_point(g, cfg), cfg),
                None => [0.0; 3],
            };
            ActionL1 {
                velocity,
                wet_scalar: 0.0,
                wdc_enabled: true,
            }
        }
    }
}

/// Phase-division policy: every UAV radiates energy while `t < t_prime`, then
/// collects data for the rest of the episode. Motion follows the
/// highest-priority sensed terminal throughout.
struct PdUav {
    t_prime: u64,
}

impl PolicyL1 for PdUav {
    fn act(&mut self, obs: &ObservationL1, t: u64, cfg: &ScenarioConfig) -> ActionL1 {
        let wet = t < self.t_prime;
        ActionL1 {
            velocity: chase_priority(obs, cfg),
            wet_scalar: if wet { 1.0 } else { 0.0 },
            wdc_enabled: !wet,
        }
    }
}

/// Oblivious patrol policy: each UAV sweeps its own horizontal band of the
/// area in serpentine rows spaced one coverage radius apart, at mid-altitude
/// and full speed, ignoring all observations. The radiator follows the same
/// phase rule as `pd-uav`.
struct OUav {
    t_prime: u64,
}

/// Serpentine waypoints for UAV `m`'s band. Rows are spaced at most one
/// coverage radius apart so consecutive passes overlap.
fn patrol_waypoints(m: usize, cfg: &ScenarioConfig) -> Vec<Position3D> {
    let side = cfg.area_side;
    let bands = cfg.n_uavs.max(1);
    let band_h = side / bands as f64;
    let y0 = (m % bands) as f64 * band_h;
    let z = 0.5 * (cfg.alt_min + cfg.alt_max);
    let rows = (band_h / cfg.cover_range).ceil().max(1.0) as usize;
    let mut wps = Vec::with_capacity(2 * rows);
    for j in 0..rows {
        let y = y0 + (j as f64 + 0.5) * band_h / rows as f64;
        if j % 2 == 0 {
            wps.push(Position3D::new(0.0, y, z));
            wps.push(Position3D::new(side, y, z));
        } else {
            wps.push(Position3D::new(side, y, z));
            wps.push(Position3D::new(0.0, y, z));
        }
    }
    wps
}

/// Point at arc length `s` along the closed waypoint circuit.
fn patrol_point(wps: &[Position3D], s: f64) -> Position3D {
    let n = wps.len();
    let total: f64 = (0..n).map(|i| wps[i].distance(&wps[(i + 1) % n])).sum();
    if total == 0.0 {
        return wps[0];
    }
    let mut rem = s.rem_euclid(total);
    for i in 0..n {
        let a = &wps[i];
        let b = &wps[(i + 1) % n];
        let len = a.distance(b);
        if rem <= len && len > 0.0 {
            let f = rem / len;
            return Position3D::new(
                a.x + f * (b.x - a.x),
                a.y + f * (b.y - a.y),
                a.z + f * (b.z - a.z),
            );
        }
        rem -= len;
    }
    wps[0]
}

impl PolicyL1 for OUav {
    fn act(&mut self, obs: &ObservationL1, t: u64, cfg: &ScenarioConfig) -> ActionL1 {
        let wps = patrol_waypoints(obs.own.idx, cfg);
        let s_next = cfg.v_max * cfg.slot_seconds * (t + 1) as f64;
        let target = patrol_point(&wps, s_next);
        let wet = t < self.t_prime;
        ActionL1 {
            velocity: steer(&obs.own.pos, &target, cfg),
            wet_scalar: if wet { 1.0 } else { 0.0 },
            wdc_enabled: !wet,
        }
    }
}

// ---------------------------------------------------------------------------
// Layer-2 baselines
// ---------------------------------------------------------------------------

/// Orbit with the strongest uplink gain visible to this UAV, if any.
fn strongest_orbit(gains: &[Option<f64>]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (k, g) in gains.iter().enumerate() {
        if let Some(v) = *g {
            best = match best {
                Some((_, bv)) if v > bv => Some((k, v)),
                None => Some((k, v)),
                keep => keep,
            };
        }
    }
    best.map(|(k, _)| k)
}

/// Received-power equalisation within each orbit's uplink group: the weakest
/// member transmits at the cap and every stronger member scales down by the
/// gain ratio, so all received powers match the weakest's.
fn inverse_gain_powers(
    state: &StateL2,
    assigned: &[Option<usize>],
    cfg: &ScenarioConfig,
) -> Vec<f64> {
    let p_max = cfg.uav_tx_power_max;
    let mut h_min = vec![f64::INFINITY; cfg.n_leos];
    for (m, a) in assigned.iter().enumerate() {
        if let Some(k) = *a {
            if let Some(h) = state.uavs[m].gains[k] {
                h_min[k] = h_min[k].min(h);
            }
        }
    }
    assigned
        .iter()
        .enumerate()
        .map(|(m, a)| match a {
            Some(k) => match state.uavs[m].gains[*k] {
                Some(h) if h > 0.0 && h_min[*k].is_finite() => p_max * h_min[*k] / h,
                _ => p_max,
            },
            None => p_max,
        })
        .collect()
}

/// Strongest-gain orbit for every UAV; `None` where no orbit is visible.
fn greedy_assignment(state: &StateL2) -> Vec<Option<usize>> {
    state
        .uavs
        .iter()
        .map(|u| strongest_orbit(&u.gains))
        .collect()
}

/// Band shares proportional to per-orbit weights, normalised to sum to one;
/// an all-zero weight vector falls back to a uniform split.
fn proportional_rho(weights: &[f64]) -> Vec<f64> {
    let total: f64 = weights.iter().sum();
    if total > 0.0 {
        weights.iter().map(|w| w / total).collect()
    } else {
        vec![1.0 / weights.len() as f64; weights.len()]
    }
}

/// Greedy multi-link access: strongest-gain orbit, band shares weighted by
/// each orbit's pending buffered traffic, non-orthogonal uplink groups with
/// received-power equalisation.
struct Dmla;

impl PolicyL2 for Dmla {
    fn act(&mut self, state: &StateL2, _t: u64, cfg: &ScenarioConfig) -> ActionL2 {
        let assigned = greedy_assignment(state);
        let mut weights = vec![0.0; cfg.n_leos];
        for (m, a) in assigned.iter().enumerate() {
            if let Some(k) = *a {
                weights[k] += state.uavs[m].pending_bits;
            }
        }
        ActionL2 {
            powers: inverse_gain_powers(state, &assigned, cfg),
            rho: proportional_rho(&weights),
            assigned_orbit: assigned,
            access_mode: AccessMode::Noma,
        }
    }
}

/// Per-orbit UAV head-counts for an assignment.
fn orbit_counts(assigned: &[Option<usize>], n_leos: usize) -> Vec<f64> {
    let mut counts = vec![0.0; n_leos];
    for a in assigned.iter().flatten() {
        counts[*a] += 1.0;
    }
    counts
}

/// Frequency-division access: strongest-gain orbit, head-count band shares,
/// each UAV on a dedicated slice of its orbit's band, received-power
/// equalisation.
struct Fdpc;

impl PolicyL2 for Fdpc {
    fn act(&mut self, state: &StateL2, _t: u64, cfg: &ScenarioConfig) -> ActionL2 {
        let assigned = greedy_assignment(state);
        let rho = proportional_rho(&orbit_counts(&assigned, cfg.n_leos));
        ActionL2 {
            powers: inverse_gain_powers(state, &assigned, cfg),
            rho,
            assigned_orbit: assigned,
            access_mode: AccessMode::FdmaWithinSat,
        }
    }
}

/// Global time-division access: every UAV picks its strongest orbit, takes
/// the whole band for a 1/M time segment, and transmits at the power cap. The
/// band-share vector records per-orbit head-count fractions for bookkeeping.
struct Tdfp;

impl PolicyL2 for Tdfp {
    fn act(&mut self, state: &StateL2, _t: u64, cfg: &ScenarioConfig) -> ActionL2 {
        let assigned = greedy_assignment(state);
        let counts = orbit_counts(&assigned, cfg.n_leos);
        let p_max = cfg.uav_tx_power_max;
        ActionL2 {
            powers: vec![p_max; state.uavs.len()],
            rho: counts
                .iter()
                .map(|c| c / cfg.n_uavs.max(1) as f64)
                .collect(),
            assigned_orbit: assigned,
            access_mode: AccessMode::TdmaGlobal,
        }
    }
}

/// Frequency-division across orbits, time-division within each orbit:
/// head-count band shares, per-member time segments, received-power
/// equalisation.
struct Ftpc;

impl PolicyL2 for Ftpc {
    fn act(&mut self, state: &StateL2, _t: u64, cfg: &ScenarioConfig) -> ActionL2 {
        let assigned = greedy_assignment(state);
        let rho = proportional_rho(&orbit_counts(&assigned, cfg.n_leos));
        ActionL2 {
            powers: inverse_gain_powers(state, &assigned, cfg),
            rho,
            assigned_orbit: assigned,
            access_mode: AccessMode::TdmaWithinSat,
        }
    }
}

/// Uniform-allocation access: equal band share for every orbit, round-robin
/// orbit choice (UAV m starts at orbit m mod K and takes the first visible
/// one), non-orthogonal groups at the power cap.
struct Uafp;

impl PolicyL2 for Uafp {
    fn act(&mut self, state: &StateL2, _t: u64, cfg: &ScenarioConfig) -> ActionL2 {
        let k_total = cfg.n_leos.max(1);
        let assigned: Vec<Option<usize>> = state
            .uavs
            .iter()
            .enumerate()
            .map(|(m, u)| {
                (0..k_total)
                    .map(|off| (m + off) % k_total)
                    .find(|&k| u.gains.get(k).copied().flatten().is_some())
            })
            .collect();
        let p_max = cfg.uav_tx_power_max;
        ActionL2 {
            powers: vec![p_max; state.uavs.len()],
            rho: vec![1.0 / k_total as f64; cfg.n_leos],
            assigned_orbit: assigned,
            access_mode: AccessMode::Noma,
        }
    }
}
