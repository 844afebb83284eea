//! Closed-form AoI expectations, the constellation-sizing search, and the
//! two-layer decoupling bound.
//!
//! The closed forms predict steady-state ages from a handful of per-link
//! statistics (coverage frequency, scheduling probability, per-slot
//! capacity); the pilot estimator measures those statistics from a short
//! simulation run. The sizing search then finds the satellite count whose
//! measured waiting share lands in a target band, and the bound checker
//! certifies that solving the two layers separately cannot beat the joint
//! problem on an exhaustively enumerable instance.

use crate::baselines;
use crate::channel::{a2s_gain_with_shadow, expected_g2a_gain};
use crate::constellation::{sat_positions, sat_schedule, SatWindow};
use crate::episode::Episode;
use crate::error::{Error, Result};
use crate::mdp::StateL2;
use crate::scenario::ScenarioConfig;

// ---------------------------------------------------------------------------
// Scheduling probability and interval
// ---------------------------------------------------------------------------

/// Per-relay scheduling probability of one covered terminal: certain when
/// the coverage set fits the subchannel budget, otherwise the fraction of
/// the set with strictly lower priority (ties broken by index, lower index
/// counting as lower priority).
pub fn schedule_probability(coverage: &[(usize, f64)], gt: usize, capacity: usize) -> f64 {
    let size = coverage.len();
    if size == 0 {
        return 0.0;
    }
    if size <= capacity {
        return 1.0;
    }
    let own = coverage
        .iter()
        .find(|(i, _)| *i == gt)
        .expect("terminal must belong to the coverage set it is ranked in");
    let lower = coverage
        .iter()
        .filter(|(i, p)| *i != gt && (*p < own.1 || (*p == own.1 && *i < gt)))
        .count();
    lower as f64 / size as f64
}

/// Expected slots between two successful transmissions of one terminal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScheduleInterval {
    Slots(f64),
    /// Every per-relay success probability is zero: the terminal is never
    /// scheduled and the geometric interval has no finite mean.
    NeverScheduled,
}

impl ScheduleInterval {
    /// The interval as a plain number (`∞` for a never-scheduled terminal).
    pub fn slots(&self) -> f64 {
        match self {
            ScheduleInterval::Slots(s) => *s,
            ScheduleInterval::NeverScheduled => f64::INFINITY,
        }
    }

    pub fn is_never(&self) -> bool {
        matches!(self, ScheduleInterval::NeverScheduled)
    }
}

/// Geometric-interval expectation from the per-relay success probabilities
/// (each the product of a coverage probability and a scheduling
/// probability): 1 / (1 − Π(1 − qᶜqˢ)).
pub fn expected_interval(link_probs: &[f64]) -> ScheduleInterval {
    let miss: f64 = link_probs.iter().map(|q| 1.0 - q.clamp(0.0, 1.0)).product();
    let p = 1.0 - miss;
    if p <= 0.0 {
        ScheduleInterval::NeverScheduled
    } else {
        ScheduleInterval::Slots(1.0 / p)
    }
}

// ---------------------------------------------------------------------------
// Ground-to-air AoI expectation
// ---------------------------------------------------------------------------

/// Per-terminal inputs of the uplink age expectation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct G2aTerm {
    /// Mean packet size, bits.
    pub packet_bits: f64,
    /// Mean volume transmissible per slot, bits.
    pub slot_capacity_bits: f64,
    pub interval: ScheduleInterval,
}

impl G2aTerm {
    /// min(d̄/D̄, 1); a capacity of zero saturates the clamp.
    pub fn load_factor(&self) -> f64 {
        if self.slot_capacity_bits <= 0.0 {
            1.0
        } else {
            (self.packet_bits / self.slot_capacity_bits).min(1.0)
        }
    }
}

/// Expected per-packet uplink age in slots:
/// (1/2N) Σₙ min(d̄ₙ/D̄ₙ, 1)·(E[Tₙ] + 1). A never-scheduled terminal makes
/// the expectation infinite.
pub fn expected_g2a_aoi(terms: &[G2aTerm]) -> f64 {
    if terms.is_empty() {
        return 0.0;
    }
    let sum: f64 = terms
        .iter()
        .map(|t| t.load_factor() * (t.interval.slots() + 1.0))
        .sum();
    sum / (2.0 * terms.len() as f64)
}

// ---------------------------------------------------------------------------
// Air-to-space AoI expectation
// ---------------------------------------------------------------------------

/// Uplink age expectation split into its waiting and total parts, seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct A2sExpectation {
    /// Mean per-packet space-uplink age.
    pub mean_seconds: f64,
    /// The component accrued waiting for a satellite to come into service.
    pub waiting_seconds: f64,
}

/// Expected per-packet space-uplink age, averaged over satellites and
/// relays: a packet landing in the waiting window (probability T^W/T^k)
/// waits T^W/2 on average and then transmits; one landing in the service
/// window only transmits. `tx_seconds` is each relay's mean transmission
/// time ā/D̄ converted to seconds.
pub fn expected_a2s_aoi(windows: &[SatWindow], tx_seconds: &[f64]) -> Result<A2sExpectation> {
    if windows.is_empty() || tx_seconds.is_empty() {
        return Err(Error::ConfigValidation(
            "space-uplink age expectation needs at least one satellite window and one relay"
                .into(),
        ));
    }
    let mut mean = 0.0;
    let mut waiting = 0.0;
    for w in windows {
        if w.inter_sat <= 0.0 {
            return Err(Error::ConfigValidation(
                "satellite interval must be positive".into(),
            ));
        }
        let p_wait = w.wait / w.inter_sat;
        let p_serve = w.service / w.inter_sat;
        for &r in tx_seconds {
            waiting += p_wait * (w.wait / 2.0);
            mean += p_wait * (w.wait / 2.0 + r) + p_serve * r;
        }
    }
    let count = (windows.len() * tx_seconds.len()) as f64;
    Ok(A2sExpectation {
        mean_seconds: mean / count,
        waiting_seconds: waiting / count,
    })
}

/// Window arithmetic for a hypothetical satellite count on the configured
/// orbit geometry.
pub fn window_for_sat_count(cfg: &ScenarioConfig, sats: u32) -> Result<SatWindow> {
    if sats == 0 {
        return Err(Error::ConfigValidation(
            "a constellation needs at least one satellite".into(),
        ));
    }
    let mut sized = cfg.clone();
    sized.sats_per_leo = sats as usize;
    let orbit = crate::constellation::LeoOrbit::from_config(&sized, 0);
    let (_, window) = sat_schedule(&orbit, &sized, 0.0);
    Ok(window)
}

// ---------------------------------------------------------------------------
// Waiting share
// ---------------------------------------------------------------------------

/// Share of the total expected per-packet age attributed to satellite
/// waiting: waiting / (ground age + space age), both in seconds. Zero total
/// age defines the share as 0.
pub fn saoi_proportion(g2a_aoi_seconds: f64, a2s: &A2sExpectation) -> f64 {
    let total = g2a_aoi_seconds + a2s.mean_seconds;
    if total <= 0.0 {
        0.0
    } else {
        a2s.waiting_seconds / total
    }
}

/// Analytic waiting share as a function of the satellite count, using the
/// supplied ground-segment age (seconds) and per-relay transmission times.
pub fn analytic_saoi_for_sats(
    cfg: &ScenarioConfig,
    sats: u32,
    g2a_aoi_seconds: f64,
    tx_seconds: &[f64],
) -> Result<f64> {
    let w = window_for_sat_count(cfg, sats)?;
    let a2s = expected_a2s_aoi(&[w], tx_seconds)?;
    Ok(saoi_proportion(g2a_aoi_seconds, &a2s))
}

/// Invert the analytic waiting share over satellite counts 1..=`cap`: the
/// returned bounds bracket every count whose share lies in `target`
/// (falling back to the full range when the band is never hit — the search
/// will then report infeasibility honestly).
pub fn invert_saoi_bounds(
    cfg: &ScenarioConfig,
    target: (f64, f64),
    g2a_aoi_seconds: f64,
    tx_seconds: &[f64],
    cap: u32,
) -> Result<(u32, u32)> {
    let (d_min, d_max) = target;
    let mut lo = None;
    let mut hi = None;
    for sats in 1..=cap.max(1) {
        let share = analytic_saoi_for_sats(cfg, sats, g2a_aoi_seconds, tx_seconds)?;
        if share >= d_min && share <= d_max {
            lo.get_or_insert(sats);
            hi = Some(sats);
        }
    }
    match (lo, hi) {
        // Pad by one on each side so a slightly biased analytic share still
        // brackets the simulated optimum.
        (Some(l), Some(h)) => Ok((l.saturating_sub(1).max(1), (h + 1).min(cap.max(1)))),
        _ => Ok((1, cap.max(1))),
    }
}

// ---------------------------------------------------------------------------
// Pilot estimator
// ---------------------------------------------------------------------------

/// Everything the closed forms need, estimated or derived in one place.
#[derive(Debug, Clone)]
pub struct AoiExpectation {
    /// Coverage frequency per (terminal, relay).
    pub q_c: Vec<Vec<f64>>,
    /// Mean scheduling probability per (terminal, relay), conditioned on
    /// coverage.
    pub q_s: Vec<Vec<f64>>,
    pub intervals: Vec<ScheduleInterval>,
    pub g2a_terms: Vec<G2aTerm>,
    /// Expected per-packet ground-segment age, slots.
    pub g2a_aoi_slots: f64,
    /// Per-relay mean transmission time ā/D̄, seconds.
    pub tx_seconds: Vec<f64>,
    pub a2s: A2sExpectation,
    /// Expected waiting share E[∂].
    pub saoi: f64,
    /// Terminals whose capacity estimate was zero (load factor clamped).
    pub clamped: Vec<usize>,
}

/// Default pilot length, slots.
pub const PILOT_SLOTS: u64 = 1000;

/// Measure coverage/scheduling statistics from a pilot run under the named
/// baselines, then evaluate the closed forms. Capacities use single-link
/// expectations (no co-channel interference): the closed forms model each
/// link in isolation.
pub fn estimate_expectations(
    cfg: &ScenarioConfig,
    l1_name: &str,
    l2_name: &str,
    seed: u64,
    pilot_slots: u64,
) -> Result<AoiExpectation> {
    let mut pilot_cfg = cfg.clone();
    pilot_cfg.episode_slots = pilot_slots.max(1);
    let n = pilot_cfg.n_gts;
    let m = pilot_cfg.n_uavs;

    let mut l1 = baselines::l1_policy(l1_name, baselines::default_t_prime(&pilot_cfg))?;
    let mut l2 = baselines::l2_policy(l2_name)?;
    let mut ep = Episode::new(&pilot_cfg, seed);

    let mut mode_slots = vec![0u64; n];
    let mut cover = vec![vec![0u64; m]; n];
    let mut qs_sum = vec![vec![0.0; m]; n];
    let mut qs_cnt = vec![vec![0u64; m]; n];
    let mut cap_sum = vec![0.0; n];
    let mut cap_cnt = vec![0u64; n];
    let mut a2s_sum = vec![0.0; m];
    let mut a2s_cnt = vec![0u64; m];

    let g2a_noise = pilot_cfg.noise_psd * pilot_cfg.g2a_subchannel_hz;
    let a2s_band = pilot_cfg.a2s_subchannels as f64 * pilot_cfg.a2s_subchannel_hz;
    let a2s_noise = pilot_cfg.noise_psd * a2s_band;

    while !ep.done() {
        let t = ep.slot();
        let obs = ep.begin_slot();

        for gt in 0..n {
            let counted = !pilot_cfg.qc_condition_on_mode || !ep.world.gts[gt].harvesting;
            if !counted {
                continue;
            }
            mode_slots[gt] += 1;
            for (uav, slot_count) in cover[gt].iter_mut().enumerate() {
                if ep.world.conn.c[gt][uav] {
                    *slot_count += 1;
                }
            }
        }

        for uav in 0..m {
            let set: Vec<(usize, f64)> = ep
                .world
                .conn
                .covered_by(uav)
                .into_iter()
                .map(|gt| (gt, ep.world.gts[gt].priority))
                .collect();
            for &(gt, _) in &set {
                qs_sum[gt][uav] +=
                    schedule_probability(&set, gt, pilot_cfg.g2a_subchannels);
                qs_cnt[gt][uav] += 1;

                let gain = expected_g2a_gain(
                    &ep.world.gts[gt].pos,
                    &ep.world.uavs[uav].pos,
                    &pilot_cfg.los_params,
                )?;
                let sinr = pilot_cfg.gt_tx_power * gain / g2a_noise;
                cap_sum[gt] += pilot_cfg.g2a_subchannel_hz
                    * (1.0 + sinr).log2()
                    * pilot_cfg.slot_seconds;
                cap_cnt[gt] += 1;
            }
        }

        for (k, orbit) in ep.world.orbits.iter().enumerate() {
            let seconds = t as f64 * pilot_cfg.slot_seconds;
            let (serving, _) = sat_schedule(orbit, &pilot_cfg, seconds);
            let Some(sat) = serving else { continue };
            let pos = sat_positions(orbit, &pilot_cfg, seconds)[sat];
            let _ = k;
            for uav in 0..m {
                let Ok(gain) =
                    a2s_gain_with_shadow(&ep.world.uavs[uav].pos, &pos, 0.0, &pilot_cfg)
                else {
                    continue;
                };
                let sinr = pilot_cfg.uav_tx_power_max * gain / a2s_noise;
                a2s_sum[uav] += a2s_band * (1.0 + sinr).log2() * pilot_cfg.slot_seconds;
                a2s_cnt[uav] += 1;
            }
        }

        let actions: Vec<_> = obs.iter().map(|o| l1.act(o, t, &pilot_cfg)).collect();
        ep.step(&actions, &mut |s: &StateL2| l2.act(s, t, &pilot_cfg))?;
    }

    let q_c: Vec<Vec<f64>> = (0..n)
        .map(|gt| {
            (0..m)
                .map(|uav| {
                    if mode_slots[gt] == 0 {
                        0.0
                    } else {
                        cover[gt][uav] as f64 / mode_slots[gt] as f64
                    }
                })
                .collect()
        })
        .collect();
    let q_s: Vec<Vec<f64>> = (0..n)
        .map(|gt| {
            (0..m)
                .map(|uav| {
                    if qs_cnt[gt][uav] == 0 {
                        0.0
                    } else {
                        qs_sum[gt][uav] / qs_cnt[gt][uav] as f64
                    }
                })
                .collect()
        })
        .collect();

    let intervals: Vec<ScheduleInterval> = (0..n)
        .map(|gt| {
            let probs: Vec<f64> = (0..m).map(|uav| q_c[gt][uav] * q_s[gt][uav]).collect();
            expected_interval(&probs)
        })
        .collect();

    let packet_bits = cfg.packet_bits();
    let mut clamped = Vec::new();
    let g2a_terms: Vec<G2aTerm> = (0..n)
        .map(|gt| {
            let cap = if cap_cnt[gt] == 0 {
                0.0
            } else {
                cap_sum[gt] / cap_cnt[gt] as f64
            };
            if cap <= 0.0 {
                clamped.push(gt);
            }
            G2aTerm {
                packet_bits,
                slot_capacity_bits: cap,
                interval: intervals[gt],
            }
        })
        .collect();
    let g2a_aoi_slots = expected_g2a_aoi(&g2a_terms);

    let tx_seconds: Vec<f64> = (0..m)
        .map(|uav| {
            if a2s_cnt[uav] == 0 {
                f64::INFINITY
            } else {
                let per_slot = a2s_sum[uav] / a2s_cnt[uav] as f64;
                packet_bits / per_slot * cfg.slot_seconds
            }
        })
        .collect();

    let mut windows = Vec::new();
    for orbit in &ep.world.orbits {
        let (_, w) = sat_schedule(orbit, &pilot_cfg, 0.0);
        for _ in 0..orbit.sat_count {
            windows.push(w);
        }
    }
    let a2s = expected_a2s_aoi(&windows, &tx_seconds)?;
    let saoi = saoi_proportion(g2a_aoi_slots * cfg.slot_seconds, &a2s);

    Ok(AoiExpectation {
        q_c,
        q_s,
        intervals,
        g2a_terms,
        g2a_aoi_slots,
        tx_seconds,
        a2s,
        saoi,
        clamped,
    })
}

// ---------------------------------------------------------------------------
// Constellation-sizing binary search
// ---------------------------------------------------------------------------

/// Outcome of the sizing search.
#[derive(Debug, Clone, PartialEq)]
pub struct SlsdoResult {
    /// Satellite count whose measured share landed in the target band, when
    /// one was found.
    pub chosen: Option<u32>,
    /// Search bounds the run started from.
    pub lo: u32,
    pub hi: u32,
    /// Every probe in order: (satellite count, measured share).
    pub trace: Vec<(u32, f64)>,
    /// Closest probe to the band when the search exhausted its bounds.
    pub nearest: Option<(u32, f64)>,
}

impl SlsdoResult {
    pub fn feasible(&self) -> bool {
        self.chosen.is_some()
    }
}

/// Binary-search the satellite count: a measured share above the band means
/// too much waiting (raise the floor), below it means over-provisioning
/// (lower the ceiling), inside it stops the search. The oracle is assumed
/// monotone non-increasing in expectation; the probe count is at most
/// ⌈log₂(hi−lo+1)⌉ + 1.
pub fn slsdo_search(
    oracle: &mut dyn FnMut(u32) -> Result<f64>,
    target: (f64, f64),
    bounds: (u32, u32),
) -> Result<SlsdoResult> {
    let (d_min, d_max) = target;
    if d_min.is_nan() || d_max.is_nan() || d_min > d_max {
        return Err(Error::ConfigValidation(format!(
            "waiting-share band is empty: [{d_min}, {d_max}]"
        )));
    }
    let (start_lo, start_hi) = bounds;
    if start_lo > start_hi || start_lo == 0 {
        return Err(Error::ConfigValidation(format!(
            "search bounds must satisfy 1 <= lo <= hi, got [{start_lo}, {start_hi}]"
        )));
    }

    let mut lo = start_lo;
    let mut hi = start_hi;
    let mut trace = Vec::new();
    let mut chosen = None;
    while lo <= hi {
        let mid = lo + (hi - lo) / 2;
        let share = oracle(mid)?;
        trace.push((mid, share));
        if share > d_max {
            lo = mid + 1;
        } else if share < d_min {
            match mid.checked_sub(1) {
                Some(next) => hi = next,
                None => break,
            }
        } else {
            chosen = Some(mid);
            break;
        }
    }

    let nearest = if chosen.is_none() {
        trace
            .iter()
            .copied()
            .fold(None, |best: Option<(u32, f64, f64)>, (l, d)| {
                let dist = if d > d_max { d - d_max } else { d_min - d };
                match best {
                    Some((_, _, b)) if b < dist => best,
                    _ => Some((l, d, dist)),
                }
            })
            .map(|(l, d, _)| (l, d))
    } else {
        None
    };

    Ok(SlsdoResult { chosen, lo: start_lo, hi: start_hi, trace, nearest })
}

/// Reference implementation for cross-checking the search: probe every count
/// in the bounds and return all that land in the band. Deliberately
/// independent of `slsdo_search`.
pub fn slsdo_linear_scan(
    oracle: &mut dyn FnMut(u32) -> Result<f64>,
    target: (f64, f64),
    bounds: (u32, u32),
) -> Result<Vec<u32>> {
    let (d_min, d_max) = target;
    let mut hits = Vec::new();
    for sats in bounds.0..=bounds.1 {
        let share = oracle(sats)?;
        if share >= d_min && share <= d_max {
            hits.push(sats);
        }
    }
    Ok(hits)
}

// ---------------------------------------------------------------------------
// Decoupling bound
// ---------------------------------------------------------------------------

/// One enumerated action of a layer: the per-relay volumes it produces (bits
/// collected for the ground layer, bits of uplink capacity for the space
/// layer), its energy, and its age figure.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerOption {
    pub volumes: Vec<f64>,
    pub energy: f64,
    pub aoi: f64,
}

impl LayerOption {
    fn total(&self) -> f64 {
        self.volumes.iter().sum()
    }

    /// The layer's own objective: volume per (scaled) energy-age product.
    fn objective(&self, beta: f64) -> f64 {
        self.total() / (beta * self.energy * self.aoi)
    }
}

/// An exhaustively enumerable two-layer instance.
#[derive(Debug, Clone, PartialEq)]
pub struct TinyInstance {
    pub l1: Vec<LayerOption>,
    pub l2: Vec<LayerOption>,
    pub beta: f64,
}

/// Verdict of the bound check over every action pair.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    /// Optimal per-layer objective values.
    pub v1: f64,
    pub v2: f64,
    pub l1_argmax: usize,
    pub l2_argmax: usize,
    /// Extremes of (bound − joint objective) over all pairs.
    pub max_slack: f64,
    pub min_slack: f64,
    /// Pairs where the joint objective exceeded the bound (beyond 1e-9).
    pub violations: Vec<(usize, usize, f64)>,
    /// Slack at the pair of per-layer argmaxes.
    pub slack_at_opt: f64,
    /// Largest per-relay volume mismatch at that pair; zero means the
    /// supply-demand consistency condition holds there.
    pub consistency_gap: f64,
}

const BOUND_EPS: f64 = 1e-9;

/// Check, for every enumerated action pair, that the joint objective
/// (delivered = per-relay min of collected and capacity) never exceeds the
/// layered upper bound built from the per-layer optima.
pub fn decoupling_bound_check(inst: &TinyInstance) -> Result<BoundReport> {
    if inst.l1.is_empty() || inst.l2.is_empty() {
        return Err(Error::ConfigValidation(
            "the bound check needs at least one action per layer".into(),
        ));
    }
    let relays = inst.l1[0].volumes.len();
    for opt in inst.l1.iter().chain(&inst.l2) {
        if opt.volumes.len() != relays {
            return Err(Error::ConfigValidation(
                "every option must cover the same relays".into(),
            ));
        }
        if opt.energy <= 0.0 || opt.aoi <= 0.0 {
            return Err(Error::ConfigValidation(
                "energies and ages must be positive".into(),
            ));
        }
    }
    if inst.beta <= 0.0 {
        return Err(Error::ConfigValidation("the scale factor must be positive".into()));
    }

    let argmax = |opts: &[LayerOption]| {
        let mut best = 0;
        for (i, o) in opts.iter().enumerate() {
            if o.objective(inst.beta) > opts[best].objective(inst.beta) {
                best = i;
            }
        }
        best
    };
    let l1_argmax = argmax(&inst.l1);
    let l2_argmax = argmax(&inst.l2);
    let v1 = inst.l1[l1_argmax].objective(inst.beta);
    let v2 = inst.l2[l2_argmax].objective(inst.beta);

    let mut max_slack = f64::NEG_INFINITY;
    let mut min_slack = f64::INFINITY;
    let mut violations = Vec::new();
    let mut slack_at_opt = 0.0;
    for (xi, x) in inst.l1.iter().enumerate() {
        for (yi, y) in inst.l2.iter().enumerate() {
            let delivered: f64 = x
                .volumes
                .iter()
                .zip(&y.volumes)
                .map(|(c, k)| c.min(*k))
                .sum();
            let denom = (x.energy + y.energy) * (x.aoi + y.aoi);
            let joint = delivered / (inst.beta * denom);
            let bound = (v1 * x.energy * x.aoi).min(v2 * y.energy * y.aoi) / denom;
            let slack = bound - joint;
            max_slack = max_slack.max(slack);
            min_slack = min_slack.min(slack);
            if slack < -BOUND_EPS {
                violations.push((xi, yi, slack));
            }
            if xi == l1_argmax && yi == l2_argmax {
                slack_at_opt = slack;
            }
        }
    }

    let consistency_gap = inst.l1[l1_argmax]
        .volumes
        .iter()
        .zip(&inst.l2[l2_argmax].volumes)
        .map(|(c, k)| (c - k).abs())
        .fold(0.0, f64::max);

    Ok(BoundReport {
        v1,
        v2,
        l1_argmax,
        l2_argmax,
        max_slack,
        min_slack,
        violations,
        slack_at_opt,
        consistency_gap,
    })
}
