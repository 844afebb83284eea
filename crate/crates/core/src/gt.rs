//! Ground terminals: packet ledger and per-packet age accounting, adaptive
//! mode switching between transmitting and harvesting, the nonlinear RF
//! energy-harvesting curve, battery evolution, and the AoI-fairness priority.
//!
//! Age convention: a packet generated in slot `g` has age `t − g` at the end
//! of slot `t` (0 during its generation slot) and stops counting — drops to
//! 0 — the moment it is fully delivered to a UAV. A terminal's age total is
//! the sum over its undelivered packets.

use std::collections::VecDeque;

use rand::Rng;
use rand_distr::{Distribution, Poisson};

use crate::geometry::Position3D;
use crate::scenario::{EhParams, ScenarioConfig};

/// One fixed-size data packet. `bits_remaining` tracks the unfinished part of
/// whichever hop the packet currently sits on (GT→UAV at the terminal,
/// UAV→satellite once buffered).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Packet {
    pub id: u64,
    /// Slot the packet was generated in.
    pub gen_slot: u64,
    /// Bits still to transmit on the current hop.
    pub bits_remaining: f64,
}

impl Packet {
    /// Age in slots at the end of slot `t`.
    pub fn age(&self, t: u64) -> f64 {
        (t - self.gen_slot) as f64
    }
}

/// A ground terminal. `harvesting` is the mode flag: `true` = energy GT
/// (receives wireless power), `false` = transmit GT (uplinks data).
#[derive(Debug, Clone)]
pub struct GroundTerminal {
    pub pos: Position3D,
    /// Battery level, J.
    pub battery: f64,
    /// Mode: harvesting (energy GT) vs transmitting (transmit GT).
    pub harvesting: bool,
    /// Undelivered packets, oldest first.
    pub queue: VecDeque<Packet>,
    /// Cumulative bits delivered to UAVs (non-decreasing).
    pub delivered_bits_total: f64,
    /// Scheduling priority, recomputed each slot for the next.
    pub priority: f64,
    next_packet_id: u64,
}

impl GroundTerminal {
    pub fn new(pos: Position3D, cfg: &ScenarioConfig) -> Self {
        Self {
            pos,
            battery: cfg.gt_batt_init,
            // The battery rule applied to the initial level decides the
            // starting mode (at the default 0.5 J = B_T this is transmit).
            harvesting: cfg.gt_batt_init <= cfg.batt_thresh_e,
            queue: VecDeque::new(),
            delivered_bits_total: 0.0,
            priority: 0.0,
            next_packet_id: 0,
        }
    }

    /// Sum of packet ages at the end of slot `t`.
    pub fn aoi(&self, t: u64) -> f64 {
        self.queue.iter().map(|p| p.age(t)).sum()
    }

    /// Bits still queued for the uplink.
    pub fn queued_bits(&self) -> f64 {
        self.queue.iter().map(|p| p.bits_remaining).sum()
    }

    /// Append `count` packets generated in slot `t`.
    pub fn push_arrivals(&mut self, count: u64, t: u64, cfg: &ScenarioConfig) {
        for _ in 0..count {
            self.queue.push_back(Packet {
                id: self.next_packet_id,
                gen_slot: t,
                bits_remaining: cfg.packet_bits(),
            });
            self.next_packet_id += 1;
        }
    }

    /// Consume up to `budget` bits from the queue, oldest first. Fully
    /// transmitted packets retire and are returned (for the UAV buffer);
    /// partial progress stays on the head packet. Returns the retired
    /// packets and the bits actually consumed.
    pub fn deliver_bits(&mut self, mut budget: f64) -> (Vec<Packet>, f64) {
        let mut retired = Vec::new();
        let mut consumed = 0.0;
        while budget > 0.0 {
            let Some(head) = self.queue.front_mut() else { break };
            if budget >= head.bits_remaining {
                budget -= head.bits_remaining;
                consumed += head.bits_remaining;
                let mut p = self.queue.pop_front().expect("head exists");
                p.bits_remaining = 0.0;
                retired.push(p);
            } else {
                head.bits_remaining -= budget;
                consumed += budget;
                budget = 0.0;
            }
        }
        self.delivered_bits_total += consumed;
        (retired, consumed)
    }
}

/// Draw this slot's packet arrivals for one terminal.
pub fn poisson_arrivals(rng: &mut impl Rng, rate: f64) -> u64 {
    if rate == 0.0 {
        return 0;
    }
    Poisson::new(rate).expect("validated rate").sample(rng) as u64
}

// ---------------------------------------------------------------------------
// Mode switching
// ---------------------------------------------------------------------------

/// Mean age total of the other terminals within GT `n`'s sensing range; the
/// terminal's own value when it has no neighbor.
pub fn local_avg_aoi(gts: &[GroundTerminal], n: usize, t: u64, cfg: &ScenarioConfig) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, g) in gts.iter().enumerate() {
        if i != n && gts[n].pos.distance(&g.pos) <= cfg.sense_range_gt {
            sum += g.aoi(t);
            count += 1;
        }
    }
    if count == 0 {
        gts[n].aoi(t)
    } else {
        sum / count as f64
    }
}

/// Four-threshold mode rule, evaluated at the end of a slot with the updated
/// battery. Battery outside (B_E, B_T) forces the mode; inside the band the
/// age total against the neighborhood average (hysteresis width ξ) can force
/// it; otherwise the mode holds. The transmit conditions are evaluated first,
/// matching the rule's written order.
pub fn aftu_mode(
    prev_harvesting: bool,
    battery: f64,
    aoi: f64,
    local_avg: f64,
    cfg: &ScenarioConfig,
) -> bool {
    let xi = cfg.aftu_weight;
    let in_band = battery > cfg.batt_thresh_e && battery < cfg.batt_thresh_t;
    if battery >= cfg.batt_thresh_t || (in_band && aoi >= (1.0 + xi) * local_avg) {
        false
    } else if battery <= cfg.batt_thresh_e || (in_band && aoi <= (1.0 - xi) * local_avg) {
        true
    } else {
        prev_harvesting
    }
}

// ---------------------------------------------------------------------------
// Energy harvesting and battery
// ---------------------------------------------------------------------------

/// Nonlinear RF→DC conversion: zero below the sensitivity level, a logistic
/// rise across the active region, flat at `P̄_max = efficiency·saturation`
/// for inputs at or above saturation. The logistic is offset-normalized so
/// the curve is exactly 0 at the sensitivity point and exactly P̄_max at
/// saturation (its midpoint therefore sits at P̄_max/2).
pub fn harvest_dc_power(p_rf: f64, eh: &EhParams) -> f64 {
    if p_rf <= eh.sensitivity_w {
        return 0.0;
    }
    let p_max = eh.efficiency * eh.saturation_w;
    let a = 8.0 / (eh.saturation_w - eh.sensitivity_w);
    let b = (eh.sensitivity_w + eh.saturation_w) / 2.0;
    let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
    let s_edge = sig(-4.0); // value at the sensitivity point by construction
    let s = sig(a * (p_rf.min(eh.saturation_w) - b));
    p_max * (s - s_edge) / (1.0 - 2.0 * s_edge)
}

/// One battery step: harvested DC (gated by the mode flag) minus transmit
/// consumption, clamped to [0, cap]. `p_rf` is the summed received WET power;
/// `scheduled` marks an uplink slot. Returns (harvested J, consumed J).
pub fn harvest_and_battery(
    gt: &mut GroundTerminal,
    p_rf: f64,
    scheduled: bool,
    cfg: &ScenarioConfig,
) -> (f64, f64) {
    let harvested = if gt.harvesting {
        harvest_dc_power(p_rf, &cfg.eh_params) * cfg.slot_seconds
    } else {
        0.0
    };
    let consumed = if scheduled {
        cfg.gt_tx_power * cfg.slot_seconds
    } else {
        0.0
    };
    gt.battery = (gt.battery + harvested - consumed).min(cfg.gt_batt_cap).max(0.0);
    (harvested, consumed)
}

// ---------------------------------------------------------------------------
// Priority and fairness
// ---------------------------------------------------------------------------

/// Next-slot priorities and the running Jain fairness index.
///
/// ϱ_n = κ·a_n/Ā − (1−κ)·N·D̂_n/D̂ where Ā is the mean age total, D̂_n the
/// cumulative delivered bits, and D̂ sums over covered transmit-mode
/// terminals. Either denominator at zero sends its term to zero. Fairness is
/// Jain's index over cumulative per-terminal throughput (zeros included);
/// the all-zero start counts as perfectly fair.
pub fn priority_and_fairness(
    gts: &[GroundTerminal],
    covered: &[bool],
    t: u64,
    cfg: &ScenarioConfig,
) -> (Vec<f64>, f64) {
    let n = gts.len();
    let kappa = cfg.aoi_fairness_kappa;
    let mean_aoi: f64 = gts.iter().map(|g| g.aoi(t)).sum::<f64>() / n as f64;
    let covered_tx_total: f64 = gts
        .iter()
        .enumerate()
        .filter(|(i, g)| covered[*i] && !g.harvesting)
        .map(|(_, g)| g.delivered_bits_total)
        .sum();
    let priorities = gts
        .iter()
        .map(|g| {
            let age_term = if mean_aoi > 0.0 { kappa * g.aoi(t) / mean_aoi } else { 0.0 };
            let tp_term = if covered_tx_total > 0.0 {
                (1.0 - kappa) * n as f64 * g.delivered_bits_total / covered_tx_total
            } else {
                0.0
            };
            age_term - tp_term
        })
        .collect();

    let sum: f64 = gts.iter().map(|g| g.delivered_bits_total).sum();
    let sum_sq: f64 = gts.iter().map(|g| g.delivered_bits_total.powi(2)).sum();
    let fairness = if sum_sq > 0.0 { sum * sum / (n as f64 * sum_sq) } else { 1.0 };
    (priorities, fairness)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Purpose, RngStream};

    fn cfg() -> ScenarioConfig {
        ScenarioConfig::default()
    }

    fn gt_at(x: f64, y: f64, cfg: &ScenarioConfig) -> GroundTerminal {
        GroundTerminal::new(Position3D::new(x, y, 0.0), cfg)
    }

    #[test]
    fn undelivered_age_increments_per_slot() {
        let cfg = cfg();
        let mut gt = gt_at(0.0, 0.0, &cfg);
        gt.push_arrivals(1, 10, &cfg);
        assert_eq!(gt.aoi(10), 0.0);
        assert_eq!(gt.aoi(15), 5.0);
        assert_eq!(gt.aoi(16), 6.0);
    }

    #[test]
    fn delivered_packet_leaves_the_ledger() {
        let cfg = cfg();
        let mut gt = gt_at(0.0, 0.0, &cfg);
        gt.push_arrivals(2, 0, &cfg);
        let (retired, consumed) = gt.deliver_bits(cfg.packet_bits());
        assert_eq!(retired.len(), 1);
        assert_eq!(consumed, cfg.packet_bits());
        assert_eq!(gt.aoi(5), 5.0, "only the surviving packet ages");
        assert_eq!(gt.delivered_bits_total, cfg.packet_bits());
    }

    #[test]
    fn partial_delivery_persists_on_the_head_packet() {
        let cfg = cfg();
        let mut gt = gt_at(0.0, 0.0, &cfg);
        gt.push_arrivals(1, 0, &cfg);
        let half = cfg.packet_bits() / 2.0;
        let (retired, consumed) = gt.deliver_bits(half);
        assert!(retired.is_empty());
        assert_eq!(consumed, half);
        assert_eq!(gt.queue[0].bits_remaining, half);
        // Finishing the packet later consumes exactly the remainder.
        let (retired, consumed) = gt.deliver_bits(cfg.packet_bits());
        assert_eq!(retired.len(), 1);
        assert_eq!(consumed, half);
    }

    #[test]
    fn oldest_packets_retire_first() {
        let cfg = cfg();
        let mut gt = gt_at(0.0, 0.0, &cfg);
        gt.push_arrivals(1, 0, &cfg);
        gt.push_arrivals(1, 3, &cfg);
        let (retired, _) = gt.deliver_bits(cfg.packet_bits());
        assert_eq!(retired[0].gen_slot, 0);
        assert_eq!(gt.queue[0].gen_slot, 3);
    }

    #[test]
    fn poisson_rate_long_run_mean() {
        let cfg = cfg();
        let stream = RngStream::new(11);
        let mut total = 0u64;
        let slots = 100_000u64;
        for t in 0..slots {
            let mut rng = stream.rng(Purpose::PacketArrival, 0, t);
            total += poisson_arrivals(&mut rng, cfg.packet_rate);
        }
        let mean = total as f64 / slots as f64;
        assert!(
            (mean - cfg.packet_rate).abs() / cfg.packet_rate < 0.01,
            "observed {mean}"
        );
    }

    #[test]
    fn battery_rules_force_the_mode() {
        let cfg = cfg();
        // Depleted battery forces harvesting regardless of age.
        assert!(aftu_mode(false, 0.005, 100.0, 1.0, &cfg));
        // Full battery forces transmit.
        assert!(!aftu_mode(true, 0.6, 0.0, 100.0, &cfg));
    }

    #[test]
    fn in_band_age_thresholds_and_hysteresis() {
        let cfg = cfg(); // ξ = 0.1
        let b = 0.1;
        // Age well above the neighborhood → transmit.
        assert!(!aftu_mode(true, b, 11.1, 10.0, &cfg));
        // Age well below → harvest.
        assert!(aftu_mode(false, b, 8.9, 10.0, &cfg));
        // Exactly at the average: inside the hold band, mode unchanged.
        assert!(aftu_mode(true, b, 10.0, 10.0, &cfg));
        assert!(!aftu_mode(false, b, 10.0, 10.0, &cfg));
        // Boundary values force switches (non-strict thresholds).
        assert!(!aftu_mode(true, b, 11.0, 10.0, &cfg));
        assert!(aftu_mode(false, b, 9.0, 10.0, &cfg));
    }

    #[test]
    fn neighborhood_average_excludes_self_and_far_terminals() {
        let cfg = cfg();
        let mut gts = vec![
            gt_at(0.0, 0.0, &cfg),
            gt_at(100.0, 0.0, &cfg),
            gt_at(0.0, 399.0, &cfg),
            gt_at(1000.0, 1000.0, &cfg), // outside the 400 m range
        ];
        gts[0].push_arrivals(1, 0, &cfg);
        gts[1].push_arrivals(2, 0, &cfg);
        gts[2].push_arrivals(4, 0, &cfg);
        gts[3].push_arrivals(8, 0, &cfg);
        // At t=10 the age totals are 10, 20, 40, 80.
        assert_eq!(local_avg_aoi(&gts, 0, 10, &cfg), 30.0);
        // A terminal with no neighbor falls back to its own value.
        assert_eq!(local_avg_aoi(&gts, 3, 10, &cfg), 80.0);
    }

    #[test]
    fn harvest_curve_shape() {
        let cfg = cfg();
        let eh = cfg.eh_params;
        let p_max = eh.efficiency * eh.saturation_w;
        assert_eq!(harvest_dc_power(0.0, &eh), 0.0);
        assert_eq!(harvest_dc_power(eh.sensitivity_w, &eh), 0.0, "dead zone edge");
        assert_eq!(harvest_dc_power(eh.sensitivity_w * 0.5, &eh), 0.0);
        // Exactly P̄_max at saturation and flat above it.
        assert!((harvest_dc_power(eh.saturation_w, &eh) - p_max).abs() < 1e-18);
        assert_eq!(
            harvest_dc_power(eh.saturation_w, &eh),
            harvest_dc_power(eh.saturation_w * 10.0, &eh)
        );
        // Frozen hand-computed points: the logistic midpoint sits at P̄_max/2
        // and the quarter point follows from σ(−2).
        let mid = (eh.sensitivity_w + eh.saturation_w) / 2.0;
        assert!((harvest_dc_power(mid, &eh) - 0.0012529680840681805).abs() < 1e-18);
        let quarter = eh.sensitivity_w + 0.25 * (eh.saturation_w - eh.sensitivity_w);
        assert!((harvest_dc_power(quarter, &eh) - 0.0002631072230849608).abs() < 1e-18);
        // Monotone non-decreasing over a fine grid.
        let mut prev = -1.0;
        for i in 0..=1000 {
            let p = eh.saturation_w * 1.2 * i as f64 / 1000.0;
            let v = harvest_dc_power(p, &eh);
            assert!(v >= prev && v <= p_max + 1e-18);
            prev = v;
        }
    }

    #[test]
    fn transmit_mode_never_harvests() {
        let cfg = cfg();
        let mut gt = gt_at(0.0, 0.0, &cfg);
        gt.harvesting = false;
        gt.battery = 0.3;
        let (h, c) = harvest_and_battery(&mut gt, 1.0, false, &cfg);
        assert_eq!(h, 0.0);
        assert_eq!(c, 0.0);
        assert_eq!(gt.battery, 0.3);
    }

    #[test]
    fn battery_caps_and_transmit_drain() {
        let cfg = cfg();
        let mut gt = gt_at(0.0, 0.0, &cfg);
        gt.harvesting = true;
        gt.battery = cfg.gt_batt_cap;
        harvest_and_battery(&mut gt, cfg.eh_params.saturation_w, false, &cfg);
        assert_eq!(gt.battery, cfg.gt_batt_cap, "harvest cannot exceed the cap");
        gt.harvesting = false;
        let before = gt.battery;
        let (_, c) = harvest_and_battery(&mut gt, 0.0, true, &cfg);
        assert_eq!(c, cfg.gt_tx_power * cfg.slot_seconds);
        assert!((gt.battery - (before - c)).abs() < 1e-15);
    }

    #[test]
    fn battery_step_is_conservative_between_clamps() {
        let cfg = cfg();
        let mut gt = gt_at(0.0, 0.0, &cfg);
        gt.harvesting = true;
        gt.battery = 0.4;
        let before = gt.battery;
        let (h, c) = harvest_and_battery(&mut gt, 0.001, false, &cfg);
        assert!((gt.battery - (before + h - c)).abs() < 1e-18);
    }

    #[test]
    fn symmetric_terminals_share_priority() {
        let cfg = cfg();
        let mut gts = vec![gt_at(0.0, 0.0, &cfg), gt_at(10.0, 0.0, &cfg)];
        for g in &mut gts {
            g.push_arrivals(1, 0, &cfg);
            g.delivered_bits_total = 5e5;
        }
        let (p, f) = priority_and_fairness(&gts, &[true, true], 4, &cfg);
        assert_eq!(p[0], p[1]);
        assert_eq!(f, 1.0);
    }

    #[test]
    fn stale_terminal_outranks_served_terminal() {
        let cfg = cfg();
        let mut gts = vec![gt_at(0.0, 0.0, &cfg), gt_at(10.0, 0.0, &cfg)];
        gts[0].push_arrivals(2, 0, &cfg); // older backlog
        gts[1].push_arrivals(1, 8, &cfg);
        gts[1].delivered_bits_total = 1e6; // already served
        let (p, _) = priority_and_fairness(&gts, &[true, true], 10, &cfg);
        assert!(p[0] > p[1]);
    }

    #[test]
    fn jain_index_hand_values() {
        let cfg = cfg();
        let mut gts = vec![gt_at(0.0, 0.0, &cfg), gt_at(10.0, 0.0, &cfg)];
        gts[0].delivered_bits_total = 1.0;
        gts[1].delivered_bits_total = 2.0;
        let (_, f) = priority_and_fairness(&gts, &[true, true], 0, &cfg);
        assert!((f - 0.9).abs() < 1e-15, "(1+2)²/(2·5) = 0.9");
        // One terminal holding all throughput hits the 1/N floor.
        let mut gts3 = vec![
            gt_at(0.0, 0.0, &cfg),
            gt_at(10.0, 0.0, &cfg),
            gt_at(20.0, 0.0, &cfg),
        ];
        gts3[0].delivered_bits_total = 7.0;
        let (_, f3) = priority_and_fairness(&gts3, &[true, true, true], 0, &cfg);
        assert!((f3 - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn zero_denominators_zero_the_terms() {
        let cfg = cfg();
        let gts = vec![gt_at(0.0, 0.0, &cfg), gt_at(10.0, 0.0, &cfg)];
        let (p, f) = priority_and_fairness(&gts, &[true, true], 0, &cfg);
        assert_eq!(p, vec![0.0, 0.0]);
        assert_eq!(f, 1.0);
    }

    #[test]
    fn uncovered_throughput_does_not_enter_the_denominator() {
        let cfg = cfg();
        let mut gts = vec![gt_at(0.0, 0.0, &cfg), gt_at(10.0, 0.0, &cfg)];
        gts[0].delivered_bits_total = 1e6;
        gts[1].delivered_bits_total = 1e6;
        gts[0].push_arrivals(1, 0, &cfg);
        gts[1].push_arrivals(1, 0, &cfg);
        let (p_all, _) = priority_and_fairness(&gts, &[true, true], 5, &cfg);
        let (p_one, _) = priority_and_fairness(&gts, &[true, false], 5, &cfg);
        // With GT 1 uncovered the covered total halves, so the throughput
        // penalty on GT 0 doubles and its priority drops.
        assert!(p_one[0] < p_all[0]);
    }
}
