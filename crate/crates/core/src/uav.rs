//! UAV state and dynamics: rotary-wing propulsion power, the two-battery
//! energy model (replaceable flight battery, solar-fed harvest board that
//! pays only for the space uplink), store-and-forward packet buffering, and
//! the air-to-space transmit step.
//!
//! Store-and-forward rule: data collected from ground terminals in slot `t`
//! becomes eligible for the space uplink from slot `t+1` on. Packet ages keep
//! counting from the generation slot while buffered and drop to zero at
//! satellite delivery.

use std::collections::VecDeque;

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::Position3D;
use crate::gt::Packet;
use crate::scenario::{Propulsion, ScenarioConfig};

/// A packet held at a UAV, stamped with the slot it was collected in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BufferedPacket {
    pub packet: Packet,
    pub collect_slot: u64,
}

/// One UAV.
#[derive(Debug, Clone)]
pub struct Uav {
    pub pos: Position3D,
    /// Replaceable flight battery, J. Non-increasing within an episode.
    pub battery: f64,
    /// Harvest board charge, J; pays only for A2S transmission.
    pub harvest_board: f64,
    /// WET flag: radiating charging power this slot.
    pub wet_active: bool,
    /// False once the flight battery cannot sustain a hover slot; an
    /// inactive UAV neither moves, radiates, nor serves terminals.
    pub active: bool,
    /// Collected, not-yet-delivered packets in collection order.
    pub buffer: VecDeque<BufferedPacket>,
    /// Cumulative bits delivered to satellites (non-decreasing).
    pub delivered_bits_total: f64,
}

impl Uav {
    pub fn new(pos: Position3D, cfg: &ScenarioConfig) -> Self {
        Self {
            pos,
            battery: cfg.uav_batt_cap,
            harvest_board: cfg.uav_harvest_cap,
            wet_active: false,
            active: true,
            buffer: VecDeque::new(),
            delivered_bits_total: 0.0,
        }
    }

    /// Sum of buffered packet ages at the end of slot `t`.
    pub fn aoi(&self, t: u64) -> f64 {
        self.buffer.iter().map(|b| b.packet.age(t)).sum()
    }

    /// Total buffered bits.
    pub fn buffered_bits(&self) -> f64 {
        self.buffer.iter().map(|b| b.packet.bits_remaining).sum()
    }

    /// Bits eligible for the uplink in slot `t` (collected strictly before).
    pub fn eligible_bits(&self, t: u64) -> f64 {
        self.buffer
            .iter()
            .filter(|b| b.collect_slot < t)
            .map(|b| b.packet.bits_remaining)
            .sum()
    }

    /// Take over packets fully received from terminals in slot `t`. Each
    /// enters the buffer at full size again (the space hop retransmits the
    /// whole packet) with its original generation slot, so its age keeps
    /// counting.
    pub fn collect(&mut self, packets: Vec<Packet>, t: u64, cfg: &ScenarioConfig) {
        for mut p in packets {
            p.bits_remaining = cfg.packet_bits();
            self.buffer.push_back(BufferedPacket { packet: p, collect_slot: t });
        }
    }
}

// ---------------------------------------------------------------------------
// Propulsion
// ---------------------------------------------------------------------------

/// Rotary-wing propulsion power at horizontal speed `v` (m/s):
/// blade-profile, induced, and parasite terms.
pub fn propulsion_power(v: f64, p: &Propulsion) -> Result<f64> {
    if v < 0.0 {
        return Err(Error::Geometry(format!("negative speed {v}")));
    }
    let profile = p.blade_profile_w * (1.0 + 3.0 * v * v / (p.tip_speed_ms * p.tip_speed_ms));
    let v0_sq = p.induced_hover_ms * p.induced_hover_ms;
    let inner = (1.0 + v.powi(4) / (4.0 * v0_sq * v0_sq)).sqrt() - v * v / (2.0 * v0_sq);
    let induced = p.induced_w * inner.sqrt();
    let parasite = p.parasite_coeff * v.powi(3);
    Ok(profile + induced + parasite)
}

/// Hover power — the activity threshold of the standby rule.
pub fn hover_power(p: &Propulsion) -> f64 {
    propulsion_power(0.0, p).expect("0 is a valid speed")
}

/// Flight-battery draw of one slot: per-served-terminal receive power, the
/// propulsion power at the commanded speed, and the WET radiation when
/// active.
pub fn uav_slot_energy(
    n_scheduled: usize,
    speed: f64,
    wet: bool,
    cfg: &ScenarioConfig,
) -> Result<f64> {
    let p = n_scheduled as f64 * cfg.uav_wdc_power
        + propulsion_power(speed, &cfg.propulsion)?
        + if wet { cfg.uav_wet_power } else { 0.0 };
    Ok(p * cfg.slot_seconds)
}

/// Apply one slot's consumption to the flight battery (floored at zero).
pub fn drain_battery(uav: &mut Uav, energy: f64) {
    uav.battery = (uav.battery - energy).max(0.0);
}

/// Solar energy collected by the harvest board in one slot: uniform in
/// [0, frac·cap].
pub fn solar_harvest(rng: &mut impl Rng, cfg: &ScenarioConfig) -> f64 {
    rng.gen::<f64>() * cfg.solar_frac_cap * cfg.uav_harvest_cap
}

// ---------------------------------------------------------------------------
// A2S transmit
// ---------------------------------------------------------------------------

/// Result of one UAV's space-uplink step.
#[derive(Debug, Clone)]
pub struct A2sOutcome {
    /// Bits actually delivered (≤ capacity, ≤ eligible buffer).
    pub delivered_bits: f64,
    /// Link capacity over the transmit window, bits.
    pub capacity_bits: f64,
    /// Achieved rate Y·W·ρ·log2(1+γ), bits/s — thresholded for outage.
    pub rate: f64,
    /// Energy drawn for the uplink, J.
    pub energy: f64,
    /// Actual transmit duration, s.
    pub tau_hat: f64,
    /// Packets fully delivered this slot.
    pub retired: Vec<Packet>,
}

/// One space-uplink step for a UAV scheduled on a single satellite with SINR
/// `gamma`, transmit power `p_m`, bandwidth fraction `rho_k`, and this slot's
/// solar intake `harvest`.
///
/// The transmit window is cut short when the harvest board (plus intake)
/// cannot sustain the radiated power for the whole slot; with the
/// energy-consistent denominator (default) the drawn energy never exceeds
/// board + intake. The printed-form switch divides by the per-subchannel
/// power alone instead, and the board update clamps at zero to absorb the
/// overdraw that form allows. An empty eligible buffer transmits nothing and
/// spends nothing.
pub fn a2s_transmit(
    uav: &mut Uav,
    gamma: f64,
    p_m: f64,
    rho_k: f64,
    harvest: f64,
    t: u64,
    cfg: &ScenarioConfig,
) -> Result<A2sOutcome> {
    if !(p_m > 0.0 && p_m <= cfg.uav_tx_power_max) {
        return Err(Error::Constraint {
            slot: t,
            detail: format!("A2S power {p_m} outside (0, {}]", cfg.uav_tx_power_max),
        });
    }
    if !(0.0..=1.0).contains(&rho_k) {
        return Err(Error::Constraint {
            slot: t,
            detail: format!("bandwidth fraction {rho_k} outside [0, 1]"),
        });
    }
    let y = cfg.a2s_subchannels as f64;
    let radiated = rho_k * y * p_m;
    let eligible = uav.eligible_bits(t);
    let tau_hat = if eligible == 0.0 || radiated == 0.0 {
        0.0
    } else {
        let denom = if cfg.tau_hat_printed_form { p_m } else { radiated };
        ((uav.harvest_board + harvest) / denom).min(cfg.slot_seconds)
    };
    let rate = y * cfg.a2s_subchannel_hz * rho_k * (1.0 + gamma).log2();
    let capacity = rate * tau_hat;
    let delivered = capacity.min(eligible);
    let energy = radiated * tau_hat;
    uav.harvest_board =
        (uav.harvest_board + harvest - energy).min(cfg.uav_harvest_cap).max(0.0);

    // Retire eligible packets oldest-in-buffer first; partial progress stays
    // on the first unfinished packet.
    let mut budget = delivered;
    let mut retired = Vec::new();
    let mut idx = 0;
    while budget > 0.0 && idx < uav.buffer.len() {
        if uav.buffer[idx].collect_slot >= t {
            idx += 1;
            continue;
        }
        let bits = uav.buffer[idx].packet.bits_remaining;
        if budget >= bits {
            budget -= bits;
            let mut b = uav.buffer.remove(idx).expect("index in range");
            b.packet.bits_remaining = 0.0;
            retired.push(b.packet);
        } else {
            uav.buffer[idx].packet.bits_remaining -= budget;
            budget = 0.0;
        }
    }
    uav.delivered_bits_total += delivered;
    Ok(A2sOutcome {
        delivered_bits: delivered,
        capacity_bits: capacity,
        rate,
        energy,
        tau_hat,
        retired,
    })
}
