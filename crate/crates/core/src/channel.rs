//! Channel models and rate bookkeeping for both hops.
//!
//! Ground-to-air: probabilistic line-of-sight with elevation-dependent
//! sigmoid probability and distinct path-loss exponents, unit reference gain
//! at 1 m. Air-to-space: free-space path loss at the slant range plus fixed
//! link-budget terms (receiver figure of merit, rain/shadow margin) and a
//! log-normal shadowing draw, composed in dB as
//! `gain = −FSPL + figure − margin + shadow`.
//!
//! Uplink multiple access on the space hop is NOMA: UAVs sharing a satellite
//! are decoded in descending channel-gain order; weaker signals always
//! interfere, stronger (already-decoded) signals re-enter the denominator
//! only when the decoding link itself carried an outage flag (failed
//! cancellation).

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geometry::{elevation_deg, Position3D};
use crate::scenario::{LosParams, ScenarioConfig};

/// Speed of light, m/s.
const C0: f64 = 299_792_458.0;

// ---------------------------------------------------------------------------
// Ground-to-air
// ---------------------------------------------------------------------------

/// Sigmoid line-of-sight probability at elevation `theta_deg` (degrees).
pub fn los_probability(theta_deg: f64, p: &LosParams) -> f64 {
    1.0 / (1.0 + p.a * (-p.b * (theta_deg - p.a)).exp())
}

/// Deterministic part of the G2A gain given the LoS outcome: d^(−α) with the
/// exponent picked by the draw.
pub fn g2a_gain_with_los(distance: f64, los: bool, p: &LosParams) -> f64 {
    let alpha = if los { p.alpha_los } else { p.alpha_nlos };
    distance.powf(-alpha)
}

/// Expectation of the G2A gain over the LoS draw:
/// P_LoS·d^(−α_L) + (1−P_LoS)·d^(−α_N). Used by policies projecting link
/// quality and by deterministic test fixtures.
pub fn expected_g2a_gain(
    gt_pos: &Position3D,
    uav_pos: &Position3D,
    p: &LosParams,
) -> Result<f64> {
    let d = gt_pos.distance(uav_pos);
    if d == 0.0 {
        return Err(Error::Geometry("zero-distance G2A link".into()));
    }
    let theta = elevation_deg(gt_pos, uav_pos)?;
    let p_los = los_probability(theta, p);
    Ok(p_los * g2a_gain_with_los(d, true, p) + (1.0 - p_los) * g2a_gain_with_los(d, false, p))
}

/// Draw the (gain, LoS flag) of one GT→UAV link.
pub fn g2a_gain(
    gt_pos: &Position3D,
    uav_pos: &Position3D,
    rng: &mut impl Rng,
    cfg: &ScenarioConfig,
) -> Result<(f64, bool)> {
    let d = gt_pos.distance(uav_pos);
    if d == 0.0 {
        return Err(Error::Geometry("zero-distance G2A link".into()));
    }
    let theta = elevation_deg(gt_pos, uav_pos)?;
    let p_los = los_probability(theta, &cfg.los_params);
    let los = rng.gen::<f64>() < p_los;
    Ok((g2a_gain_with_los(d, los, &cfg.los_params), los))
}

/// Gains and flags drawn for one slot.
#[derive(Debug, Clone)]
pub struct ChannelDraw {
    /// GT→UAV gains, N×M.
    pub g2a: Vec<Vec<f64>>,
    /// LoS outcome per G2A link, N×M.
    pub g2a_los: Vec<Vec<bool>>,
    /// UAV→nearest-sat gain per orbit, M×K (`None` when the orbit has no
    /// serving satellite).
    pub a2s: Vec<Vec<Option<f64>>>,
}

/// Uplink SINR of GT n at UAV m (zero when the pair is not scheduled).
/// Interference comes from every other GT that is scheduled anywhere and lies
/// inside m's coverage.
pub fn g2a_sinr(
    n: usize,
    m: usize,
    s: &[Vec<bool>],
    c: &[Vec<bool>],
    gains: &[Vec<f64>],
    cfg: &ScenarioConfig,
) -> Result<f64> {
    if s[n][m] && !c[n][m] {
        return Err(Error::Constraint {
            slot: 0,
            detail: format!("GT {n} scheduled at UAV {m} outside coverage"),
        });
    }
    if !s[n][m] {
        return Ok(0.0);
    }
    let p = cfg.gt_tx_power;
    let mut interference = 0.0;
    for i in 0..s.len() {
        if i == n {
            continue;
        }
        let scheduled_somewhere = s[i].iter().any(|&b| b);
        if scheduled_somewhere && c[i][m] {
            interference += gains[i][m] * p;
        }
    }
    let noise = cfg.noise_psd * cfg.g2a_subchannel_hz;
    Ok(gains[n][m] * p / (interference + noise))
}

/// Per-GT and per-UAV data volumes of one slot, bits:
/// D_n = Σ_m W·log2(1+γ_{n,m})·τ and D_m = Σ_{n scheduled at m} of the same
/// terms (a partition of the per-GT sums).
pub fn g2a_volumes(
    s: &[Vec<bool>],
    sinr: &[Vec<f64>],
    cfg: &ScenarioConfig,
) -> (Vec<f64>, Vec<f64>) {
    let n_gts = s.len();
    let n_uavs = if n_gts == 0 { 0 } else { s[0].len() };
    let mut per_gt = vec![0.0; n_gts];
    let mut per_uav = vec![0.0; n_uavs];
    for n in 0..n_gts {
        for m in 0..n_uavs {
            let bits =
                cfg.g2a_subchannel_hz * (1.0 + sinr[n][m]).log2() * cfg.slot_seconds;
            per_gt[n] += bits;
            if s[n][m] {
                per_uav[m] += bits;
            }
        }
    }
    (per_gt, per_uav)
}

// ---------------------------------------------------------------------------
// Air-to-space
// ---------------------------------------------------------------------------

/// Draw one shadowing term in dB from the configured log-normal model.
pub fn draw_shadowing_db(rng: &mut impl Rng, cfg: &ScenarioConfig) -> f64 {
    let sigma = cfg.shadowing.sigma_sq_db.sqrt();
    Normal::new(cfg.shadowing.mu_db, sigma)
        .expect("validated variance")
        .sample(rng)
}

/// A2S gain with an externally supplied shadowing term (pass 0.0 to disable
/// shadowing). Errors when the satellite sits below the minimum elevation.
pub fn a2s_gain_with_shadow(
    uav_pos: &Position3D,
    sat_pos: &Position3D,
    shadow_db: f64,
    cfg: &ScenarioConfig,
) -> Result<f64> {
    let elev = elevation_deg(uav_pos, sat_pos)?.to_radians();
    if elev < cfg.min_elevation {
        return Err(Error::Geometry(format!(
            "satellite below minimum elevation ({:.4} < {:.4} rad)",
            elev, cfg.min_elevation
        )));
    }
    let d = uav_pos.distance(sat_pos);
    let fspl_db = 20.0 * (4.0 * std::f64::consts::PI * d * cfg.carrier_hz / C0).log10();
    let gain_db = -fspl_db + cfg.gt_figure_db - cfg.link_margin_db + shadow_db;
    Ok(10f64.powf(gain_db / 10.0))
}

/// Draw the gain of one UAV→satellite link.
pub fn a2s_gain(
    uav_pos: &Position3D,
    sat_pos: &Position3D,
    rng: &mut impl Rng,
    cfg: &ScenarioConfig,
) -> Result<f64> {
    let shadow = draw_shadowing_db(rng, cfg);
    a2s_gain_with_shadow(uav_pos, sat_pos, shadow, cfg)
}

// ---------------------------------------------------------------------------
// NOMA / SIC
// ---------------------------------------------------------------------------

/// UAVs multiplexed on one satellite, in SIC decode order.
#[derive(Debug, Clone)]
pub struct SatLinkGroup {
    /// Orbit index k.
    pub orbit: usize,
    /// Satellite index within the orbit.
    pub sat: usize,
    /// (UAV index, link gain), sorted by descending gain; ties broken by UAV
    /// index ascending.
    pub members: Vec<(usize, f64)>,
}

/// Sort (UAV, gain) pairs into SIC decode order.
pub fn sic_order(mut members: Vec<(usize, f64)>) -> Vec<(usize, f64)> {
    members.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    members
}

/// SINR of the member at `pos` in the group's decode order. `powers` is
/// indexed by UAV id; `outage_flag` is the decoding link's own flag from the
/// previous transmission (failed cancellation leaves the already-decoded,
/// stronger signals in the denominator).
pub fn noma_sinr(
    group: &SatLinkGroup,
    pos: usize,
    powers: &[f64],
    outage_flag: bool,
    cfg: &ScenarioConfig,
) -> Result<f64> {
    for w in group.members.windows(2) {
        let sorted = w[0].1 > w[1].1 || (w[0].1 == w[1].1 && w[0].0 < w[1].0);
        if !sorted {
            return Err(Error::Nn(format!(
                "SIC group for orbit {} sat {} is not in decode order",
                group.orbit, group.sat
            )));
        }
    }
    for &(uav, _) in &group.members {
        let p = powers[uav];
        if !(p > 0.0 && p <= cfg.uav_tx_power_max) {
            return Err(Error::Constraint {
                slot: 0,
                detail: format!("UAV {uav} power {p} outside (0, {}]", cfg.uav_tx_power_max),
            });
        }
    }
    let (uav, gain) = group.members[pos];
    let noise = cfg.noise_psd * cfg.a2s_subchannel_hz;
    let mut weaker = 0.0;
    for &(u, h) in &group.members[pos + 1..] {
        weaker += h * powers[u];
    }
    let mut stronger = 0.0;
    if outage_flag {
        for &(u, h) in &group.members[..pos] {
            stronger += h * powers[u];
        }
    }
    Ok(gain * powers[uav] / (weaker + stronger + noise))
}

// ---------------------------------------------------------------------------
// Outage
// ---------------------------------------------------------------------------

/// Per-(UAV, orbit, satellite) outage flags plus the running empirical
/// frequency. A flag persists until the link transmits again.
#[derive(Debug, Clone)]
pub struct OutageMatrix {
    flags: Vec<Vec<Vec<bool>>>,
    outages: u64,
    observed: u64,
}

impl OutageMatrix {
    pub fn new(n_uavs: usize, n_orbits: usize, sats_per_orbit: usize) -> Self {
        Self {
            flags: vec![vec![vec![false; sats_per_orbit]; n_orbits]; n_uavs],
            outages: 0,
            observed: 0,
        }
    }

    pub fn flag(&self, uav: usize, orbit: usize, sat: usize) -> bool {
        self.flags[uav][orbit][sat]
    }

    /// Threshold the achieved rates of this slot: o = 0 exactly when
    /// rate ≥ min_sat_rate (the boundary counts as success).
    pub fn update(&mut self, rates: &[(usize, usize, usize, f64)], cfg: &ScenarioConfig) {
        for &(uav, orbit, sat, rate) in rates {
            // Negated on purpose: a NaN rate must count as an outage.
            #[allow(clippy::neg_cmp_op_on_partial_ord)]
            let outage = !(rate >= cfg.min_sat_rate);
            self.flags[uav][orbit][sat] = outage;
            self.observed += 1;
            if outage {
                self.outages += 1;
            }
        }
    }

    /// Ratio of outage signals to total transmitted signals so far.
    pub fn frequency(&self) -> f64 {
        if self.observed == 0 {
            0.0
        } else {
            self.outages as f64 / self.observed as f64
        }
    }

    pub fn observed(&self) -> u64 {
        self.observed
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Purpose, RngStream};

    fn cfg() -> ScenarioConfig {
        ScenarioConfig::default()
    }

    #[test]
    fn los_probability_frozen_values() {
        let p = cfg().los_params;
        // Hand-computed from the sigmoid with a=12.08, b=0.11.
        assert!((los_probability(90.0, &p) - 0.997716247081094).abs() < 1e-12);
        assert!((los_probability(0.0, &p) - 0.02144991701177552).abs() < 1e-12);
        assert!((los_probability(45.0, &p) - 0.7557740819386458).abs() < 1e-12);
    }

    #[test]
    fn los_gain_follows_cubic_law() {
        let p = cfg().los_params;
        let g1 = g2a_gain_with_los(100.0, true, &p);
        let g2 = g2a_gain_with_los(200.0, true, &p);
        assert!((g1 / g2 - 8.0).abs() < 1e-9, "doubling range divides LoS gain by 8");
        let n1 = g2a_gain_with_los(100.0, false, &p);
        let n2 = g2a_gain_with_los(200.0, false, &p);
        assert!((n1 / n2 - 32.0).abs() < 1e-9, "NLoS exponent is 5");
    }

    #[test]
    fn overhead_link_is_almost_always_los() {
        let cfg = cfg();
        let stream = RngStream::new(7);
        let gt = Position3D::new(0.0, 0.0, 0.0);
        let uav = Position3D::new(0.0, 0.0, 100.0);
        let mut los_count = 0;
        for i in 0..10_000u64 {
            let mut rng = stream.rng(Purpose::G2aChannel, i, 0);
            let (_, los) = g2a_gain(&gt, &uav, &mut rng, &cfg).unwrap();
            los_count += los as u32;
        }
        let frac = f64::from(los_count) / 10_000.0;
        assert!((frac - 0.9977).abs() < 0.01, "observed {frac}");
    }

    #[test]
    fn zero_distance_link_is_an_error() {
        let cfg = cfg();
        let p = Position3D::new(1.0, 2.0, 0.0);
        let mut rng = RngStream::new(0).rng(Purpose::G2aChannel, 0, 0);
        assert!(g2a_gain(&p, &p, &mut rng, &cfg).is_err());
    }

    #[test]
    fn lone_scheduled_gt_sinr_matches_hand_value() {
        let cfg = cfg();
        // One GT, one UAV, gain 1e-9 at 10 mW over noise 3.981e-15 W.
        let s = vec![vec![true]];
        let c = vec![vec![true]];
        let gains = vec![vec![1e-9]];
        let sinr = g2a_sinr(0, 0, &s, &c, &gains, &cfg).unwrap();
        assert!((sinr - 2511.8864315095725).abs() / 2511.8864315095725 < 1e-12);
    }

    #[test]
    fn unscheduled_pair_has_zero_sinr() {
        let cfg = cfg();
        let s = vec![vec![false]];
        let c = vec![vec![true]];
        let gains = vec![vec![1e-9]];
        assert_eq!(g2a_sinr(0, 0, &s, &c, &gains, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn scheduling_outside_coverage_is_rejected() {
        let cfg = cfg();
        let s = vec![vec![true]];
        let c = vec![vec![false]];
        let gains = vec![vec![1e-9]];
        assert!(g2a_sinr(0, 0, &s, &c, &gains, &cfg).is_err());
    }

    #[test]
    fn symmetric_co_scheduled_gts_interfere_equally() {
        let cfg = cfg();
        // Two identical GTs scheduled on the same UAV.
        let s = vec![vec![true], vec![true]];
        let c = vec![vec![true], vec![true]];
        let h = 1e-9;
        let gains = vec![vec![h], vec![h]];
        let both = g2a_sinr(0, 0, &s, &c, &gains, &cfg).unwrap();
        let lone_s = vec![vec![true], vec![false]];
        let lone = g2a_sinr(0, 0, &lone_s, &c, &gains, &cfg).unwrap();
        // Interference term equals the signal term, so the SINR drops just
        // below 1 while the lone link is interference-free.
        assert!(both < 1.0);
        assert!(both < lone);
        let signal = h * cfg.gt_tx_power;
        let noise = cfg.noise_psd * cfg.g2a_subchannel_hz;
        assert!((both - signal / (signal + noise)).abs() < 1e-15);
    }

    #[test]
    fn interference_only_from_covered_uplinks() {
        let cfg = cfg();
        // GT 1 is scheduled at UAV 1 but outside UAV 0's coverage: it must
        // not interfere at UAV 0.
        let s = vec![vec![true, false], vec![false, true]];
        let c = vec![vec![true, false], vec![false, true]];
        let gains = vec![vec![1e-9, 1e-10], vec![1e-10, 1e-9]];
        let sinr = g2a_sinr(0, 0, &s, &c, &gains, &cfg).unwrap();
        let lone = gains[0][0] * cfg.gt_tx_power / (cfg.noise_psd * cfg.g2a_subchannel_hz);
        assert!((sinr - lone).abs() / lone < 1e-12);
    }

    #[test]
    fn volume_of_sinr_three_is_two_megabits() {
        let cfg = cfg();
        let s = vec![vec![true]];
        let sinr = vec![vec![3.0]];
        let (per_gt, per_uav) = g2a_volumes(&s, &sinr, &cfg);
        assert!((per_gt[0] - 2e6).abs() < 1e-6);
        assert!((per_uav[0] - 2e6).abs() < 1e-6);
    }

    #[test]
    fn uav_volumes_partition_gt_volumes() {
        let cfg = cfg();
        let s = vec![
            vec![true, false],
            vec![false, true],
            vec![false, false],
        ];
        let sinr = vec![
            vec![3.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, 0.0],
        ];
        let (per_gt, per_uav) = g2a_volumes(&s, &sinr, &cfg);
        let scheduled_total: f64 = per_gt[0] + per_gt[1];
        assert!((per_uav.iter().sum::<f64>() - scheduled_total).abs() < 1e-9);
    }

    #[test]
    fn a2s_free_space_square_law() {
        let cfg = cfg();
        let uav = Position3D::new(0.0, 0.0, 100.0);
        let near = Position3D::new(0.0, 0.0, 100.0 + 550e3);
        let far = Position3D::new(0.0, 0.0, 100.0 + 1100e3);
        let g_near = a2s_gain_with_shadow(&uav, &near, 0.0, &cfg).unwrap();
        let g_far = a2s_gain_with_shadow(&uav, &far, 0.0, &cfg).unwrap();
        assert!((g_near / g_far - 4.0).abs() < 1e-9);
    }

    #[test]
    fn a2s_below_min_elevation_rejected() {
        let cfg = cfg(); // 10° floor
        let uav = Position3D::new(0.0, 0.0, 100.0);
        let low = Position3D::new(550e3, 0.0, 100.0 + 40e3); // ~4° elevation
        assert!(a2s_gain_with_shadow(&uav, &low, 0.0, &cfg).is_err());
    }

    #[test]
    fn shadowing_sample_mean_matches_configuration() {
        let cfg = cfg();
        let stream = RngStream::new(3);
        let n = 100_000u64;
        let mut sum = 0.0;
        for i in 0..n {
            let mut rng = stream.rng(Purpose::A2sChannel, i, 0);
            sum += draw_shadowing_db(&mut rng, &cfg);
        }
        let mean = sum / n as f64;
        let sigma = cfg.shadowing.sigma_sq_db.sqrt();
        let bound = 3.0 * sigma / (n as f64).sqrt();
        assert!(
            (mean - cfg.shadowing.mu_db).abs() < bound,
            "mean {mean} outside ±{bound} of {}",
            cfg.shadowing.mu_db
        );
    }

    #[test]
    fn two_uav_noma_structure() {
        let cfg = cfg();
        let h1 = 2e-15;
        let h2 = 1e-15;
        let p = 0.5;
        let group = SatLinkGroup {
            orbit: 0,
            sat: 0,
            members: sic_order(vec![(0, h1), (1, h2)]),
        };
        let powers = vec![p, p];
        let noise = cfg.noise_psd * cfg.a2s_subchannel_hz;
        let g1 = noma_sinr(&group, 0, &powers, false, &cfg).unwrap();
        let g2 = noma_sinr(&group, 1, &powers, false, &cfg).unwrap();
        assert!((g1 - h1 * p / (h2 * p + noise)).abs() / g1 < 1e-12);
        assert!((g2 - h2 * p / noise).abs() / g2 < 1e-12);
        // Failed cancellation at the weaker decoder re-adds the stronger term.
        let g2o = noma_sinr(&group, 1, &powers, true, &cfg).unwrap();
        assert!((g2o - h2 * p / (h1 * p + noise)).abs() / g2o < 1e-12);
    }

    #[test]
    fn single_uav_noma_is_interference_free() {
        let cfg = cfg();
        let group = SatLinkGroup { orbit: 0, sat: 0, members: vec![(3, 1e-15)] };
        let mut powers = vec![0.0; 4];
        powers[3] = 1.0;
        let g = noma_sinr(&group, 0, &powers, false, &cfg).unwrap();
        let noise = cfg.noise_psd * cfg.a2s_subchannel_hz;
        assert!((g - 1e-15 / noise).abs() / g < 1e-12);
    }

    #[test]
    fn unsorted_group_and_bad_power_rejected() {
        let cfg = cfg();
        let unsorted = SatLinkGroup { orbit: 0, sat: 0, members: vec![(0, 1e-16), (1, 2e-16)] };
        assert!(noma_sinr(&unsorted, 0, &[0.5, 0.5], false, &cfg).is_err());
        let group = SatLinkGroup { orbit: 0, sat: 0, members: vec![(0, 2e-16), (1, 1e-16)] };
        assert!(noma_sinr(&group, 0, &[0.5, 2.0], false, &cfg).is_err(), "2 W over the cap");
        assert!(noma_sinr(&group, 0, &[0.0, 0.5], false, &cfg).is_err(), "zero power");
    }

    #[test]
    fn sic_order_ties_break_by_index() {
        let m = sic_order(vec![(2, 1e-15), (0, 1e-15), (1, 3e-15)]);
        assert_eq!(m.iter().map(|x| x.0).collect::<Vec<_>>(), vec![1, 0, 2]);
    }

    #[test]
    fn outage_boundary_counts_as_success() {
        let cfg = cfg();
        let mut o = OutageMatrix::new(2, 1, 4);
        o.update(&[(0, 0, 0, cfg.min_sat_rate), (1, 0, 0, 0.0)], &cfg);
        assert!(!o.flag(0, 0, 0), "rate exactly at the threshold is not an outage");
        assert!(o.flag(1, 0, 0));
        assert_eq!(o.frequency(), 0.5);
    }
}
