//! Scenario configuration: every tunable constant of the model, unit
//! conversion, validation, and (de)serialization.
//!
//! Scenario files are JSON with snake_case keys. Power-valued fields are
//! written in dBm (noise density in dBm/Hz) and converted to watts on load;
//! everything else is SI. Any field may be omitted and takes the documented
//! default, so `{}` and `{"n_gts": 9, "n_uavs": 4}` are both valid files.
//!
//! The loaded [`ScenarioConfig`] keeps the original dBm values alongside the
//! derived watt values so that saving a config and re-loading it round-trips
//! bit-exactly (log10/pow10 are not mutually inverse in f64).

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

use crate::error::{Error, Result};

/// Convert a dBm power to watts: 10^(p/10) mW.
pub fn dbm_to_watt(p_dbm: f64) -> f64 {
    10f64.powf(p_dbm / 10.0) * 1e-3
}

/// Convert watts to dBm (for report output; never used on the load path).
pub fn watt_to_dbm(p_w: f64) -> f64 {
    10.0 * (p_w * 1e3).log10()
}

// ---------------------------------------------------------------------------
// Nested parameter groups
// ---------------------------------------------------------------------------

/// Probabilistic line-of-sight model for the ground-to-air channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LosParams {
    /// Path-loss exponent under line of sight.
    pub alpha_los: f64,
    /// Path-loss exponent without line of sight.
    pub alpha_nlos: f64,
    /// Environment constant `a` of the sigmoid LoS probability.
    pub a: f64,
    /// Environment constant `b` of the sigmoid LoS probability.
    pub b: f64,
}

impl Default for LosParams {
    fn default() -> Self {
        Self { alpha_los: 3.0, alpha_nlos: 5.0, a: 12.08, b: 0.11 }
    }
}

/// Nonlinear energy-harvesting curve for GTs, in file units (dBm).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EhParamsFile {
    /// RF input below this is unusable (dead zone), dBm.
    pub sensitivity: f64,
    /// RF input above this no longer increases DC output, dBm.
    pub saturation: f64,
    /// Peak conversion efficiency: max DC output = efficiency · saturation.
    pub efficiency: f64,
}

impl Default for EhParamsFile {
    fn default() -> Self {
        Self { sensitivity: -10.0, saturation: 7.0, efficiency: 0.5 }
    }
}

/// Energy-harvesting curve in SI units (watts), derived at load.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EhParams {
    pub sensitivity_w: f64,
    pub saturation_w: f64,
    pub efficiency: f64,
}

/// Log-normal shadowing of the air-to-space link, in dB.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Shadowing {
    pub mu_db: f64,
    pub sigma_sq_db: f64,
}

impl Default for Shadowing {
    fn default() -> Self {
        Self { mu_db: -2.6, sigma_sq_db: 1.63 }
    }
}

/// Rotary-wing propulsion constants. Power at speed V is
/// `blade_profile·(1 + 3V²/tip²) + induced·sqrt(sqrt(1 + V⁴/(4v₀⁴)) − V²/(2v₀²))
///  + parasite_coeff·V³`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Propulsion {
    /// Blade-profile power in hover, W.
    pub blade_profile_w: f64,
    /// Induced power in hover, W.
    pub induced_w: f64,
    /// Rotor tip speed, m/s.
    pub tip_speed_ms: f64,
    /// Mean rotor induced velocity in hover, m/s.
    pub induced_hover_ms: f64,
    /// ½·d₀·ρ·s·A aggregate for the parasite term, W/(m/s)³.
    pub parasite_coeff: f64,
}

impl Default for Propulsion {
    fn default() -> Self {
        Self {
            blade_profile_w: 79.86,
            induced_w: 88.63,
            tip_speed_ms: 120.0,
            induced_hover_ms: 4.03,
            parasite_coeff: 0.009242625,
        }
    }
}

/// Sizes and schedules of the neural stack.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NnParams {
    /// Hidden feature width of every layer.
    pub hidden_width: usize,
    /// Discrete message alphabet size of the exchange layer.
    pub msg_alphabet: usize,
    /// Attention head count of the sensing layer.
    pub attention_heads: usize,
    /// Gumbel temperature at the start of training.
    pub tau_start: f64,
    /// Gumbel temperature at the end of the anneal.
    pub tau_end: f64,
    /// Soft target-network blend factor (θ̂ ← blend·θ + (1−blend)·θ̂).
    pub target_blend: f64,
    /// Share the destination transform across the per-type attention blocks.
    pub share_agent_transform: bool,
}

impl Default for NnParams {
    fn default() -> Self {
        Self {
            hidden_width: 32,
            msg_alphabet: 16,
            attention_heads: 4,
            tau_start: 1.0,
            tau_end: 0.1,
            target_blend: 0.01,
            share_agent_transform: true,
        }
    }
}

// ---------------------------------------------------------------------------
// File form
// ---------------------------------------------------------------------------

/// The on-disk schema: every key optional, powers in dBm. See
/// `docs/scenario-schema.md` for the field-by-field description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct FileScenario {
    pub n_gts: Option<usize>,
    pub n_uavs: Option<usize>,
    pub n_leos: Option<usize>,
    pub sats_per_leo: Option<usize>,
    pub area_side: Option<f64>,
    pub slot_seconds: Option<f64>,
    pub episode_slots: Option<u64>,
    pub g2a_subchannels: Option<usize>,
    pub a2s_subchannels: Option<usize>,
    pub g2a_subchannel_hz: Option<f64>,
    pub a2s_subchannel_hz: Option<f64>,
    /// dBm/Hz.
    pub noise_psd: Option<f64>,
    /// dBm.
    pub gt_tx_power: Option<f64>,
    /// dBm.
    pub uav_wet_power: Option<f64>,
    /// dBm.
    pub uav_wdc_power: Option<f64>,
    /// dBm.
    pub uav_tx_power_max: Option<f64>,
    pub batt_thresh_e: Option<f64>,
    pub batt_thresh_t: Option<f64>,
    pub gt_batt_cap: Option<f64>,
    pub gt_batt_init: Option<f64>,
    pub uav_batt_cap: Option<f64>,
    pub uav_harvest_cap: Option<f64>,
    pub uav_batt_min: Option<f64>,
    pub aftu_weight: Option<f64>,
    pub aoi_fairness_kappa: Option<f64>,
    pub reward_zeta1: Option<f64>,
    pub reward_zeta2: Option<f64>,
    pub scale_beta: Option<f64>,
    pub sense_range_gt: Option<f64>,
    pub sense_range_uav: Option<f64>,
    pub cover_range: Option<f64>,
    pub v_max: Option<f64>,
    pub alt_min: Option<f64>,
    pub alt_max: Option<f64>,
    pub d_min: Option<f64>,
    pub earth_radius: Option<f64>,
    pub leo_altitude: Option<f64>,
    pub sat_speed: Option<f64>,
    /// Radians.
    pub min_elevation: Option<f64>,
    pub packet_rate: Option<f64>,
    pub packet_bytes: Option<f64>,
    pub min_sat_rate: Option<f64>,
    pub solar_frac_cap: Option<f64>,
    pub carrier_hz: Option<f64>,
    pub gt_figure_db: Option<f64>,
    pub link_margin_db: Option<f64>,
    pub los_params: Option<LosParams>,
    pub eh_params: Option<EhParamsFile>,
    pub shadowing: Option<Shadowing>,
    pub saoi_target_range: Option<[f64; 2]>,
    pub propulsion: Option<Propulsion>,
    pub gsl_layers: Option<usize>,
    pub gel_layers: Option<usize>,
    pub nn: Option<NnParams>,
    pub tau_hat_printed_form: Option<bool>,
    pub gml_conventional_reparam: Option<bool>,
    pub qc_condition_on_mode: Option<bool>,
    pub pilot_slots: Option<u64>,
}

// ---------------------------------------------------------------------------
// Resolved config
// ---------------------------------------------------------------------------

/// Fully resolved, validated scenario. Fields are SI (watts, joules, meters,
/// seconds, radians); the dBm originals are retained for exact
/// re-serialization.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(into = "FileScenario")]
pub struct ScenarioConfig {
    pub n_gts: usize,
    pub n_uavs: usize,
    pub n_leos: usize,
    pub sats_per_leo: usize,
    pub area_side: f64,
    pub slot_seconds: f64,
    pub episode_slots: u64,
    pub g2a_subchannels: usize,
    pub a2s_subchannels: usize,
    pub g2a_subchannel_hz: f64,
    pub a2s_subchannel_hz: f64,
    /// W/Hz.
    pub noise_psd: f64,
    /// W.
    pub gt_tx_power: f64,
    /// W.
    pub uav_wet_power: f64,
    /// W.
    pub uav_wdc_power: f64,
    /// W.
    pub uav_tx_power_max: f64,
    pub batt_thresh_e: f64,
    pub batt_thresh_t: f64,
    pub gt_batt_cap: f64,
    pub gt_batt_init: f64,
    pub uav_batt_cap: f64,
    pub uav_harvest_cap: f64,
    pub uav_batt_min: f64,
    pub aftu_weight: f64,
    pub aoi_fairness_kappa: f64,
    pub reward_zeta1: f64,
    pub reward_zeta2: f64,
    pub scale_beta: f64,
    pub sense_range_gt: f64,
    pub sense_range_uav: f64,
    pub cover_range: f64,
    pub v_max: f64,
    pub alt_min: f64,
    pub alt_max: f64,
    pub d_min: f64,
    pub earth_radius: f64,
    pub leo_altitude: f64,
    pub sat_speed: f64,
    pub min_elevation: f64,
    pub packet_rate: f64,
    pub packet_bytes: f64,
    pub min_sat_rate: f64,
    pub solar_frac_cap: f64,
    pub carrier_hz: f64,
    pub gt_figure_db: f64,
    pub link_margin_db: f64,
    pub los_params: LosParams,
    pub eh_params: EhParams,
    pub shadowing: Shadowing,
    pub saoi_target_range: [f64; 2],
    pub propulsion: Propulsion,
    pub gsl_layers: usize,
    pub gel_layers: usize,
    pub nn: NnParams,
    pub tau_hat_printed_form: bool,
    pub gml_conventional_reparam: bool,
    pub qc_condition_on_mode: bool,
    pub pilot_slots: u64,
    /// Original dBm values, kept so save → load round-trips bit-exactly.
    file_powers: FilePowers,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
struct FilePowers {
    noise_psd_dbm: f64,
    gt_tx_dbm: f64,
    wet_dbm: f64,
    wdc_dbm: f64,
    tx_max_dbm: f64,
    eh: EhParamsFile,
}

impl ScenarioConfig {
    /// Mean packet size in bits (the file stores bytes).
    pub fn packet_bits(&self) -> f64 {
        self.packet_bytes * 8.0
    }

    /// SHA-256 of the canonical file form; identifies a config in manifests.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(&FileScenario::from(self.clone()))
            .expect("config serializes");
        let mut h = Sha256::new();
        h.update(json.as_bytes());
        format!("{:x}", h.finalize())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = FileScenario::from(self.clone());
        let json = serde_json::to_string_pretty(&file)?;
        std::fs::write(path, json)?;
        Ok(())
    }
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig::try_from(FileScenario::default())
            .expect("defaults validate")
    }
}

/// Load and validate a scenario file.
pub fn load_scenario(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path)?;
    let file: FileScenario =
        serde_json::from_str(&text).map_err(|e| Error::ConfigParse(e.to_string()))?;
    ScenarioConfig::try_from(file)
}

impl From<ScenarioConfig> for FileScenario {
    fn from(c: ScenarioConfig) -> Self {
        FileScenario {
            n_gts: Some(c.n_gts),
            n_uavs: Some(c.n_uavs),
            n_leos: Some(c.n_leos),
            sats_per_leo: Some(c.sats_per_leo),
            area_side: Some(c.area_side),
            slot_seconds: Some(c.slot_seconds),
            episode_slots: Some(c.episode_slots),
            g2a_subchannels: Some(c.g2a_subchannels),
            a2s_subchannels: Some(c.a2s_subchannels),
            g2a_subchannel_hz: Some(c.g2a_subchannel_hz),
            a2s_subchannel_hz: Some(c.a2s_subchannel_hz),
            noise_psd: Some(c.file_powers.noise_psd_dbm),
            gt_tx_power: Some(c.file_powers.gt_tx_dbm),
            uav_wet_power: Some(c.file_powers.wet_dbm),
            uav_wdc_power: Some(c.file_powers.wdc_dbm),
            uav_tx_power_max: Some(c.file_powers.tx_max_dbm),
            batt_thresh_e: Some(c.batt_thresh_e),
            batt_thresh_t: Some(c.batt_thresh_t),
            gt_batt_cap: Some(c.gt_batt_cap),
            gt_batt_init: Some(c.gt_batt_init),
            uav_batt_cap: Some(c.uav_batt_cap),
            uav_harvest_cap: Some(c.uav_harvest_cap),
            uav_batt_min: Some(c.uav_batt_min),
            aftu_weight: Some(c.aftu_weight),
            aoi_fairness_kappa: Some(c.aoi_fairness_kappa),
            reward_zeta1: Some(c.reward_zeta1),
            reward_zeta2: Some(c.reward_zeta2),
            scale_beta: Some(c.scale_beta),
            sense_range_gt: Some(c.sense_range_gt),
            sense_range_uav: Some(c.sense_range_uav),
            cover_range: Some(c.cover_range),
            v_max: Some(c.v_max),
            alt_min: Some(c.alt_min),
            alt_max: Some(c.alt_max),
            d_min: Some(c.d_min),
            earth_radius: Some(c.earth_radius),
            leo_altitude: Some(c.leo_altitude),
            sat_speed: Some(c.sat_speed),
            min_elevation: Some(c.min_elevation),
            packet_rate: Some(c.packet_rate),
            packet_bytes: Some(c.packet_bytes),
            min_sat_rate: Some(c.min_sat_rate),
            solar_frac_cap: Some(c.solar_frac_cap),
            carrier_hz: Some(c.carrier_hz),
            gt_figure_db: Some(c.gt_figure_db),
            link_margin_db: Some(c.link_margin_db),
            los_params: Some(c.los_params),
            eh_params: Some(c.file_powers.eh),
            shadowing: Some(c.shadowing),
            saoi_target_range: Some(c.saoi_target_range),
            propulsion: Some(c.propulsion),
            gsl_layers: Some(c.gsl_layers),
            gel_layers: Some(c.gel_layers),
            nn: Some(c.nn),
            tau_hat_printed_form: Some(c.tau_hat_printed_form),
            gml_conventional_reparam: Some(c.gml_conventional_reparam),
            qc_condition_on_mode: Some(c.qc_condition_on_mode),
            pilot_slots: Some(c.pilot_slots),
        }
    }
}

impl<'de> Deserialize<'de> for ScenarioConfig {
    fn deserialize<D>(deserializer: D) -> std::result::Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        let file = FileScenario::deserialize(deserializer)?;
        ScenarioConfig::try_from(file).map_err(serde::de::Error::custom)
    }
}

impl TryFrom<FileScenario> for ScenarioConfig {
    type Error = Error;

    fn try_from(f: FileScenario) -> Result<Self> {
        let eh_file = f.eh_params.unwrap_or_default();
        let file_powers = FilePowers {
            noise_psd_dbm: f.noise_psd.unwrap_or(-174.0),
            gt_tx_dbm: f.gt_tx_power.unwrap_or(10.0),
            wet_dbm: f.uav_wet_power.unwrap_or(30.0),
            wdc_dbm: f.uav_wdc_power.unwrap_or(10.0),
            tx_max_dbm: f.uav_tx_power_max.unwrap_or(30.0),
            eh: eh_file,
        };
        let cfg = ScenarioConfig {
            n_gts: f.n_gts.unwrap_or(9),
            n_uavs: f.n_uavs.unwrap_or(4),
            n_leos: f.n_leos.unwrap_or(4),
            sats_per_leo: f.sats_per_leo.unwrap_or(22),
            area_side: f.area_side.unwrap_or(1500.0),
            slot_seconds: f.slot_seconds.unwrap_or(1.0),
            episode_slots: f.episode_slots.unwrap_or(200),
            g2a_subchannels: f.g2a_subchannels.unwrap_or(2),
            a2s_subchannels: f.a2s_subchannels.unwrap_or(10),
            g2a_subchannel_hz: f.g2a_subchannel_hz.unwrap_or(1e6),
            a2s_subchannel_hz: f.a2s_subchannel_hz.unwrap_or(1e6),
            noise_psd: dbm_to_watt(file_powers.noise_psd_dbm),
            gt_tx_power: dbm_to_watt(file_powers.gt_tx_dbm),
            uav_wet_power: dbm_to_watt(file_powers.wet_dbm),
            uav_wdc_power: dbm_to_watt(file_powers.wdc_dbm),
            uav_tx_power_max: dbm_to_watt(file_powers.tx_max_dbm),
            batt_thresh_e: f.batt_thresh_e.unwrap_or(0.01),
            batt_thresh_t: f.batt_thresh_t.unwrap_or(0.5),
            gt_batt_cap: f.gt_batt_cap.unwrap_or(1.0),
            gt_batt_init: f.gt_batt_init.unwrap_or(0.5),
            uav_batt_cap: f.uav_batt_cap.unwrap_or(1000.0),
            uav_harvest_cap: f.uav_harvest_cap.unwrap_or(10.0),
            uav_batt_min: f.uav_batt_min.unwrap_or(50.0),
            aftu_weight: f.aftu_weight.unwrap_or(0.1),
            aoi_fairness_kappa: f.aoi_fairness_kappa.unwrap_or(0.5),
            reward_zeta1: f.reward_zeta1.unwrap_or(1.0),
            reward_zeta2: f.reward_zeta2.unwrap_or(1.0),
            scale_beta: f.scale_beta.unwrap_or(1.0),
            sense_range_gt: f.sense_range_gt.unwrap_or(400.0),
            sense_range_uav: f.sense_range_uav.unwrap_or(400.0),
            cover_range: f.cover_range.unwrap_or(200.0),
            v_max: f.v_max.unwrap_or(30.0),
            alt_min: f.alt_min.unwrap_or(60.0),
            alt_max: f.alt_max.unwrap_or(120.0),
            d_min: f.d_min.unwrap_or(10.0),
            earth_radius: f.earth_radius.unwrap_or(6371e3),
            leo_altitude: f.leo_altitude.unwrap_or(550e3),
            sat_speed: f.sat_speed.unwrap_or(7590.0),
            min_elevation: f.min_elevation.unwrap_or(10f64.to_radians()),
            packet_rate: f.packet_rate.unwrap_or(0.5),
            packet_bytes: f.packet_bytes.unwrap_or(125_000.0),
            min_sat_rate: f.min_sat_rate.unwrap_or(1e6),
            solar_frac_cap: f.solar_frac_cap.unwrap_or(0.8),
            carrier_hz: f.carrier_hz.unwrap_or(20e9),
            gt_figure_db: f.gt_figure_db.unwrap_or(34.0),
            link_margin_db: f.link_margin_db.unwrap_or(8.0),
            los_params: f.los_params.unwrap_or_default(),
            eh_params: EhParams {
                sensitivity_w: dbm_to_watt(eh_file.sensitivity),
                saturation_w: dbm_to_watt(eh_file.saturation),
                efficiency: eh_file.efficiency,
            },
            shadowing: f.shadowing.unwrap_or_default(),
            saoi_target_range: f.saoi_target_range.unwrap_or([0.05, 0.10]),
            propulsion: f.propulsion.unwrap_or_default(),
            gsl_layers: f.gsl_layers.unwrap_or(2),
            gel_layers: f.gel_layers.unwrap_or(2),
            nn: f.nn.unwrap_or_default(),
            tau_hat_printed_form: f.tau_hat_printed_form.unwrap_or(false),
            gml_conventional_reparam: f.gml_conventional_reparam.unwrap_or(false),
            qc_condition_on_mode: f.qc_condition_on_mode.unwrap_or(false),
            pilot_slots: f.pilot_slots.unwrap_or(1000),
            file_powers,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl ScenarioConfig {
    // Comparisons are negated on purpose throughout: a NaN in any field must
    // fail its check, and `!(a < b)` rejects NaN where `a >= b` lets it slip.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    fn validate(&self) -> Result<()> {
        fn fail(msg: impl Into<String>) -> Result<()> {
            Err(Error::ConfigValidation(msg.into()))
        }
        let positive_counts: [(&str, usize); 6] = [
            ("n_gts", self.n_gts),
            ("n_uavs", self.n_uavs),
            ("n_leos", self.n_leos),
            ("sats_per_leo", self.sats_per_leo),
            ("g2a_subchannels", self.g2a_subchannels),
            ("a2s_subchannels", self.a2s_subchannels),
        ];
        for (name, v) in positive_counts {
            if v == 0 {
                return fail(format!("{name} must be positive"));
            }
        }
        let positive_reals: [(&str, f64); 22] = [
            ("area_side", self.area_side),
            ("slot_seconds", self.slot_seconds),
            ("g2a_subchannel_hz", self.g2a_subchannel_hz),
            ("a2s_subchannel_hz", self.a2s_subchannel_hz),
            ("noise_psd", self.noise_psd),
            ("gt_tx_power", self.gt_tx_power),
            ("uav_wet_power", self.uav_wet_power),
            ("uav_wdc_power", self.uav_wdc_power),
            ("uav_tx_power_max", self.uav_tx_power_max),
            ("gt_batt_cap", self.gt_batt_cap),
            ("uav_batt_cap", self.uav_batt_cap),
            ("uav_harvest_cap", self.uav_harvest_cap),
            ("sense_range_gt", self.sense_range_gt),
            ("sense_range_uav", self.sense_range_uav),
            ("cover_range", self.cover_range),
            ("v_max", self.v_max),
            ("d_min", self.d_min),
            ("earth_radius", self.earth_radius),
            ("leo_altitude", self.leo_altitude),
            ("sat_speed", self.sat_speed),
            ("packet_bytes", self.packet_bytes),
            ("min_sat_rate", self.min_sat_rate),
        ];
        for (name, v) in positive_reals {
            if !(v > 0.0) || !v.is_finite() {
                return fail(format!("{name} must be strictly positive"));
            }
        }
        if self.episode_slots == 0 {
            return fail("episode_slots must be positive");
        }
        if !(self.batt_thresh_e < self.batt_thresh_t) {
            return fail("B_E < B_T violated");
        }
        // Non-strict on purpose: the reference parameter set sits exactly at
        // P^G·τ = B_E, and a scheduled GT always has B > B_E, so the battery
        // still cannot go negative.
        if self.gt_tx_power * self.slot_seconds > self.batt_thresh_e {
            return fail("P^G·τ ≤ B_E violated (a transmit slot could drain below the harvest threshold)");
        }
        if !(self.cover_range < self.sense_range_gt) {
            return fail("cover_range < sense_range_gt violated");
        }
        let [lo, hi] = self.saoi_target_range;
        if !(0.0 < lo && lo <= hi && hi < 1.0) {
            return fail("saoi_target_range must satisfy 0 < lo ≤ hi < 1");
        }
        for (name, v) in [
            ("aftu_weight", self.aftu_weight),
            ("aoi_fairness_kappa", self.aoi_fairness_kappa),
            ("solar_frac_cap", self.solar_frac_cap),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return fail(format!("{name} must lie in [0,1]"));
            }
        }
        if self.reward_zeta1 < 0.0 || self.reward_zeta2 < 0.0 {
            return fail("reward weights must be non-negative");
        }
        if !(self.scale_beta > 0.0) {
            return fail("scale_beta must be strictly positive");
        }
        if !(0.0 < self.alt_min && self.alt_min <= self.alt_max) {
            return fail("altitude band must satisfy 0 < alt_min ≤ alt_max");
        }
        if !(0.0..std::f64::consts::FRAC_PI_2).contains(&self.min_elevation) {
            return fail("min_elevation must lie in [0, π/2)");
        }
        if self.packet_rate < 0.0 {
            return fail("packet_rate must be non-negative");
        }
        if !(self.eh_params.sensitivity_w < self.eh_params.saturation_w) {
            return fail("EH sensitivity must lie below saturation");
        }
        if self.shadowing.sigma_sq_db < 0.0 {
            return fail("shadowing variance must be non-negative");
        }
        if !(self.gt_batt_init >= 0.0 && self.gt_batt_init <= self.gt_batt_cap) {
            return fail("gt_batt_init must lie in [0, gt_batt_cap]");
        }
        if self.uav_batt_min < 0.0 {
            return fail("uav_batt_min must be non-negative");
        }
        if self.gsl_layers == 0 || self.gel_layers == 0 {
            return fail("layer counts must be positive");
        }
        if self.nn.hidden_width == 0 || self.nn.msg_alphabet == 0 || self.nn.attention_heads == 0 {
            return fail("nn sizes must be positive");
        }
        if !(self.nn.tau_start > 0.0 && self.nn.tau_end > 0.0) {
            return fail("Gumbel temperatures must be positive");
        }
        if !(0.0..=1.0).contains(&self.nn.target_blend) {
            return fail("target_blend must lie in [0,1]");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dbm_conversions() {
        assert_eq!(dbm_to_watt(0.0), 1e-3);
        assert!((dbm_to_watt(7.0) - 5.011872336272722e-3).abs() < 1e-18);
        assert!((dbm_to_watt(-10.0) - 1e-4).abs() < 1e-19);
        // Noise density at -174 dBm/Hz.
        assert!((dbm_to_watt(-174.0) - 3.981071705534985e-21).abs() < 1e-33);
    }

    #[test]
    fn minimal_file_fills_defaults() {
        let f: FileScenario =
            serde_json::from_str(r#"{"n_gts": 9, "n_uavs": 4}"#).unwrap();
        let cfg = ScenarioConfig::try_from(f).unwrap();
        assert_eq!(cfg.n_gts, 9);
        assert_eq!(cfg.n_uavs, 4);
        assert_eq!(cfg.n_leos, 4);
        assert_eq!(cfg.sats_per_leo, 22);
        assert_eq!(cfg.area_side, 1500.0);
        assert_eq!(cfg.gt_tx_power, dbm_to_watt(10.0)); // 10 mW
        assert_eq!(cfg.uav_wet_power, dbm_to_watt(30.0)); // 1 W
        assert_eq!(cfg.batt_thresh_e, 0.01);
        assert_eq!(cfg.batt_thresh_t, 0.5);
        assert_eq!(cfg.v_max, 30.0);
        assert_eq!(cfg.packet_bits(), 1e6); // 1 Mbit packets
        assert_eq!(cfg.saoi_target_range, [0.05, 0.10]);
    }

    #[test]
    fn noise_psd_stored_in_watts() {
        let f: FileScenario = serde_json::from_str(r#"{"noise_psd": -174}"#).unwrap();
        let cfg = ScenarioConfig::try_from(f).unwrap();
        assert!((cfg.noise_psd - 3.981071705534985e-21).abs() < 1e-33);
    }

    #[test]
    fn swapped_battery_thresholds_rejected() {
        let f: FileScenario =
            serde_json::from_str(r#"{"batt_thresh_e": 0.5, "batt_thresh_t": 0.01}"#).unwrap();
        let err = ScenarioConfig::try_from(f).unwrap_err();
        assert!(err.to_string().contains("B_E < B_T violated"), "{err}");
    }

    #[test]
    fn tx_energy_above_harvest_threshold_rejected() {
        // 20 dBm = 100 mW over a 1 s slot is 0.1 J > B_E = 0.01 J.
        let f: FileScenario = serde_json::from_str(r#"{"gt_tx_power": 20}"#).unwrap();
        let err = ScenarioConfig::try_from(f).unwrap_err();
        assert!(err.to_string().contains("P^G·τ ≤ B_E"), "{err}");
    }

    #[test]
    fn cover_range_must_stay_below_sense_range() {
        let f: FileScenario = serde_json::from_str(r#"{"cover_range": 500}"#).unwrap();
        assert!(ScenarioConfig::try_from(f).is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        let r: std::result::Result<FileScenario, _> =
            serde_json::from_str(r#"{"n_gt": 9}"#);
        assert!(r.is_err());
    }

    #[test]
    fn save_load_round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scenario.json");
        let cfg = ScenarioConfig::default();
        cfg.save(&path).unwrap();
        let re = load_scenario(&path).unwrap();
        assert_eq!(cfg, re);
        // And a second save/load cycle is a fixed point.
        re.save(&path).unwrap();
        let re2 = load_scenario(&path).unwrap();
        assert_eq!(re, re2);
        assert_eq!(cfg.config_hash(), re2.config_hash());
    }

    #[test]
    fn hash_differs_when_any_field_differs() {
        let a = ScenarioConfig::default();
        let f: FileScenario = serde_json::from_str(r#"{"v_max": 25}"#).unwrap();
        let b = ScenarioConfig::try_from(f).unwrap();
        assert_ne!(a.config_hash(), b.config_hash());
    }
}
