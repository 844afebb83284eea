//! Metric records, aggregate computation, the packet-ledger replay oracle,
//! and file emission (CSV + manifest).
//!
//! Every per-slot row carries enough to recompute the global objective
//! offline; the manifest stores the full configuration in its original file
//! form, the configuration hash, the code version, and each run's scheme and
//! seed, so any emitted file can be reproduced bit-for-bit.

use std::collections::VecDeque;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::episode::SweepRow;
use crate::error::Result;
use crate::scenario::ScenarioConfig;

/// One entry of the packet ledger. The simulator appends these as packets
/// move through the chain; the replay oracle reconstructs every queue from
/// them alone.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AoiEvent {
    /// `packets` new packets generated at terminal `gt` in `slot`.
    Arrive { slot: u64, gt: usize, packets: u64 },
    /// One whole packet (generated in `gen_slot`) moved from terminal `gt`
    /// into UAV `uav`'s buffer in `slot`.
    Collect { slot: u64, gt: usize, uav: usize, gen_slot: u64 },
    /// One whole packet (generated in `gen_slot`) left UAV `uav` for a
    /// satellite in `slot`.
    Deliver { slot: u64, uav: usize, gen_slot: u64 },
}

/// Per-slot metrics row.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotRecord {
    pub slot: u64,
    /// Mean per-terminal age total at the end of the slot.
    pub mean_gt_aoi: f64,
    /// Mean per-UAV buffered age total at the end of the slot.
    pub mean_uav_aoi: f64,
    /// Bits moved terminal → UAV this slot.
    pub collected_bits: f64,
    /// Space-uplink capacity offered this slot.
    pub capacity_bits: f64,
    /// Bits delivered to satellites this slot.
    pub delivered_bits: f64,
    /// Ground-segment energy this slot: terminal transmit + UAV flight
    /// budget, J.
    pub g2a_energy: f64,
    /// Space-uplink energy this slot, J.
    pub a2s_energy: f64,
    /// Jain fairness over cumulative per-terminal throughput.
    pub fairness: f64,
    /// Running outage frequency over all space-uplink transmissions so far.
    pub outage_freq: f64,
    /// Energy efficiency this slot: delivered bits per joule per second.
    pub ete: f64,
    /// Spectrum efficiency this slot: delivered bits per hertz per second.
    pub ste: f64,
    /// Running share of buffered age accrued while no satellite was in
    /// service.
    pub saoi_prop: f64,
    /// Global per-slot objective (delivered over β·energy·age).
    pub objective: f64,
    /// Constraint violations observed this slot.
    pub violations: u64,
}

/// Per-slot energy efficiency: delivered bits per joule per second of slot
/// time. Zero energy → 0.
pub fn slot_ete(delivered_bits: f64, energy_j: f64, slot_seconds: f64) -> f64 {
    if energy_j > 0.0 {
        delivered_bits / (energy_j * slot_seconds)
    } else {
        0.0
    }
}

/// Per-slot spectrum efficiency of the space segment: delivered bits per
/// hertz of uplink band per second of slot time.
pub fn slot_ste(delivered_bits: f64, cfg: &ScenarioConfig) -> f64 {
    let band = cfg.a2s_subchannels as f64 * cfg.a2s_subchannel_hz;
    delivered_bits / (band * cfg.slot_seconds)
}

/// Episode-level aggregate.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub slots: u64,
    pub collected_bits: f64,
    pub capacity_bits: f64,
    pub delivered_bits: f64,
    pub g2a_energy: f64,
    pub a2s_energy: f64,
    /// Time-averages of the per-slot means.
    pub mean_gt_aoi: f64,
    pub mean_uav_aoi: f64,
    pub fairness_final: f64,
    pub outage_frequency: f64,
    /// Ratio-of-totals efficiency figures.
    pub ete: f64,
    pub ste: f64,
    pub saoi_proportion: f64,
    pub mean_objective: f64,
    /// Mean per-slot first-layer objective (collected over β·energy·age),
    /// recomputed from the rows — the phase-division calibration target.
    pub mean_l1_objective: f64,
    pub reward_l1_sum: f64,
    pub reward_l2_sum: f64,
    /// Violation tally indexed by constraint (C1..C12).
    pub violations: [u64; 12],
}

impl Aggregate {
    pub fn from_slots(
        slots: &[SlotRecord],
        violations: [u64; 12],
        reward_l1_sum: f64,
        reward_l2_sum: f64,
        cfg: &ScenarioConfig,
    ) -> Aggregate {
        let n = slots.len() as f64;
        let sum = |f: fn(&SlotRecord) -> f64| slots.iter().map(f).sum::<f64>();
        let collected = sum(|s| s.collected_bits);
        let capacity = sum(|s| s.capacity_bits);
        let delivered = sum(|s| s.delivered_bits);
        let g2a = sum(|s| s.g2a_energy);
        let a2s = sum(|s| s.a2s_energy);
        let mean_l1 = if slots.is_empty() {
            0.0
        } else {
            slots
                .iter()
                .map(|s| crate::mdp::l1_objective(s.collected_bits, s.g2a_energy, s.mean_gt_aoi, cfg))
                .sum::<f64>()
                / n
        };
        let band = cfg.a2s_subchannels as f64 * cfg.a2s_subchannel_hz;
        Aggregate {
            slots: slots.len() as u64,
            collected_bits: collected,
            capacity_bits: capacity,
            delivered_bits: delivered,
            g2a_energy: g2a,
            a2s_energy: a2s,
            mean_gt_aoi: if slots.is_empty() { 0.0 } else { sum(|s| s.mean_gt_aoi) / n },
            mean_uav_aoi: if slots.is_empty() { 0.0 } else { sum(|s| s.mean_uav_aoi) / n },
            fairness_final: slots.last().map_or(1.0, |s| s.fairness),
            outage_frequency: slots.last().map_or(0.0, |s| s.outage_freq),
            ete: slot_ete(delivered, g2a + a2s, cfg.slot_seconds),
            ste: if slots.is_empty() {
                0.0
            } else {
                delivered / (band * n * cfg.slot_seconds)
            },
            saoi_proportion: slots.last().map_or(0.0, |s| s.saoi_prop),
            mean_objective: if slots.is_empty() { 0.0 } else { sum(|s| s.objective) / n },
            mean_l1_objective: mean_l1,
            reward_l1_sum,
            reward_l2_sum,
            violations,
        }
    }
}

/// One episode's full output.
#[derive(Debug, Clone)]
pub struct MetricsRecord {
    pub config_hash: String,
    pub seed: u64,
    pub l1_name: String,
    pub l2_name: String,
    pub slots: Vec<SlotRecord>,
    pub aggregate: Aggregate,
    pub events: Vec<AoiEvent>,
}

// ---------------------------------------------------------------------------
// Packet-ledger replay
// ---------------------------------------------------------------------------

/// Brute-force per-slot age means reconstructed from the event ledger alone:
/// every live packet contributes `t − gen_slot` at the end of slot `t`.
/// Returns (per-slot terminal mean, per-slot UAV mean); matches the
/// simulator's reported values exactly (integer-valued ages sum exactly in
/// f64 at these scales).
pub fn replay_aoi(
    events: &[AoiEvent],
    n_gts: usize,
    n_uavs: usize,
    episode_slots: u64,
) -> (Vec<f64>, Vec<f64>) {
    let mut by_slot: Vec<Vec<&AoiEvent>> = vec![Vec::new(); episode_slots as usize];
    for ev in events {
        let s = match ev {
            AoiEvent::Arrive { slot, .. }
            | AoiEvent::Collect { slot, .. }
            | AoiEvent::Deliver { slot, .. } => *slot,
        };
        by_slot[s as usize].push(ev);
    }
    let mut gt_q: Vec<VecDeque<u64>> = vec![VecDeque::new(); n_gts];
    let mut uav_q: Vec<VecDeque<u64>> = vec![VecDeque::new(); n_uavs];
    let mut gt_means = Vec::with_capacity(episode_slots as usize);
    let mut uav_means = Vec::with_capacity(episode_slots as usize);
    for t in 0..episode_slots {
        for ev in &by_slot[t as usize] {
            match ev {
                AoiEvent::Arrive { gt, packets, .. } => {
                    for _ in 0..*packets {
                        gt_q[*gt].push_back(t);
                    }
                }
                AoiEvent::Collect { gt, uav, gen_slot, .. } => {
                    let i = gt_q[*gt]
                        .iter()
                        .position(|g| g == gen_slot)
                        .expect("collected packet must be queued");
                    gt_q[*gt].remove(i);
                    uav_q[*uav].push_back(*gen_slot);
                }
                AoiEvent::Deliver { uav, gen_slot, .. } => {
                    let i = uav_q[*uav]
                        .iter()
                        .position(|g| g == gen_slot)
                        .expect("delivered packet must be buffered");
                    uav_q[*uav].remove(i);
                }
            }
        }
        let gt_total: f64 = gt_q
            .iter()
            .map(|q| q.iter().map(|&g| (t - g) as f64).sum::<f64>())
            .sum();
        let uav_total: f64 = uav_q
            .iter()
            .map(|q| q.iter().map(|&g| (t - g) as f64).sum::<f64>())
            .sum();
        gt_means.push(gt_total / n_gts as f64);
        uav_means.push(uav_total / n_uavs as f64);
    }
    (gt_means, uav_means)
}

// ---------------------------------------------------------------------------
// File emission
// ---------------------------------------------------------------------------

/// Column set of the per-slot CSV (format version 1).
pub const SLOT_CSV_HEADER: &str = "run,seed,l1,l2,slot,mean_gt_aoi,mean_uav_aoi,\
collected_bits,capacity_bits,delivered_bits,g2a_energy_j,a2s_energy_j,fairness,\
outage_freq,ete,ste,saoi_prop,objective,violations";

/// Column set of the aggregate CSV (format version 1).
pub const AGGREGATE_CSV_HEADER: &str = "run,seed,l1,l2,slots,collected_bits,\
capacity_bits,delivered_bits,g2a_energy_j,a2s_energy_j,mean_gt_aoi,mean_uav_aoi,\
fairness_final,outage_freq,ete,ste,saoi_prop,mean_objective,mean_l1_objective,\
reward_l1_sum,reward_l2_sum,\
c1,c2,c3,c4,c5,c6,c7,c8,c9,c10,c11,c12";

/// One row per slot per run.
pub fn write_slot_csv(runs: &[MetricsRecord], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "{SLOT_CSV_HEADER}")?;
    for (run, r) in runs.iter().enumerate() {
        for s in &r.slots {
            writeln!(
                w,
                "{run},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.seed,
                r.l1_name,
                r.l2_name,
                s.slot,
                s.mean_gt_aoi,
                s.mean_uav_aoi,
                s.collected_bits,
                s.capacity_bits,
                s.delivered_bits,
                s.g2a_energy,
                s.a2s_energy,
                s.fairness,
                s.outage_freq,
                s.ete,
                s.ste,
                s.saoi_prop,
                s.objective,
                s.violations,
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One row per run.
pub fn write_aggregate_csv(runs: &[MetricsRecord], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "{AGGREGATE_CSV_HEADER}")?;
    for (run, r) in runs.iter().enumerate() {
        let a = &r.aggregate;
        write!(
            w,
            "{run},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.seed,
            r.l1_name,
            r.l2_name,
            a.slots,
            a.collected_bits,
            a.capacity_bits,
            a.delivered_bits,
            a.g2a_energy,
            a.a2s_energy,
            a.mean_gt_aoi,
            a.mean_uav_aoi,
            a.fairness_final,
            a.outage_frequency,
            a.ete,
            a.ste,
            a.saoi_proportion,
            a.mean_objective,
            a.mean_l1_objective,
            a.reward_l1_sum,
            a.reward_l2_sum,
        )?;
        for v in a.violations {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Reproduction manifest: configuration (original file form), its hash, the
/// code version, and every run's scheme and seed.
pub fn write_manifest(
    cfg: &ScenarioConfig,
    runs: &[MetricsRecord],
    path: &Path,
) -> Result<()> {
    let runs_json: Vec<serde_json::Value> = runs
        .iter()
        .map(|r| {
            serde_json::json!({
                "seed": r.seed,
                "l1": r.l1_name,
                "l2": r.l2_name,
                "slots": r.aggregate.slots,
            })
        })
        .collect();
    let manifest = serde_json::json!({
        "format": "metrics-manifest/1",
        "code_version": env!("CARGO_PKG_VERSION"),
        "config_hash": cfg.config_hash(),
        "config": cfg,
        "runs": runs_json,
    });
    fs::write(path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

/// Write slots.csv, aggregate.csv, and manifest.json under `out_dir`
/// (created if missing); returns the paths.
pub fn emit_metrics(
    runs: &[MetricsRecord],
    cfg: &ScenarioConfig,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let slots = out_dir.join("slots.csv");
    let aggregate = out_dir.join("aggregate.csv");
    let manifest = out_dir.join("manifest.json");
    write_slot_csv(runs, &slots)?;
    write_aggregate_csv(runs, &aggregate)?;
    write_manifest(cfg, runs, &manifest)?;
    Ok(vec![slots, aggregate, manifest])
}

/// Column set of the sweep CSV (format version 1). Failed grid points carry
/// the error text in `status` and empty metric cells.
pub const SWEEP_CSV_HEADER: &str = "parameter,value,l1,l2,seed,status,\
collected_bits,delivered_bits,mean_gt_aoi,mean_uav_aoi,ete,ste,outage_freq,\
mean_objective";

/// One row per grid point per seed.
pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "{SWEEP_CSV_HEADER}")?;
    for row in rows {
        write!(w, "{},{},{},{},{},", row.parameter, row.value, row.l1, row.l2, row.seed)?;
        match &row.outcome {
            Ok(a) => writeln!(
                w,
                "ok,{},{},{},{},{},{},{},{}",
                a.collected_bits,
                a.delivered_bits,
                a.mean_gt_aoi,
                a.mean_uav_aoi,
                a.ete,
                a.ste,
                a.outage_frequency,
                a.mean_objective,
            )?,
            Err(msg) => {
                let clean: String = msg
                    .chars()
                    .map(|c| if c == ',' || c == '\n' { ' ' } else { c })
                    .collect();
                writeln!(w, "{clean},,,,,,,,")?
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Column set of the sweep summary CSV: per (value, scheme) mean ± standard
/// error across seeds, successful runs only.
pub const SWEEP_SUMMARY_CSV_HEADER: &str = "parameter,value,l1,l2,seeds,\
collected_bits_mean,collected_bits_stderr,delivered_bits_mean,delivered_bits_stderr,\
mean_gt_aoi_mean,mean_gt_aoi_stderr,ste_mean,ste_stderr,\
mean_objective_mean,mean_objective_stderr";

fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Group sweep rows by (value, scheme pair) and write mean ± stderr across
/// seeds. Grid points whose every seed failed are omitted.
pub fn write_sweep_summary_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "{SWEEP_SUMMARY_CSV_HEADER}")?;
    let mut groups: Vec<(f64, &str, &str)> = Vec::new();
    for row in rows {
        let key = (row.value, row.l1.as_str(), row.l2.as_str());
        if !groups.contains(&key) {
            groups.push(key);
        }
    }
    for (value, l1, l2) in groups {
        let ok: Vec<&Aggregate> = rows
            .iter()
            .filter(|r| r.value == value && r.l1 == l1 && r.l2 == l2)
            .filter_map(|r| r.outcome.as_ref().ok())
            .collect();
        if ok.is_empty() {
            continue;
        }
        let parameter = &rows[0].parameter;
        let col = |f: fn(&Aggregate) -> f64| -> (f64, f64) {
            let xs: Vec<f64> = ok.iter().map(|a| f(a)).collect();
            mean_stderr(&xs)
        };
        let (cm, cs) = col(|a| a.collected_bits);
        let (dm, ds) = col(|a| a.delivered_bits);
        let (am, as_) = col(|a| a.mean_gt_aoi);
        let (sm, ss) = col(|a| a.ste);
        let (om, os) = col(|a| a.mean_objective);
        writeln!(
            w,
            "{parameter},{value},{l1},{l2},{},{cm},{cs},{dm},{ds},{am},{as_},{sm},{ss},{om},{os}",
            ok.len(),
        )?;
    }
    w.flush()?;
    Ok(())
}
