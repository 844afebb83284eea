//! Command-line front end: episode runs, parameter sweeps, constellation
//! sizing, gradient checks, and toy training — one binary exposing every
//! suite the library ships.
//!
//! Exit codes: 0 success, 2 validation error, 3 constraint violation,
//! 4 training divergence.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use skyhaul_core::analytics;
use skyhaul_core::episode::{run_episode, run_sweep, SweepSpec};
use skyhaul_core::error::{Error, Result};
use skyhaul_core::metrics::{
    emit_metrics, write_sweep_csv, write_sweep_summary_csv, MetricsRecord,
};
use skyhaul_core::nn::g3m::{full_stack_gradcheck, ParamSet};
use skyhaul_core::nn::train::{
    eval_l1, eval_l2, train_l1, train_l2, write_trace_csv, Hyperparams, TrainOut,
};
use skyhaul_core::scenario::{load_scenario, ScenarioConfig};

#[derive(Parser)]
#[command(
    name = "skyhaul",
    about = "Disaster-relief UAV/LEO relay simulator: runs, sweeps, sizing, checks, training",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand that loads a scenario.
#[derive(Args)]
struct ScenarioArgs {
    /// Scenario JSON file (omit for the built-in default scenario)
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Override the episode length, slots
    #[arg(long)]
    slots: Option<u64>,
}

impl ScenarioArgs {
    fn load(&self) -> Result<ScenarioConfig> {
        let mut cfg = match &self.scenario {
            Some(path) => load_scenario(path)?,
            None => ScenarioConfig::default(),
        };
        if let Some(slots) = self.slots {
            if slots == 0 {
                return Err(Error::ConfigValidation("--slots must be positive".into()));
            }
            cfg.episode_slots = slots;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run episodes and write per-slot/aggregate CSVs plus a manifest
    Run {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// First-layer scheme: is-uav, dc-uav, td-uav, pd-uav, o-uav, or
        /// "g3m" with --checkpoint
        #[arg(long, default_value = "is-uav")]
        l1: String,
        /// Second-layer scheme: dmla, fdpc, tdfp, ftpc, uafp, or "g3m" with
        /// --checkpoint
        #[arg(long, default_value = "uafp")]
        l2: String,
        /// Seeds to run (repeat the flag or pass a comma list)
        #[arg(long = "seed", value_delimiter = ',', num_args = 1.., default_values_t = [0u64])]
        seeds: Vec<u64>,
        /// Trained parameter file backing a "g3m" scheme
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Output directory
        #[arg(long, default_value = "out/run")]
        out: PathBuf,
    },
    /// Sweep one scenario field over a value grid, schemes × seeds per point
    Sweep {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Scenario field to sweep (e.g. uav_batt_cap, a2s_subchannels)
        #[arg(long)]
        parameter: String,
        /// Grid values, comma-separated
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        values: Vec<f64>,
        /// First-layer scheme names (each is paired with every --l2)
        #[arg(long = "l1", value_delimiter = ',', num_args = 1.., default_values_t = [String::from("is-uav")])]
        l1: Vec<String>,
        /// Second-layer scheme names
        #[arg(long = "l2", value_delimiter = ',', num_args = 1.., default_values_t = [String::from("uafp")])]
        l2: Vec<String>,
        /// Seeds per grid point
        #[arg(long = "seed", value_delimiter = ',', num_args = 1.., default_values_t = [0u64])]
        seeds: Vec<u64>,
        /// Output directory
        #[arg(long, default_value = "out/sweep")]
        out: PathBuf,
    },
    /// Size the constellation: smallest satellite count whose waiting share
    /// lands in the target band
    Slsdo {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// First-layer baseline driving the calibration pilot
        #[arg(long, default_value = "is-uav")]
        l1: String,
        /// Second-layer baseline driving the calibration pilot
        #[arg(long, default_value = "uafp")]
        l2: String,
        /// Pilot seed
        #[arg(long = "seed", default_value_t = 0)]
        seed: u64,
        /// Target band for the satellite-waiting share of total age, as
        /// "lo,hi" (omit for the scenario's configured band)
        #[arg(long = "saoi-range")]
        saoi_range: Option<String>,
        /// Pilot length, slots
        #[arg(long, default_value_t = analytics::PILOT_SLOTS)]
        pilot_slots: u64,
        /// Largest satellite count considered
        #[arg(long, default_value_t = 64)]
        max_sats: u32,
        /// Output directory
        #[arg(long, default_value = "out/slsdo")]
        out: PathBuf,
    },
    /// Compare backprop gradients against finite differences over fresh
    /// random stacks (run at reduced widths to keep the check exhaustive)
    Gradcheck {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Seeds to check
        #[arg(long = "seed", value_delimiter = ',', num_args = 1.., default_values_t = (0u64..10).collect::<Vec<_>>())]
        seeds: Vec<u64>,
        /// Largest acceptable relative error
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Train one layer's policy with the other layer on a baseline
    Train {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Which layer to train
        #[arg(long, value_parser = ["l1", "l2"], default_value = "l1")]
        layer: String,
        /// First-layer baseline (companion when training l2)
        #[arg(long, default_value = "is-uav")]
        l1: String,
        /// Second-layer baseline (companion when training l1)
        #[arg(long, default_value = "uafp")]
        l2: String,
        /// Training episodes
        #[arg(long)]
        episodes: Option<usize>,
        /// Training seed
        #[arg(long = "seed", default_value_t = 0)]
        seed: u64,
        /// Directory for parameter files and the reward trace
        #[arg(long, default_value = "out/train")]
        checkpoint: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// Map the error taxonomy onto the documented exit codes.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Constraint { .. } | Error::ProjectionInfeasible(_) => 3,
        Error::TrainingDiverged { .. } => 4,
        _ => 2,
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Run { scenario, l1, l2, seeds, checkpoint, out } => {
            cmd_run(&scenario, &l1, &l2, &seeds, checkpoint.as_deref(), &out)
        }
        Command::Sweep { scenario, parameter, values, l1, l2, seeds, out } => {
            cmd_sweep(&scenario, &parameter, &values, &l1, &l2, &seeds, &out)
        }
        Command::Slsdo { scenario, l1, l2, seed, saoi_range, pilot_slots, max_sats, out } => {
            cmd_slsdo(&scenario, &l1, &l2, seed, saoi_range, pilot_slots, max_sats, &out)
        }
        Command::Gradcheck { scenario, seeds, tolerance } => {
            cmd_gradcheck(&scenario, &seeds, tolerance)
        }
        Command::Train { scenario, layer, l1, l2, episodes, seed, checkpoint } => {
            cmd_train(&scenario, &layer, &l1, &l2, episodes, seed, &checkpoint)
        }
    }
}

fn cmd_run(
    scenario: &ScenarioArgs,
    l1: &str,
    l2: &str,
    seeds: &[u64],
    checkpoint: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let cfg = scenario.load()?;
    let trained = match (l1 == "g3m", l2 == "g3m", checkpoint) {
        (false, false, None) => None,
        (true, false, Some(p)) | (false, true, Some(p)) => Some(ParamSet::load(p)?),
        (false, false, Some(_)) => {
            return Err(Error::ConfigValidation(
                "--checkpoint needs a \"g3m\" scheme to back".into(),
            ))
        }
        (true, true, _) => {
            return Err(Error::ConfigValidation(
                "at most one layer can run from a checkpoint per invocation".into(),
            ))
        }
        (_, _, None) => {
            return Err(Error::ConfigValidation(
                "scheme \"g3m\" needs --checkpoint with a trained parameter file".into(),
            ))
        }
    };

    let mut runs: Vec<MetricsRecord> = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let rec = match (&trained, l1 == "g3m") {
            (Some(params), true) => eval_l1(&cfg, params, seed, l2, "g3m")?,
            (Some(params), false) => eval_l2(&cfg, params, seed, l1, "g3m")?,
            (None, _) => run_episode(&cfg, l1, l2, seed)?,
        };
        let a = &rec.aggregate;
        println!(
            "seed {seed}: collected {:.3e} bits, delivered {:.3e} bits, \
             mean ages {:.2}/{:.2} slots, ete {:.3e}, ste {:.4}, \
             waiting share {:.4}, violations {}",
            a.collected_bits,
            a.delivered_bits,
            a.mean_gt_aoi,
            a.mean_uav_aoi,
            a.ete,
            a.ste,
            a.saoi_proportion,
            a.violations.iter().sum::<u64>(),
        );
        runs.push(rec);
    }

    let files = emit_metrics(&runs, &cfg, out)?;
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn cmd_sweep(
    scenario: &ScenarioArgs,
    parameter: &str,
    values: &[f64],
    l1: &[String],
    l2: &[String],
    seeds: &[u64],
    out: &Path,
) -> Result<()> {
    let cfg = scenario.load()?;
    if values.is_empty() {
        return Err(Error::ConfigValidation("--values must be non-empty".into()));
    }
    if seeds.is_empty() {
        return Err(Error::ConfigValidation("--seed must list at least one seed".into()));
    }
    let schemes: Vec<(String, String)> = l1
        .iter()
        .flat_map(|a| l2.iter().map(move |b| (a.clone(), b.clone())))
        .collect();
    let spec = SweepSpec {
        parameter: parameter.to_string(),
        values: values.to_vec(),
        schemes,
        seeds: seeds.to_vec(),
    };
    let rows = run_sweep(&cfg, &spec);
    let failures = rows.iter().filter(|r| r.outcome.is_err()).count();

    std::fs::create_dir_all(out)?;
    let rows_path = out.join("sweep.csv");
    let summary_path = out.join("sweep_summary.csv");
    write_sweep_csv(&rows, &rows_path)?;
    write_sweep_summary_csv(&rows, &summary_path)?;
    println!(
        "{} rows ({} failed) across {} values x {} schemes x {} seeds",
        rows.len(),
        failures,
        values.len(),
        spec.schemes.len(),
        seeds.len(),
    );
    println!("wrote {}", rows_path.display());
    println!("wrote {}", summary_path.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_slsdo(
    scenario: &ScenarioArgs,
    l1: &str,
    l2: &str,
    seed: u64,
    saoi_range: Option<String>,
    pilot_slots: u64,
    max_sats: u32,
    out: &Path,
) -> Result<()> {
    let cfg = scenario.load()?;
    let target = match saoi_range {
        Some(spec) => {
            let parts: Vec<f64> = spec
                .split(',')
                .map(|p| p.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::ConfigValidation(format!("--saoi-range: {e}")))?;
            if parts.len() != 2 {
                return Err(Error::ConfigValidation(
                    "--saoi-range takes exactly two values: lo,hi".into(),
                ));
            }
            (parts[0], parts[1])
        }
        None => (cfg.saoi_target_range[0], cfg.saoi_target_range[1]),
    };

    // Calibrate the ground segment once from a pilot run, then search over
    // satellite counts with the closed-form waiting share.
    let est = analytics::estimate_expectations(&cfg, l1, l2, seed, pilot_slots)?;
    let never: Vec<usize> = (0..est.intervals.len())
        .filter(|&i| est.intervals[i].is_never())
        .collect();
    // Terminals the pilot never saw scheduled would make the ground age
    // infinite; size the constellation for the scheduled ones and say so.
    let scheduled: Vec<analytics::G2aTerm> = est
        .g2a_terms
        .iter()
        .filter(|t| !t.interval.is_never())
        .copied()
        .collect();
    if scheduled.is_empty() {
        return Err(Error::ConfigValidation(format!(
            "the {pilot_slots}-slot pilot never scheduled any terminal; \
             lengthen the pilot or fix the scenario"
        )));
    }
    if !never.is_empty() {
        println!(
            "pilot: terminals {never:?} were never scheduled in {pilot_slots} slots; \
             sizing for the {} scheduled ones",
            scheduled.len()
        );
    }
    let g2a_slots = analytics::expected_g2a_aoi(&scheduled);
    let g2a_seconds = g2a_slots * cfg.slot_seconds;
    println!(
        "pilot: ground age {:.3} slots, relay transmission times {:?} s, \
         waiting share at {} sats/orbit: {:.4}",
        g2a_slots, est.tx_seconds, cfg.sats_per_leo, est.saoi,
    );
    if !est.clamped.is_empty() {
        println!("pilot: load factor clamped for terminals {:?}", est.clamped);
    }

    let bounds = analytics::invert_saoi_bounds(&cfg, target, g2a_seconds, &est.tx_seconds, max_sats)?;
    let mut oracle = |sats: u32| {
        analytics::analytic_saoi_for_sats(&cfg, sats, g2a_seconds, &est.tx_seconds)
    };
    let result = analytics::slsdo_search(&mut oracle, target, bounds)?;

    for (sats, share) in &result.trace {
        println!("probe: {sats} sats/orbit -> waiting share {share:.4}");
    }
    match result.chosen {
        Some(sats) => println!(
            "feasible: {sats} sats/orbit lands in [{:.3}, {:.3}]",
            target.0, target.1
        ),
        None => match result.nearest {
            Some((sats, share)) => println!(
                "infeasible in [{}, {}]: nearest probe {sats} sats/orbit at share {share:.4}",
                result.lo, result.hi
            ),
            None => println!("infeasible: no probes inside bounds [{}, {}]", result.lo, result.hi),
        },
    }

    std::fs::create_dir_all(out)?;
    let path = out.join("slsdo.json");
    let report = serde_json::json!({
        "target": { "lo": target.0, "hi": target.1 },
        "bounds": { "lo": result.lo, "hi": result.hi },
        "pilot": {
            "l1": l1,
            "l2": l2,
            "seed": seed,
            "slots": pilot_slots,
            "ground_age_slots": g2a_slots,
            "tx_seconds": est.tx_seconds,
            "clamped_terminals": est.clamped,
            "never_scheduled_terminals": never,
        },
        "trace": result.trace.iter().map(|(s, d)| serde_json::json!({"sats": s, "share": d})).collect::<Vec<_>>(),
        "chosen": result.chosen,
        "nearest": result.nearest.map(|(s, d)| serde_json::json!({"sats": s, "share": d})),
    });
    std::fs::write(&path, serde_json::to_string_pretty(&report)?)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_gradcheck(scenario: &ScenarioArgs, seeds: &[u64], tolerance: f64) -> Result<()> {
    let mut cfg = scenario.load()?;
    // Exhaustive finite differences over every parameter stay tractable only
    // at reduced widths; the op set exercised is identical.
    cfg.nn.hidden_width = 8;
    cfg.nn.attention_heads = 2;
    cfg.nn.msg_alphabet = 4;

    let mut worst: f64 = 0.0;
    let mut failed = 0usize;
    for &seed in seeds {
        let err = full_stack_gradcheck(&cfg, seed)?;
        let ok = err <= tolerance;
        if !ok {
            failed += 1;
        }
        worst = worst.max(err);
        println!(
            "seed {seed}: max relative error {err:.3e} {}",
            if ok { "ok" } else { "FAIL" }
        );
    }
    println!("worst over {} seeds: {worst:.3e} (tolerance {tolerance:.1e})", seeds.len());
    if failed > 0 {
        return Err(Error::Nn(format!(
            "{failed} of {} gradient checks exceeded {tolerance:.1e}",
            seeds.len()
        )));
    }
    Ok(())
}

fn cmd_train(
    scenario: &ScenarioArgs,
    layer: &str,
    l1: &str,
    l2: &str,
    episodes: Option<usize>,
    seed: u64,
    checkpoint: &Path,
) -> Result<()> {
    let cfg = scenario.load()?;
    let mut hp = Hyperparams::default();
    if let Some(e) = episodes {
        if e == 0 {
            return Err(Error::ConfigValidation("--episodes must be positive".into()));
        }
        hp.episodes = e;
    }

    let out: TrainOut = match layer {
        "l1" => train_l1(&cfg, &hp, seed, l2)?,
        "l2" => train_l2(&cfg, &hp, seed, l1)?,
        other => {
            return Err(Error::ConfigValidation(format!(
                "--layer must be l1 or l2, got {other:?}"
            )))
        }
    };

    std::fs::create_dir_all(checkpoint)?;
    let actor = checkpoint.join("actor.json");
    out.actor.save(&actor)?;
    out.actor_target.save(&checkpoint.join("actor_target.json"))?;
    out.critic.save(&checkpoint.join("critic.json"))?;
    out.critic_target.save(&checkpoint.join("critic_target.json"))?;
    let trace = checkpoint.join("trace.csv");
    write_trace_csv(&out.trace, &trace)?;

    if let (Some(first), Some(last)) = (out.trace.first(), out.trace.last()) {
        println!(
            "trained {layer} for {} episodes: mean reward {:.4} -> {:.4}",
            out.trace.len(),
            first.mean_reward,
            last.mean_reward,
        );
    }
    println!("wrote {}", actor.display());
    println!("wrote {}", trace.display());
    Ok(())
}
