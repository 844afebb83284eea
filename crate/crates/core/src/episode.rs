//! Episode driver: the slot loop tying together terminal scheduling,
//! first-layer flight/charging actions, ground transmission and harvesting,
//! terminal bookkeeping, second-layer uplink actions, the space uplink, and
//! metric accounting — plus parameter sweeps over scenario fields.
//!
//! Within a slot everything is evaluated at the positions the slot started
//! with; motion commanded this slot takes effect from the next. The driver
//! is deterministic given (scenario, seed): every random draw comes from a
//! counter-keyed stream indexed by purpose, device, and slot.

use crate::baselines::{default_t_prime, l1_policy, l2_policy};
use crate::channel::{
    a2s_gain, g2a_gain, g2a_sinr, g2a_volumes, noma_sinr, sic_order, SatLinkGroup,
};
use crate::constellation::{sat_positions, sat_schedule};
use crate::error::{Error, Result};
use crate::feasible::{check_feasible, project_l1, project_l2, ConstraintId};
use crate::geometry::{sense_and_cover, Position3D};
use crate::gt::{
    aftu_mode, harvest_and_battery, local_avg_aoi, poisson_arrivals, priority_and_fairness,
};
use crate::mdp::{
    build_observation, build_state, global_objective, gt_uav_scheduling, reward_l2, rewards_l1,
    AccessMode, ActionL1, ActionL2, ObservationL1, RewardsL1, StateL2,
};
use crate::metrics::{slot_ete, slot_ste, Aggregate, AoiEvent, MetricsRecord, SlotRecord};
use crate::rng::{Purpose, RngStream};
use crate::scenario::{FileScenario, ScenarioConfig};
use crate::uav::{a2s_transmit, drain_battery, propulsion_power, solar_harvest, uav_slot_energy};
use crate::world::{init_world, WorldState};

/// Attach the current slot to constraint errors raised by helpers that do
/// not know it.
fn at_slot(e: Error, t: u64) -> Error {
    match e {
        Error::Constraint { slot: 0, detail } => Error::Constraint { slot: t, detail },
        other => other,
    }
}

/// Everything one `step` call produced beyond the world mutation.
#[derive(Debug, Clone)]
pub struct SlotOutcome {
    pub record: SlotRecord,
    pub rewards_l1: Vec<RewardsL1>,
    pub reward_l2: f64,
}

/// One running episode. Policies live outside: callers pull observations
/// with [`Episode::begin_slot`], decide, and push actions into
/// [`Episode::step`], which makes the driver equally usable for fixed
/// baselines, learned policies, and tests that script exact action
/// sequences.
pub struct Episode<'a> {
    cfg: &'a ScenarioConfig,
    stream: RngStream,
    pub world: WorldState,
    /// Collection flags the upcoming schedule may rely on (the slot's
    /// schedule is fixed before the slot's actions are known, so it sees the
    /// previous slot's flags). Starts all-true.
    prev_wdc: Vec<bool>,
    saoi_num: f64,
    saoi_den: f64,
    slots: Vec<SlotRecord>,
    events: Vec<AoiEvent>,
    violations: [u64; 12],
    reward_l1_sum: f64,
    reward_l2_sum: f64,
}

impl<'a> Episode<'a> {
    pub fn new(cfg: &'a ScenarioConfig, seed: u64) -> Self {
        let stream = RngStream::new(seed);
        let world = init_world(cfg, &stream);
        let m = cfg.n_uavs;
        Episode {
            cfg,
            stream,
            world,
            prev_wdc: vec![true; m],
            saoi_num: 0.0,
            saoi_den: 0.0,
            slots: Vec::with_capacity(cfg.episode_slots as usize),
            events: Vec::new(),
            violations: [0; 12],
            reward_l1_sum: 0.0,
            reward_l2_sum: 0.0,
        }
    }

    /// The slot the next `step` call will simulate.
    pub fn slot(&self) -> u64 {
        self.world.slot
    }

    pub fn done(&self) -> bool {
        self.world.slot >= self.cfg.episode_slots
    }

    /// Open the slot: refresh connectivity at the current positions, retire
    /// UAVs whose flight battery can no longer sustain a hover slot, and
    /// build the per-UAV observations.
    pub fn begin_slot(&mut self) -> Vec<ObservationL1> {
        let t = self.world.slot;
        self.world.conn =
            sense_and_cover(&self.world.gt_positions(), &self.world.uav_positions(), self.cfg);
        let hover_j = propulsion_power(0.0, &self.cfg.propulsion).expect("hover power")
            * self.cfg.slot_seconds;
        for u in &mut self.world.uavs {
            if u.battery < hover_j {
                u.active = false;
            }
        }
        (0..self.cfg.n_uavs).map(|m| build_observation(&self.world, m, t)).collect()
    }

    /// Simulate one slot. `raw_l1` is the per-UAV first-layer action as the
    /// policy produced it (this function projects it); `l2_fn` is called
    /// once with the slot's uplink state and may be a learned actor, a
    /// baseline, or a script.
    ///
    /// Slot order: schedule terminals → project flight actions (downgrading
    /// UAVs whose slot budget exceeds their battery) → ground uplink and
    /// terminal→UAV packet hand-off → wireless charging and terminal
    /// batteries → packet arrivals, terminal mode switches, priorities →
    /// satellite geometry and uplink channel draws → second-layer action →
    /// feasibility audit → space uplink → rewards → battery drain and motion
    /// → metrics row.
    pub fn step(
        &mut self,
        raw_l1: &[ActionL1],
        l2_fn: &mut dyn FnMut(&StateL2) -> ActionL2,
    ) -> Result<SlotOutcome> {
        let cfg = self.cfg;
        let t = self.world.slot;
        let n_gts = cfg.n_gts;
        let n_uavs = cfg.n_uavs;
        let n_orbits = cfg.n_leos;
        if raw_l1.len() != n_uavs {
            return Err(Error::Nn(format!(
                "{} first-layer actions for {n_uavs} UAVs",
                raw_l1.len()
            )));
        }

        // Terminal scheduling, fixed before the slot's actions are known.
        let active = self.world.active_flags();
        let schedule = gt_uav_scheduling(&self.world, &active, &self.prev_wdc, cfg);
        self.world.schedule = schedule.clone();
        let n_sched: Vec<usize> =
            (0..n_uavs).map(|m| (0..n_gts).filter(|&n| schedule[n][m]).count()).collect();

        // Project the flight actions. A UAV whose projected slot budget
        // exceeds its remaining battery sheds motion and charging (keeping
        // collection); pinning one UAV changes its neighbors' obstacle set,
        // so the projection reruns until no further UAV is over budget.
        let mut intents: Vec<ActionL1> = raw_l1.to_vec();
        for m in 0..n_uavs {
            if !active[m] {
                intents[m].velocity = [0.0; 3];
                intents[m].wet_scalar = -1.0;
            }
        }
        let positions = self.world.uav_positions();
        let (proj, energies) = loop {
            let proj = project_l1(&intents, &positions, &active, cfg);
            let energies: Vec<f64> = {
                let mut es = Vec::with_capacity(n_uavs);
                for m in 0..n_uavs {
                    es.push(if active[m] {
                        uav_slot_energy(
                            n_sched[m],
                            proj.actions[m].speed(),
                            proj.actions[m].wet_on(),
                            cfg,
                        )
                        .map_err(|e| at_slot(e, t))?
                    } else {
                        0.0
                    });
                }
                es
            };
            let mut downgraded = false;
            for m in 0..n_uavs {
                if active[m] && energies[m] > self.world.uavs[m].battery {
                    let a = &mut intents[m];
                    if a.velocity != [0.0; 3] || a.wet_on() {
                        a.velocity = [0.0; 3];
                        a.wet_scalar = -1.0;
                        downgraded = true;
                    }
                }
            }
            if !downgraded {
                break (proj, energies);
            }
        };
        let wet_final: Vec<bool> =
            (0..n_uavs).map(|m| active[m] && proj.actions[m].wet_on()).collect();

        // Age snapshot for the first-layer rewards (ages entering the slot).
        let gt_aoi_start: Vec<f64> = self.world.gts.iter().map(|g| g.aoi(t)).collect();
        let mean_gt_aoi_start = gt_aoi_start.iter().sum::<f64>() / n_gts as f64;

        // Ground-to-air channel draws for covered pairs.
        let mut gains = vec![vec![0.0; n_uavs]; n_gts];
        for (n, row) in gains.iter_mut().enumerate() {
            for (m, slot_gain) in row.iter_mut().enumerate() {
                if self.world.conn.c[n][m] {
                    let mut rng =
                        self.stream.rng(Purpose::G2aChannel, RngStream::link_key(n, m), t);
                    let (g, _los) =
                        g2a_gain(&self.world.gts[n].pos, &self.world.uavs[m].pos, &mut rng, cfg)?;
                    *slot_gain = g;
                }
            }
        }

        // Ground uplink volumes and packet hand-off.
        let mut sinr = vec![vec![0.0; n_uavs]; n_gts];
        for (n, row) in sinr.iter_mut().enumerate() {
            for (m, cell) in row.iter_mut().enumerate() {
                *cell = g2a_sinr(n, m, &schedule, &self.world.conn.c, &gains, cfg)
                    .map_err(|e| at_slot(e, t))?;
            }
        }
        let (per_gt_bits, _per_uav_bits) = g2a_volumes(&schedule, &sinr, cfg);
        let mut collected_bits = 0.0;
        for n in 0..n_gts {
            for (m, scheduled_here) in schedule[n].iter().enumerate() {
                if *scheduled_here {
                    let (retired, consumed) = self.world.gts[n].deliver_bits(per_gt_bits[n]);
                    collected_bits += consumed;
                    for p in &retired {
                        self.events.push(AoiEvent::Collect {
                            slot: t,
                            gt: n,
                            uav: m,
                            gen_slot: p.gen_slot,
                        });
                    }
                    self.world.uavs[m].collect(retired, t, cfg);
                }
            }
        }

        // Wireless charging and terminal batteries.
        let mut gt_harvested = vec![0.0; n_gts];
        let mut gt_energy = 0.0;
        for n in 0..n_gts {
            let p_rf: f64 = (0..n_uavs)
                .filter(|&m| wet_final[m] && self.world.conn.c[n][m])
                .map(|m| gains[n][m] * cfg.uav_wet_power)
                .sum();
            let scheduled = (0..n_uavs).any(|m| schedule[n][m]);
            let (harvested, consumed) =
                harvest_and_battery(&mut self.world.gts[n], p_rf, scheduled, cfg);
            gt_harvested[n] = harvested;
            gt_energy += consumed;
        }

        // Packet arrivals land after the slot's transmission; then each
        // terminal re-evaluates its mode on the updated battery and age, and
        // priorities/fairness are refreshed for the next schedule.
        for n in 0..n_gts {
            let mut rng = self.stream.rng(Purpose::PacketArrival, n as u64, t);
            let count = poisson_arrivals(&mut rng, cfg.packet_rate);
            if count > 0 {
                self.world.gts[n].push_arrivals(count, t, cfg);
                self.events.push(AoiEvent::Arrive { slot: t, gt: n, packets: count });
            }
        }
        let new_modes: Vec<bool> = (0..n_gts)
            .map(|n| {
                let g = &self.world.gts[n];
                aftu_mode(
                    g.harvesting,
                    g.battery,
                    g.aoi(t),
                    local_avg_aoi(&self.world.gts, n, t, cfg),
                    cfg,
                )
            })
            .collect();
        for (g, mode) in self.world.gts.iter_mut().zip(&new_modes) {
            g.harvesting = *mode;
        }
        let covered_flags: Vec<bool> = (0..n_gts).map(|n| self.world.conn.is_covered(n)).collect();
        let (priorities, fairness) = priority_and_fairness(&self.world.gts, &covered_flags, t, cfg);
        for (g, p) in self.world.gts.iter_mut().zip(&priorities) {
            g.priority = *p;
        }

        // Satellite geometry and uplink channel draws at the slot's start
        // time. A serving satellite below a particular UAV's minimum
        // elevation is simply invisible to that UAV.
        let t_seconds = t as f64 * cfg.slot_seconds;
        let mut serving: Vec<Option<usize>> = Vec::with_capacity(n_orbits);
        let mut sat_pos: Vec<Option<Position3D>> = Vec::with_capacity(n_orbits);
        for k in 0..n_orbits {
            let (srv, _win) = sat_schedule(&self.world.orbits[k], cfg, t_seconds);
            serving.push(srv);
            sat_pos.push(srv.map(|l| sat_positions(&self.world.orbits[k], cfg, t_seconds)[l]));
        }
        let mut a2s_gains: Vec<Vec<Option<f64>>> = vec![vec![None; n_orbits]; n_uavs];
        for (m, row) in a2s_gains.iter_mut().enumerate() {
            for (k, slot_gain) in row.iter_mut().enumerate() {
                if let Some(sp) = &sat_pos[k] {
                    let mut rng =
                        self.stream.rng(Purpose::A2sChannel, RngStream::link_key(m, k), t);
                    match a2s_gain(&self.world.uavs[m].pos, sp, &mut rng, cfg) {
                        Ok(g) => *slot_gain = Some(g),
                        Err(Error::Geometry(_)) => {}
                        Err(e) => return Err(e),
                    }
                }
            }
        }

        // Solar intake this slot; banked or spent during the uplink below.
        let intake: Vec<f64> = (0..n_uavs)
            .map(|m| {
                let mut rng = self.stream.rng(Purpose::SolarHarvest, m as u64, t);
                solar_harvest(&mut rng, cfg)
            })
            .collect();

        // Second-layer action on the slot's uplink state.
        let state = build_state(&self.world, &a2s_gains, &sat_pos, t);
        let raw_l2 = l2_fn(&state);
        if raw_l2.assigned_orbit.len() != n_uavs
            || raw_l2.powers.len() != n_uavs
            || raw_l2.rho.len() != n_orbits
        {
            return Err(Error::Nn(format!(
                "second-layer action dimensions ({} assignments, {} powers, {} fractions) \
                 for {n_uavs} UAVs and {n_orbits} orbits",
                raw_l2.assigned_orbit.len(),
                raw_l2.powers.len(),
                raw_l2.rho.len()
            )));
        }
        for a in raw_l2.assigned_orbit.iter().flatten() {
            if *a >= n_orbits {
                return Err(Error::Nn(format!("orbit index {a} out of range ({n_orbits})")));
            }
        }
        let (l2_act, _corrected) = project_l2(&raw_l2, cfg);

        // Audit the final actions against every constraint; violations are
        // recorded, not fatal (projection and scheduling are supposed to
        // make them impossible — the tally is the evidence).
        let audit = check_feasible(&self.world, Some(&proj.actions), Some(&l2_act), false, cfg);
        let mut slot_violations = audit.len() as u64;
        for v in &audit {
            self.violations[v.id as usize] += 1;
        }

        // Space uplink, one group per orbit with a serving satellite.
        let mut a2s_energy = 0.0;
        let mut delivered_bits = 0.0;
        let mut capacity_bits = 0.0;
        let mut per_uav_delivered = vec![0.0; n_uavs];
        let mut per_uav_energy = vec![0.0; n_uavs];
        let mut outage_rates: Vec<(usize, usize, usize, f64)> = Vec::new();
        let mut transmitted = vec![false; n_uavs];
        for k in 0..n_orbits {
            let Some(l) = serving[k] else { continue };
            let members: Vec<(usize, f64)> = (0..n_uavs)
                .filter(|&m| active[m] && l2_act.assigned_orbit[m] == Some(k))
                .filter_map(|m| a2s_gains[m][k].map(|g| (m, g)))
                .collect();
            if members.is_empty() {
                continue;
            }
            let group = SatLinkGroup { orbit: k, sat: l, members: sic_order(members) };
            let j = group.members.len() as f64;
            // All sharing disciplines reduce to an effective bandwidth
            // fraction for volumes and energy; they differ in the on-air
            // rate the outage threshold sees.
            let (rho_eff, rate_scale) = match l2_act.access_mode {
                AccessMode::Noma => (l2_act.rho[k], 1.0),
                AccessMode::FdmaWithinSat => (l2_act.rho[k] / j, 1.0),
                AccessMode::TdmaWithinSat => (l2_act.rho[k] / j, j),
                AccessMode::TdmaGlobal => (1.0 / n_uavs as f64, n_uavs as f64),
            };
            for pos in 0..group.members.len() {
                let (m, gain) = group.members[pos];
                let gamma = match l2_act.access_mode {
                    AccessMode::Noma => {
                        noma_sinr(&group, pos, &l2_act.powers, self.world.outage.flag(m, k, l), cfg)
                            .map_err(|e| at_slot(e, t))?
                    }
                    _ => gain * l2_act.powers[m] / (cfg.noise_psd * cfg.a2s_subchannel_hz),
                };
                let out = a2s_transmit(
                    &mut self.world.uavs[m],
                    gamma,
                    l2_act.powers[m],
                    rho_eff,
                    intake[m],
                    t,
                    cfg,
                )?;
                for p in &out.retired {
                    self.events.push(AoiEvent::Deliver { slot: t, uav: m, gen_slot: p.gen_slot });
                }
                delivered_bits += out.delivered_bits;
                capacity_bits += out.capacity_bits;
                a2s_energy += out.energy;
                per_uav_delivered[m] = out.delivered_bits;
                per_uav_energy[m] = out.energy;
                if out.energy > 0.0 {
                    outage_rates.push((m, k, l, out.rate * rate_scale));
                }
                transmitted[m] = true;
            }
        }
        for m in 0..n_uavs {
            if !transmitted[m] {
                let u = &mut self.world.uavs[m];
                u.harvest_board = (u.harvest_board + intake[m]).clamp(0.0, cfg.uav_harvest_cap);
            }
        }
        self.world.outage.update(&outage_rates, cfg);

        // Age accrual while no satellite serves a UAV: every packet still
        // buffered at the slot's end gains one slot of age; the numerator
        // takes those gained out of coverage.
        for (m, u) in self.world.uavs.iter().enumerate() {
            let live = u.buffer.len() as f64;
            if live > 0.0 {
                self.saoi_den += live;
                if !(0..n_orbits).any(|k| a2s_gains[m][k].is_some()) {
                    self.saoi_num += live;
                }
            }
        }

        // Rewards on this slot's quantities.
        let slot_rewards: Vec<RewardsL1> = (0..n_uavs)
            .map(|m| {
                rewards_l1(
                    m,
                    &gt_aoi_start,
                    mean_gt_aoi_start,
                    &sinr,
                    &wet_final,
                    &gains,
                    &gt_harvested,
                    energies[m],
                    cfg,
                )
            })
            .collect();
        self.reward_l1_sum += slot_rewards.iter().map(|r| r.total).sum::<f64>();
        let uav_aoi_state: Vec<f64> = state.uavs.iter().map(|u| u.aoi).collect();
        let mean_uav_aoi_state = uav_aoi_state.iter().sum::<f64>() / n_uavs as f64;
        let r2 = reward_l2(&uav_aoi_state, mean_uav_aoi_state, &per_uav_delivered, &per_uav_energy);
        self.reward_l2_sum += r2;

        // Physical updates: batteries, motion, charging flags.
        for m in 0..n_uavs {
            drain_battery(&mut self.world.uavs[m], energies[m]);
            self.world.uavs[m].pos = proj.positions[m];
            self.world.uavs[m].wet_active = wet_final[m];
        }
        self.prev_wdc = proj.actions.iter().map(|a| a.wdc_enabled).collect();
        self.world.slot = t + 1;

        // End-of-episode return-battery audit on the post-drain batteries.
        if t + 1 == cfg.episode_slots {
            for v in check_feasible(&self.world, None, None, true, cfg) {
                if matches!(v.id, ConstraintId::C5) {
                    self.violations[v.id as usize] += 1;
                    slot_violations += 1;
                }
            }
        }

        let mean_gt_aoi_end = self.world.mean_gt_aoi(t);
        let mean_uav_aoi_end = self.world.mean_uav_aoi(t);
        let g2a_energy = gt_energy + energies.iter().sum::<f64>();
        let record = SlotRecord {
            slot: t,
            mean_gt_aoi: mean_gt_aoi_end,
            mean_uav_aoi: mean_uav_aoi_end,
            collected_bits,
            capacity_bits,
            delivered_bits,
            g2a_energy,
            a2s_energy,
            fairness,
            outage_freq: self.world.outage.frequency(),
            ete: slot_ete(delivered_bits, g2a_energy + a2s_energy, cfg.slot_seconds),
            ste: slot_ste(delivered_bits, cfg),
            saoi_prop: if self.saoi_den > 0.0 { self.saoi_num / self.saoi_den } else { 0.0 },
            objective: global_objective(
                delivered_bits,
                g2a_energy,
                a2s_energy,
                mean_gt_aoi_end,
                mean_uav_aoi_end,
                cfg,
            ),
            violations: slot_violations,
        };
        self.slots.push(record.clone());
        Ok(SlotOutcome { record, rewards_l1: slot_rewards, reward_l2: r2 })
    }

    /// Close the episode and bundle everything into a metrics record.
    pub fn finish(self, l1_name: &str, l2_name: &str, seed: u64) -> MetricsRecord {
        let aggregate = Aggregate::from_slots(
            &self.slots,
            self.violations,
            self.reward_l1_sum,
            self.reward_l2_sum,
            self.cfg,
        );
        MetricsRecord {
            config_hash: self.cfg.config_hash(),
            seed,
            l1_name: l1_name.to_string(),
            l2_name: l2_name.to_string(),
            slots: self.slots,
            aggregate,
            events: self.events,
        }
    }
}

// ---------------------------------------------------------------------------
// Named-policy runs
// ---------------------------------------------------------------------------

fn needs_phase_calibration(l1_name: &str) -> bool {
    matches!(l1_name, "pd-uav" | "o-uav")
}

/// Run one episode with a named scheme pair, with `t_prime` as the phase
/// switch for the phase-divided baselines (ignored by the others).
pub fn run_episode_with_t_prime(
    cfg: &ScenarioConfig,
    l1_name: &str,
    l2_name: &str,
    seed: u64,
    t_prime: u64,
) -> Result<MetricsRecord> {
    let mut l1 = l1_policy(l1_name, t_prime)?;
    let mut l2 = l2_policy(l2_name)?;
    let mut ep = Episode::new(cfg, seed);
    while !ep.done() {
        let obs = ep.begin_slot();
        let t = ep.slot();
        let actions: Vec<ActionL1> = obs.iter().map(|o| l1.act(o, t, cfg)).collect();
        ep.step(&actions, &mut |s| l2.act(s, t, cfg))?;
    }
    Ok(ep.finish(l1_name, l2_name, seed))
}

/// Pick the phase switch for a phase-divided baseline by scoring the
/// first-layer objective over a coarse grid of switch slots (multiples of a
/// tenth of the episode). Deterministic: same seed as the run it serves;
/// ties go to the earlier switch.
pub fn calibrate_t_prime(
    cfg: &ScenarioConfig,
    l1_name: &str,
    l2_name: &str,
    seed: u64,
) -> Result<u64> {
    let step = (cfg.episode_slots / 10).max(1);
    let mut best: Option<(u64, f64)> = None;
    let mut candidate = 0;
    while candidate <= cfg.episode_slots {
        let rec = run_episode_with_t_prime(cfg, l1_name, l2_name, seed, candidate)?;
        let score = rec.aggregate.mean_l1_objective;
        match best {
            Some((_, s)) if s >= score => {}
            _ => best = Some((candidate, score)),
        }
        candidate += step;
    }
    Ok(best.expect("at least one candidate").0)
}

/// Run one episode with a named scheme pair. Phase-divided baselines get
/// their switch slot calibrated first; everything else uses the default.
pub fn run_episode(
    cfg: &ScenarioConfig,
    l1_name: &str,
    l2_name: &str,
    seed: u64,
) -> Result<MetricsRecord> {
    let t_prime = if needs_phase_calibration(l1_name) {
        calibrate_t_prime(cfg, l1_name, l2_name, seed)?
    } else {
        default_t_prime(cfg)
    };
    run_episode_with_t_prime(cfg, l1_name, l2_name, seed, t_prime)
}

// ---------------------------------------------------------------------------
// Parameter sweeps
// ---------------------------------------------------------------------------

/// A sweep: one scenario field, the values to try, the scheme pairs, and the
/// seeds per grid point.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    /// Scenario-file field name (e.g. `uav_batt_cap`).
    pub parameter: String,
    pub values: Vec<f64>,
    /// (first-layer, second-layer) scheme names.
    pub schemes: Vec<(String, String)>,
    pub seeds: Vec<u64>,
}

/// One grid point × seed outcome. Failures stay per-row so one broken point
/// cannot sink the sweep.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub parameter: String,
    pub value: f64,
    pub l1: String,
    pub l2: String,
    pub seed: u64,
    pub outcome: std::result::Result<Aggregate, String>,
}

/// Rebuild the scenario with one field overridden, going through the file
/// schema so the same validation applies as for an edited file. Integer
/// fields round; power fields take the file's unit (dBm).
pub fn apply_override(cfg: &ScenarioConfig, parameter: &str, value: f64) -> Result<ScenarioConfig> {
    let mut v = serde_json::to_value(cfg)?;
    let obj = v
        .as_object_mut()
        .ok_or_else(|| Error::ConfigValidation("scenario did not serialize to an object".into()))?;
    let entry = obj
        .get_mut(parameter)
        .ok_or_else(|| Error::ConfigValidation(format!("unknown sweep parameter `{parameter}`")))?;
    *entry = if entry.is_u64() {
        if value < 0.0 {
            return Err(Error::ConfigValidation(format!(
                "sweep parameter `{parameter}` takes a non-negative integer, got {value}"
            )));
        }
        serde_json::json!(value.round() as u64)
    } else {
        serde_json::json!(value)
    };
    let file: FileScenario = serde_json::from_value(v)?;
    ScenarioConfig::try_from(file)
}

/// Run the full grid (values × schemes × seeds), one episode per cell,
/// in parallel stripes. Row order is the deterministic grid order regardless
/// of thread timing.
pub fn run_sweep(cfg: &ScenarioConfig, spec: &SweepSpec) -> Vec<SweepRow> {
    let mut jobs: Vec<(f64, &str, &str, u64)> = Vec::new();
    for &value in &spec.values {
        for (l1, l2) in &spec.schemes {
            for &seed in &spec.seeds {
                jobs.push((value, l1, l2, seed));
            }
        }
    }
    let mut rows: Vec<Option<SweepRow>> = (0..jobs.len()).map(|_| None).collect();
    let workers = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(4);
    let stripe = jobs.len().div_ceil(workers).max(1);
    std::thread::scope(|s| {
        for (row_chunk, job_chunk) in rows.chunks_mut(stripe).zip(jobs.chunks(stripe)) {
            s.spawn(move || {
                for (slot_out, (value, l1, l2, seed)) in row_chunk.iter_mut().zip(job_chunk) {
                    let outcome = apply_override(cfg, &spec.parameter, *value)
                        .and_then(|c| run_episode(&c, l1, l2, *seed))
                        .map(|r| r.aggregate)
                        .map_err(|e| e.to_string());
                    *slot_out = Some(SweepRow {
                        parameter: spec.parameter.clone(),
                        value: *value,
                        l1: l1.to_string(),
                        l2: l2.to_string(),
                        seed: *seed,
                        outcome,
                    });
                }
            });
        }
    });
    rows.into_iter().map(|r| r.expect("all sweep jobs complete")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::replay_aoi;

    /// Small but non-trivial: both UAVs stay active the whole episode.
    fn small_cfg() -> ScenarioConfig {
        let mut c = ScenarioConfig::default();
        c.n_gts = 5;
        c.n_uavs = 2;
        c.episode_slots = 40;
        c.uav_batt_cap = 20_000.0;
        c
    }

    #[test]
    fn same_seed_reproduces_the_episode_bit_for_bit() {
        let cfg = small_cfg();
        let a = run_episode(&cfg, "is-uav", "dmla", 42).unwrap();
        let b = run_episode(&cfg, "is-uav", "dmla", 42).unwrap();
        assert_eq!(a.slots, b.slots);
        assert_eq!(a.aggregate, b.aggregate);
        assert_eq!(a.events, b.events);
    }

    #[test]
    fn phase_divided_baseline_is_deterministic_including_calibration() {
        let mut cfg = small_cfg();
        cfg.episode_slots = 12;
        let a = run_episode(&cfg, "pd-uav", "uafp", 3).unwrap();
        let b = run_episode(&cfg, "pd-uav", "uafp", 3).unwrap();
        assert_eq!(a.slots, b.slots);
    }

    #[test]
    fn different_seeds_change_the_trajectory() {
        let cfg = small_cfg();
        let a = run_episode(&cfg, "is-uav", "dmla", 1).unwrap();
        let b = run_episode(&cfg, "is-uav", "dmla", 2).unwrap();
        assert_ne!(a.slots, b.slots);
    }

    #[test]
    fn all_harvesting_terminals_collect_nothing_while_ages_climb() {
        let mut cfg = small_cfg();
        // Batteries start at 0.5 and harvesting is ineffective at these
        // distances, so with the harvest threshold at 0.9 every terminal
        // settles into harvest mode after its first update and stays there.
        cfg.batt_thresh_e = 0.9;
        cfg.batt_thresh_t = 0.95;
        let rec = run_episode(&cfg, "is-uav", "dmla", 7).unwrap();
        assert_eq!(rec.aggregate.collected_bits, 0.0);
        assert_eq!(rec.aggregate.delivered_bits, 0.0);
        let first = rec.slots.first().unwrap().mean_gt_aoi;
        let last = rec.slots.last().unwrap().mean_gt_aoi;
        assert!(last > first, "ages must climb: first {first}, last {last}");
        for w in rec.slots.windows(2) {
            assert!(w[1].mean_gt_aoi >= w[0].mean_gt_aoi, "ages never drop with no service");
        }
    }

    #[test]
    fn satellite_deliveries_never_exceed_terminal_collections() {
        for seed in [1, 2, 3] {
            for (l1, l2) in [("is-uav", "dmla"), ("td-uav", "uafp"), ("dc-uav", "fdpc")] {
                let rec = run_episode(&small_cfg(), l1, l2, seed).unwrap();
                let a = &rec.aggregate;
                assert!(
                    a.delivered_bits <= a.collected_bits + 1e-6,
                    "{l1}/{l2} seed {seed}: delivered {} > collected {}",
                    a.delivered_bits,
                    a.collected_bits
                );
            }
        }
    }

    #[test]
    fn per_slot_objective_recomputes_from_the_row_fields() {
        let cfg = small_cfg();
        let rec = run_episode(&cfg, "is-uav", "dmla", 11).unwrap();
        for s in &rec.slots {
            let again = global_objective(
                s.delivered_bits,
                s.g2a_energy,
                s.a2s_energy,
                s.mean_gt_aoi,
                s.mean_uav_aoi,
                &cfg,
            );
            let tol = 1e-9 * s.objective.abs().max(1.0);
            assert!(
                (s.objective - again).abs() <= tol,
                "slot {}: {} vs {}",
                s.slot,
                s.objective,
                again
            );
        }
    }

    #[test]
    fn ledger_replay_matches_the_reported_age_series_exactly() {
        let cfg = small_cfg();
        for (l1, l2) in [("is-uav", "dmla"), ("td-uav", "uafp")] {
            let rec = run_episode(&cfg, l1, l2, 5).unwrap();
            let (gt, uav) = replay_aoi(&rec.events, cfg.n_gts, cfg.n_uavs, cfg.episode_slots);
            for (i, s) in rec.slots.iter().enumerate() {
                assert_eq!(s.mean_gt_aoi, gt[i], "{l1}/{l2} terminal ages, slot {i}");
                assert_eq!(s.mean_uav_aoi, uav[i], "{l1}/{l2} UAV buffered ages, slot {i}");
            }
        }
    }

    #[test]
    fn drained_uavs_stand_by_without_spending() {
        let mut cfg = small_cfg();
        cfg.uav_batt_cap = 1.0; // below one hover slot
        cfg.uav_batt_min = 0.5;
        let rec = run_episode(&cfg, "is-uav", "dmla", 9).unwrap();
        let a = &rec.aggregate;
        assert_eq!(a.collected_bits, 0.0);
        assert_eq!(a.delivered_bits, 0.0);
        assert_eq!(a.g2a_energy, 0.0, "standby spends nothing");
        assert_eq!(a.violations, [0; 12], "1 J intact ≥ 0.5 J floor at the end");
    }

    #[test]
    fn uav_batteries_never_increase_within_an_episode() {
        let cfg = small_cfg();
        let mut ep = Episode::new(&cfg, 13);
        let mut l1 = l1_policy("is-uav", default_t_prime(&cfg)).unwrap();
        let mut l2 = l2_policy("dmla").unwrap();
        let mut prev: Vec<f64> = ep.world.uavs.iter().map(|u| u.battery).collect();
        while !ep.done() {
            let obs = ep.begin_slot();
            let t = ep.slot();
            let actions: Vec<ActionL1> = obs.iter().map(|o| l1.act(o, t, &cfg)).collect();
            ep.step(&actions, &mut |s| l2.act(s, t, &cfg)).unwrap();
            let now: Vec<f64> = ep.world.uavs.iter().map(|u| u.battery).collect();
            for (b_prev, b_now) in prev.iter().zip(&now) {
                assert!(b_now <= b_prev, "flight battery must be non-increasing");
            }
            prev = now;
        }
    }

    #[test]
    fn sweep_grid_yields_one_row_per_cell_in_grid_order() {
        let cfg = small_cfg();
        let spec = SweepSpec {
            parameter: "uav_batt_cap".into(),
            values: vec![500.0, 1000.0, 2000.0],
            schemes: vec![
                ("is-uav".into(), "dmla".into()),
                ("td-uav".into(), "uafp".into()),
            ],
            seeds: vec![1, 2, 3, 4, 5],
        };
        let rows = run_sweep(&cfg, &spec);
        assert_eq!(rows.len(), 30, "3 values × 2 schemes × 5 seeds");
        // Grid order: value-major, then scheme, then seed.
        assert_eq!(rows[0].value, 500.0);
        assert_eq!(rows[0].l1, "is-uav");
        assert_eq!(rows[0].seed, 1);
        assert_eq!(rows[29].value, 2000.0);
        assert_eq!(rows[29].l1, "td-uav");
        assert_eq!(rows[29].seed, 5);
        assert!(rows.iter().all(|r| r.outcome.is_ok()), "all cells run");
    }

    #[test]
    fn sweep_records_per_point_failures_without_aborting() {
        let cfg = small_cfg();
        let spec = SweepSpec {
            parameter: "uav_batt_cap".into(),
            values: vec![1000.0, -5.0],
            schemes: vec![("is-uav".into(), "dmla".into())],
            seeds: vec![1],
        };
        let rows = run_sweep(&cfg, &spec);
        assert_eq!(rows.len(), 2);
        assert!(rows[0].outcome.is_ok());
        let err = rows[1].outcome.as_ref().unwrap_err();
        assert!(err.contains("uav_batt_cap"), "error names the field: {err}");
    }

    #[test]
    fn override_rejects_unknown_fields() {
        let cfg = small_cfg();
        let err = apply_override(&cfg, "no_such_field", 1.0).unwrap_err();
        assert!(matches!(err, Error::ConfigValidation(_)));
    }

    #[test]
    fn override_preserves_integer_fields() {
        let cfg = small_cfg();
        let out = apply_override(&cfg, "sats_per_leo", 4.0).unwrap();
        assert_eq!(out.sats_per_leo, 4);
        let out = apply_override(&cfg, "uav_batt_cap", 123.5).unwrap();
        assert_eq!(out.uav_batt_cap, 123.5);
    }

    #[test]
    fn manifest_round_trip_reproduces_the_aggregate_csv() {
        use crate::metrics::{emit_metrics, write_aggregate_csv};
        let cfg = small_cfg();
        let recs: Vec<MetricsRecord> = [1u64, 2]
            .iter()
            .map(|&seed| run_episode(&cfg, "is-uav", "dmla", seed).unwrap())
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let out_a = dir.path().join("a");
        let paths = emit_metrics(&recs, &cfg, &out_a).unwrap();
        // Reload the manifest, rebuild the config through the file schema,
        // rerun the recorded runs, and compare the aggregate CSV bytes.
        let manifest: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&paths[2]).unwrap()).unwrap();
        let file: FileScenario = serde_json::from_value(manifest["config"].clone()).unwrap();
        let cfg2 = ScenarioConfig::try_from(file).unwrap();
        let rerun: Vec<MetricsRecord> = manifest["runs"]
            .as_array()
            .unwrap()
            .iter()
            .map(|r| {
                run_episode(
                    &cfg2,
                    r["l1"].as_str().unwrap(),
                    r["l2"].as_str().unwrap(),
                    r["seed"].as_u64().unwrap(),
                )
                .unwrap()
            })
            .collect();
        let again = dir.path().join("again.csv");
        write_aggregate_csv(&rerun, &again).unwrap();
        assert_eq!(
            std::fs::read(&paths[1]).unwrap(),
            std::fs::read(&again).unwrap(),
            "manifest-driven rerun must reproduce the aggregate CSV bit-for-bit"
        );
    }
}
