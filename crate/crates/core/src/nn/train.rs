//! Actor-critic training of the graph agents on the episode simulator.
//!
//! The loop follows the replay/target-blend recipe: run a slot, store
//! (observation, recurrent state, action, reward, next observation, next
//! recurrent state) per agent team, update from a batch once the replay
//! memory exceeds the batch size, and blend the target networks every slot.
//! The policy is deterministic (updates use the zero-noise message
//! relaxation); rollouts add annealed Gaussian exploration noise and sample
//! discrete messages with real Gumbel draws.
//!
//! The uplink (second-layer) variant trains a single agent. Its parameters
//! belong to the model, not to any one satellite, so a satellite succession
//! is automatically a parameter handover: the successor serves with the same
//! trained weights.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::baselines;
use crate::episode::Episode;
use crate::error::{Error, Result};
use crate::geometry::Position3D;
use crate::mdp::{ActionL1, StateL2};
use crate::metrics::MetricsRecord;
use crate::nn::autograd::{NodeId, Tape};
use crate::nn::g3m::{
    action_l1_from_flat, action_l1_from_raw, action_l2_from_raw, bind, encode_l1, encode_l2,
    flat_from_action_l1, gml_apply, g3m_team_forward, l1_mask_domain, mask_noise, AgentGraph,
    Bound, G3mDims, ParamBlock, ParamSet, TeamNoise,
};
use crate::rng::{Purpose, RngStream};
use crate::scenario::ScenarioConfig;

/// Training-loop knobs. Network sizes and the target blend live in the
/// scenario config; these are optimizer-side settings.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    pub episodes: usize,
    pub batch: usize,
    pub replay_capacity: usize,
    pub gamma: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// Exploration noise std at the first and last episode (linear anneal).
    pub explore_start: f64,
    pub explore_end: f64,
    /// Gradient-norm ceiling applied before the optimizer step.
    pub grad_clip: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            episodes: 200,
            batch: 32,
            replay_capacity: 20_000,
            gamma: 0.9,
            actor_lr: 1e-3,
            critic_lr: 2e-3,
            explore_start: 0.5,
            explore_end: 0.05,
            grad_clip: 5.0,
        }
    }
}

/// One row of the training trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub episode: usize,
    pub mean_reward: f64,
    pub loss: f64,
}

/// Write the trace as CSV (episode, mean reward, critic loss).
pub fn write_trace_csv(rows: &[TraceRow], path: &Path) -> Result<()> {
    let mut out = String::from("episode,mean_reward,loss\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.episode, r.mean_reward, r.loss));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Everything a training run returns.
#[derive(Debug, Clone)]
pub struct TrainOut {
    pub actor: ParamSet,
    pub actor_target: ParamSet,
    pub critic: ParamSet,
    pub critic_target: ParamSet,
    pub trace: Vec<TraceRow>,
}

// ---------------------------------------------------------------------------
// Replay memory
// ---------------------------------------------------------------------------

/// Slot state carried until the next slot's reward closes the transition:
/// (graphs, recurrent states, flat actions, reward).
type PendingL1 = (Vec<AgentGraph>, Vec<Vec<Vec<f64>>>, Vec<Vec<f64>>, f64);
type PendingL2 = (AgentGraph, Vec<Vec<f64>>, Vec<f64>, f64);

/// One stored team transition.
#[derive(Debug, Clone)]
struct Transition {
    graphs: Vec<AgentGraph>,
    zs: Vec<Vec<Vec<f64>>>,
    /// Executed flat action per agent.
    actions: Vec<Vec<f64>>,
    reward: f64,
    next_graphs: Vec<AgentGraph>,
    next_zs: Vec<Vec<Vec<f64>>>,
    terminal: bool,
}

#[derive(Debug, Default)]
struct Replay {
    rows: Vec<Transition>,
    capacity: usize,
    write: usize,
}

impl Replay {
    fn new(capacity: usize) -> Self {
        Self { rows: Vec::new(), capacity, write: 0 }
    }

    fn push(&mut self, t: Transition) {
        if self.rows.len() < self.capacity {
            self.rows.push(t);
        } else {
            self.rows[self.write] = t;
            self.write = (self.write + 1) % self.capacity;
        }
    }

    fn len(&self) -> usize {
        self.rows.len()
    }
}

// ---------------------------------------------------------------------------
// Critic
// ---------------------------------------------------------------------------

const CRITIC_HIDDEN: usize = 64;

/// Width of one agent's state summary: own features plus the per-type means.
fn summary_width(dims: &G3mDims) -> usize {
    dims.own_dim + dims.src_dims.iter().map(|(_, w)| w).sum::<usize>()
}

/// Own features concatenated with the mean source vector of each type
/// (zeros for empty types); a fixed-width stand-in for the variable graph.
fn summarize(graph: &AgentGraph, dims: &G3mDims) -> Vec<f64> {
    let mut out = graph.own.clone();
    for ((_, w), list) in dims.src_dims.iter().zip(&graph.sources) {
        let mut mean = vec![0.0; *w];
        if !list.is_empty() {
            for v in list {
                for (m, x) in mean.iter_mut().zip(v) {
                    *m += x;
                }
            }
            for m in &mut mean {
                *m /= list.len() as f64;
            }
        }
        out.extend(mean);
    }
    out
}

fn critic_input_width(dims: &G3mDims, n_agents: usize) -> usize {
    n_agents * (summary_width(dims) + dims.action_dim)
}

/// Fresh critic parameters: one hidden layer over [summaries ∥ actions].
fn critic_init(dims: &G3mDims, n_agents: usize, stream: &RngStream) -> ParamSet {
    let input = critic_input_width(dims, n_agents);
    let specs = [
        ("critic.w1", CRITIC_HIDDEN, input),
        ("critic.b1", CRITIC_HIDDEN, 1),
        ("critic.w2", 1, CRITIC_HIDDEN),
        ("critic.b2", 1, 1),
    ];
    let blocks = specs
        .iter()
        .enumerate()
        .map(|(i, (name, rows, cols))| {
            let data = if name.ends_with(".b1") || name.ends_with(".b2") {
                vec![0.0; rows * cols]
            } else {
                let mut rng = stream.rng(Purpose::ParamInit, 10_000 + i as u64, 0);
                let bound = 1.0 / (*cols as f64).sqrt();
                (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect()
            };
            ParamBlock { name: (*name).into(), rows: *rows, cols: *cols, data }
        })
        .collect();
    ParamSet::from_blocks(blocks)
}

fn critic_forward(t: &mut Tape, bp: &Bound, x: NodeId) -> NodeId {
    let (r1, c1) = bp.shape("critic.w1");
    let h = t.matvec(bp.id("critic.w1"), x, r1, c1);
    let h = t.add(h, bp.id("critic.b1"));
    let h = t.tanh(h);
    let (r2, c2) = bp.shape("critic.w2");
    let q = t.matvec(bp.id("critic.w2"), h, r2, c2);
    t.add(q, bp.id("critic.b2"))
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
    lr: f64,
}

impl Adam {
    fn new(set: &ParamSet, lr: f64) -> Self {
        let shape: Vec<Vec<f64>> = set.blocks.iter().map(|b| vec![0.0; b.data.len()]).collect();
        Self { m: shape.clone(), v: shape, step: 0, lr }
    }

    /// Clip the global gradient norm, then apply one Adam step.
    fn apply(&mut self, set: &mut ParamSet, grads: &[Vec<f64>], clip: f64) {
        let norm: f64 = grads
            .iter()
            .flat_map(|g| g.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt();
        let scale = if norm > clip { clip / norm } else { 1.0 };
        self.step += 1;
        let (b1, b2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
        let bc1 = 1.0 - b1.powi(self.step as i32);
        let bc2 = 1.0 - b2.powi(self.step as i32);
        for (bi, block) in set.blocks.iter_mut().enumerate() {
            for (ci, p) in block.data.iter_mut().enumerate() {
                let g = grads[bi][ci] * scale;
                self.m[bi][ci] = b1 * self.m[bi][ci] + (1.0 - b1) * g;
                self.v[bi][ci] = b2 * self.v[bi][ci] + (1.0 - b2) * g * g;
                let mh = self.m[bi][ci] / bc1;
                let vh = self.v[bi][ci] / bc2;
                *p -= self.lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Shared update step
// ---------------------------------------------------------------------------

struct Learner {
    dims: G3mDims,
    adjacency: Vec<Vec<usize>>,
    actor: ParamSet,
    actor_target: ParamSet,
    critic: ParamSet,
    critic_target: ParamSet,
    actor_opt: Adam,
    critic_opt: Adam,
    replay: Replay,
    updates: u64,
}

impl Learner {
    fn new(dims: G3mDims, n_agents: usize, stream: &RngStream, hp: &Hyperparams) -> Self {
        // Exchange messages go to every teammate.
        let adjacency: Vec<Vec<usize>> = (0..n_agents)
            .map(|i| (0..n_agents).filter(|&j| j != i).collect())
            .collect();
        let actor = ParamSet::init(&dims, stream);
        let critic = critic_init(&dims, n_agents, stream);
        Self {
            adjacency,
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor_opt: Adam::new(&actor, hp.actor_lr),
            critic_opt: Adam::new(&critic, hp.critic_lr),
            replay: Replay::new(hp.replay_capacity),
            updates: 0,
            actor,
            critic,
            dims,
        }
    }

    /// Deterministic actor pass (zero message noise, soft mode) appended to
    /// an existing tape; returns the per-agent soft flat-action nodes.
    fn policy_actions(
        &self,
        t: &mut Tape,
        bp: &Bound,
        graphs: &[AgentGraph],
        zs: &[Vec<Vec<f64>>],
        tau: f64,
        v_scale: f64,
    ) -> Result<Vec<NodeId>> {
        let zero = TeamNoise {
            per_agent: vec![vec![vec![0.0; self.dims.alphabet]; self.dims.gel_layers]; graphs.len()],
        };
        let outs = g3m_team_forward(t, bp, &self.dims, graphs, zs, &self.adjacency, tau, &zero, false)?;
        Ok(outs
            .into_iter()
            .map(|o| soft_flat(t, o.raw, &self.dims, v_scale))
            .collect())
    }

    /// One batched critic + actor update; returns the critic loss.
    fn update(&mut self, hp: &Hyperparams, tau: f64, v_scale: f64, rng: &mut ChaCha12Rng, episode: usize) -> Result<f64> {
        let n = self.replay.len();
        let idx: Vec<usize> = (0..hp.batch).map(|_| rng.gen_range(0..n)).collect();

        // Targets, by value only.
        let mut targets = Vec::with_capacity(idx.len());
        for &i in &idx {
            let row = &self.replay.rows[i];
            let y = if row.terminal {
                row.reward
            } else {
                let mut tt = Tape::new();
                let abp = bind(&mut tt, &self.actor_target);
                let acts =
                    self.policy_actions(&mut tt, &abp, &row.next_graphs, &row.next_zs, tau, v_scale)?;
                let cbp = bind(&mut tt, &self.critic_target);
                let x = critic_input(&mut tt, &self.dims, &row.next_graphs, &acts, None);
                let q = critic_forward(&mut tt, &cbp, x);
                row.reward + hp.gamma * tt.value(q)[0]
            };
            if !y.is_finite() {
                return Err(Error::TrainingDiverged {
                    episode,
                    detail: format!("non-finite bootstrap target {y}"),
                });
            }
            targets.push(y);
        }

        // Critic regression toward the bootstrapped targets.
        let mut tc = Tape::new();
        let cbp = bind(&mut tc, &self.critic);
        let mut diffs = Vec::with_capacity(idx.len());
        for (&i, &y) in idx.iter().zip(&targets) {
            let row = &self.replay.rows[i];
            let x = critic_input_const(&mut tc, &self.dims, &row.graphs, &row.actions);
            let q = critic_forward(&mut tc, &cbp, x);
            let yn = tc.constant(vec![y]);
            diffs.push(tc.sub(q, yn));
        }
        let stack = tc.concat(&diffs);
        let loss = tc.mean_square(stack);
        let loss_value = tc.value(loss)[0];
        if !loss_value.is_finite() {
            return Err(Error::TrainingDiverged {
                episode,
                detail: format!("non-finite critic loss {loss_value}"),
            });
        }
        tc.backward(loss).map_err(|e| Error::TrainingDiverged { episode, detail: e.to_string() })?;
        let cgrads = cbp.grads(&tc);
        self.critic_opt.apply(&mut self.critic, &cgrads, hp.grad_clip);

        // Actor ascends the critic's value of its own actions.
        let mut ta = Tape::new();
        let abp = bind(&mut ta, &self.actor);
        let cbp = bind(&mut ta, &self.critic);
        let mut qs = Vec::with_capacity(idx.len());
        for &i in &idx {
            let row = &self.replay.rows[i];
            let acts = self.policy_actions(&mut ta, &abp, &row.graphs, &row.zs, tau, v_scale)?;
            let x = critic_input(&mut ta, &self.dims, &row.graphs, &acts, None);
            qs.push(critic_forward(&mut ta, &cbp, x));
        }
        let qcat = ta.concat(&qs);
        let qsum = ta.sum_components(qcat);
        let actor_loss = ta.scale(qsum, -1.0 / idx.len() as f64);
        if !ta.value(actor_loss)[0].is_finite() {
            return Err(Error::TrainingDiverged {
                episode,
                detail: "non-finite actor objective".into(),
            });
        }
        ta.backward(actor_loss)
            .map_err(|e| Error::TrainingDiverged { episode, detail: e.to_string() })?;
        let agrads = abp.grads(&ta);
        self.actor_opt.apply(&mut self.actor, &agrads, hp.grad_clip);

        self.updates += 1;
        Ok(loss_value)
    }
}

/// Tape mapping from a raw head output to the flat action representation the
/// critic consumes: tanh-bounded velocity, raw charge switch, tanh-soft
/// collect switch.
fn soft_flat(t: &mut Tape, raw: NodeId, dims: &G3mDims, v_scale: f64) -> NodeId {
    if v_scale == 0.0 {
        // Uplink agent: the raw vector is its own representation.
        return raw;
    }
    debug_assert_eq!(dims.action_dim, 5);
    let th = t.tanh(raw);
    let v0 = t.index(th, 0);
    let v1 = t.index(th, 1);
    let v2 = t.index(th, 2);
    let w = t.index(raw, 3);
    let c = t.index(th, 4);
    let vs = t.concat(&[v0, v1, v2]);
    let vs = t.scale(vs, v_scale);
    t.concat(&[vs, w, c])
}

/// Critic input from graphs plus per-agent action nodes.
fn critic_input(
    t: &mut Tape,
    dims: &G3mDims,
    graphs: &[AgentGraph],
    actions: &[NodeId],
    _marker: Option<()>,
) -> NodeId {
    let mut parts = Vec::new();
    for g in graphs {
        parts.push(t.constant(summarize(g, dims)));
    }
    parts.extend_from_slice(actions);
    t.concat(&parts)
}

/// Critic input where the actions are stored values.
fn critic_input_const(
    t: &mut Tape,
    dims: &G3mDims,
    graphs: &[AgentGraph],
    actions: &[Vec<f64>],
) -> NodeId {
    let nodes: Vec<NodeId> = actions.iter().map(|a| t.constant(a.clone())).collect();
    critic_input(t, dims, graphs, &nodes, None)
}

fn anneal(start: f64, end: f64, episode: usize, episodes: usize) -> f64 {
    if episodes <= 1 {
        return end;
    }
    let f = episode as f64 / (episodes - 1) as f64;
    start + (end - start) * f
}

/// Geometric temperature anneal between the configured endpoints.
fn tau_at(cfg: &ScenarioConfig, episode: usize, episodes: usize) -> f64 {
    if episodes <= 1 {
        return cfg.nn.tau_end;
    }
    let f = episode as f64 / (episodes - 1) as f64;
    cfg.nn.tau_start * (cfg.nn.tau_end / cfg.nn.tau_start).powf(f)
}

fn explore_draw(rng: &mut ChaCha12Rng, n: usize, sigma: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let g: f64 = rng.sample(rand_distr::StandardNormal);
            sigma * g
        })
        .collect()
}

// ---------------------------------------------------------------------------
// First-layer training
// ---------------------------------------------------------------------------

/// Train the collection team with the given uplink baseline closing the
/// loop. Episode seeds are `seed`, `seed+1`, ... so the run is reproducible
/// end to end.
pub fn train_l1(
    cfg: &ScenarioConfig,
    hp: &Hyperparams,
    seed: u64,
    l2_name: &str,
) -> Result<TrainOut> {
    let dims = G3mDims::l1(cfg)?;
    let stream = RngStream::new(seed);
    let mut learner = Learner::new(dims, cfg.n_uavs, &stream, hp);
    let v_scale = cfg.v_max / 3f64.sqrt();
    let mut trace = Vec::with_capacity(hp.episodes);

    for ep in 0..hp.episodes {
        let tau = tau_at(cfg, ep, hp.episodes);
        let sigma = anneal(hp.explore_start, hp.explore_end, ep, hp.episodes);
        let ep_seed = seed.wrapping_add(ep as u64);
        let ep_stream = RngStream::new(ep_seed);
        let mut episode = Episode::new(cfg, ep_seed);
        let mut l2 = baselines::l2_policy(l2_name)?;
        let mut zs: Vec<Vec<Vec<f64>>> = vec![learner.dims.zero_state(); cfg.n_uavs];
        let mut pending: Option<PendingL1> = None;
        let mut reward_sum = 0.0;
        let mut slots = 0u64;
        let mut last_loss = 0.0;

        while !episode.done() {
            let t = episode.slot();
            let obs = episode.begin_slot();
            let graphs: Vec<AgentGraph> = obs.iter().map(|o| encode_l1(o, cfg)).collect();

            // Complete the previous slot's transition now that we can see
            // where it led.
            if let Some((g, z, a, r)) = pending.take() {
                learner.replay.push(Transition {
                    graphs: g,
                    zs: z,
                    actions: a,
                    reward: r,
                    next_graphs: graphs.clone(),
                    next_zs: zs.clone(),
                    terminal: false,
                });
            }

            let noise = TeamNoise::draw(&ep_stream, t, cfg.n_uavs, &learner.dims);
            let mut tape = Tape::new();
            let bp = bind(&mut tape, &learner.actor);
            let outs = g3m_team_forward(
                &mut tape,
                &bp,
                &learner.dims,
                &graphs,
                &zs,
                &learner.adjacency,
                tau,
                &noise,
                true,
            )?;

            let mut actions = Vec::with_capacity(cfg.n_uavs);
            let mut flats = Vec::with_capacity(cfg.n_uavs);
            let mut z_next = Vec::with_capacity(cfg.n_uavs);
            for (m, out) in outs.iter().enumerate() {
                let mut raw = tape.value(out.raw).to_vec();
                let mut erng = ep_stream.rng(Purpose::Exploration, m as u64, t);
                for (r, e) in raw.iter_mut().zip(explore_draw(&mut erng, 5, sigma)) {
                    *r += e;
                }
                let mapped = action_l1_from_raw(&raw, cfg);
                let flat = flat_from_action_l1(&mapped);
                let neighbors: Vec<Position3D> =
                    obs[m].neighbors.iter().map(|u| u.pos).collect();
                let dom = l1_mask_domain(obs[m].own.pos, &neighbors, cfg);
                let eps = mask_noise(&ep_stream, m as u64, t, 5);
                let masked = gml_apply(
                    &mut tape,
                    &bp,
                    out.h,
                    &flat,
                    &dom,
                    &eps,
                    cfg.gml_conventional_reparam,
                )?;
                actions.push(action_l1_from_flat(&masked.value));
                flats.push(masked.value);
                z_next.push(out.z_next.clone());
            }

            let outcome = episode.step(&actions, &mut |s: &StateL2| l2.act(s, t, cfg))?;
            let reward = outcome.rewards_l1.iter().map(|r| r.total).sum::<f64>()
                / cfg.n_uavs.max(1) as f64;
            reward_sum += reward;
            slots += 1;
            pending = Some((graphs, zs.clone(), flats, reward));
            zs = z_next;

            if learner.replay.len() > hp.batch {
                let mut urng = stream.rng(Purpose::Exploration, u64::MAX, learner.updates);
                last_loss = learner.update(hp, tau, v_scale, &mut urng, ep)?;
            }
            learner.actor_target.blend_from(&learner.actor, cfg.nn.target_blend);
            learner.critic_target.blend_from(&learner.critic, cfg.nn.target_blend);
        }

        // Close the final transition against its own observation; the
        // terminal flag stops bootstrapping through it.
        if let Some((g, z, a, r)) = pending.take() {
            learner.replay.push(Transition {
                next_graphs: g.clone(),
                next_zs: z.clone(),
                graphs: g,
                zs: z,
                actions: a,
                reward: r,
                terminal: true,
            });
        }

        trace.push(TraceRow {
            episode: ep,
            mean_reward: if slots > 0 { reward_sum / slots as f64 } else { 0.0 },
            loss: last_loss,
        });
    }

    Ok(TrainOut {
        actor: learner.actor,
        actor_target: learner.actor_target,
        critic: learner.critic,
        critic_target: learner.critic_target,
        trace,
    })
}

/// Mean per-slot reward of a random first-layer policy (raw actions drawn
/// from a unit normal, masked and executed exactly like the learned one),
/// one value per episode. This is the baseline the toy-training acceptance
/// criterion compares against.
pub fn random_l1_baseline(
    cfg: &ScenarioConfig,
    episodes: usize,
    seed: u64,
    l2_name: &str,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(episodes);
    for ep in 0..episodes {
        let ep_seed = seed.wrapping_add(ep as u64);
        let ep_stream = RngStream::new(ep_seed);
        let mut episode = Episode::new(cfg, ep_seed);
        let mut l2 = baselines::l2_policy(l2_name)?;
        let mut reward_sum = 0.0;
        let mut slots = 0u64;
        while !episode.done() {
            let t = episode.slot();
            let obs = episode.begin_slot();
            let mut actions = Vec::with_capacity(cfg.n_uavs);
            for (m, o) in obs.iter().enumerate() {
                let mut erng = ep_stream.rng(Purpose::Exploration, m as u64, t);
                let raw = explore_draw(&mut erng, 5, 1.0);
                let mapped = action_l1_from_raw(&raw, cfg);
                let flat = flat_from_action_l1(&mapped);
                let neighbors: Vec<Position3D> = o.neighbors.iter().map(|u| u.pos).collect();
                let dom = l1_mask_domain(o.own.pos, &neighbors, cfg);
                let value = if (dom.is_feasible)(&flat) {
                    flat
                } else {
                    (dom.project)(&flat).map_err(Error::ProjectionInfeasible)?
                };
                actions.push(action_l1_from_flat(&value));
            }
            let outcome = episode.step(&actions, &mut |s: &StateL2| l2.act(s, t, cfg))?;
            reward_sum += outcome.rewards_l1.iter().map(|r| r.total).sum::<f64>()
                / cfg.n_uavs.max(1) as f64;
            slots += 1;
        }
        out.push(if slots > 0 { reward_sum / slots as f64 } else { 0.0 });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Checkpoint evaluation
// ---------------------------------------------------------------------------

/// Run one episode with a trained first-layer checkpoint driving the UAVs
/// greedily (hard messages, final temperature, no exploration noise) and a
/// named second-layer baseline. `l1_label` is recorded as the scheme name.
pub fn eval_l1(
    cfg: &ScenarioConfig,
    actor: &ParamSet,
    seed: u64,
    l2_name: &str,
    l1_label: &str,
) -> Result<MetricsRecord> {
    let dims = G3mDims::l1(cfg)?;
    actor.ensure_matches(&dims)?;
    let tau = cfg.nn.tau_end;
    let adjacency: Vec<Vec<usize>> = (0..cfg.n_uavs)
        .map(|i| (0..cfg.n_uavs).filter(|&j| j != i).collect())
        .collect();
    let ep_stream = RngStream::new(seed);
    let mut episode = Episode::new(cfg, seed);
    let mut l2 = baselines::l2_policy(l2_name)?;
    let mut zs: Vec<Vec<Vec<f64>>> = vec![dims.zero_state(); cfg.n_uavs];

    while !episode.done() {
        let t = episode.slot();
        let obs = episode.begin_slot();
        let graphs: Vec<AgentGraph> = obs.iter().map(|o| encode_l1(o, cfg)).collect();
        let noise = TeamNoise {
            per_agent: vec![vec![vec![0.0; dims.alphabet]; dims.gel_layers]; cfg.n_uavs],
        };
        let mut tape = Tape::new();
        let bp = bind(&mut tape, actor);
        let outs = g3m_team_forward(&mut tape, &bp, &dims, &graphs, &zs, &adjacency, tau, &noise, true)?;

        let mut actions = Vec::with_capacity(cfg.n_uavs);
        let mut z_next = Vec::with_capacity(cfg.n_uavs);
        for (m, out) in outs.iter().enumerate() {
            let raw = tape.value(out.raw).to_vec();
            let mapped = action_l1_from_raw(&raw, cfg);
            let flat = flat_from_action_l1(&mapped);
            let neighbors: Vec<Position3D> = obs[m].neighbors.iter().map(|u| u.pos).collect();
            let dom = l1_mask_domain(obs[m].own.pos, &neighbors, cfg);
            let eps = mask_noise(&ep_stream, m as u64, t, 5);
            let masked = gml_apply(
                &mut tape,
                &bp,
                out.h,
                &flat,
                &dom,
                &eps,
                cfg.gml_conventional_reparam,
            )?;
            actions.push(action_l1_from_flat(&masked.value));
            z_next.push(out.z_next.clone());
        }
        episode.step(&actions, &mut |s: &StateL2| l2.act(s, t, cfg))?;
        zs = z_next;
    }
    Ok(episode.finish(l1_label, l2_name, seed))
}

/// Run one episode with a named first-layer baseline and a trained uplink
/// checkpoint deciding satellite access greedily. `l2_label` is recorded as
/// the scheme name.
pub fn eval_l2(
    cfg: &ScenarioConfig,
    actor: &ParamSet,
    seed: u64,
    l1_name: &str,
    l2_label: &str,
) -> Result<MetricsRecord> {
    let dims = G3mDims::l2(cfg)?;
    actor.ensure_matches(&dims)?;
    let tau = cfg.nn.tau_end;
    let m = cfg.n_uavs;
    let k = cfg.n_leos;
    let mut episode = Episode::new(cfg, seed);
    let mut l1 = baselines::l1_policy(l1_name, baselines::default_t_prime(cfg))?;
    let mut z = dims.zero_state();

    while !episode.done() {
        let t = episode.slot();
        let obs = episode.begin_slot();
        let actions: Vec<ActionL1> = obs.iter().map(|o| l1.act(o, t, cfg)).collect();
        let mut z_seen: Option<Vec<Vec<f64>>> = None;
        let z_ref = &z;
        let seen_ref = &mut z_seen;
        let dims_ref = &dims;
        episode.step(&actions, &mut |s: &StateL2| {
            let graph = encode_l2(s, cfg);
            let noise = TeamNoise {
                per_agent: vec![vec![vec![0.0; dims_ref.alphabet]; dims_ref.gel_layers]],
            };
            let mut tape = Tape::new();
            let bp = bind(&mut tape, actor);
            let outs = g3m_team_forward(
                &mut tape,
                &bp,
                dims_ref,
                std::slice::from_ref(&graph),
                std::slice::from_ref(z_ref),
                &[vec![]],
                tau,
                &noise,
                true,
            )
            .expect("uplink forward on a validated graph");
            let raw = tape.value(outs[0].raw).to_vec();
            *seen_ref = Some(outs[0].z_next.clone());
            action_l2_from_raw(&raw, m, k, cfg)
        })?;
        z = z_seen.expect("the uplink closure always runs");
    }
    Ok(episode.finish(l1_name, l2_label, seed))
}

// ---------------------------------------------------------------------------
// Second-layer training
// ---------------------------------------------------------------------------

/// Train the single uplink coordinator with a first-layer baseline driving
/// the collection side. Satellite successions keep the same parameters (the
/// handover is the model itself).
pub fn train_l2(
    cfg: &ScenarioConfig,
    hp: &Hyperparams,
    seed: u64,
    l1_name: &str,
) -> Result<TrainOut> {
    let dims = G3mDims::l2(cfg)?;
    let stream = RngStream::new(seed);
    let mut learner = Learner::new(dims, 1, &stream, hp);
    let mut trace = Vec::with_capacity(hp.episodes);
    let m = cfg.n_uavs;
    let k = cfg.n_leos;

    for ep in 0..hp.episodes {
        let tau = tau_at(cfg, ep, hp.episodes);
        let sigma = anneal(hp.explore_start, hp.explore_end, ep, hp.episodes);
        let ep_seed = seed.wrapping_add(ep as u64);
        let ep_stream = RngStream::new(ep_seed);
        let mut episode = Episode::new(cfg, ep_seed);
        let mut l1 = baselines::l1_policy(l1_name, baselines::default_t_prime(cfg))?;
        let mut z = learner.dims.zero_state();
        let mut pending: Option<PendingL2> = None;
        let mut reward_sum = 0.0;
        let mut slots = 0u64;
        let mut last_loss = 0.0;

        while !episode.done() {
            let t = episode.slot();
            let obs = episode.begin_slot();
            let actions: Vec<ActionL1> = obs.iter().map(|o| l1.act(o, t, cfg)).collect();

            // The uplink action is decided inside the episode's closure; the
            // graph and raw vector are captured for the replay row.
            let mut seen: Option<(AgentGraph, Vec<f64>, Vec<Vec<f64>>)> = None;
            let learner_ref = &learner;
            let z_ref = &z;
            let seen_ref = &mut seen;
            let outcome = episode.step(&actions, &mut |s: &StateL2| {
                let graph = encode_l2(s, cfg);
                let noise = TeamNoise::draw(&ep_stream, t, 1, &learner_ref.dims);
                let mut tape = Tape::new();
                let bp = bind(&mut tape, &learner_ref.actor);
                let outs = g3m_team_forward(
                    &mut tape,
                    &bp,
                    &learner_ref.dims,
                    std::slice::from_ref(&graph),
                    std::slice::from_ref(z_ref),
                    &[vec![]],
                    tau,
                    &noise,
                    true,
                )
                .expect("uplink forward on a validated graph");
                let mut raw = tape.value(outs[0].raw).to_vec();
                let mut erng = ep_stream.rng(Purpose::Exploration, 0, t);
                let noise = explore_draw(&mut erng, raw.len(), sigma);
                for (r, e) in raw.iter_mut().zip(noise) {
                    *r += e;
                }
                let action = action_l2_from_raw(&raw, m, k, cfg);
                *seen_ref = Some((graph, raw, outs[0].z_next.clone()));
                action
            })?;

            let (graph, raw, z_next) = seen.expect("the uplink closure always runs");
            if let Some((g, zp, a, r)) = pending.take() {
                learner.replay.push(Transition {
                    graphs: vec![g],
                    zs: vec![zp],
                    actions: vec![a],
                    reward: r,
                    next_graphs: vec![graph.clone()],
                    next_zs: vec![z.clone()],
                    terminal: false,
                });
            }
            reward_sum += outcome.reward_l2;
            slots += 1;
            pending = Some((graph, z.clone(), raw, outcome.reward_l2));
            z = z_next;

            if learner.replay.len() > hp.batch {
                let mut urng = stream.rng(Purpose::Exploration, u64::MAX, learner.updates);
                last_loss = learner.update(hp, tau, 0.0, &mut urng, ep)?;
            }
            learner.actor_target.blend_from(&learner.actor, cfg.nn.target_blend);
            learner.critic_target.blend_from(&learner.critic, cfg.nn.target_blend);
        }

        if let Some((g, zp, a, r)) = pending.take() {
            learner.replay.push(Transition {
                graphs: vec![g.clone()],
                zs: vec![zp.clone()],
                actions: vec![a],
                reward: r,
                next_graphs: vec![g],
                next_zs: vec![zp],
                terminal: true,
            });
        }

        trace.push(TraceRow {
            episode: ep,
            mean_reward: if slots > 0 { reward_sum / slots as f64 } else { 0.0 },
            loss: last_loss,
        });
    }

    Ok(TrainOut {
        actor: learner.actor,
        actor_target: learner.actor_target,
        critic: learner.critic,
        critic_target: learner.critic_target,
        trace,
    })
}
