//! The layered graph agent: attention over typed device neighborhoods
//! (sensing), a discrete Gumbel-Softmax message exchange between teammates
//! with a recurrent update (exchange), an action head, and a feasibility mask
//! that passes feasible actions through bit-exactly and smoothly re-draws
//! infeasible ones before projecting them onto the constraint set.
//!
//! Parameters live in named, shaped blocks so checkpoints carry their own
//! shape manifest and the training loop can treat every block uniformly.

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feasible::project_l1;
use crate::geometry::Position3D;
use crate::mdp::{ActionL1, ActionL2, AccessMode, ObservationL1, StateL2};
use crate::nn::autograd::{NodeId, Tape};
use crate::rng::{Purpose, RngStream};
use crate::scenario::ScenarioConfig;

/// Negative slope of the attention nonlinearity.
pub const ATTN_LEAK: f64 = 0.2;
/// Ages are squashed against this scale before entering feature vectors.
pub const AOI_FEATURE_SCALE: f64 = 50.0;
/// Standard deviation of the mask layer's smoothing noise.
pub const MASK_NOISE_STD: f64 = 0.05;

/// Raw feature width of a terminal vertex.
pub const GT_FEAT: usize = 7;
/// Raw feature width of a relay vertex (own or neighbor).
pub const UAV_FEAT: usize = 5;
/// Raw feature width of the uplink coordinator's own summary vertex.
pub const L2_OWN_FEAT: usize = 5;
/// Raw feature width of a relay vertex in the uplink graph.
pub const L2_UAV_FEAT: usize = 5;
/// Raw feature width of an orbit vertex in the uplink graph.
pub const L2_SAT_FEAT: usize = 4;

fn squash(x: f64) -> f64 {
    x / (1.0 + x.abs())
}

/// Map a linear link gain onto [0,1] logarithmically; absent links map to 0.
fn gain_feature(g: Option<f64>) -> f64 {
    match g {
        Some(v) if v > 0.0 => ((v.log10() + 25.0) / 20.0).clamp(0.0, 1.0),
        _ => 0.0,
    }
}

// ---------------------------------------------------------------------------
// Observation graphs
// ---------------------------------------------------------------------------

/// One agent's local heterogeneous graph: its own raw features plus one list
/// of raw source-vertex features per source type.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentGraph {
    pub own: Vec<f64>,
    pub sources: Vec<Vec<Vec<f64>>>,
}

fn uav_features(pos: Position3D, battery: f64, cfg: &ScenarioConfig) -> Vec<f64> {
    let span = (cfg.alt_max - cfg.alt_min).max(1e-9);
    vec![
        pos.x / cfg.area_side,
        pos.y / cfg.area_side,
        (pos.z - cfg.alt_min) / span,
        battery / cfg.uav_batt_cap,
        1.0,
    ]
}

/// Encode a collection agent's observation: terminal sources first, relay
/// (teammate) sources second.
pub fn encode_l1(obs: &ObservationL1, cfg: &ScenarioConfig) -> AgentGraph {
    let gts = obs
        .gts
        .iter()
        .map(|g| {
            vec![
                g.pos.x / cfg.area_side,
                g.pos.y / cfg.area_side,
                g.battery / cfg.gt_batt_cap,
                if g.harvesting { 1.0 } else { 0.0 },
                squash(g.aoi / AOI_FEATURE_SCALE),
                squash(g.priority),
                1.0,
            ]
        })
        .collect();
    let uavs = obs
        .neighbors
        .iter()
        .map(|u| uav_features(u.pos, u.battery, cfg))
        .collect();
    AgentGraph {
        own: uav_features(obs.own.pos, obs.own.battery, cfg),
        sources: vec![gts, uavs],
    }
}

/// Encode the uplink coordinator's state: relay sources first, orbit sources
/// second (one vertex per orbit, absent satellites flagged invisible).
pub fn encode_l2(state: &StateL2, cfg: &ScenarioConfig) -> AgentGraph {
    let k_orbits = state.sat_positions.len().max(1);
    let board = cfg.uav_harvest_cap.max(1e-9);
    let packet = cfg.packet_bits().max(1.0);
    let uavs: Vec<Vec<f64>> = state
        .uavs
        .iter()
        .map(|u| {
            let best = u.gains.iter().flatten().cloned().fold(None::<f64>, |acc, g| {
                Some(acc.map_or(g, |a| a.max(g)))
            });
            vec![
                squash(u.aoi / AOI_FEATURE_SCALE),
                squash(u.pending_bits / packet),
                u.harvest_board / board,
                gain_feature(best),
                1.0,
            ]
        })
        .collect();
    let sats: Vec<Vec<f64>> = (0..state.sat_positions.len())
        .map(|k| {
            let visible = state.sat_positions[k].is_some();
            let mean_gain = if state.uavs.is_empty() {
                0.0
            } else {
                state.uavs.iter().map(|u| gain_feature(u.gains[k])).sum::<f64>()
                    / state.uavs.len() as f64
            };
            vec![k as f64 / k_orbits as f64, if visible { 1.0 } else { 0.0 }, mean_gain, 1.0]
        })
        .collect();
    let n = state.uavs.len().max(1) as f64;
    let mean_aoi = state.uavs.iter().map(|u| u.aoi).sum::<f64>() / n;
    let mean_pending = state.uavs.iter().map(|u| u.pending_bits).sum::<f64>() / n;
    let mean_board = state.uavs.iter().map(|u| u.harvest_board).sum::<f64>() / n;
    let visible = state.sat_positions.iter().flatten().count() as f64 / k_orbits as f64;
    AgentGraph {
        own: vec![
            squash(mean_aoi / AOI_FEATURE_SCALE),
            squash(mean_pending / packet),
            mean_board / board,
            visible,
            1.0,
        ],
        sources: vec![uavs, sats],
    }
}

// ---------------------------------------------------------------------------
// Dimensions and parameter blocks
// ---------------------------------------------------------------------------

/// Static shape description of one agent model.
#[derive(Debug, Clone, PartialEq)]
pub struct G3mDims {
    /// Hidden feature width (must divide evenly into heads).
    pub hidden: usize,
    pub heads: usize,
    pub head_dim: usize,
    /// Discrete message alphabet size.
    pub alphabet: usize,
    /// Raw width of the agent's own feature vector.
    pub own_dim: usize,
    /// Source types in graph order: (tag, raw feature width).
    pub src_dims: Vec<(&'static str, usize)>,
    pub action_dim: usize,
    pub gsl_layers: usize,
    pub gel_layers: usize,
    pub share_agent_transform: bool,
}

impl G3mDims {
    fn build(
        cfg: &ScenarioConfig,
        own_dim: usize,
        src_dims: Vec<(&'static str, usize)>,
        action_dim: usize,
    ) -> Result<Self> {
        let hidden = cfg.nn.hidden_width;
        let heads = cfg.nn.attention_heads;
        if !hidden.is_multiple_of(heads) {
            return Err(Error::Nn(format!(
                "hidden width {hidden} is not divisible by {heads} attention heads"
            )));
        }
        Ok(Self {
            hidden,
            heads,
            head_dim: hidden / heads,
            alphabet: cfg.nn.msg_alphabet,
            own_dim,
            src_dims,
            action_dim,
            gsl_layers: cfg.gsl_layers,
            gel_layers: cfg.gel_layers,
            share_agent_transform: cfg.nn.share_agent_transform,
        })
    }

    /// Shapes of the collection agent (terminal + teammate sources,
    /// 5-component raw action: velocity, charge switch, collect switch).
    pub fn l1(cfg: &ScenarioConfig) -> Result<Self> {
        Self::build(cfg, UAV_FEAT, vec![("gt", GT_FEAT), ("uav", UAV_FEAT)], 5)
    }

    /// Shapes of the uplink coordinator (relay + orbit sources; per-relay
    /// orbit logits and power, per-orbit bandwidth share).
    pub fn l2(cfg: &ScenarioConfig) -> Result<Self> {
        let m = cfg.n_uavs;
        let k = cfg.n_leos;
        Self::build(
            cfg,
            L2_OWN_FEAT,
            vec![("uav", L2_UAV_FEAT), ("sat", L2_SAT_FEAT)],
            m * (k + 1) + m + k,
        )
    }

    /// Fresh all-zero recurrent state (one vector per exchange layer).
    pub fn zero_state(&self) -> Vec<Vec<f64>> {
        vec![vec![0.0; self.hidden]; self.gel_layers]
    }

    fn agent_block(&self, layer: usize, tag: &str, head: usize) -> String {
        if self.share_agent_transform {
            format!("gsl{layer}.h{head}.agent")
        } else {
            format!("gsl{layer}.{tag}.h{head}.agent")
        }
    }

    /// Every parameter block in deterministic order: (name, rows, cols, init).
    fn block_specs(&self) -> Vec<(String, usize, usize, InitKind)> {
        use InitKind::*;
        let d = self.hidden;
        let hd = self.head_dim;
        let a_dim = self.action_dim;
        let sigma = self.alphabet;
        let mut v = Vec::new();
        v.push(("embed.w".into(), d, self.own_dim, Uniform));
        v.push(("embed.b".into(), d, 1, Zero));
        for l in 0..self.gsl_layers {
            if self.share_agent_transform {
                for h in 0..self.heads {
                    v.push((format!("gsl{l}.h{h}.agent"), hd, d, Uniform));
                }
            }
            for (tag, raw) in &self.src_dims {
                for h in 0..self.heads {
                    if !self.share_agent_transform {
                        v.push((format!("gsl{l}.{tag}.h{h}.agent"), hd, d, Uniform));
                    }
                    v.push((format!("gsl{l}.{tag}.h{h}.src"), hd, *raw, Uniform));
                    v.push((format!("gsl{l}.{tag}.h{h}.attn"), 2 * hd, 1, Uniform));
                }
            }
            let cat = self.src_dims.len() * d;
            v.push((format!("gsl{l}.fuse.w1"), d, cat, Uniform));
            v.push((format!("gsl{l}.fuse.b1"), d, 1, Zero));
            v.push((format!("gsl{l}.fuse.w2"), d, d, Uniform));
            v.push((format!("gsl{l}.fuse.b2"), d, 1, Zero));
        }
        for l in 0..self.gel_layers {
            v.push((format!("gel{l}.enc.w1"), d, d, Uniform));
            v.push((format!("gel{l}.enc.b1"), d, 1, Zero));
            v.push((format!("gel{l}.enc.w2"), sigma, d, Uniform));
            v.push((format!("gel{l}.enc.b2"), sigma, 1, Zero));
            v.push((format!("gel{l}.dec.w"), d, sigma, Uniform));
            v.push((format!("gel{l}.dec.b"), d, 1, Zero));
            v.push((format!("gel{l}.rnn.wx"), d, 2 * d, Uniform));
            v.push((format!("gel{l}.rnn.uz"), d, d, Uniform));
            v.push((format!("gel{l}.rnn.b"), d, 1, Zero));
        }
        v.push(("head.w1".into(), d, d, Uniform));
        v.push(("head.b1".into(), d, 1, Zero));
        v.push(("head.w2".into(), a_dim, d, Uniform));
        v.push(("head.b2".into(), a_dim, 1, Zero));
        // Mask heads: output layers start at zero so the initial re-draw is an
        // isotropic rescale of the action (the projection still guarantees
        // feasibility while gradients open the gates during training).
        v.push(("mask.mu.w1".into(), d, d, Uniform));
        v.push(("mask.mu.b1".into(), d, 1, Zero));
        v.push(("mask.mu.w2".into(), a_dim, d, Zero));
        v.push(("mask.mu.b2".into(), a_dim, 1, Zero));
        v.push(("mask.sig.w1".into(), d, d, Uniform));
        v.push(("mask.sig.b1".into(), d, 1, Zero));
        v.push(("mask.sig.w2".into(), a_dim, d, Zero));
        v.push(("mask.sig.b2".into(), a_dim, 1, Zero));
        v.push(("mask.g.w1".into(), d, a_dim, Uniform));
        v.push(("mask.g.b1".into(), d, 1, Zero));
        v.push(("mask.g.w2".into(), a_dim, d, Zero));
        v.push(("mask.g.b2".into(), a_dim, 1, Zero));
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum InitKind {
    Uniform,
    Zero,
}

/// One named, shaped parameter matrix (vectors have cols = 1), row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

/// A full parameter set; block order is the canonical flat order used by the
/// optimizer, gradients, and checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub blocks: Vec<ParamBlock>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    blocks: Vec<ParamBlock>,
}

const CHECKPOINT_FORMAT: &str = "g3m-checkpoint/1";

impl ParamSet {
    pub fn from_blocks(blocks: Vec<ParamBlock>) -> Self {
        let index = blocks
            .iter()
            .enumerate()
            .map(|(i, b)| (b.name.clone(), i))
            .collect();
        Self { blocks, index }
    }

    /// Initialize for the given shapes. Matrices draw uniform ±1/√fan_in from
    /// the parameter-init stream (one substream per block); biases and the
    /// mask output layers start at zero.
    pub fn init(dims: &G3mDims, stream: &RngStream) -> Self {
        let blocks = dims
            .block_specs()
            .into_iter()
            .enumerate()
            .map(|(i, (name, rows, cols, kind))| {
                let data = match kind {
                    InitKind::Zero => vec![0.0; rows * cols],
                    InitKind::Uniform => {
                        let mut rng = stream.rng(Purpose::ParamInit, i as u64, 0);
                        let bound = 1.0 / (cols.max(1) as f64).sqrt();
                        (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect()
                    }
                };
                ParamBlock { name, rows, cols, data }
            })
            .collect();
        Self::from_blocks(blocks)
    }

    /// All-zero parameters with the given shapes.
    pub fn zeros(dims: &G3mDims) -> Self {
        let blocks = dims
            .block_specs()
            .into_iter()
            .map(|(name, rows, cols, _)| ParamBlock { name, rows, cols, data: vec![0.0; rows * cols] })
            .collect();
        Self::from_blocks(blocks)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn n_params(&self) -> usize {
        self.blocks.iter().map(|b| b.data.len()).sum()
    }

    /// Soft blend: self ← blend·online + (1−blend)·self.
    pub fn blend_from(&mut self, online: &ParamSet, blend: f64) {
        for (t, o) in self.blocks.iter_mut().zip(&online.blocks) {
            for (tv, ov) in t.data.iter_mut().zip(&o.data) {
                *tv = blend * ov + (1.0 - blend) * *tv;
            }
        }
    }

    /// Confirm the set carries exactly the shapes `dims` requires.
    pub fn ensure_matches(&self, dims: &G3mDims) -> Result<()> {
        let specs = dims.block_specs();
        if specs.len() != self.blocks.len() {
            return Err(Error::Nn(format!(
                "checkpoint has {} parameter blocks, model needs {}",
                self.blocks.len(),
                specs.len()
            )));
        }
        for ((name, rows, cols, _), b) in specs.iter().zip(&self.blocks) {
            if *name != b.name || *rows != b.rows || *cols != b.cols {
                return Err(Error::Nn(format!(
                    "checkpoint block {} is {}x{}, model needs {} as {}x{}",
                    b.name, b.rows, b.cols, name, rows, cols
                )));
            }
            if b.data.len() != b.rows * b.cols {
                return Err(Error::Nn(format!(
                    "checkpoint block {} carries {} values for a {}x{} shape",
                    b.name,
                    b.data.len(),
                    b.rows,
                    b.cols
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = CheckpointFile { format: CHECKPOINT_FORMAT.into(), blocks: self.blocks.clone() };
        std::fs::write(path, serde_json::to_string(&file)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: CheckpointFile = serde_json::from_str(&text)?;
        if file.format != CHECKPOINT_FORMAT {
            return Err(Error::Nn(format!(
                "unsupported checkpoint format {:?}, expected {CHECKPOINT_FORMAT:?}",
                file.format
            )));
        }
        Ok(Self::from_blocks(file.blocks))
    }
}

/// Parameter blocks inserted as leaves on one tape, in block order.
pub struct Bound<'p> {
    set: &'p ParamSet,
    ids: Vec<NodeId>,
}

/// Insert every block of `set` as a leaf on `tape`.
pub fn bind<'p>(tape: &mut Tape, set: &'p ParamSet) -> Bound<'p> {
    let ids = set.blocks.iter().map(|b| tape.leaf(b.data.clone())).collect();
    Bound { set, ids }
}

impl Bound<'_> {
    pub fn id(&self, name: &str) -> NodeId {
        let i = self
            .set
            .index_of(name)
            .unwrap_or_else(|| panic!("unknown parameter block {name}"));
        self.ids[i]
    }

    pub fn shape(&self, name: &str) -> (usize, usize) {
        let i = self
            .set
            .index_of(name)
            .unwrap_or_else(|| panic!("unknown parameter block {name}"));
        let b = &self.set.blocks[i];
        (b.rows, b.cols)
    }

    /// Gradients per block, aligned with `ParamSet::blocks`.
    pub fn grads(&self, tape: &Tape) -> Vec<Vec<f64>> {
        self.ids.iter().map(|id| tape.grad(*id).to_vec()).collect()
    }
}

fn affine_named(t: &mut Tape, bp: &Bound, w: &str, b: &str, x: NodeId) -> NodeId {
    let (rows, cols) = bp.shape(w);
    let wx = t.matvec(bp.id(w), x, rows, cols);
    t.add(wx, bp.id(b))
}

// ---------------------------------------------------------------------------
// Sensing layer
// ---------------------------------------------------------------------------

/// Output of one sensing-layer application.
pub struct GslOut {
    pub h: NodeId,
    /// attention[type][head][neighbor], read off the tape.
    pub attention: Vec<Vec<Vec<f64>>>,
}

/// One attention layer over the typed source neighborhoods: per head, logits
/// are the leaky-rectified inner product of the attention vector with the
/// concatenated destination/source transforms; the per-head aggregate is a
/// sigmoid of the attention-weighted source transforms; heads concatenate per
/// type and the type blocks fuse through a one-hidden-layer MLP. Types with
/// no sources contribute a zero block. Source features are read, never
/// written.
pub fn gsl_forward(
    t: &mut Tape,
    bp: &Bound,
    dims: &G3mDims,
    layer: usize,
    h_dest: NodeId,
    sources: &[Vec<NodeId>],
) -> GslOut {
    let mut type_blocks = Vec::new();
    let mut attention = Vec::new();
    for (ti, (tag, raw)) in dims.src_dims.iter().enumerate() {
        let neigh = &sources[ti];
        if neigh.is_empty() {
            type_blocks.push(t.constant(vec![0.0; dims.hidden]));
            attention.push(Vec::new());
            continue;
        }
        let mut head_outs = Vec::new();
        let mut head_attn = Vec::new();
        for a in 0..dims.heads {
            let agent = dims.agent_block(layer, tag, a);
            let src = format!("gsl{layer}.{tag}.h{a}.src");
            let attn = format!("gsl{layer}.{tag}.h{a}.attn");
            let wh = t.matvec(bp.id(&agent), h_dest, dims.head_dim, dims.hidden);
            let wvs: Vec<NodeId> = neigh
                .iter()
                .map(|v| t.matvec(bp.id(&src), *v, dims.head_dim, *raw))
                .collect();
            let logits_parts: Vec<NodeId> = wvs
                .iter()
                .map(|wv| {
                    let cat = t.concat(&[wh, *wv]);
                    let e = t.dot(bp.id(&attn), cat);
                    t.leaky_relu(e, ATTN_LEAK)
                })
                .collect();
            let logits = t.concat(&logits_parts);
            let alpha = t.softmax(logits);
            head_attn.push(t.value(alpha).to_vec());
            let weighted: Vec<NodeId> = wvs
                .iter()
                .enumerate()
                .map(|(j, wv)| {
                    let aj = t.index(alpha, j);
                    t.scale_by(*wv, aj)
                })
                .collect();
            let agg = t.sum_vecs(&weighted);
            head_outs.push(t.sigmoid(agg));
        }
        type_blocks.push(t.concat(&head_outs));
        attention.push(head_attn);
    }
    let cat = t.concat(&type_blocks);
    let f1 = affine_named(t, bp, &format!("gsl{layer}.fuse.w1"), &format!("gsl{layer}.fuse.b1"), cat);
    let f1 = t.tanh(f1);
    let f2 = affine_named(t, bp, &format!("gsl{layer}.fuse.w2"), &format!("gsl{layer}.fuse.b2"), f1);
    let h = t.tanh(f2);
    GslOut { h, attention }
}

/// Value-level wrapper around [`gsl_forward`] for oracles and tests: returns
/// the updated destination features and the attention weights.
pub fn gsl_forward_values(
    set: &ParamSet,
    dims: &G3mDims,
    layer: usize,
    h_dest: &[f64],
    sources: &[Vec<Vec<f64>>],
) -> (Vec<f64>, Vec<Vec<Vec<f64>>>) {
    let mut t = Tape::new();
    let bp = bind(&mut t, set);
    let h = t.constant(h_dest.to_vec());
    let src_nodes: Vec<Vec<NodeId>> = sources
        .iter()
        .map(|list| list.iter().map(|v| t.constant(v.clone())).collect())
        .collect();
    let out = gsl_forward(&mut t, &bp, dims, layer, h, &src_nodes);
    (t.value(out.h).to_vec(), out.attention)
}

// ---------------------------------------------------------------------------
// Gumbel-Softmax
// ---------------------------------------------------------------------------

/// Draw `n` standard Gumbel variates.
pub fn gumbel_noise(rng: &mut ChaCha12Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let u: f64 = rng.gen::<f64>().clamp(1e-12, 1.0 - 1e-12);
            -(-u.ln()).ln()
        })
        .collect()
}

/// Relaxed categorical sample: softmax((logits + noise)/τ). With `hard`, the
/// forward value is the arg-max one-hot while the gradient is that of the
/// soft sample (straight-through).
pub fn gumbel_softmax(t: &mut Tape, logits: NodeId, tau: f64, noise: &[f64], hard: bool) -> NodeId {
    assert!(tau > 0.0, "gumbel_softmax needs a positive temperature");
    let noisy = t.add_const(logits, noise);
    let scaled = t.scale(noisy, 1.0 / tau);
    let soft = t.softmax(scaled);
    if !hard {
        return soft;
    }
    let sv = t.value(soft);
    let mut best = 0;
    for (i, v) in sv.iter().enumerate() {
        if *v > sv[best] {
            best = i;
        }
    }
    // Shift the value to the one-hot without touching the gradient path.
    let diff: Vec<f64> = sv
        .iter()
        .enumerate()
        .map(|(i, v)| if i == best { 1.0 - v } else { -v })
        .collect();
    t.add_const(soft, &diff)
}

// ---------------------------------------------------------------------------
// Exchange layer
// ---------------------------------------------------------------------------

/// Output of one exchange round for one agent.
pub struct GelOut {
    pub h_next: NodeId,
    pub z_next: NodeId,
    /// The message this agent emits this round (already Gumbel-sampled).
    pub out_msg: NodeId,
}

fn gel_encode(t: &mut Tape, bp: &Bound, layer: usize, h: NodeId) -> NodeId {
    let e1 = affine_named(t, bp, &format!("gel{layer}.enc.w1"), &format!("gel{layer}.enc.b1"), h);
    let e1 = t.tanh(e1);
    affine_named(t, bp, &format!("gel{layer}.enc.w2"), &format!("gel{layer}.enc.b2"), e1)
}

/// One exchange round: encode this agent's outgoing message from its current
/// features, componentwise max-pool the received messages (zero vector when
/// there are none), decode, and feed [h ∥ decoded] with the carried state
/// through the recurrent cell. The cell's output is both the updated feature
/// vector and the next carried state.
#[allow(clippy::too_many_arguments)]
pub fn gel_forward(
    t: &mut Tape,
    bp: &Bound,
    dims: &G3mDims,
    layer: usize,
    h: NodeId,
    neighbor_msgs: &[NodeId],
    z: NodeId,
    tau: f64,
    noise: &[f64],
    hard: bool,
) -> GelOut {
    let logits = gel_encode(t, bp, layer, h);
    let out_msg = gumbel_softmax(t, logits, tau, noise, hard);
    let pooled = if neighbor_msgs.is_empty() {
        t.constant(vec![0.0; dims.alphabet])
    } else {
        t.max_pool(neighbor_msgs)
    };
    let dec = affine_named(t, bp, &format!("gel{layer}.dec.w"), &format!("gel{layer}.dec.b"), pooled);
    let dec = t.tanh(dec);
    let x = t.concat(&[h, dec]);
    let wx = t.matvec(bp.id(&format!("gel{layer}.rnn.wx")), x, dims.hidden, 2 * dims.hidden);
    let uz = t.matvec(bp.id(&format!("gel{layer}.rnn.uz")), z, dims.hidden, dims.hidden);
    let s = t.add(wx, uz);
    let s = t.add(s, bp.id(&format!("gel{layer}.rnn.b")));
    let z_next = t.tanh(s);
    GelOut { h_next: z_next, z_next, out_msg }
}

/// Value-level wrapper around [`gel_forward`] for oracles and tests.
#[allow(clippy::too_many_arguments)]
pub fn gel_forward_values(
    set: &ParamSet,
    dims: &G3mDims,
    layer: usize,
    h: &[f64],
    neighbor_msgs: &[Vec<f64>],
    z: &[f64],
    tau: f64,
    noise: &[f64],
    hard: bool,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut t = Tape::new();
    let bp = bind(&mut t, set);
    let hn = t.constant(h.to_vec());
    let zn = t.constant(z.to_vec());
    let msgs: Vec<NodeId> = neighbor_msgs.iter().map(|m| t.constant(m.clone())).collect();
    let out = gel_forward(&mut t, &bp, dims, layer, hn, &msgs, zn, tau, noise, hard);
    (
        t.value(out.h_next).to_vec(),
        t.value(out.z_next).to_vec(),
        t.value(out.out_msg).to_vec(),
    )
}

// ---------------------------------------------------------------------------
// Action heads and raw-action mapping
// ---------------------------------------------------------------------------

fn embed_own(t: &mut Tape, bp: &Bound, graph: &AgentGraph) -> NodeId {
    let own = t.constant(graph.own.clone());
    let e = affine_named(t, bp, "embed.w", "embed.b", own);
    t.tanh(e)
}

fn action_head(t: &mut Tape, bp: &Bound, h: NodeId) -> NodeId {
    let a1 = affine_named(t, bp, "head.w1", "head.b1", h);
    let a1 = t.tanh(a1);
    affine_named(t, bp, "head.w2", "head.b2", a1)
}

/// Map a 5-component raw head output onto a collection action. Velocity
/// components are tanh-bounded so the speed never exceeds the cap; the two
/// trailing components switch charging (sign) and collection (sign).
pub fn action_l1_from_raw(raw: &[f64], cfg: &ScenarioConfig) -> ActionL1 {
    let s = cfg.v_max / 3f64.sqrt();
    ActionL1 {
        velocity: [s * raw[0].tanh(), s * raw[1].tanh(), s * raw[2].tanh()],
        wet_scalar: raw[3],
        wdc_enabled: raw[4] > 0.0,
    }
}

/// Flatten a collection action for the mask layer: [vx, vy, vz, wet, ±1].
pub fn flat_from_action_l1(a: &ActionL1) -> Vec<f64> {
    vec![
        a.velocity[0],
        a.velocity[1],
        a.velocity[2],
        a.wet_scalar,
        if a.wdc_enabled { 1.0 } else { -1.0 },
    ]
}

/// Inverse of [`flat_from_action_l1`].
pub fn action_l1_from_flat(f: &[f64]) -> ActionL1 {
    ActionL1 {
        velocity: [f[0], f[1], f[2]],
        wet_scalar: f[3],
        wdc_enabled: f[4] > 0.0,
    }
}

/// Map the uplink coordinator's raw head output onto an uplink action.
/// Layout: per relay K+1 orbit logits (last = stay silent), then per-relay
/// power, then per-orbit bandwidth logits. Powers land strictly inside the
/// legal interval and bandwidth shares are a softmax, so the mapped action is
/// feasible by construction.
pub fn action_l2_from_raw(raw: &[f64], n_uavs: usize, n_orbits: usize, cfg: &ScenarioConfig) -> ActionL2 {
    let m = n_uavs;
    let k = n_orbits;
    assert_eq!(raw.len(), m * (k + 1) + m + k, "raw uplink action has the wrong width");
    let mut assigned = Vec::with_capacity(m);
    for i in 0..m {
        let chunk = &raw[i * (k + 1)..(i + 1) * (k + 1)];
        let mut best = 0;
        for (j, v) in chunk.iter().enumerate() {
            if *v > chunk[best] {
                best = j;
            }
        }
        assigned.push(if best == k { None } else { Some(best) });
    }
    let p_max = cfg.uav_tx_power_max;
    let powers: Vec<f64> = raw[m * (k + 1)..m * (k + 1) + m]
        .iter()
        .map(|r| p_max * (1e-6 + (1.0 - 1e-6) / (1.0 + (-r).exp())))
        .collect();
    let rho_raw = &raw[m * (k + 1) + m..];
    let mx = rho_raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = rho_raw.iter().map(|r| (r - mx).exp()).collect();
    let z: f64 = exps.iter().sum();
    let rho = exps.iter().map(|e| e / z).collect();
    ActionL2 { assigned_orbit: assigned, powers, rho, access_mode: AccessMode::Noma }
}

// ---------------------------------------------------------------------------
// Mask layer
// ---------------------------------------------------------------------------

/// Membership test of a feasible set.
pub type FeasibleFn<'a> = Box<dyn Fn(&[f64]) -> bool + 'a>;
/// Projection onto a feasible set (or a report of the binding constraints).
pub type ProjectFn<'a> = Box<dyn Fn(&[f64]) -> std::result::Result<Vec<f64>, String> + 'a>;

/// Feasible-set oracle the mask layer consults: membership plus a projection
/// that lands on the set (or reports the binding constraints).
pub struct MaskDomain<'a> {
    pub is_feasible: FeasibleFn<'a>,
    pub project: ProjectFn<'a>,
}

/// Result of the mask layer.
#[derive(Debug)]
pub struct MaskedAction {
    pub value: Vec<f64>,
    /// Tape node of the smooth re-draw (None on the pass-through branch).
    pub node: Option<NodeId>,
    pub redrawn: bool,
}

/// Feasibility mask: feasible actions pass through bit-exactly; infeasible
/// ones are re-drawn as gate(a) ∘ (μ(h) + σ(h) + ε) — an action-space gate
/// times a state-conditioned stochastic factor, the additive form as printed;
/// the config switch [`ScenarioConfig::gml_conventional_reparam`] selects
/// μ + σ∘ε instead — and then projected onto the feasible set.
pub fn gml_apply(
    t: &mut Tape,
    bp: &Bound,
    h: NodeId,
    action_flat: &[f64],
    dom: &MaskDomain,
    noise: &[f64],
    conventional: bool,
) -> Result<MaskedAction> {
    if (dom.is_feasible)(action_flat) {
        return Ok(MaskedAction { value: action_flat.to_vec(), node: None, redrawn: false });
    }
    let a = t.constant(action_flat.to_vec());
    let g1 = affine_named(t, bp, "mask.g.w1", "mask.g.b1", a);
    let g1 = t.tanh(g1);
    let g2 = affine_named(t, bp, "mask.g.w2", "mask.g.b2", g1);
    let gate = t.sigmoid(g2);
    let gate = t.scale(gate, 2.0);
    let gated = t.mul(a, gate);

    let m1 = affine_named(t, bp, "mask.mu.w1", "mask.mu.b1", h);
    let m1 = t.tanh(m1);
    let mu = affine_named(t, bp, "mask.mu.w2", "mask.mu.b2", m1);
    let s1 = affine_named(t, bp, "mask.sig.w1", "mask.sig.b1", h);
    let s1 = t.tanh(s1);
    let sig = affine_named(t, bp, "mask.sig.w2", "mask.sig.b2", s1);
    let sig = t.softplus(sig);

    let stoch = if conventional {
        let eps = t.constant(noise.to_vec());
        let se = t.mul(sig, eps);
        t.add(mu, se)
    } else {
        let ms = t.add(mu, sig);
        t.add_const(ms, noise)
    };
    let redraw = t.mul(gated, stoch);
    let projected = (dom.project)(t.value(redraw)).map_err(Error::ProjectionInfeasible)?;
    Ok(MaskedAction { value: projected, node: Some(redraw), redrawn: true })
}

/// Mask-layer noise for one agent at one slot.
pub fn mask_noise(stream: &RngStream, agent: u64, slot: u64, n: usize) -> Vec<f64> {
    let mut rng = stream.rng(Purpose::MaskNoise, agent, slot);
    (0..n)
        .map(|_| {
            let g: f64 = rng.sample(rand_distr::StandardNormal);
            MASK_NOISE_STD * g
        })
        .collect()
}

/// Membership/projection oracle for one collection agent: its own action is
/// projected while every visible teammate holds position, using the shared
/// team projector, so the mask agrees exactly with the episode loop's
/// feasibility enforcement.
pub fn l1_mask_domain<'a>(
    own: Position3D,
    neighbors: &'a [Position3D],
    cfg: &'a ScenarioConfig,
) -> MaskDomain<'a> {
    let run = move |flat: &[f64]| {
        let mut actions = vec![action_l1_from_flat(flat)];
        let mut positions = vec![own];
        for p in neighbors {
            actions.push(ActionL1::hold());
            positions.push(*p);
        }
        let active = vec![true; actions.len()];
        project_l1(&actions, &positions, &active, cfg)
    };
    MaskDomain {
        is_feasible: Box::new(move |flat| !run(flat).corrected),
        project: Box::new(move |flat| {
            let proj = run(flat);
            let mut out = flat_from_action_l1(&proj.actions[0]);
            // Switch components are untouched by the projector.
            out[3] = flat[3];
            out[4] = flat[4];
            Ok(out)
        }),
    }
}

// ---------------------------------------------------------------------------
// Full forward passes
// ---------------------------------------------------------------------------

/// Everything a single-agent forward pass produces.
#[derive(Debug)]
pub struct ForwardOut {
    pub raw: NodeId,
    pub h: NodeId,
    /// Next recurrent state, one vector per exchange layer.
    pub z_next: Vec<Vec<f64>>,
    /// Message emitted per exchange layer (values).
    pub out_msgs: Vec<Vec<f64>>,
}

fn validate_graph(dims: &G3mDims, graph: &AgentGraph, z: &[Vec<f64>]) -> Result<()> {
    if graph.own.len() != dims.own_dim {
        return Err(Error::Nn(format!(
            "malformed graph: own features have width {}, expected {}",
            graph.own.len(),
            dims.own_dim
        )));
    }
    if graph.sources.len() != dims.src_dims.len() {
        return Err(Error::Nn(format!(
            "malformed graph: {} source types, expected {}",
            graph.sources.len(),
            dims.src_dims.len()
        )));
    }
    for ((tag, raw), list) in dims.src_dims.iter().zip(&graph.sources) {
        for v in list {
            if v.len() != *raw {
                return Err(Error::Nn(format!(
                    "malformed graph: a {tag} source has width {}, expected {raw}",
                    v.len()
                )));
            }
        }
    }
    if z.len() != dims.gel_layers || z.iter().any(|zl| zl.len() != dims.hidden) {
        return Err(Error::Nn(format!(
            "malformed recurrent state: expected {} layers of width {}",
            dims.gel_layers, dims.hidden
        )));
    }
    Ok(())
}

fn source_nodes(t: &mut Tape, graph: &AgentGraph) -> Vec<Vec<NodeId>> {
    graph
        .sources
        .iter()
        .map(|list| list.iter().map(|v| t.constant(v.clone())).collect())
        .collect()
}

/// Single-agent stack: embed the own features, run every sensing layer
/// (sources keep their raw features throughout), then every exchange round
/// against the provided incoming messages, then the action head. The mask is
/// applied separately ([`gml_apply`]) because it needs the feasibility
/// oracle. `incoming[l]` holds the neighbor messages of round `l`;
/// `gumbel[l]` the noise for this agent's own round-`l` message.
#[allow(clippy::too_many_arguments)]
pub fn g3m_forward(
    t: &mut Tape,
    bp: &Bound,
    dims: &G3mDims,
    graph: &AgentGraph,
    z: &[Vec<f64>],
    incoming: &[Vec<Vec<f64>>],
    tau: f64,
    gumbel: &[Vec<f64>],
    hard: bool,
) -> Result<ForwardOut> {
    validate_graph(dims, graph, z)?;
    if incoming.len() != dims.gel_layers || gumbel.len() != dims.gel_layers {
        return Err(Error::Nn(format!(
            "expected {} rounds of messages and noise",
            dims.gel_layers
        )));
    }
    let mut h = embed_own(t, bp, graph);
    let sources = source_nodes(t, graph);
    for l in 0..dims.gsl_layers {
        h = gsl_forward(t, bp, dims, l, h, &sources).h;
    }
    let mut z_next = Vec::new();
    let mut out_msgs = Vec::new();
    for l in 0..dims.gel_layers {
        let zn = t.constant(z[l].clone());
        let msgs: Vec<NodeId> = incoming[l].iter().map(|m| t.constant(m.clone())).collect();
        let out = gel_forward(t, bp, dims, l, h, &msgs, zn, tau, &gumbel[l], hard);
        h = out.h_next;
        z_next.push(t.value(out.z_next).to_vec());
        out_msgs.push(t.value(out.out_msg).to_vec());
    }
    let raw = action_head(t, bp, h);
    Ok(ForwardOut { raw, h, z_next, out_msgs })
}

/// Pre-drawn Gumbel noise for a whole team: noise[agent][round][component].
#[derive(Debug, Clone)]
pub struct TeamNoise {
    pub per_agent: Vec<Vec<Vec<f64>>>,
}

impl TeamNoise {
    /// Deterministic draw for slot `t`: one substream per agent, rounds
    /// drawn sequentially from it.
    pub fn draw(stream: &RngStream, t: u64, n_agents: usize, dims: &G3mDims) -> Self {
        let per_agent = (0..n_agents)
            .map(|a| {
                let mut rng = stream.rng(Purpose::Gumbel, a as u64, t);
                (0..dims.gel_layers)
                    .map(|_| gumbel_noise(&mut rng, dims.alphabet))
                    .collect()
            })
            .collect();
        Self { per_agent }
    }
}

/// Per-agent output of one synchronized team pass.
pub struct TeamAgentOut {
    pub raw: NodeId,
    pub h: NodeId,
    pub z_next: Vec<Vec<f64>>,
}

/// Synchronized team pass: every agent embeds and senses independently, then
/// the exchange rounds interleave — all round-`l` messages are encoded from
/// the pre-round features before anyone updates — so message gradients flow
/// between agents. `adjacency[i]` lists the agents whose messages agent `i`
/// receives.
#[allow(clippy::too_many_arguments)]
pub fn g3m_team_forward(
    t: &mut Tape,
    bp: &Bound,
    dims: &G3mDims,
    graphs: &[AgentGraph],
    zs: &[Vec<Vec<f64>>],
    adjacency: &[Vec<usize>],
    tau: f64,
    noise: &TeamNoise,
    hard: bool,
) -> Result<Vec<TeamAgentOut>> {
    let n = graphs.len();
    if zs.len() != n || adjacency.len() != n || noise.per_agent.len() != n {
        return Err(Error::Nn("team inputs disagree on the agent count".into()));
    }
    for (g, z) in graphs.iter().zip(zs) {
        validate_graph(dims, g, z)?;
    }
    let mut hs = Vec::with_capacity(n);
    for g in graphs {
        let mut h = embed_own(t, bp, g);
        let sources = source_nodes(t, g);
        for l in 0..dims.gsl_layers {
            h = gsl_forward(t, bp, dims, l, h, &sources).h;
        }
        hs.push(h);
    }
    let mut z_next: Vec<Vec<Vec<f64>>> = vec![Vec::new(); n];
    // The layer index addresses parameter names, noise lanes, and carried
    // state alike, so a range loop reads best here.
    #[allow(clippy::needless_range_loop)]
    for l in 0..dims.gel_layers {
        let msgs: Vec<NodeId> = (0..n)
            .map(|i| {
                let logits = gel_encode(t, bp, l, hs[i]);
                gumbel_softmax(t, logits, tau, &noise.per_agent[i][l], hard)
            })
            .collect();
        for i in 0..n {
            let inbox: Vec<NodeId> = adjacency[i].iter().map(|&j| msgs[j]).collect();
            let zn = t.constant(zs[i][l].clone());
            let pooled = if inbox.is_empty() {
                t.constant(vec![0.0; dims.alphabet])
            } else {
                t.max_pool(&inbox)
            };
            let dec = affine_named(t, bp, &format!("gel{l}.dec.w"), &format!("gel{l}.dec.b"), pooled);
            let dec = t.tanh(dec);
            let x = t.concat(&[hs[i], dec]);
            let wx = t.matvec(bp.id(&format!("gel{l}.rnn.wx")), x, dims.hidden, 2 * dims.hidden);
            let uz = t.matvec(bp.id(&format!("gel{l}.rnn.uz")), zn, dims.hidden, dims.hidden);
            let s = t.add(wx, uz);
            let s = t.add(s, bp.id(&format!("gel{l}.rnn.b")));
            let znew = t.tanh(s);
            hs[i] = znew;
            z_next[i].push(t.value(znew).to_vec());
        }
    }
    Ok((0..n)
        .map(|i| TeamAgentOut { raw: action_head(t, bp, hs[i]), h: hs[i], z_next: z_next[i].clone() })
        .collect())
}

// ---------------------------------------------------------------------------
// Gradient verification
// ---------------------------------------------------------------------------

/// Compare backprop gradients against central finite differences (step 1e-5)
/// on every parameter component; returns the maximum relative error.
/// Components where both gradients are below 1e-7 in magnitude count as
/// matching zeros. The loss builder must be deterministic — draw any noise
/// beforehand and bake it in as constants.
pub fn grad_check(
    set: &ParamSet,
    build: &mut dyn FnMut(&mut Tape, &Bound) -> Result<NodeId>,
) -> Result<f64> {
    let mut t = Tape::new();
    let bp = bind(&mut t, set);
    let loss = build(&mut t, &bp)?;
    t.backward(loss)?;
    let analytic = bp.grads(&t);

    let h = 1e-5;
    let mut work = set.clone();
    let mut max_rel: f64 = 0.0;
    for (bi, block) in set.blocks.iter().enumerate() {
        for (ci, &orig) in block.data.iter().enumerate() {
            work.blocks[bi].data[ci] = orig + h;
            let up = {
                let mut tp = Tape::new();
                let bpp = bind(&mut tp, &work);
                let l = build(&mut tp, &bpp)?;
                tp.value(l)[0]
            };
            work.blocks[bi].data[ci] = orig - h;
            let dn = {
                let mut tp = Tape::new();
                let bpp = bind(&mut tp, &work);
                let l = build(&mut tp, &bpp)?;
                tp.value(l)[0]
            };
            work.blocks[bi].data[ci] = orig;
            let fd = (up - dn) / (2.0 * h);
            let ad = analytic[bi][ci];
            let mag = ad.abs().max(fd.abs());
            if mag < 1e-7 {
                continue;
            }
            max_rel = max_rel.max((ad - fd).abs() / mag);
        }
    }
    Ok(max_rel)
}

/// Full-stack gradient check: fresh parameters and random observation
/// graphs from `seed`, one two-agent exchange forward plus a forced mask
/// redraw, loss = mean squares of every head. Returns the maximum relative
/// error between backprop and central differences over all parameters.
pub fn full_stack_gradcheck(cfg: &ScenarioConfig, seed: u64) -> Result<f64> {
    let dims = G3mDims::l1(cfg)?;
    let stream = RngStream::new(seed);
    let set = ParamSet::init(&dims, &stream);
    let mut rng = stream.rng(Purpose::Placement, 77, 0);
    let mut graph = |extra: usize| -> AgentGraph {
        let sources = dims
            .src_dims
            .iter()
            .enumerate()
            .map(|(s, (_, w))| {
                let n = 1 + usize::from(s == extra);
                (0..n)
                    .map(|_| (0..*w).map(|_| rng.gen_range(-1.0..1.0)).collect())
                    .collect()
            })
            .collect();
        let own = (0..dims.own_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        AgentGraph { own, sources }
    };
    let g0 = graph(0);
    let g1 = graph(dims.src_dims.len().saturating_sub(1));
    let zs = vec![dims.zero_state(), dims.zero_state()];
    let noise = TeamNoise::draw(&stream, 0, 2, &dims);
    let mask_eps = mask_noise(&stream, 0, 0, dims.action_dim);
    let flat: Vec<f64> = (0..dims.action_dim).map(|i| 0.3 * i as f64 - 0.4).collect();
    let dom = MaskDomain {
        is_feasible: Box::new(|_| false),
        project: Box::new(|v| Ok(v.to_vec())),
    };
    grad_check(&set, &mut |t, bp| {
        let outs = g3m_team_forward(
            t,
            bp,
            &dims,
            &[g0.clone(), g1.clone()],
            &zs,
            &[vec![1], vec![0]],
            0.7,
            &noise,
            false,
        )?;
        let masked = gml_apply(t, bp, outs[0].h, &flat, &dom, &mask_eps, false)?;
        let redraw = masked.node.expect("infeasible domain forces a redraw");
        let a = t.mean_square(outs[0].raw);
        let b = t.mean_square(outs[1].raw);
        let c = t.mean_square(redraw);
        let ab = t.add(a, b);
        Ok(t.add(ab, c))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::ScenarioConfig;

    fn small_dims() -> G3mDims {
        let mut cfg = ScenarioConfig::default();
        cfg.nn.hidden_width = 8;
        cfg.nn.attention_heads = 2;
        cfg.nn.msg_alphabet = 4;
        G3mDims {
            hidden: 8,
            heads: 2,
            head_dim: 4,
            alphabet: 4,
            own_dim: 3,
            src_dims: vec![("gt", 3), ("uav", 2)],
            action_dim: 4,
            gsl_layers: 2,
            gel_layers: 2,
            share_agent_transform: cfg.nn.share_agent_transform,
        }
    }

    fn graph_from(seed: u64, dims: &G3mDims, counts: &[usize]) -> AgentGraph {
        let mut rng = RngStream::new(seed).rng(Purpose::Placement, 77, 0);
        let mut vecs = |n: usize, w: usize| -> Vec<Vec<f64>> {
            (0..n)
                .map(|_| (0..w).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect()
        };
        let sources = dims
            .src_dims
            .iter()
            .zip(counts)
            .map(|((_, w), n)| vecs(*n, *w))
            .collect();
        let own = (0..dims.own_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        AgentGraph { own, sources }
    }

    #[test]
    fn attention_weights_normalize_and_match_an_independent_softmax() {
        let dims = small_dims();
        let set = ParamSet::init(&dims, &RngStream::new(3));
        let g = graph_from(5, &dims, &[3, 0]);
        let h: Vec<f64> = (0..dims.hidden).map(|i| 0.1 * i as f64 - 0.3).collect();
        let (_, attn) = gsl_forward_values(&set, &dims, 0, &h, &g.sources);

        // Independent oracle: recompute the logits by hand from the blocks.
        let block = |name: &str| &set.blocks[set.index_of(name).unwrap()];
        #[allow(clippy::needless_range_loop)]
        for head in 0..dims.heads {
            let agent = block(&dims.agent_block(0, "gt", head));
            let src = block(&format!("gsl0.gt.h{head}.src"));
            let attnv = block(&format!("gsl0.gt.h{head}.attn"));
            let wh: Vec<f64> = (0..dims.head_dim)
                .map(|r| {
                    (0..dims.hidden)
                        .map(|c| agent.data[r * dims.hidden + c] * h[c])
                        .sum()
                })
                .collect();
            let logits: Vec<f64> = g.sources[0]
                .iter()
                .map(|v| {
                    let wv: Vec<f64> = (0..dims.head_dim)
                        .map(|r| (0..v.len()).map(|c| src.data[r * v.len() + c] * v[c]).sum())
                        .collect();
                    let mut e = 0.0;
                    for (i, &x) in wh.iter().chain(wv.iter()).enumerate() {
                        e += attnv.data[i] * x;
                    }
                    if e > 0.0 {
                        e
                    } else {
                        ATTN_LEAK * e
                    }
                })
                .collect();
            let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
            let z: f64 = exps.iter().sum();
            let sum: f64 = attn[0][head].iter().sum();
            assert!((sum - 1.0).abs() < 1e-9, "weights must sum to 1, got {sum}");
            for (j, w) in attn[0][head].iter().enumerate() {
                assert!((0.0..=1.0).contains(w));
                assert!((w - exps[j] / z).abs() < 1e-12, "head {head} weight {j}");
            }
        }
    }

    #[test]
    fn degenerate_neighborhoods_get_unit_and_split_weights() {
        let dims = small_dims();
        let set = ParamSet::init(&dims, &RngStream::new(9));
        let g = graph_from(6, &dims, &[1, 0]);
        let h = vec![0.25; dims.hidden];
        let (_, attn) = gsl_forward_values(&set, &dims, 0, &h, &g.sources);
        for head in &attn[0] {
            assert_eq!(head.len(), 1);
            assert!((head[0] - 1.0).abs() < 1e-12);
        }

        // Two identical sources must split the weight evenly.
        let twin = vec![g.sources[0][0].clone(), g.sources[0][0].clone()];
        let (_, attn) = gsl_forward_values(&set, &dims, 0, &h, &[twin, Vec::new()]);
        for head in &attn[0] {
            assert!((head[0] - 0.5).abs() < 1e-12);
            assert!((head[1] - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn sensing_layer_reads_but_never_writes_source_features() {
        let dims = small_dims();
        let set = ParamSet::init(&dims, &RngStream::new(11));
        let g = graph_from(8, &dims, &[2, 2]);
        let before = g.sources.clone();
        let h = vec![0.1; dims.hidden];
        let (h_new, _) = gsl_forward_values(&set, &dims, 0, &h, &g.sources);
        assert_eq!(g.sources, before, "source features must be immutable");
        assert_ne!(h_new, h, "destination features must actually update");
    }

    #[test]
    fn gumbel_softmax_concentrates_at_low_temperature() {
        // Concentration is a property of the temperature, not the noise: at
        // τ = 0.01 the sample is essentially one-hot except when two
        // perturbed logits land in a near-tie. Separated logits keep the
        // near-tie probability well under 1%; near-tied logits would make it
        // a few percent at any temperature (the top-two Gumbel gap does not
        // shrink with τ).
        let stream = RngStream::new(21);
        let logits = vec![4.0, 0.0, -4.0, -8.0];
        let mut hits = 0;
        for draw in 0..1000u64 {
            let mut rng = stream.rng(Purpose::Gumbel, 0, draw);
            let noise = gumbel_noise(&mut rng, logits.len());
            let mut t = Tape::new();
            let l = t.constant(logits.clone());
            let s = gumbel_softmax(&mut t, l, 0.01, &noise, false);
            let mx = t.value(s).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if mx >= 0.99 {
                hits += 1;
            }
        }
        assert!(hits >= 990, "only {hits}/1000 draws concentrated");
    }

    #[test]
    fn gumbel_softmax_flattens_at_high_temperature() {
        let stream = RngStream::new(22);
        let n = 4;
        let mut mean = vec![0.0; n];
        let draws = 10_000u64;
        for draw in 0..draws {
            let mut rng = stream.rng(Purpose::Gumbel, 1, draw);
            let noise = gumbel_noise(&mut rng, n);
            let mut t = Tape::new();
            let l = t.constant(vec![0.0; n]);
            let s = gumbel_softmax(&mut t, l, 100.0, &noise, false);
            for (m, v) in mean.iter_mut().zip(t.value(s)) {
                *m += v / draws as f64;
            }
        }
        for m in &mean {
            assert!((m - 1.0 / n as f64).abs() < 0.05, "mean component {m}");
        }
    }

    #[test]
    fn straight_through_sample_is_one_hot_with_soft_gradients() {
        let mut t = Tape::new();
        let l = t.leaf(vec![0.2, 1.4, -0.3]);
        let s = gumbel_softmax(&mut t, l, 0.5, &[0.0, 0.0, 0.0], true);
        let v = t.value(s);
        assert_eq!(v.iter().filter(|&&x| x == 1.0).count(), 1);
        assert_eq!(v.iter().filter(|&&x| x == 0.0).count(), 2);
        let total: f64 = v.iter().sum();
        assert_eq!(total, 1.0);
        let first = t.index(s, 1);
        t.backward(first).unwrap();
        assert!(t.grad(l).iter().any(|&g| g != 0.0), "gradient must flow through the soft path");
    }

    #[test]
    fn exchange_round_is_permutation_invariant_and_total() {
        let dims = small_dims();
        let set = ParamSet::init(&dims, &RngStream::new(31));
        let h = vec![0.2; dims.hidden];
        let z = vec![0.05; dims.hidden];
        let noise = vec![0.1; dims.alphabet];
        let msgs = vec![
            vec![0.9, 0.0, 0.1, 0.0],
            vec![0.1, 0.8, 0.0, 0.1],
            vec![0.0, 0.2, 0.7, 0.1],
        ];
        let (h1, z1, _) = gel_forward_values(&set, &dims, 0, &h, &msgs, &z, 1.0, &noise, false);
        let shuffled = vec![msgs[2].clone(), msgs[0].clone(), msgs[1].clone()];
        let (h2, z2, _) = gel_forward_values(&set, &dims, 0, &h, &shuffled, &z, 1.0, &noise, false);
        assert_eq!(h1, h2, "max-pool aggregation must ignore neighbor order");
        assert_eq!(z1, z2);

        // One neighbor: the pool is the identity on its message.
        let single = vec![msgs[1].clone()];
        let (h_one, _, _) = gel_forward_values(&set, &dims, 0, &h, &single, &z, 1.0, &noise, false);
        assert!(h_one.iter().all(|v| v.is_finite()));

        // No neighbors at all: the zero vector stands in for the aggregate.
        let (h0, z0, msg0) = gel_forward_values(&set, &dims, 0, &h, &[], &z, 1.0, &noise, false);
        assert!(h0.iter().chain(&z0).chain(&msg0).all(|v| v.is_finite()));
    }

    #[test]
    fn mask_passes_feasible_actions_through_bit_exactly() {
        let cfg = ScenarioConfig::default();
        let dims = G3mDims::l1(&cfg).unwrap();
        let set = ParamSet::init(&dims, &RngStream::new(41));
        let own = Position3D::new(500.0, 500.0, 90.0);
        let neighbors = [Position3D::new(700.0, 500.0, 90.0)];
        let dom = l1_mask_domain(own, &neighbors, &cfg);
        let flat = vec![3.0, -4.0, 0.5, 0.7, 1.0];
        let mut t = Tape::new();
        let bp = bind(&mut t, &set);
        let h = t.constant(vec![0.1; dims.hidden]);
        let out = gml_apply(&mut t, &bp, h, &flat, &dom, &[0.0; 5], false).unwrap();
        assert!(!out.redrawn);
        assert_eq!(out.value, flat, "feasible actions must survive untouched");
    }

    #[test]
    fn mask_redraw_clamps_speed_and_roughly_preserves_direction() {
        let cfg = ScenarioConfig::default();
        let dims = G3mDims::l1(&cfg).unwrap();
        let set = ParamSet::init(&dims, &RngStream::new(42));
        let own = Position3D::new(700.0, 700.0, 90.0);
        let dom = l1_mask_domain(own, &[], &cfg);
        // 40 m/s request along (0.8, 0.6, 0).
        let flat = vec![32.0, 24.0, 0.0, -0.5, 1.0];
        let noise = mask_noise(&RngStream::new(42), 0, 0, 5);
        let mut t = Tape::new();
        let bp = bind(&mut t, &set);
        let h = t.constant(vec![0.1; dims.hidden]);
        let out = gml_apply(&mut t, &bp, h, &flat, &dom, &noise, false).unwrap();
        assert!(out.redrawn);
        let a = action_l1_from_flat(&out.value);
        assert!(a.speed() <= cfg.v_max + 1e-9, "speed {} exceeds the cap", a.speed());
        let dot = a.velocity[0] * 0.8 + a.velocity[1] * 0.6;
        let cos = dot / a.speed().max(1e-12);
        assert!(cos >= (15f64).to_radians().cos(), "direction drifted, cos {cos}");
    }

    #[test]
    fn mask_projection_failure_names_the_binding_constraints() {
        let cfg = ScenarioConfig::default();
        let dims = G3mDims::l1(&cfg).unwrap();
        let set = ParamSet::init(&dims, &RngStream::new(43));
        let dom = MaskDomain {
            is_feasible: Box::new(|_| false),
            project: Box::new(|_| Err("speed cap, minimum separation".into())),
        };
        let mut t = Tape::new();
        let bp = bind(&mut t, &set);
        let h = t.constant(vec![0.0; dims.hidden]);
        let err = gml_apply(&mut t, &bp, h, &[0.0; 5], &dom, &[0.0; 5], false).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("minimum separation"), "got: {msg}");
    }

    #[test]
    fn forward_equals_manual_composition_of_the_three_stages() {
        let dims = small_dims();
        let set = ParamSet::init(&dims, &RngStream::new(51));
        let g = graph_from(13, &dims, &[2, 1]);
        let z = dims.zero_state();
        let noise: Vec<Vec<f64>> = (0..dims.gel_layers)
            .map(|l| {
                let mut rng = RngStream::new(13).rng(Purpose::Gumbel, 0, l as u64);
                gumbel_noise(&mut rng, dims.alphabet)
            })
            .collect();
        let incoming: Vec<Vec<Vec<f64>>> = vec![vec![vec![0.4, 0.3, 0.2, 0.1]]; dims.gel_layers];

        let mut t = Tape::new();
        let bp = bind(&mut t, &set);
        let fwd = g3m_forward(&mut t, &bp, &dims, &g, &z, &incoming, 0.8, &noise, false).unwrap();
        let got = t.value(fwd.raw).to_vec();

        // Manual composition through the exposed per-layer entry points.
        let mut t2 = Tape::new();
        let bp2 = bind(&mut t2, &set);
        let mut h = embed_own(&mut t2, &bp2, &g);
        let sources = source_nodes(&mut t2, &g);
        for l in 0..dims.gsl_layers {
            h = gsl_forward(&mut t2, &bp2, &dims, l, h, &sources).h;
        }
        for l in 0..dims.gel_layers {
            let zn = t2.constant(z[l].clone());
            let msgs: Vec<NodeId> =
                incoming[l].iter().map(|m| t2.constant(m.clone())).collect();
            let out = gel_forward(&mut t2, &bp2, &dims, l, h, &msgs, zn, 0.8, &noise[l], false);
            h = out.h_next;
        }
        let raw = action_head(&mut t2, &bp2, h);
        assert_eq!(got, t2.value(raw), "stacked pass must equal the manual composition");
    }

    #[test]
    fn zero_parameters_collapse_the_policy_to_a_constant() {
        let dims = small_dims();
        let set = ParamSet::zeros(&dims);
        let z = dims.zero_state();
        let noise = vec![vec![0.0; dims.alphabet]; dims.gel_layers];
        let incoming = vec![Vec::new(); dims.gel_layers];
        let mut outs = Vec::new();
        for seed in [1u64, 2, 3] {
            let g = graph_from(seed, &dims, &[2, 1]);
            let mut t = Tape::new();
            let bp = bind(&mut t, &set);
            let fwd = g3m_forward(&mut t, &bp, &dims, &g, &z, &incoming, 1.0, &noise, false).unwrap();
            outs.push(t.value(fwd.raw).to_vec());
        }
        assert_eq!(outs[0], outs[1]);
        assert_eq!(outs[1], outs[2]);
    }

    #[test]
    fn identical_twins_with_mirrored_noise_act_identically() {
        let dims = small_dims();
        let set = ParamSet::init(&dims, &RngStream::new(61));
        let g = graph_from(19, &dims, &[2, 1]);
        let zs = vec![dims.zero_state(), dims.zero_state()];
        let mut rng = RngStream::new(61).rng(Purpose::Gumbel, 9, 9);
        let rounds: Vec<Vec<f64>> = (0..dims.gel_layers)
            .map(|_| gumbel_noise(&mut rng, dims.alphabet))
            .collect();
        let noise = TeamNoise { per_agent: vec![rounds.clone(), rounds] };
        let mut t = Tape::new();
        let bp = bind(&mut t, &set);
        let outs = g3m_team_forward(
            &mut t,
            &bp,
            &dims,
            &[g.clone(), g],
            &zs,
            &[vec![1], vec![0]],
            1.0,
            &noise,
            false,
        )
        .unwrap();
        assert_eq!(t.value(outs[0].raw), t.value(outs[1].raw));
        assert_eq!(outs[0].z_next, outs[1].z_next);
    }

    #[test]
    fn malformed_graphs_are_rejected_with_a_dimension_message() {
        let dims = small_dims();
        let set = ParamSet::init(&dims, &RngStream::new(71));
        let mut g = graph_from(23, &dims, &[1, 1]);
        g.sources[0][0].pop();
        let z = dims.zero_state();
        let noise = vec![vec![0.0; dims.alphabet]; dims.gel_layers];
        let incoming = vec![Vec::new(); dims.gel_layers];
        let mut t = Tape::new();
        let bp = bind(&mut t, &set);
        let err =
            g3m_forward(&mut t, &bp, &dims, &g, &z, &incoming, 1.0, &noise, false).unwrap_err();
        assert!(err.to_string().contains("width"), "got: {err}");
    }

    #[test]
    fn gradient_check_is_exact_on_a_linear_stack() {
        let set = ParamSet::from_blocks(vec![
            ParamBlock { name: "w".into(), rows: 2, cols: 3, data: vec![0.3, -0.2, 0.5, 0.1, 0.7, -0.4] },
            ParamBlock { name: "b".into(), rows: 2, cols: 1, data: vec![0.05, -0.15] },
        ]);
        let x = vec![0.4, -0.9, 0.2];
        let err = grad_check(&set, &mut |t, bp| {
            let xn = t.constant(x.clone());
            let y = t.affine(bp.id("w"), bp.id("b"), xn, 2, 3);
            Ok(t.sum_components(y))
        })
        .unwrap();
        assert!(err <= 1e-8, "linear stack error {err}");
    }

    #[test]
    fn gradient_check_covers_the_full_stack() {
        let dims = small_dims();
        for seed in 0..3u64 {
            let stream = RngStream::new(seed);
            let set = ParamSet::init(&dims, &stream);
            let g0 = graph_from(seed.wrapping_add(100), &dims, &[2, 1]);
            let g1 = graph_from(seed.wrapping_add(200), &dims, &[1, 2]);
            let zs = vec![dims.zero_state(), dims.zero_state()];
            let noise = TeamNoise::draw(&stream, 0, 2, &dims);
            let mask_eps = mask_noise(&stream, 0, 0, dims.action_dim);
            let flat: Vec<f64> = (0..dims.action_dim).map(|i| 0.3 * i as f64 - 0.4).collect();
            let dom = MaskDomain {
                is_feasible: Box::new(|_| false),
                project: Box::new(|v| Ok(v.to_vec())),
            };
            let err = grad_check(&set, &mut |t, bp| {
                let outs = g3m_team_forward(
                    t,
                    bp,
                    &dims,
                    &[g0.clone(), g1.clone()],
                    &zs,
                    &[vec![1], vec![0]],
                    0.7,
                    &noise,
                    false,
                )?;
                let masked = gml_apply(t, bp, outs[0].h, &flat, &dom, &mask_eps, false)?;
                let redraw = masked.node.expect("forced redraw");
                let a = t.mean_square(outs[0].raw);
                let b = t.mean_square(outs[1].raw);
                let c = t.mean_square(redraw);
                let ab = t.add(a, b);
                Ok(t.add(ab, c))
            })
            .unwrap();
            assert!(err <= 1e-4, "seed {seed}: max relative error {err}");
        }
    }

    #[test]
    fn checkpoints_round_trip_and_reject_shape_drift() {
        let dims = small_dims();
        let set = ParamSet::init(&dims, &RngStream::new(81));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.json");
        set.save(&path).unwrap();
        let loaded = ParamSet::load(&path).unwrap();
        assert_eq!(set, loaded);
        loaded.ensure_matches(&dims).unwrap();

        let mut wider = dims.clone();
        wider.hidden = 16;
        wider.head_dim = 8;
        let err = loaded.ensure_matches(&wider).unwrap_err();
        assert!(err.to_string().contains("block"), "got: {err}");

        std::fs::write(&path, "{\"format\":\"g3m-checkpoint/9\",\"blocks\":[]}").unwrap();
        let err = ParamSet::load(&path).unwrap_err();
        assert!(err.to_string().contains("format"), "got: {err}");
    }

    #[test]
    fn raw_action_mapping_respects_the_envelopes() {
        let cfg = ScenarioConfig::default();
        let mut rng = RngStream::new(91).rng(Purpose::Exploration, 0, 0);
        for _ in 0..200 {
            let raw: Vec<f64> = (0..5).map(|_| rng.gen_range(-6.0..6.0)).collect();
            let a = action_l1_from_raw(&raw, &cfg);
            assert!(a.speed() <= cfg.v_max + 1e-9);
            let back = action_l1_from_flat(&flat_from_action_l1(&a));
            assert_eq!(back, a);
        }
        let m = cfg.n_uavs;
        let k = cfg.n_leos;
        for _ in 0..50 {
            let raw: Vec<f64> = (0..m * (k + 1) + m + k).map(|_| rng.gen_range(-6.0..6.0)).collect();
            let a = action_l2_from_raw(&raw, m, k, &cfg);
            assert_eq!(a.assigned_orbit.len(), m);
            for o in a.assigned_orbit.iter().flatten() {
                assert!(*o < k);
            }
            for p in &a.powers {
                assert!(*p >= cfg.uav_tx_power_max * 1e-6 && *p <= cfg.uav_tx_power_max);
            }
            let sum: f64 = a.rho.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            let (proj, corrected) = crate::feasible::project_l2(&a, &cfg);
            assert!(!corrected, "mapped uplink actions must already be feasible");
            assert_eq!(proj, a);
        }
    }

    #[test]
    fn team_noise_is_deterministic_per_stream_and_slot() {
        let dims = small_dims();
        let stream = RngStream::new(101);
        let a = TeamNoise::draw(&stream, 7, 3, &dims);
        let b = TeamNoise::draw(&stream, 7, 3, &dims);
        assert_eq!(a.per_agent, b.per_agent);
        let c = TeamNoise::draw(&stream, 8, 3, &dims);
        assert_ne!(a.per_agent, c.per_agent);
    }
}
