//! Graph-attention Q-network with per-node dueling heads.

use std::sync::Arc;

use amr_autodiff::{BoundParams, ParamSet, Tape, Tensor, TensorError, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{MeshGraph, ERROR_FLOOR, NUM_ACTIONS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VdgnConfig {
    pub hidden: usize,
    pub heads: usize,
    pub layers: usize,
    /// Number of times the whole layer stack is applied, with shared weights.
    pub passes: usize,
    pub depth_max: u32,
    /// Vector-valued Q over (cost, error).
    pub multi_objective: bool,
    /// Append the preference vector to every node observation.
    pub preference_conditioning: bool,
}

impl Default for VdgnConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            heads: 2,
            layers: 2,
            passes: 3,
            depth_max: 1,
            multi_objective: false,
            preference_conditioning: true,
        }
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("{what} width {got} does not match the model's {expected}")]
    Width { what: &'static str, expected: usize, got: usize },
    #[error("preference vector required: {0}")]
    Preference(&'static str),
    #[error("non-finite activations in model output")]
    NonFinite,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub const REWARD_DIM: usize = 2;

impl VdgnConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.hidden == 0 || self.heads == 0 || self.hidden % self.heads != 0 {
            return Err(ModelError::Config(format!("hidden {} must be a positive multiple of heads {}", self.hidden, self.heads)));
        }
        if self.layers == 0 || self.passes == 0 {
            return Err(ModelError::Config("layers and passes must be at least 1".into()));
        }
        Ok(())
    }

    pub fn objectives(&self) -> usize {
        if self.multi_objective {
            REWARD_DIM
        } else {
            1
        }
    }

    pub fn conditioned(&self) -> bool {
        self.multi_objective && self.preference_conditioning
    }

    pub fn observation_width(&self) -> usize {
        self.depth_max as usize + 2
    }

    pub fn node_input_width(&self) -> usize {
        self.observation_width() + if self.conditioned() { REWARD_DIM } else { 0 }
    }

    pub fn edge_input_width(&self) -> usize {
        2 * self.depth_max as usize + 2
    }

    /// Output columns; column `a·K + k` holds objective `k` of action `a`.
    pub fn q_width(&self) -> usize {
        NUM_ACTIONS * self.objectives()
    }

    /// Fresh parameters: weights uniform in ±1/√fan_in, biases zero, norm gains one.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamSet {
        let d = self.hidden;
        let mut p = ParamSet::new();
        let mut w = |p: &mut ParamSet, name: String, fan_in: usize, fan_out: usize, rng: &mut R| {
            let a = 1.0 / (fan_in as f64).sqrt();
            let data = (0..fan_in * fan_out).map(|_| rng.gen_range(-a..a)).collect();
            p.insert(name, Tensor::matrix(fan_in, fan_out, data).expect("shape"));
        };
        w(&mut p, "encode.node.w".into(), self.node_input_width(), d, rng);
        p.insert("encode.node.b", Tensor::zeros(&[d]));
        w(&mut p, "encode.edge.w".into(), self.edge_input_width(), d, rng);
        p.insert("encode.edge.b", Tensor::zeros(&[d]));
        let attention = |p: &mut ParamSet, prefix: &str, rng: &mut R, w: &mut dyn FnMut(&mut ParamSet, String, usize, usize, &mut R)| {
            for m in ["query", "key", "value", "edge", "out"] {
                w(p, format!("{prefix}.{m}"), d, d, rng);
            }
        };
        for l in 0..self.layers {
            let pre = format!("layer{l}");
            attention(&mut p, &format!("{pre}.attn"), rng, &mut w);
            p.insert(format!("{pre}.norm1.gain"), Tensor::full(&[d], 1.0));
            p.insert(format!("{pre}.norm1.bias"), Tensor::zeros(&[d]));
            w(&mut p, format!("{pre}.mlp.w1"), d, d, rng);
            p.insert(format!("{pre}.mlp.b1"), Tensor::zeros(&[d]));
            w(&mut p, format!("{pre}.mlp.w2"), d, d, rng);
            p.insert(format!("{pre}.mlp.b2"), Tensor::zeros(&[d]));
            p.insert(format!("{pre}.norm2.gain"), Tensor::full(&[d], 1.0));
            p.insert(format!("{pre}.norm2.bias"), Tensor::zeros(&[d]));
        }
        attention(&mut p, "advantage.attn", rng, &mut w);
        w(&mut p, "advantage.proj.w".into(), d, self.q_width(), rng);
        p.insert("advantage.proj.b", Tensor::zeros(&[self.q_width()]));
        attention(&mut p, "value.attn", rng, &mut w);
        w(&mut p, "value.proj.w".into(), d, self.objectives(), rng);
        p.insert("value.proj.b", Tensor::zeros(&[self.objectives()]));
        p
    }
}

/// Disjoint union of several observation graphs.
#[derive(Clone, Debug)]
pub struct GraphBatch {
    pub nodes: Tensor,
    pub edges: Tensor,
    pub senders: Arc<[usize]>,
    pub receivers: Arc<[usize]>,
    /// Node range of graph `g` is `offsets[g]..offsets[g+1]`.
    pub offsets: Vec<usize>,
}

impl GraphBatch {
    pub fn single(cfg: &VdgnConfig, graph: &MeshGraph, preference: Option<[f64; 2]>) -> Result<Self, ModelError> {
        Self::build(cfg, &[(graph, preference)])
    }

    pub fn build(cfg: &VdgnConfig, items: &[(&MeshGraph, Option<[f64; 2]>)]) -> Result<Self, ModelError> {
        let node_w = cfg.node_input_width();
        let edge_w = cfg.edge_input_width();
        let n: usize = items.iter().map(|(g, _)| g.num_nodes).sum();
        let e: usize = items.iter().map(|(g, _)| g.num_edges()).sum();
        let mut nodes = Vec::with_capacity(n * node_w);
        let mut edges = Vec::with_capacity(e * edge_w);
        let mut senders = Vec::with_capacity(e);
        let mut receivers = Vec::with_capacity(e);
        let mut offsets = vec![0];
        // ln-error spans [ln floor, 0]; layer norm would otherwise erase its magnitude
        let error_scale = -1.0 / ERROR_FLOOR.ln();
        for (g, pref) in items {
            if g.node_width != cfg.observation_width() {
                return Err(ModelError::Width {
                    what: "node feature",
                    expected: cfg.observation_width(),
                    got: g.node_width,
                });
            }
            if g.edge_width != edge_w {
                return Err(ModelError::Width {
                    what: "edge feature",
                    expected: edge_w,
                    got: g.edge_width,
                });
            }
            let base = *offsets.last().unwrap();
            for i in 0..g.num_nodes {
                let row = nodes.len();
                nodes.extend_from_slice(g.node(i));
                nodes[row] *= error_scale;
                if cfg.conditioned() {
                    let w = pref.ok_or(ModelError::Preference("multi-objective model without ω"))?;
                    nodes.extend_from_slice(&w);
                }
            }
            edges.extend_from_slice(&g.edges);
            senders.extend(g.senders.iter().map(|s| s + base));
            receivers.extend(g.receivers.iter().map(|r| r + base));
            offsets.push(base + g.num_nodes);
        }
        Ok(Self {
            nodes: Tensor::matrix(n, node_w, nodes)?,
            edges: Tensor::matrix(e, edge_w, edges)?,
            senders: senders.into(),
            receivers: receivers.into(),
            offsets,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.rows()
    }

    pub fn num_graphs(&self) -> usize {
        self.offsets.len() - 1
    }
}

struct Ctx<'a> {
    cfg: &'a VdgnConfig,
    p: &'a BoundParams,
    batch: &'a GraphBatch,
}

/// Multi-head attention over in-edges of every node; nodes without in-edges get zeros.
pub fn attention_sublayer(tape: &mut Tape, cfg: &VdgnConfig, params: &BoundParams, batch: &GraphBatch, prefix: &str, x: Var, e: Var) -> Result<Var, TensorError> {
    attention(tape, &Ctx { cfg, p: params, batch }, prefix, x, e)
}

/// Attention and MLP sublayers, each with residual and layer norm.
pub fn vdgn_layer(tape: &mut Tape, cfg: &VdgnConfig, params: &BoundParams, batch: &GraphBatch, l: usize, x: Var, e: Var) -> Result<Var, TensorError> {
    layer(tape, &Ctx { cfg, p: params, batch }, l, x, e)
}

fn attention(tape: &mut Tape, ctx: &Ctx, prefix: &str, x: Var, e: Var) -> Result<Var, TensorError> {
    let p = |m: &str| ctx.p.var(&format!("{prefix}.{m}"));
    let n = ctx.batch.num_nodes();
    let q = tape.matmul(x, p("query"))?;
    let k = tape.matmul(x, p("key"))?;
    let v = tape.matmul(x, p("value"))?;
    let ev = tape.matmul(e, p("edge"))?;
    let q_r = tape.gather_rows(q, &ctx.batch.receivers)?;
    let k_s = tape.gather_rows(k, &ctx.batch.senders)?;
    let v_s = tape.gather_rows(v, &ctx.batch.senders)?;
    let msg = tape.add(v_s, ev)?;
    let width = ctx.cfg.hidden / ctx.cfg.heads;
    let mut heads = Vec::with_capacity(ctx.cfg.heads);
    for h in 0..ctx.cfg.heads {
        let (a, b) = (h * width, (h + 1) * width);
        let qh = tape.slice_cols(q_r, a, b)?;
        let kh = tape.slice_cols(k_s, a, b)?;
        let score = tape.row_dot(qh, kh)?;
        let weight = tape.segment_softmax(score, &ctx.batch.receivers)?;
        let mh = tape.slice_cols(msg, a, b)?;
        let weighted = tape.scale_rows(mh, weight)?;
        heads.push(tape.scatter_add_rows(weighted, &ctx.batch.receivers, n)?);
    }
    let cat = if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads)? };
    tape.matmul(cat, p("out"))
}

fn layer(tape: &mut Tape, ctx: &Ctx, l: usize, x: Var, e: Var) -> Result<Var, TensorError> {
    let p = |m: &str| ctx.p.var(&format!("layer{l}.{m}"));
    let a = attention(tape, ctx, &format!("layer{l}.attn"), x, e)?;
    let r = tape.add(x, a)?;
    let g = tape.layer_norm(r, p("norm1.gain"), p("norm1.bias"))?;
    let h = tape.matmul(g, p("mlp.w1"))?;
    let h = tape.add_bias(h, p("mlp.b1"))?;
    let h = tape.relu(h);
    let h = tape.matmul(h, p("mlp.w2"))?;
    let h = tape.add_bias(h, p("mlp.b2"))?;
    let r = tape.add(g, h)?;
    tape.layer_norm(r, p("norm2.gain"), p("norm2.bias"))
}

fn head(tape: &mut Tape, ctx: &Ctx, name: &str, x: Var, e: Var) -> Result<Var, TensorError> {
    let a = attention(tape, ctx, &format!("{name}.attn"), x, e)?;
    let h = tape.add(x, a)?;
    let y = tape.matmul(h, ctx.p.var(&format!("{name}.proj.w")))?;
    tape.add_bias(y, ctx.p.var(&format!("{name}.proj.b")))
}

/// Records the forward pass; returns `[nodes × q_width]` Q values.
pub fn forward(tape: &mut Tape, cfg: &VdgnConfig, params: &BoundParams, batch: &GraphBatch) -> Result<Var, ModelError> {
    Ok(forward_parts(tape, cfg, params, batch)?.q)
}

/// Head outputs before and after the dueling combination.
#[derive(Clone, Copy, Debug)]
pub struct ForwardParts {
    /// `[nodes × objectives]`.
    pub value: Var,
    /// `[nodes × q_width]`, uncentred.
    pub advantage: Var,
    pub q: Var,
}

pub fn forward_parts(tape: &mut Tape, cfg: &VdgnConfig, params: &BoundParams, batch: &GraphBatch) -> Result<ForwardParts, ModelError> {
    if batch.nodes.cols() != cfg.node_input_width() {
        return Err(ModelError::Width {
            what: "node input",
            expected: cfg.node_input_width(),
            got: batch.nodes.cols(),
        });
    }
    let ctx = Ctx { cfg, p: params, batch };
    let nodes = tape.constant(batch.nodes.clone());
    let edges = tape.constant(batch.edges.clone());
    let x = tape.matmul(nodes, params.var("encode.node.w"))?;
    let mut x = tape.add_bias(x, params.var("encode.node.b"))?;
    let e = tape.matmul(edges, params.var("encode.edge.w"))?;
    let e = tape.add_bias(e, params.var("encode.edge.b"))?;
    for _ in 0..cfg.passes {
        for l in 0..cfg.layers {
            x = layer(tape, &ctx, l, x, e)?;
        }
    }
    let adv = head(tape, &ctx, "advantage", x, e)?;
    let val = head(tape, &ctx, "value", x, e)?;

    // Q = V·B + A·C with B broadcasting V over actions and C centring A per objective
    let k = cfg.objectives();
    let w = cfg.q_width();
    let mut center = vec![0.0; w * w];
    let mut bcast = vec![0.0; k * w];
    for a in 0..NUM_ACTIONS {
        for o in 0..k {
            let col = a * k + o;
            bcast[o * w + col] = 1.0;
            for b in 0..NUM_ACTIONS {
                center[(b * k + o) * w + col] = if a == b { 1.0 } else { 0.0 } - 1.0 / NUM_ACTIONS as f64;
            }
        }
    }
    let center = tape.constant(Tensor::matrix(w, w, center)?);
    let bcast = tape.constant(Tensor::matrix(k, w, bcast)?);
    let a = tape.matmul(adv, center)?;
    let v = tape.matmul(val, bcast)?;
    Ok(ForwardParts {
        value: val,
        advantage: adv,
        q: tape.add(a, v)?,
    })
}

/// Inference without gradients.
pub fn q_values(cfg: &VdgnConfig, params: &ParamSet, batch: &GraphBatch) -> Result<Tensor, ModelError> {
    let mut tape = Tape::new();
    let bound = params.bind_frozen(&mut tape);
    let q = forward(&mut tape, cfg, &bound, batch)?;
    let out = tape.value(q).clone();
    if !out.is_finite() {
        return Err(ModelError::NonFinite);
    }
    Ok(out)
}

/// Per-row argmax of `ωᵀQ` (or of Q for one objective); ties go to the lowest action.
pub fn greedy_from_q(q: &Tensor, objectives: usize, preference: Option<[f64; 2]>) -> Vec<u8> {
    (0..q.rows())
        .map(|r| {
            let row = q.row(r);
            let score = |a: usize| match preference {
                Some(w) if objectives == REWARD_DIM => w[0] * row[a * 2] + w[1] * row[a * 2 + 1],
                _ => row[a * objectives],
            };
            let mut best = 0;
            for a in 1..NUM_ACTIONS {
                if score(a) > score(best) {
                    best = a;
                }
            }
            best as u8
        })
        .collect()
}

pub fn greedy_joint_action(cfg: &VdgnConfig, params: &ParamSet, graph: &MeshGraph, preference: Option<[f64; 2]>) -> Result<Vec<u8>, ModelError> {
    if cfg.multi_objective && preference.is_none() {
        return Err(ModelError::Preference("greedy action in multi-objective mode"));
    }
    let batch = GraphBatch::single(cfg, graph, preference)?;
    let q = q_values(cfg, params, &batch)?;
    Ok(greedy_from_q(&q, cfg.objectives(), preference))
}
