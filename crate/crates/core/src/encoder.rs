//! Label embeddings and the direction-aware graph convolutional encoder.
//!
//! Each layer computes, for node `i`,
//! `act(W_self h_i + W_in mean(h_j, j → i) + W_out mean(h_k, i → k) + b)`
//! with ReLU on hidden layers and identity on the last one. Empty
//! neighbourhoods contribute nothing.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::scene_graph::{Modality, SceneGraph};
use crate::vocab::Vocab;

/// Tensor with entries drawn uniformly from `(-bound, bound)`.
pub fn uniform(rng: &mut ChaCha8Rng, shape: Vec<usize>, bound: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let values = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape, values).expect("finite uniform values")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GcnLayer {
    pub w_self: ParamId,
    pub w_in: ParamId,
    pub w_out: ParamId,
    pub bias: ParamId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GcnParams {
    pub dim: usize,
    pub layers: Vec<GcnLayer>,
}

impl GcnParams {
    /// Registers `layers` layers under `prefix`, weights uniform in `±1/√dim`, zero bias.
    pub fn init(store: &mut ParamStore, prefix: &str, dim: usize, layers: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if dim == 0 || layers == 0 {
            return Err(Error::Config("encoder needs positive dim and layer count".into()));
        }
        let bound = 1.0 / (dim as f64).sqrt();
        let mut out = Vec::with_capacity(layers);
        for l in 0..layers {
            let mut w = |name: &str, rng: &mut ChaCha8Rng| {
                store.add(format!("{prefix}.l{l}.{name}"), uniform(rng, vec![dim, dim], bound))
            };
            let w_self = w("w_self", rng)?;
            let w_in = w("w_in", rng)?;
            let w_out = w("w_out", rng)?;
            let bias = store.add(format!("{prefix}.l{l}.bias"), Tensor::zeros(vec![dim]))?;
            out.push(GcnLayer {
                w_self,
                w_in,
                w_out,
                bias,
            });
        }
        Ok(GcnParams { dim, layers: out })
    }

    /// Finds previously registered layers by name.
    pub fn lookup(store: &ParamStore, prefix: &str, dim: usize, layers: usize) -> Result<Self> {
        let get = |name: String| {
            store
                .id(&name)
                .ok_or(Error::Checkpoint(format!("missing tensor {name}")))
        };
        let mut out = Vec::with_capacity(layers);
        for l in 0..layers {
            out.push(GcnLayer {
                w_self: get(format!("{prefix}.l{l}.w_self"))?,
                w_in: get(format!("{prefix}.l{l}.w_in"))?,
                w_out: get(format!("{prefix}.l{l}.w_out"))?,
                bias: get(format!("{prefix}.l{l}.bias"))?,
            });
        }
        Ok(GcnParams { dim, layers: out })
    }
}

/// Per-node representation rows recorded on a tape.
#[derive(Debug, Clone)]
pub struct NodeReps {
    pub rows: Vec<Var>,
    pub modality: Modality,
}

impl NodeReps {
    pub fn values(&self, tape: &Tape) -> Vec<Vec<f64>> {
        self.rows.iter().map(|v| tape.value(*v).to_vec()).collect()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Row `i` is the embedding of node `i`'s label.
pub fn embed_nodes(
    tape: &mut Tape,
    store: &ParamStore,
    g: &SceneGraph,
    labels: &Vocab,
    table: ParamId,
) -> Result<Vec<Var>> {
    let idx: Vec<usize> = g
        .nodes()
        .iter()
        .map(|n| labels.require(&n.label))
        .collect::<Result<_>>()?;
    let t = tape.param(store, table);
    Ok(idx.into_iter().map(|i| tape.row(t, i)).collect())
}

pub fn gcn_forward(
    tape: &mut Tape,
    store: &ParamStore,
    g: &SceneGraph,
    feats: &[Var],
    enc: &GcnParams,
) -> Result<NodeReps> {
    if feats.len() != g.len() {
        return Err(Error::Contract(format!(
            "{} feature rows for a graph of {} nodes",
            feats.len(),
            g.len()
        )));
    }
    if let Some(bad) = feats.iter().find(|f| tape.numel(**f) != enc.dim) {
        return Err(Error::Contract(format!(
            "feature row of length {} for encoder dim {}",
            tape.numel(*bad),
            enc.dim
        )));
    }
    if g.edges().iter().any(|&(s, d)| s >= g.len() || d >= g.len()) {
        return Err(Error::Contract("edge references a missing node".into()));
    }
    let (ins, outs) = g.adjacency();
    let mut h: Vec<Var> = feats.to_vec();
    let last = enc.layers.len() - 1;
    for (l, layer) in enc.layers.iter().enumerate() {
        let ws = tape.param(store, layer.w_self);
        let wi = tape.param(store, layer.w_in);
        let wo = tape.param(store, layer.w_out);
        let b = tape.param(store, layer.bias);
        let mut next = Vec::with_capacity(h.len());
        for i in 0..h.len() {
            let mut s = tape.matvec(ws, h[i]);
            if !ins[i].is_empty() {
                let rows: Vec<Var> = ins[i].iter().map(|&j| h[j]).collect();
                let m = tape.mean(&rows)?;
                let t = tape.matvec(wi, m);
                s = tape.add(s, t);
            }
            if !outs[i].is_empty() {
                let rows: Vec<Var> = outs[i].iter().map(|&j| h[j]).collect();
                let m = tape.mean(&rows)?;
                let t = tape.matvec(wo, m);
                s = tape.add(s, t);
            }
            s = tape.add(s, b);
            if l < last {
                s = tape.relu(s);
            }
            next.push(s);
        }
        h = next;
    }
    Ok(NodeReps {
        rows: h,
        modality: g.modality(),
    })
}

/// Embeds and encodes a graph in one call.
pub fn encode_graph(
    tape: &mut Tape,
    store: &ParamStore,
    g: &SceneGraph,
    labels: &Vocab,
    table: ParamId,
    enc: &GcnParams,
) -> Result<NodeReps> {
    let feats = embed_nodes(tape, store, g, labels, table)?;
    gcn_forward(tape, store, g, &feats, enc)
}
