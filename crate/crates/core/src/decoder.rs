//! Autoregressive GRU sentence decoder conditioned on a pooled graph vector.
//!
//! The pooled vector is the initial state and is added to every step's
//! input embedding. Output projections start at zero, so an untrained
//! decoder predicts the uniform distribution over its vocabulary.

use rand_chacha::ChaCha8Rng;

use crate::encoder::uniform;
use crate::error::{Error, Result};
use crate::numerics::{argmax, ParamId, ParamStore, Tape, Tensor, Var};
use crate::vocab::{BOS_ID, EOS_ID};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecoderParams {
    pub dim: usize,
    pub vocab_len: usize,
    pub embed: ParamId,
    /// Update gate, reset gate and candidate: input weight, state weight, bias.
    pub gates: [[ParamId; 3]; 3],
    pub out_w: ParamId,
    pub out_b: ParamId,
    /// Output weight on the attention context over node rows, when enabled.
    pub attn_w: Option<ParamId>,
}

const GATE_NAMES: [&str; 3] = ["update", "reset", "cand"];

impl DecoderParams {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        vocab_len: usize,
        dim: usize,
        attention: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if vocab_len <= EOS_ID + 1 || dim == 0 {
            return Err(Error::Config(
                "decoder needs a non-empty vocabulary and positive dim".into(),
            ));
        }
        let bound = 1.0 / (dim as f64).sqrt();
        let embed = store.add(format!("{prefix}.embed"), uniform(rng, vec![vocab_len, dim], bound))?;
        let mut gates = [[embed; 3]; 3];
        for (g, name) in GATE_NAMES.iter().enumerate() {
            gates[g][0] = store.add(format!("{prefix}.{name}.w"), uniform(rng, vec![dim, dim], bound))?;
            gates[g][1] = store.add(format!("{prefix}.{name}.u"), uniform(rng, vec![dim, dim], bound))?;
            gates[g][2] = store.add(format!("{prefix}.{name}.b"), Tensor::zeros(vec![dim]))?;
        }
        let out_w = store.add(format!("{prefix}.out_w"), Tensor::zeros(vec![vocab_len, dim]))?;
        let out_b = store.add(format!("{prefix}.out_b"), Tensor::zeros(vec![vocab_len]))?;
        let attn_w = if attention {
            Some(store.add(format!("{prefix}.attn_w"), Tensor::zeros(vec![vocab_len, dim]))?)
        } else {
            None
        };
        Ok(DecoderParams {
            dim,
            vocab_len,
            embed,
            gates,
            out_w,
            out_b,
            attn_w,
        })
    }

    pub fn lookup(store: &ParamStore, prefix: &str) -> Result<Self> {
        let get = |n: &str| {
            store
                .id(&format!("{prefix}.{n}"))
                .ok_or(Error::Checkpoint(format!("missing tensor {prefix}.{n}")))
        };
        let embed = get("embed")?;
        let shape = store.get(embed).shape().to_vec();
        let mut gates = [[embed; 3]; 3];
        for (g, name) in GATE_NAMES.iter().enumerate() {
            gates[g] = [
                get(&format!("{name}.w"))?,
                get(&format!("{name}.u"))?,
                get(&format!("{name}.b"))?,
            ];
        }
        Ok(DecoderParams {
            dim: shape[1],
            vocab_len: shape[0],
            embed,
            gates,
            out_w: get("out_w")?,
            out_b: get("out_b")?,
            attn_w: store.id(&format!("{prefix}.attn_w")),
        })
    }
}

/// Conditioning for one decode: the pooled vector and, for the attention
/// variant, the node rows it was pooled from.
#[derive(Debug, Clone, Copy)]
pub struct Context<'a> {
    pub pooled: Var,
    pub nodes: &'a [Var],
}

struct Step {
    table: Var,
    gates: [[Var; 3]; 3],
    out_w: Var,
    out_b: Var,
    attn_w: Option<Var>,
}

impl Step {
    fn new(tape: &mut Tape, store: &ParamStore, dec: &DecoderParams) -> Self {
        let gates = std::array::from_fn(|g| std::array::from_fn(|k| tape.param(store, dec.gates[g][k])));
        Step {
            table: tape.param(store, dec.embed),
            gates,
            out_w: tape.param(store, dec.out_w),
            out_b: tape.param(store, dec.out_b),
            attn_w: dec.attn_w.map(|w| tape.param(store, w)),
        }
    }

    fn gate(&self, tape: &mut Tape, g: usize, x: Var, h: Var) -> Var {
        let [w, u, b] = self.gates[g];
        let a = tape.matvec(w, x);
        let c = tape.matvec(u, h);
        let s = tape.add(a, c);
        tape.add(s, b)
    }

    /// One GRU transition on token `prev`.
    fn advance(&self, tape: &mut Tape, ctx: &Context<'_>, h: Var, prev: usize) -> Var {
        let e = tape.row(self.table, prev);
        let x = tape.add(e, ctx.pooled);
        let zpre = self.gate(tape, 0, x, h);
        let z = tape.sigmoid(zpre);
        let rpre = self.gate(tape, 1, x, h);
        let r = tape.sigmoid(rpre);
        let [w, u, b] = self.gates[2];
        let wx = tape.matvec(w, x);
        let uh = tape.matvec(u, h);
        let ruh = tape.mul(r, uh);
        let s = tape.add(wx, ruh);
        let s = tape.add(s, b);
        let n = tape.tanh(s);
        // h' = n + z * (h - n)
        let d = tape.sub(h, n);
        let zd = tape.mul(z, d);
        tape.add(n, zd)
    }

    fn logits(&self, tape: &mut Tape, ctx: &Context<'_>, h: Var) -> Result<Var> {
        let mut l = tape.affine(self.out_w, h, self.out_b);
        if let Some(aw) = self.attn_w {
            if ctx.nodes.is_empty() {
                return Err(Error::Contract("attention decoder needs node rows".into()));
            }
            let scores: Vec<Var> = ctx.nodes.iter().map(|r| tape.dot(h, *r)).collect();
            let s = tape.concat(&scores);
            let a = tape.softmax(s);
            let mut terms = Vec::with_capacity(ctx.nodes.len());
            for (k, r) in ctx.nodes.iter().enumerate() {
                let ak = tape.index(a, k);
                terms.push(tape.scalar_mul(ak, *r));
            }
            let mut c = terms[0];
            for t in &terms[1..] {
                c = tape.add(c, *t);
            }
            let ac = tape.matvec(aw, c);
            l = tape.add(l, ac);
        }
        Ok(l)
    }
}

fn check_width(tape: &Tape, dec: &DecoderParams, ctx: &Context<'_>) -> Result<()> {
    if tape.numel(ctx.pooled) != dec.dim {
        return Err(Error::Contract(format!(
            "pooled vector of length {} for decoder dim {}",
            tape.numel(ctx.pooled),
            dec.dim
        )));
    }
    Ok(())
}

/// Summed cross-entropy of `target` followed by end-of-sentence, with
/// teacher forcing. `target` holds word ids (no markers).
pub fn sentence_nll(
    tape: &mut Tape,
    store: &ParamStore,
    dec: &DecoderParams,
    ctx: &Context<'_>,
    target: &[usize],
) -> Result<Var> {
    if target.is_empty() {
        return Err(Error::Contract("cannot score an empty sentence".into()));
    }
    check_width(tape, dec, ctx)?;
    if let Some(&bad) = target.iter().find(|&&t| t <= EOS_ID || t >= dec.vocab_len) {
        return Err(Error::Contract(format!("token id {bad} is not a word of this decoder")));
    }
    let step = Step::new(tape, store, dec);
    let mut h = ctx.pooled;
    let mut prev = BOS_ID;
    let mut terms = Vec::with_capacity(target.len() + 1);
    for &t in target.iter().chain(std::iter::once(&EOS_ID)) {
        h = step.advance(tape, ctx, h, prev);
        let logits = step.logits(tape, ctx, h)?;
        terms.push(tape.nll(logits, t));
        prev = t;
    }
    Ok(tape.add_all(&terms))
}

/// Greedy decoding; stops at end-of-sentence or after `max_len` words.
/// Begin-of-sentence is never emitted.
pub fn greedy_decode(
    tape: &mut Tape,
    store: &ParamStore,
    dec: &DecoderParams,
    ctx: &Context<'_>,
    max_len: usize,
) -> Result<Vec<usize>> {
    check_width(tape, dec, ctx)?;
    let step = Step::new(tape, store, dec);
    let mut h = ctx.pooled;
    let mut prev = BOS_ID;
    let mut out = Vec::new();
    while out.len() < max_len {
        h = step.advance(tape, ctx, h, prev);
        let logits = step.logits(tape, ctx, h)?;
        let mut l = tape.value(logits).to_vec();
        l[BOS_ID] = f64::NEG_INFINITY;
        let t = argmax(&l);
        if t == EOS_ID {
            break;
        }
        out.push(t);
        prev = t;
    }
    Ok(out)
}
