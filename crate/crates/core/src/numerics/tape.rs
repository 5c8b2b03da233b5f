//! Tape-based reverse-mode differentiation over small dense tensors.
//!
//! Operations are recorded in creation order, so the node list is already a
//! topological order and the backward pass is a single reverse sweep. A tape
//! owns plain vectors only; it is `Send` and can be built on any thread.
//!
//! A tape supports exactly one backward pass. Build a fresh tape per step.

use std::cmp::Ordering;
use std::collections::HashMap;

use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::{axpy, dot, norm};
use super::NumericsError;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MatVec(Var, Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Ln(Var),
    Sum(Var),
    Dot(Var, Var),
    Mean(Vec<Var>),
    Concat(Vec<Var>),
    Index(Var, usize),
    Row(Var, usize),
    ScalarMul(Var, Var),
    Cosine(Var, Var),
    Softmax(Var),
    Nll(Var, usize),
    Triaffine { w: Var, a: Var, b: Var, c: Var },
}

#[derive(Debug, Clone)]
struct Node {
    value: Vec<f64>,
    shape: Vec<usize>,
    op: Op,
    needs_grad: bool,
    // Saved forward quantities (softmax probabilities for `Nll`).
    aux: Vec<f64>,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    backpropagated: bool,
    non_finite_at: Option<usize>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Vec<f64>, shape: Vec<usize>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(value.len(), shape.iter().product::<usize>());
        if self.non_finite_at.is_none() && value.iter().any(|v| !v.is_finite()) {
            self.non_finite_at = Some(self.nodes.len());
        }
        self.nodes.push(Node {
            value,
            shape,
            op,
            needs_grad,
            aux: Vec::new(),
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// Value of a single-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        let n = &self.nodes[v.0];
        assert_eq!(n.value.len(), 1, "scalar() on non-scalar node");
        n.value[0]
    }

    pub fn numel(&self, v: Var) -> usize {
        self.nodes[v.0].value.len()
    }

    /// Constant input; receives no gradient.
    pub fn constant(&mut self, values: Vec<f64>) -> Var {
        let n = values.len();
        self.push(values, vec![n], Op::Leaf, false)
    }

    pub fn constant_shaped(&mut self, values: Vec<f64>, shape: Vec<usize>) -> Var {
        self.push(values, shape, Op::Leaf, false)
    }

    pub fn zeros(&mut self, n: usize) -> Var {
        self.constant(vec![0.0; n])
    }

    /// Differentiable leaf whose gradient is reported by [`Gradients::var`].
    pub fn var(&mut self, values: Vec<f64>, shape: Vec<usize>) -> Var {
        self.push(values, shape, Op::Leaf, true)
    }

    /// Parameter leaf; recorded once per tape and reused on later calls.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(v) = self.params.get(&id) {
            return *v;
        }
        let t = store.get(id);
        let v = self.push(t.values().to_vec(), t.shape().to_vec(), Op::Param(id), true);
        self.params.insert(id, v);
        v
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.numel(a), self.numel(b), "add: length mismatch");
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let shape = self.shape(a).to_vec();
        let ng = self.ng(a) || self.ng(b);
        self.push(value, shape, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.numel(a), self.numel(b), "sub: length mismatch");
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x - y).collect();
        let shape = self.shape(a).to_vec();
        let ng = self.ng(a) || self.ng(b);
        self.push(value, shape, Op::Sub(a, b), ng)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.numel(a), self.numel(b), "mul: length mismatch");
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        let shape = self.shape(a).to_vec();
        let ng = self.ng(a) || self.ng(b);
        self.push(value, shape, Op::Mul(a, b), ng)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).iter().map(|x| x * s).collect();
        let shape = self.shape(a).to_vec();
        let ng = self.ng(a);
        self.push(value, shape, Op::Scale(a, s), ng)
    }

    /// `w x` for `w` of shape `[m, n]` and `x` of length `n`.
    pub fn matvec(&mut self, w: Var, x: Var) -> Var {
        let shape = self.shape(w);
        assert_eq!(shape.len(), 2, "matvec: weight must be rank 2");
        let (m, n) = (shape[0], shape[1]);
        assert_eq!(self.numel(x), n, "matvec: expected input of length {n}");
        let wv = self.value(w);
        let xv = self.value(x);
        let value: Vec<f64> = (0..m).map(|i| dot(&wv[i * n..(i + 1) * n], xv)).collect();
        let ng = self.ng(w) || self.ng(x);
        self.push(value, vec![m], Op::MatVec(w, x), ng)
    }

    /// `w x + b`.
    pub fn affine(&mut self, w: Var, x: Var, b: Var) -> Var {
        let h = self.matvec(w, x);
        self.add(h, b)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).iter().map(|x| x.max(0.0)).collect();
        let shape = self.shape(a).to_vec();
        let ng = self.ng(a);
        self.push(value, shape, Op::Relu(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).iter().map(|x| x.tanh()).collect();
        let shape = self.shape(a).to_vec();
        let ng = self.ng(a);
        self.push(value, shape, Op::Tanh(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).iter().map(|&x| sigmoid(x)).collect();
        let shape = self.shape(a).to_vec();
        let ng = self.ng(a);
        self.push(value, shape, Op::Sigmoid(a), ng)
    }

    /// Natural log; inputs must be positive.
    pub fn ln(&mut self, a: Var) -> Var {
        let value = self.value(a).iter().map(|x| x.ln()).collect();
        let shape = self.shape(a).to_vec();
        let ng = self.ng(a);
        self.push(value, shape, Op::Ln(a), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        let ng = self.ng(a);
        self.push(vec![s], vec![1], Op::Sum(a), ng)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.numel(a), self.numel(b), "dot: length mismatch");
        let s = dot(self.value(a), self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(vec![s], vec![1], Op::Dot(a, b), ng)
    }

    /// Elementwise mean of equally sized vectors.
    ///
    /// Inputs are summed in order of their values, so the result is invariant
    /// under any permutation of `vars`, bit for bit.
    pub fn mean(&mut self, vars: &[Var]) -> Result<Var, NumericsError> {
        let first = *vars
            .first()
            .ok_or_else(|| NumericsError::Domain("mean of an empty set of rows".into()))?;
        let n = self.numel(first);
        if vars.iter().any(|v| self.numel(*v) != n) {
            return Err(NumericsError::Contract("mean: rows differ in length".into()));
        }
        let mut order: Vec<Var> = vars.to_vec();
        order.sort_by(|a, b| lex_cmp(self.value(*a), self.value(*b)));
        let mut acc = vec![0.0; n];
        for v in &order {
            axpy(1.0, self.value(*v), &mut acc);
        }
        let inv = 1.0 / vars.len() as f64;
        acc.iter_mut().for_each(|x| *x *= inv);
        let ng = vars.iter().any(|v| self.ng(*v));
        Ok(self.push(acc, vec![n], Op::Mean(vars.to_vec()), ng))
    }

    pub fn concat(&mut self, vars: &[Var]) -> Var {
        let mut value = Vec::new();
        for v in vars {
            value.extend_from_slice(self.value(*v));
        }
        let n = value.len();
        let ng = vars.iter().any(|v| self.ng(*v));
        self.push(value, vec![n], Op::Concat(vars.to_vec()), ng)
    }

    /// Sum of scalar nodes.
    pub fn add_all(&mut self, vars: &[Var]) -> Var {
        if vars.is_empty() {
            return self.constant(vec![0.0]);
        }
        let c = self.concat(vars);
        self.sum(c)
    }

    pub fn index(&mut self, a: Var, i: usize) -> Var {
        let x = self.value(a)[i];
        let ng = self.ng(a);
        self.push(vec![x], vec![1], Op::Index(a, i), ng)
    }

    /// Row `i` of a rank-2 node (embedding lookup).
    pub fn row(&mut self, m: Var, i: usize) -> Var {
        let shape = self.shape(m);
        assert_eq!(shape.len(), 2, "row: matrix expected");
        let cols = shape[1];
        assert!(i < shape[0], "row {i} out of range for {} rows", shape[0]);
        let value = self.value(m)[i * cols..(i + 1) * cols].to_vec();
        let ng = self.ng(m);
        self.push(value, vec![cols], Op::Row(m, i), ng)
    }

    /// Scalar node times vector node.
    pub fn scalar_mul(&mut self, s: Var, v: Var) -> Var {
        assert_eq!(self.numel(s), 1, "scalar_mul: first operand must be scalar");
        let k = self.value(s)[0];
        let value = self.value(v).iter().map(|x| k * x).collect();
        let shape = self.shape(v).to_vec();
        let ng = self.ng(s) || self.ng(v);
        self.push(value, shape, Op::ScalarMul(s, v), ng)
    }

    /// Cosine similarity; fails on a zero-norm operand.
    pub fn cosine(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let c = cosine_similarity(self.value(a), self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(vec![c], vec![1], Op::Cosine(a, b), ng))
    }

    /// Max-subtracted softmax (temperature 1).
    pub fn softmax(&mut self, a: Var) -> Var {
        let value = softmax_stable(self.value(a), 1.0);
        let shape = self.shape(a).to_vec();
        let ng = self.ng(a);
        self.push(value, shape, Op::Softmax(a), ng)
    }

    /// `-log softmax(logits)[target]`, computed stably.
    pub fn nll(&mut self, logits: Var, target: usize) -> Var {
        let probs = softmax_stable(self.value(logits), 1.0);
        assert!(target < probs.len(), "nll: target {target} out of range");
        let lv = self.value(logits);
        let m = lv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + lv.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        let loss = lse - lv[target];
        let ng = self.ng(logits);
        let v = self.push(vec![loss], vec![1], Op::Nll(logits, target), ng);
        self.nodes[v.0].aux = probs;
        v
    }

    /// Trilinear form `out[k] = sum W[k,i,j,l] [a;1]_i b_j [c;1]_l`.
    ///
    /// `w` has shape `[h, p+1, p, p+1]` where `a`, `b`, `c` have length `p`.
    pub fn triaffine(&mut self, w: Var, a: Var, b: Var, c: Var) -> Var {
        let shape = self.shape(w).to_vec();
        assert_eq!(shape.len(), 4, "triaffine: weight must be rank 4");
        let (h, p) = (shape[0], shape[2]);
        assert_eq!(shape[1], p + 1);
        assert_eq!(shape[3], p + 1);
        assert_eq!(self.numel(a), p);
        assert_eq!(self.numel(b), p);
        assert_eq!(self.numel(c), p);
        let a1 = augment(self.value(a));
        let c1 = augment(self.value(c));
        let bv = self.value(b);
        let wv = self.value(w);
        let mut out = vec![0.0; h];
        for (k, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (i, ai) in a1.iter().enumerate() {
                for (j, bj) in bv.iter().enumerate() {
                    let base = ((k * (p + 1) + i) * p + j) * (p + 1);
                    acc += ai * bj * dot(&wv[base..base + p + 1], &c1);
                }
            }
            *o = acc;
        }
        let ng = self.ng(w) || self.ng(a) || self.ng(b) || self.ng(c);
        self.push(out, vec![h], Op::Triaffine { w, a, b, c }, ng)
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Parameters and gradient-tracking leaves that the loss does not reach
    /// get no entry; [`Gradients::param_or_zeros`] fills those with zeros. A
    /// second call on the same tape is rejected.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients, NumericsError> {
        if self.backpropagated {
            return Err(NumericsError::AlreadyBackpropagated);
        }
        if self.numel(loss) != 1 {
            return Err(NumericsError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        if let Some(at) = self.non_finite_at {
            return Err(NumericsError::NonFinite(format!("tape node {at}")));
        }
        self.backpropagated = true;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients::default();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let nodes = &self.nodes;
            let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
                if !nodes[v.0].needs_grad {
                    return;
                }
                let slot = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]);
                f(slot);
            };
            match &node.op {
                Op::Leaf => {
                    out.vars.insert(idx, g);
                }
                Op::Param(id) => {
                    out.params.insert(*id, g);
                }
                Op::Add(a, b) => {
                    acc(*a, &mut |s| axpy(1.0, &g, s));
                    acc(*b, &mut |s| axpy(1.0, &g, s));
                }
                Op::Sub(a, b) => {
                    acc(*a, &mut |s| axpy(1.0, &g, s));
                    acc(*b, &mut |s| axpy(-1.0, &g, s));
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                    acc(*a, &mut |s| {
                        for i in 0..s.len() {
                            s[i] += g[i] * bv[i];
                        }
                    });
                    acc(*b, &mut |s| {
                        for i in 0..s.len() {
                            s[i] += g[i] * av[i];
                        }
                    });
                }
                Op::Scale(a, k) => acc(*a, &mut |s| axpy(*k, &g, s)),
                Op::MatVec(w, x) => {
                    let shape = &nodes[w.0].shape;
                    let (m, n) = (shape[0], shape[1]);
                    let (wv, xv) = (&nodes[w.0].value, &nodes[x.0].value);
                    acc(*w, &mut |s| {
                        for i in 0..m {
                            if g[i] != 0.0 {
                                axpy(g[i], xv, &mut s[i * n..(i + 1) * n]);
                            }
                        }
                    });
                    acc(*x, &mut |s| {
                        for i in 0..m {
                            if g[i] != 0.0 {
                                axpy(g[i], &wv[i * n..(i + 1) * n], s);
                            }
                        }
                    });
                }
                Op::Relu(a) => {
                    let av = &nodes[a.0].value;
                    acc(*a, &mut |s| {
                        for i in 0..s.len() {
                            if av[i] > 0.0 {
                                s[i] += g[i];
                            }
                        }
                    });
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    acc(*a, &mut |s| {
                        for i in 0..s.len() {
                            s[i] += g[i] * (1.0 - y[i] * y[i]);
                        }
                    });
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    acc(*a, &mut |s| {
                        for i in 0..s.len() {
                            s[i] += g[i] * y[i] * (1.0 - y[i]);
                        }
                    });
                }
                Op::Ln(a) => {
                    let av = &nodes[a.0].value;
                    acc(*a, &mut |s| {
                        for i in 0..s.len() {
                            s[i] += g[i] / av[i];
                        }
                    });
                }
                Op::Sum(a) => acc(*a, &mut |s| s.iter_mut().for_each(|x| *x += g[0])),
                Op::Dot(a, b) => {
                    let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                    acc(*a, &mut |s| axpy(g[0], bv, s));
                    acc(*b, &mut |s| axpy(g[0], av, s));
                }
                Op::Mean(vs) => {
                    let inv = 1.0 / vs.len() as f64;
                    for v in vs {
                        acc(*v, &mut |s| axpy(inv, &g, s));
                    }
                }
                Op::Concat(vs) => {
                    let mut off = 0;
                    for v in vs {
                        let len = nodes[v.0].value.len();
                        acc(*v, &mut |s| axpy(1.0, &g[off..off + len], s));
                        off += len;
                    }
                }
                Op::Index(a, i) => acc(*a, &mut |s| s[*i] += g[0]),
                Op::Row(m, i) => {
                    let cols = nodes[m.0].shape[1];
                    acc(*m, &mut |s| axpy(1.0, &g, &mut s[i * cols..(i + 1) * cols]));
                }
                Op::ScalarMul(k, v) => {
                    let (kv, vv) = (nodes[k.0].value[0], &nodes[v.0].value);
                    acc(*k, &mut |s| s[0] += dot(&g, vv));
                    acc(*v, &mut |s| axpy(kv, &g, s));
                }
                Op::Cosine(a, b) => {
                    let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                    let (na, nb) = (norm(av), norm(bv));
                    let c = node.value[0];
                    let gc = g[0];
                    acc(*a, &mut |s| {
                        for i in 0..s.len() {
                            s[i] += gc * (bv[i] / (na * nb) - c * av[i] / (na * na));
                        }
                    });
                    acc(*b, &mut |s| {
                        for i in 0..s.len() {
                            s[i] += gc * (av[i] / (na * nb) - c * bv[i] / (nb * nb));
                        }
                    });
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let gy = dot(&g, y);
                    acc(*a, &mut |s| {
                        for i in 0..s.len() {
                            s[i] += y[i] * (g[i] - gy);
                        }
                    });
                }
                Op::Nll(logits, target) => {
                    let p = &node.aux;
                    acc(*logits, &mut |s| {
                        for i in 0..s.len() {
                            let t = if i == *target { 1.0 } else { 0.0 };
                            s[i] += g[0] * (p[i] - t);
                        }
                    });
                }
                Op::Triaffine { w, a, b, c } => {
                    let shape = &nodes[w.0].shape;
                    let (h, p) = (shape[0], shape[2]);
                    let a1 = augment(&nodes[a.0].value);
                    let c1 = augment(&nodes[c.0].value);
                    let bv = &nodes[b.0].value;
                    let wv = &nodes[w.0].value;
                    let mut ga = vec![0.0; p + 1];
                    let mut gb = vec![0.0; p];
                    let mut gc = vec![0.0; p + 1];
                    for k in 0..h {
                        if g[k] == 0.0 {
                            continue;
                        }
                        for i in 0..=p {
                            for j in 0..p {
                                let base = ((k * (p + 1) + i) * p + j) * (p + 1);
                                let row = &wv[base..base + p + 1];
                                let wc = dot(row, &c1);
                                ga[i] += g[k] * bv[j] * wc;
                                gb[j] += g[k] * a1[i] * wc;
                                axpy(g[k] * a1[i] * bv[j], row, &mut gc);
                            }
                        }
                    }
                    acc(*w, &mut |s| {
                        for k in 0..h {
                            for i in 0..=p {
                                for j in 0..p {
                                    let base = ((k * (p + 1) + i) * p + j) * (p + 1);
                                    axpy(g[k] * a1[i] * bv[j], &c1, &mut s[base..base + p + 1]);
                                }
                            }
                        }
                    });
                    acc(*a, &mut |s| axpy(1.0, &ga[..p], s));
                    acc(*b, &mut |s| axpy(1.0, &gb, s));
                    acc(*c, &mut |s| axpy(1.0, &gc[..p], s));
                }
            }
        }
        Ok(out)
    }
}

impl Gradients {
    /// Gradient for a leaf created with [`Tape::var`].
    pub fn var(&self, v: Var) -> Option<&[f64]> {
        self.vars.get(&v.0).map(Vec::as_slice)
    }
}

fn augment(v: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(v.len() + 1);
    out.extend_from_slice(v);
    out.push(1.0);
    out
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    a.len().cmp(&b.len())
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_stable(v: &[f64], tau: f64) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = v.iter().map(|x| ((x - m) / tau).exp()).collect();
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= z);
    out
}

pub(crate) fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64, NumericsError> {
    if u.len() != v.len() || u.is_empty() {
        return Err(NumericsError::Contract(format!(
            "cosine needs equal non-empty lengths, got {} and {}",
            u.len(),
            v.len()
        )));
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(NumericsError::ZeroVector);
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}
