use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::tensor::{axpy, Tensor};
use super::NumericsError;

/// Handle to a tensor registered in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named learnable tensors. Names are dotted paths; the first segment is the
/// parameter group (`enc_lsg`, `dec_tgt`, ...).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<ParamId, NumericsError> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(NumericsError::Contract(format!("duplicate parameter name {name}")));
        }
        let id = ParamId(self.tensors.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(tensor.with_grad(true));
        Ok(id)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn total_numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Group name of a parameter: the part of its name before the first `.`.
    pub fn group(&self, id: ParamId) -> &str {
        let name = &self.names[id.0];
        name.split('.').next().unwrap_or(name)
    }

    pub fn groups(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for id in self.ids() {
            let g = self.group(id);
            if !out.iter().any(|x| x == g) {
                out.push(g.to_string());
            }
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }
}

/// Gradients produced by a single backward pass.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    pub(crate) params: BTreeMap<ParamId, Vec<f64>>,
    pub(crate) vars: HashMap<usize, Vec<f64>>,
}

impl Gradients {
    /// Gradient for a parameter, or `None` when the parameter was not on the tape.
    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        self.params.get(&id).map(Vec::as_slice)
    }

    /// Gradient for a parameter, zero-filled when it was not reached.
    pub fn param_or_zeros(&self, id: ParamId, store: &ParamStore) -> Vec<f64> {
        match self.params.get(&id) {
            Some(g) => g.clone(),
            None => vec![0.0; store.get(id).numel()],
        }
    }

    pub fn param_mut(&mut self, id: ParamId) -> Option<&mut Vec<f64>> {
        self.params.get_mut(&id)
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.params.iter().map(|(id, g)| (*id, g.as_slice()))
    }

    /// Euclidean norm over all parameters.
    pub fn norm(&self) -> f64 {
        self.params
            .values()
            .map(|g| g.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.params.values_mut() {
            g.iter_mut().for_each(|x| *x *= s);
        }
    }

    /// Adds the parameter gradients of `other`; leaf-variable gradients are dropped.
    pub fn add(&mut self, other: &Gradients) {
        for (id, g) in &other.params {
            match self.params.get_mut(id) {
                Some(acc) => axpy(1.0, g, acc),
                None => {
                    self.params.insert(*id, g.clone());
                }
            }
        }
    }

    /// Euclidean norm of the gradient restricted to one parameter group.
    pub fn group_norm(&self, store: &ParamStore, group: &str) -> f64 {
        self.params
            .iter()
            .filter(|(id, _)| store.group(**id) == group)
            .map(|(_, g)| g.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }
}

/// Gradient accumulator aligned with a [`ParamStore`]; reset explicitly per step.
#[derive(Debug, Clone)]
pub struct GradBuffer {
    grads: Vec<Vec<f64>>,
    count: usize,
}

impl GradBuffer {
    pub fn new(store: &ParamStore) -> Self {
        GradBuffer {
            grads: store.iter().map(|(_, _, t)| vec![0.0; t.numel()]).collect(),
            count: 0,
        }
    }

    pub fn accumulate(&mut self, g: &Gradients) {
        for (id, grad) in &g.params {
            axpy(1.0, grad, &mut self.grads[id.0]);
        }
        self.count += 1;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn reset(&mut self) {
        for g in &mut self.grads {
            g.iter_mut().for_each(|x| *x = 0.0);
        }
        self.count = 0;
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.grads[id.0]
    }

    pub fn scale(&mut self, s: f64) {
        for g in &mut self.grads {
            g.iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn norm(&self) -> f64 {
        self.grads
            .iter()
            .flat_map(|g| g.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().flat_map(|g| g.iter()).all(|x| x.is_finite())
    }
}

/// Plain stochastic gradient descent with global-norm clipping.
#[derive(Debug, Clone, Copy)]
pub struct Sgd {
    pub lr: f64,
    pub clip_norm: f64,
}

impl Sgd {
    /// Applies the averaged gradient in `buf` and returns the pre-clip norm.
    pub fn step(&self, store: &mut ParamStore, buf: &GradBuffer) -> f64 {
        let n = buf.count().max(1) as f64;
        let norm = buf.norm() / n;
        let mut scale = self.lr / n;
        if self.clip_norm > 0.0 && norm > self.clip_norm {
            scale *= self.clip_norm / norm;
        }
        for (i, g) in buf.grads.iter().enumerate() {
            axpy(-scale, g, store.tensors[i].values_mut());
        }
        norm
    }
}
