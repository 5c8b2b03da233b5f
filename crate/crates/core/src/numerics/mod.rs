//! Dense 64-bit tensors, a reverse-mode tape, parameter storage and a
//! finite-difference gradient checker.

mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{finite_difference_check, CoordCheck, GradcheckConfig, GradcheckReport};
pub use params::{GradBuffer, Gradients, ParamId, ParamStore, Sgd};
pub use tape::{sigmoid, Tape, Var};
pub use tensor::{axpy, dot, norm, Tensor};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("zero-norm vector has no direction")]
    ZeroVector,
    #[error("domain error: {0}")]
    Domain(String),
    #[error("function is not deterministic: {0}")]
    NonDeterministic(String),
    #[error("tape was already used for a backward pass")]
    AlreadyBackpropagated,
}

/// Cosine similarity `u·v / (|u| |v|)`.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64, NumericsError> {
    tape::cosine_similarity(u, v)
}

/// Temperature-scaled softmax with max subtraction.
pub fn softmax(v: &[f64], tau: f64) -> Result<Vec<f64>, NumericsError> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(NumericsError::Domain(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    if v.is_empty() {
        return Err(NumericsError::Domain("softmax of an empty vector".into()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(NumericsError::NonFinite("softmax input".into()));
    }
    Ok(tape::softmax_stable(v, tau))
}

/// Mean of the rows of a rank-2 tensor.
pub fn pool_mean(rows: &Tensor) -> Result<Vec<f64>, NumericsError> {
    if rows.shape().len() != 2 {
        return Err(NumericsError::Contract("pool_mean expects a matrix".into()));
    }
    let (n, d) = (rows.shape()[0], rows.shape()[1]);
    let mut out = vec![0.0; d];
    for i in 0..n {
        axpy(1.0, rows.row(i), &mut out);
    }
    out.iter_mut().for_each(|x| *x /= n as f64);
    Ok(out)
}

/// Mean of a list of equal-length rows; fails on an empty list.
pub fn mean_rows(rows: &[Vec<f64>]) -> Result<Vec<f64>, NumericsError> {
    let first = rows
        .first()
        .ok_or_else(|| NumericsError::Domain("mean of zero rows".into()))?;
    let mut out = vec![0.0; first.len()];
    for r in rows {
        if r.len() != out.len() {
            return Err(NumericsError::Contract("rows differ in length".into()));
        }
        axpy(1.0, r, &mut out);
    }
    out.iter_mut().for_each(|x| *x /= rows.len() as f64);
    Ok(out)
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}
