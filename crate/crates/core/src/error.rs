use thiserror::Error;

use crate::grammar::GrammarError;
use crate::numerics::NumericsError;
use crate::scene_graph::SceneGraphError;

/// Error type for the model, training and evaluation layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Graph(#[from] SceneGraphError),
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error("label {0:?} is not in the vocabulary")]
    Oov(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("internal invariant violated: {0}")]
    Internal(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures caused by NaN/Inf values or failed gradient checks.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Numerics(NumericsError::NonFinite(_) | NumericsError::NonDeterministic(_))
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
