//! Typed scene graphs shared by the language and visual sides.

mod canon;
mod degenerate;
mod graph;
mod io;
mod parse;
mod stats;

pub use canon::{canonical_form, is_isomorphic};
pub use degenerate::{degenerate_relations, inflate_relations, LabeledEdge, LabeledGraph, ATTR_LABEL};
pub use graph::{Modality, Node, NodeKind, SceneGraph, Violation, DEFAULT_MAX_COMPONENTS};
pub use io::{deserialize, serialize};
pub use parse::{parse_detailed, parse_toy_lsg, ParsedSentence};
pub use stats::{graph_stats, mean_rate, pooled, GrowthReport, KindGrowth, KINDS};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneGraphError {
    #[error("invalid scene graph: {}", join(.0))]
    Invalid(Vec<Violation>),
    #[error("malformed scene graph at line {line}, column {column}: {message}")]
    Format {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unknown relation label {0:?}")]
    UnknownEdgeLabel(String),
    #[error("sentence not derivable from the grammar: first offending token {token:?} at position {position}")]
    Parse { position: usize, token: String },
}

fn join(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}
