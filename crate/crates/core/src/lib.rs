pub mod corpus;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod fusion;
pub mod grammar;
pub mod harness;
pub mod model;
pub mod numerics;
pub mod objectives;
pub mod scene_graph;
pub mod vocab;
pub mod vsh;

pub use error::{Error, Result};
