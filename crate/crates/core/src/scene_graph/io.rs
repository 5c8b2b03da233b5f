use serde::{Deserialize, Serialize};

use super::graph::{Modality, Node, SceneGraph};
use super::SceneGraphError;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphFile {
    modality: Modality,
    nodes: Vec<Node>,
    edges: Vec<(usize, usize)>,
}

/// Canonical single-line JSON: nodes by ascending id, edges sorted.
pub fn serialize(g: &SceneGraph) -> String {
    let mut edges = g.edges().to_vec();
    edges.sort_unstable();
    let file = GraphFile {
        modality: g.modality(),
        nodes: g.nodes().to_vec(),
        edges,
    };
    serde_json::to_string(&file).expect("scene graph serialization cannot fail")
}

/// Parses the JSON format. Node ids must be exactly `0..n` in some order.
pub fn deserialize(text: &str) -> Result<SceneGraph, SceneGraphError> {
    let file: GraphFile = serde_json::from_str(text).map_err(|e| SceneGraphError::Format {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let mut nodes = file.nodes;
    nodes.sort_by_key(|n| n.id);
    for (i, n) in nodes.iter().enumerate() {
        if n.id != i {
            return Err(SceneGraphError::Format {
                line: 0,
                column: 0,
                message: format!("node ids must be 0..{} without gaps, found id {}", nodes.len(), n.id),
            });
        }
    }
    let parts = nodes.into_iter().map(|n| (n.kind, n.label)).collect();
    Ok(SceneGraph::from_parts(file.modality, parts, file.edges))
}
