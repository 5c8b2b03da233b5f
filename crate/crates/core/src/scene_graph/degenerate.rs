use std::collections::HashSet;

use super::graph::{Modality, NodeKind, SceneGraph};
use super::SceneGraphError;

/// Reserved edge label for object → attribute edges.
pub const ATTR_LABEL: &str = "attr";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledEdge {
    pub src: usize,
    pub dst: usize,
    pub label: String,
}

/// Scene graph with relation nodes folded into labeled object → object edges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledGraph {
    pub modality: Modality,
    /// Object and attribute nodes as `(kind, label)`.
    pub nodes: Vec<(NodeKind, String)>,
    pub edges: Vec<LabeledEdge>,
    /// For each node, its id in the node-form graph it came from (if any).
    pub origin: Vec<Option<usize>>,
}

impl LabeledGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn has_edge_between(&self, a: usize, b: usize) -> bool {
        self.edges
            .iter()
            .any(|e| (e.src == a && e.dst == b) || (e.src == b && e.dst == a))
    }

    /// Undirected adjacency lists, sorted.
    pub fn undirected_neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            adj[e.src].push(e.dst);
            adj[e.dst].push(e.src);
        }
        for a in &mut adj {
            a.sort_unstable();
            a.dedup();
        }
        adj
    }

    /// Shortest undirected path from `a` to `b` (inclusive) by breadth-first
    /// search, preferring lower ids on ties. `None` when disconnected.
    pub fn shortest_path(&self, a: usize, b: usize) -> Option<Vec<usize>> {
        let adj = self.undirected_neighbors();
        let n = self.nodes.len();
        let mut prev = vec![usize::MAX; n];
        let mut seen = vec![false; n];
        let mut queue = std::collections::VecDeque::new();
        seen[a] = true;
        queue.push_back(a);
        while let Some(v) = queue.pop_front() {
            if v == b {
                let mut path = vec![b];
                let mut cur = b;
                while cur != a {
                    cur = prev[cur];
                    path.push(cur);
                }
                path.reverse();
                return Some(path);
            }
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    prev[w] = v;
                    queue.push_back(w);
                }
            }
        }
        None
    }
}

/// Folds every `O_a → R → O_b` into a labeled edge `(O_a, O_b, label(R))` and
/// every `O → A` into `(O, A, "attr")`. Surviving nodes keep their relative order.
pub fn degenerate_relations(g: &SceneGraph) -> Result<LabeledGraph, SceneGraphError> {
    g.ensure_valid()?;
    let mut remap = vec![usize::MAX; g.len()];
    let mut nodes = Vec::new();
    let mut origin = Vec::new();
    for n in g.nodes() {
        if n.kind != NodeKind::Relation {
            remap[n.id] = nodes.len();
            nodes.push((n.kind, n.label.clone()));
            origin.push(Some(n.id));
        }
    }
    let mut edges = Vec::new();
    for &(s, d) in g.edges() {
        if g.node(d).kind == NodeKind::Attribute {
            edges.push(LabeledEdge {
                src: remap[s],
                dst: remap[d],
                label: ATTR_LABEL.to_string(),
            });
        }
    }
    for (s, r, o) in g.relation_triples() {
        edges.push(LabeledEdge {
            src: remap[s],
            dst: remap[o],
            label: g.node(r).label.clone(),
        });
    }
    Ok(LabeledGraph {
        modality: g.modality(),
        nodes,
        edges,
        origin,
    })
}

/// Inverse of [`degenerate_relations`]: each relation-labeled edge becomes a
/// relation node appended after the object and attribute nodes.
///
/// When `known_relations` is given, relation labels outside it are rejected.
pub fn inflate_relations(
    lg: &LabeledGraph,
    known_relations: Option<&HashSet<String>>,
) -> Result<SceneGraph, SceneGraphError> {
    let mut g = SceneGraph::from_parts(lg.modality, lg.nodes.clone(), Vec::new());
    for e in &lg.edges {
        if e.src >= lg.nodes.len() || e.dst >= lg.nodes.len() {
            return Err(SceneGraphError::Format {
                line: 0,
                column: 0,
                message: format!("labeled edge ({}, {}) references a missing node", e.src, e.dst),
            });
        }
        if e.label == ATTR_LABEL {
            g.add_edge(e.src, e.dst);
            continue;
        }
        if let Some(known) = known_relations {
            if !known.contains(&e.label) {
                return Err(SceneGraphError::UnknownEdgeLabel(e.label.clone()));
            }
        }
        g.add_relation(e.src, e.label.clone(), e.dst);
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene_graph::canon::is_isomorphic;

    fn fig_triple() -> SceneGraph {
        let mut g = SceneGraph::new(Modality::Visual);
        let boy = g.add_node(NodeKind::Object, "boy");
        let kick = g.add_node(NodeKind::Relation, "kick");
        let ball = g.add_node(NodeKind::Object, "ball");
        g.add_edge(boy, kick);
        g.add_edge(kick, ball);
        g
    }

    #[test]
    fn triple_folds_to_one_edge() {
        let lg = degenerate_relations(&fig_triple()).unwrap();
        assert_eq!(lg.nodes.len(), 2);
        assert_eq!(
            lg.edges,
            vec![LabeledEdge {
                src: 0,
                dst: 1,
                label: "kick".into()
            }]
        );
        assert_eq!(lg.origin, vec![Some(0), Some(2)]);
        let back = inflate_relations(&lg, None).unwrap();
        assert!(is_isomorphic(&back, &fig_triple()));
    }

    #[test]
    fn attribute_only_graph_keeps_topology() {
        let mut g = SceneGraph::new(Modality::Visual);
        let d = g.add_node(NodeKind::Object, "dog");
        g.add_attribute(d, "red");
        g.add_attribute(d, "big");
        let lg = degenerate_relations(&g).unwrap();
        assert!(lg.edges.iter().all(|e| e.label == ATTR_LABEL));
        assert_eq!(inflate_relations(&lg, None).unwrap(), g);
    }

    #[test]
    fn unknown_label_rejected() {
        let lg = degenerate_relations(&fig_triple()).unwrap();
        let known: HashSet<String> = ["on".to_string()].into();
        assert_eq!(
            inflate_relations(&lg, Some(&known)),
            Err(SceneGraphError::UnknownEdgeLabel("kick".into()))
        );
    }

    #[test]
    fn invalid_input_rejected() {
        let g = SceneGraph::new(Modality::Visual);
        assert!(matches!(degenerate_relations(&g), Err(SceneGraphError::Invalid(_))));
    }

    #[test]
    fn path_prefers_low_ids() {
        let mut g = SceneGraph::new(Modality::Visual);
        let o: Vec<usize> = (0..4).map(|i| g.add_node(NodeKind::Object, format!("o{i}"))).collect();
        g.add_relation(o[0], "r", o[1]);
        g.add_relation(o[0], "r", o[2]);
        g.add_relation(o[1], "r", o[3]);
        g.add_relation(o[2], "r", o[3]);
        let lg = degenerate_relations(&g).unwrap();
        assert_eq!(lg.shortest_path(0, 3), Some(vec![0, 1, 3]));
        assert_eq!(lg.shortest_path(2, 2), Some(vec![2]));
    }
}
