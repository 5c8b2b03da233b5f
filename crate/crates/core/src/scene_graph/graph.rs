use std::collections::{BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::SceneGraphError;

/// Default bound on weakly connected components in a valid graph.
pub const DEFAULT_MAX_COMPONENTS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Language,
    Visual,
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Object,
    Attribute,
    Relation,
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NodeKind::Object => "object",
            NodeKind::Attribute => "attribute",
            NodeKind::Relation => "relation",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Node {
    pub id: usize,
    pub kind: NodeKind,
    pub label: String,
}

/// Directed graph of object, attribute and relation nodes.
///
/// Node ids are positions in the node list. Edges run subject → relation →
/// object and object → attribute.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SceneGraph {
    modality: Modality,
    nodes: Vec<Node>,
    edges: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    NoObject,
    DanglingEdge {
        src: usize,
        dst: usize,
    },
    SelfLoop {
        node: usize,
    },
    DuplicateEdge {
        src: usize,
        dst: usize,
    },
    BadEdgeKinds {
        src: usize,
        dst: usize,
    },
    RelationShape {
        node: usize,
        incoming: usize,
        outgoing: usize,
    },
    AttributeShape {
        node: usize,
        incoming: usize,
        outgoing: usize,
    },
    DuplicateRelation {
        subject: usize,
        object: usize,
        label: String,
    },
    Components {
        count: usize,
        max: usize,
    },
    ComponentWithoutObject {
        node: usize,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoObject => write!(f, "no Object node"),
            Violation::DanglingEdge { src, dst } => write!(f, "edge ({src}, {dst}) references a missing node"),
            Violation::SelfLoop { node } => write!(f, "self-loop on node {node}"),
            Violation::DuplicateEdge { src, dst } => write!(f, "duplicate edge ({src}, {dst})"),
            Violation::BadEdgeKinds { src, dst } => {
                write!(f, "edge ({src}, {dst}) connects kinds that may not be adjacent")
            }
            Violation::RelationShape { node, incoming, outgoing } => write!(
                f,
                "relation node {node} needs one incoming and one outgoing object edge, has {incoming} in / {outgoing} out"
            ),
            Violation::AttributeShape { node, incoming, outgoing } => write!(
                f,
                "attribute node {node} needs one incoming object edge and no outgoing edge, has {incoming} in / {outgoing} out"
            ),
            Violation::DuplicateRelation { subject, object, label } => {
                write!(f, "relation {label:?} repeated between nodes {subject} and {object}")
            }
            Violation::Components { count, max } => {
                write!(f, "{count} connected components, at most {max} allowed")
            }
            Violation::ComponentWithoutObject { node } => {
                write!(f, "component containing node {node} has no Object")
            }
        }
    }
}

impl SceneGraph {
    pub fn new(modality: Modality) -> Self {
        SceneGraph {
            modality,
            nodes: Vec::new(),
            edges: Vec::new(),
        }
    }

    /// Builds a graph from `(kind, label)` pairs (ids are positions) and edges.
    pub fn from_parts(modality: Modality, nodes: Vec<(NodeKind, String)>, edges: Vec<(usize, usize)>) -> Self {
        let nodes = nodes
            .into_iter()
            .enumerate()
            .map(|(id, (kind, label))| Node { id, kind, label })
            .collect();
        SceneGraph { modality, nodes, edges }
    }

    pub fn add_node(&mut self, kind: NodeKind, label: impl Into<String>) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node {
            id,
            kind,
            label: label.into(),
        });
        id
    }

    pub fn add_edge(&mut self, src: usize, dst: usize) {
        self.edges.push((src, dst));
    }

    /// Adds `subject → relation → object` and returns the relation node id.
    pub fn add_relation(&mut self, subject: usize, label: impl Into<String>, object: usize) -> usize {
        let r = self.add_node(NodeKind::Relation, label);
        self.add_edge(subject, r);
        self.add_edge(r, object);
        r
    }

    /// Adds an attribute node hanging off `object` and returns its id.
    pub fn add_attribute(&mut self, object: usize, label: impl Into<String>) -> usize {
        let a = self.add_node(NodeKind::Attribute, label);
        self.add_edge(object, a);
        a
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn with_modality(mut self, modality: Modality) -> Self {
        self.modality = modality;
        self
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &Node {
        &self.nodes[id]
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn set_label(&mut self, id: usize, label: impl Into<String>) {
        self.nodes[id].label = label.into();
    }

    pub fn count(&self, kind: NodeKind) -> usize {
        self.nodes.iter().filter(|n| n.kind == kind).count()
    }

    pub fn ids_of(&self, kind: NodeKind) -> Vec<usize> {
        self.nodes.iter().filter(|n| n.kind == kind).map(|n| n.id).collect()
    }

    pub fn has_edge(&self, src: usize, dst: usize) -> bool {
        self.edges.contains(&(src, dst))
    }

    /// In-neighbors and out-neighbors of every node, each list sorted.
    pub fn adjacency(&self) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
        let n = self.nodes.len();
        let mut ins = vec![Vec::new(); n];
        let mut outs = vec![Vec::new(); n];
        for &(s, d) in &self.edges {
            if s < n && d < n {
                outs[s].push(d);
                ins[d].push(s);
            }
        }
        for v in ins.iter_mut().chain(outs.iter_mut()) {
            v.sort_unstable();
        }
        (ins, outs)
    }

    /// Relation triples `(subject, relation node, object)` in relation-id order.
    /// Only well-formed relation nodes are reported.
    pub fn relation_triples(&self) -> Vec<(usize, usize, usize)> {
        let (ins, outs) = self.adjacency();
        self.nodes
            .iter()
            .filter(|n| n.kind == NodeKind::Relation)
            .filter_map(|n| match (ins[n.id].as_slice(), outs[n.id].as_slice()) {
                ([s], [o]) => Some((*s, n.id, *o)),
                _ => None,
            })
            .collect()
    }

    /// Attribute pairs `(object, attribute node)` in attribute-id order.
    pub fn attribute_pairs(&self) -> Vec<(usize, usize)> {
        let (ins, _) = self.adjacency();
        self.nodes
            .iter()
            .filter(|n| n.kind == NodeKind::Attribute)
            .filter_map(|n| ins[n.id].first().map(|&o| (o, n.id)))
            .collect()
    }

    /// Weakly connected components as sorted node lists, ordered by smallest id.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.nodes.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for &(s, d) in &self.edges {
            if s < n && d < n {
                let (a, b) = (find(&mut parent, s), find(&mut parent, d));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
        let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
        for v in 0..n {
            let r = find(&mut parent, v);
            groups.entry(r).or_default().push(v);
        }
        groups.into_values().collect()
    }

    pub fn validate(&self) -> Result<(), Vec<Violation>> {
        self.validate_with(DEFAULT_MAX_COMPONENTS)
    }

    /// Checks every structural invariant and reports all violations found.
    pub fn validate_with(&self, max_components: usize) -> Result<(), Vec<Violation>> {
        let mut out = Vec::new();
        let n = self.nodes.len();
        if self.count(NodeKind::Object) == 0 {
            out.push(Violation::NoObject);
        }
        let mut seen = HashSet::new();
        for &(s, d) in &self.edges {
            if s >= n || d >= n {
                out.push(Violation::DanglingEdge { src: s, dst: d });
                continue;
            }
            if s == d {
                out.push(Violation::SelfLoop { node: s });
                continue;
            }
            if !seen.insert((s, d)) {
                out.push(Violation::DuplicateEdge { src: s, dst: d });
                continue;
            }
            use NodeKind::*;
            let ok = matches!(
                (self.nodes[s].kind, self.nodes[d].kind),
                (Object, Relation) | (Relation, Object) | (Object, Attribute)
            );
            if !ok {
                out.push(Violation::BadEdgeKinds { src: s, dst: d });
            }
        }
        let (ins, outs) = self.adjacency();
        for node in &self.nodes {
            let (i, o) = (ins[node.id].len(), outs[node.id].len());
            let in_obj = ins[node.id]
                .iter()
                .filter(|&&x| self.nodes[x].kind == NodeKind::Object)
                .count();
            let out_obj = outs[node.id]
                .iter()
                .filter(|&&x| self.nodes[x].kind == NodeKind::Object)
                .count();
            match node.kind {
                NodeKind::Relation if !(i == 1 && o == 1 && in_obj == 1 && out_obj == 1) => {
                    out.push(Violation::RelationShape {
                        node: node.id,
                        incoming: i,
                        outgoing: o,
                    });
                }
                NodeKind::Attribute if !(i == 1 && o == 0 && in_obj == 1) => {
                    out.push(Violation::AttributeShape {
                        node: node.id,
                        incoming: i,
                        outgoing: o,
                    });
                }
                _ => {}
            }
        }
        let mut triples = BTreeSet::new();
        for (s, r, o) in self.relation_triples() {
            let label = self.nodes[r].label.clone();
            if !triples.insert((s, o, label.clone())) {
                out.push(Violation::DuplicateRelation {
                    subject: s,
                    object: o,
                    label,
                });
            }
        }
        let comps = self.components();
        if comps.len() > 1 {
            if comps.len() > max_components {
                out.push(Violation::Components {
                    count: comps.len(),
                    max: max_components,
                });
            }
            for c in &comps {
                if !c.iter().any(|&v| self.nodes[v].kind == NodeKind::Object) {
                    out.push(Violation::ComponentWithoutObject { node: c[0] });
                }
            }
        }
        if out.is_empty() {
            Ok(())
        } else {
            Err(out)
        }
    }

    pub fn ensure_valid(&self) -> Result<(), SceneGraphError> {
        self.validate().map_err(SceneGraphError::Invalid)
    }

    /// Copy with node ids permuted: node `i` becomes node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> SceneGraph {
        assert_eq!(perm.len(), self.nodes.len());
        let mut nodes = self.nodes.clone();
        for (old, node) in self.nodes.iter().enumerate() {
            nodes[perm[old]] = Node {
                id: perm[old],
                kind: node.kind,
                label: node.label.clone(),
            };
        }
        let edges = self.edges.iter().map(|&(s, d)| (perm[s], perm[d])).collect();
        SceneGraph {
            modality: self.modality,
            nodes,
            edges,
        }
    }

    /// Labels of all nodes of one kind, sorted.
    pub fn label_multiset(&self, kind: NodeKind) -> Vec<String> {
        let mut v: Vec<String> = self
            .nodes
            .iter()
            .filter(|n| n.kind == kind)
            .map(|n| n.label.clone())
            .collect();
        v.sort();
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triple() -> SceneGraph {
        let mut g = SceneGraph::new(Modality::Language);
        let boy = g.add_node(NodeKind::Object, "boy");
        let ball = g.add_node(NodeKind::Object, "ball");
        g.add_relation(boy, "kick", ball);
        g
    }

    #[test]
    fn empty_graph_has_no_object() {
        let g = SceneGraph::new(Modality::Visual);
        assert_eq!(g.validate(), Err(vec![Violation::NoObject]));
    }

    #[test]
    fn minimal_relation_is_valid() {
        assert_eq!(triple().validate(), Ok(()));
    }

    #[test]
    fn relation_with_two_outgoing_edges_is_named() {
        let mut g = triple();
        let cat = g.add_node(NodeKind::Object, "cat");
        g.add_edge(2, cat);
        let v = g.validate().unwrap_err();
        assert!(v.contains(&Violation::RelationShape {
            node: 2,
            incoming: 1,
            outgoing: 2
        }));
    }

    #[test]
    fn attribute_chain_rejected() {
        let mut g = SceneGraph::new(Modality::Visual);
        let o = g.add_node(NodeKind::Object, "dog");
        let a = g.add_attribute(o, "red");
        let b = g.add_node(NodeKind::Attribute, "dark");
        g.add_edge(a, b);
        let v = g.validate().unwrap_err();
        assert!(v.iter().any(|x| matches!(x, Violation::BadEdgeKinds { .. })));
        assert!(v
            .iter()
            .any(|x| matches!(x, Violation::AttributeShape { node, .. } if *node == a)));
    }

    #[test]
    fn duplicate_and_self_edges() {
        let mut g = triple();
        g.add_edge(0, 2);
        g.add_edge(1, 1);
        let v = g.validate().unwrap_err();
        assert!(v.contains(&Violation::DuplicateEdge { src: 0, dst: 2 }));
        assert!(v.contains(&Violation::SelfLoop { node: 1 }));
    }

    #[test]
    fn same_label_relation_twice_rejected_distinct_allowed() {
        let mut g = triple();
        g.add_relation(0, "watch", 1);
        assert_eq!(g.validate(), Ok(()));
        g.add_relation(0, "kick", 1);
        let v = g.validate().unwrap_err();
        assert!(matches!(
            v[0],
            Violation::DuplicateRelation {
                subject: 0,
                object: 1,
                ..
            }
        ));
    }

    #[test]
    fn component_limit() {
        let mut g = SceneGraph::new(Modality::Visual);
        for i in 0..3 {
            g.add_node(NodeKind::Object, format!("o{i}"));
        }
        assert_eq!(g.validate(), Ok(()));
        g.add_node(NodeKind::Object, "o3");
        assert_eq!(g.validate(), Err(vec![Violation::Components { count: 4, max: 3 }]));
        assert_eq!(g.validate_with(4), Ok(()));
    }

    #[test]
    fn permutation_keeps_validity() {
        let g = triple();
        let p = g.permuted(&[2, 0, 1]);
        assert_eq!(p.node(2).label, "boy");
        assert_eq!(p.node(1).label, "kick");
        assert!(p.validate().is_ok());
    }
}
