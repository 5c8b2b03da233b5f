//! Visual scene hallucination: sketch a visual skeleton from a language
//! graph, then grow it with learned node and relation augmentors.

mod augment;
mod targets;

pub use augment::{
    complete_vision, node_augment_scores, node_relation_label, relation_augment_scores, AugParams, NodeAugment,
    VshContext, EPSILON_BIAS,
};
pub use targets::{match_graphs, recovery, vsh_loss, vsh_targets, Recovery, VshTargets};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{cosine_similarity, Tensor};
use crate::scene_graph::{Modality, NodeKind, SceneGraph};
use crate::vocab::Vocab;

/// Object, attribute and relation label tables built from training visual graphs.
///
/// The node-augmentor classes are objects, then attributes, then the dummy
/// "no addition" class; the relation-augmentor classes are relations, then
/// the dummy class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VsgVocabularies {
    pub objects: Vocab,
    pub attributes: Vocab,
    pub relations: Vocab,
}

/// A node-augmentor class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeClass<'a> {
    Object(&'a str),
    Attribute(&'a str),
    Nothing,
}

impl VsgVocabularies {
    pub fn node_classes(&self) -> usize {
        self.objects.len() + self.attributes.len() + 1
    }

    pub fn node_epsilon(&self) -> usize {
        self.objects.len() + self.attributes.len()
    }

    pub fn pair_classes(&self) -> usize {
        self.relations.len() + 1
    }

    pub fn pair_epsilon(&self) -> usize {
        self.relations.len()
    }

    pub fn node_class(&self, i: usize) -> NodeClass<'_> {
        let (o, a) = (self.objects.len(), self.attributes.len());
        if i < o {
            NodeClass::Object(self.objects.item(i))
        } else if i < o + a {
            NodeClass::Attribute(self.attributes.item(i - o))
        } else {
            NodeClass::Nothing
        }
    }

    pub fn object_class(&self, label: &str) -> Option<usize> {
        self.objects.get(label)
    }

    pub fn attribute_class(&self, label: &str) -> Option<usize> {
        self.attributes.get(label).map(|i| i + self.objects.len())
    }
}

/// Collects labels by node kind in first-occurrence order.
pub fn build_vocabularies(vsgs: &[SceneGraph]) -> Result<VsgVocabularies> {
    if vsgs.is_empty() {
        return Err(Error::Data("no training visual graphs".into()));
    }
    let mut v = VsgVocabularies {
        objects: Vocab::new(),
        attributes: Vocab::new(),
        relations: Vocab::new(),
    };
    for g in vsgs {
        for n in g.nodes() {
            let (mine, others) = match n.kind {
                NodeKind::Object => (&mut v.objects, [&v.attributes, &v.relations]),
                NodeKind::Attribute => (&mut v.attributes, [&v.objects, &v.relations]),
                NodeKind::Relation => (&mut v.relations, [&v.objects, &v.attributes]),
            };
            if others.iter().any(|o| o.contains(&n.label)) {
                return Err(Error::Data(format!("label {:?} occurs under two node kinds", n.label)));
            }
            mine.insert(&n.label);
        }
    }
    Ok(v)
}

/// Topology-preserving visual copy of a language graph. Each object label is
/// replaced by the visual object whose embedding is most cosine-similar to it
/// (lowest index on ties); attributes and relations are copied.
pub fn sketch_skeleton(
    lsg: &SceneGraph,
    vocab: &VsgVocabularies,
    labels: &Vocab,
    table: &Tensor,
) -> Result<SceneGraph> {
    if vocab.objects.is_empty() {
        return Err(Error::Config("visual object vocabulary is empty".into()));
    }
    if lsg.modality() != Modality::Language {
        return Err(Error::Contract("skeleton sketching expects a language graph".into()));
    }
    lsg.ensure_valid()?;
    let candidates: Vec<&[f64]> = vocab
        .objects
        .items()
        .iter()
        .map(|l| labels.require(l).map(|i| table.row(i)))
        .collect::<Result<_>>()?;
    let mut out = lsg.clone().with_modality(Modality::Visual);
    for n in lsg.nodes().iter().filter(|n| n.kind == NodeKind::Object) {
        let e = table.row(labels.require(&n.label)?);
        let mut best = (0, f64::NEG_INFINITY);
        for (j, c) in candidates.iter().enumerate() {
            let s = cosine_similarity(e, c)?;
            if s > best.1 {
                best = (j, s);
            }
        }
        out.set_label(n.id, vocab.objects.item(best.0).to_string());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::ToyGrammar;
    use crate::scene_graph::parse_toy_lsg;

    fn graph(objs: &[&str], attrs: &[(usize, &str)], rels: &[(usize, &str, usize)]) -> SceneGraph {
        let mut g = SceneGraph::new(Modality::Visual);
        for o in objs {
            g.add_node(NodeKind::Object, *o);
        }
        for (o, a) in attrs {
            g.add_attribute(*o, *a);
        }
        for (s, r, o) in rels {
            g.add_relation(*s, *r, *o);
        }
        g
    }

    #[test]
    fn single_graph_vocabulary() {
        let g = graph(&["dog", "cat"], &[(0, "red")], &[(0, "chases", 1)]);
        let v = build_vocabularies(&[graph(&["dog"], &[(0, "red")], &[])]).unwrap();
        assert_eq!((v.objects.len(), v.attributes.len(), v.relations.len()), (1, 1, 0));
        let v = build_vocabularies(&[g.clone(), g]).unwrap();
        assert_eq!(v.objects.items(), &["dog", "cat"]);
        assert_eq!(v.node_classes(), 4);
        assert_eq!(v.node_class(3), NodeClass::Nothing);
        assert_eq!(v.node_class(2), NodeClass::Attribute("red"));
        assert_eq!(v.pair_epsilon(), 1);
    }

    #[test]
    fn kind_conflict_is_data_error() {
        let a = graph(&["red"], &[], &[]);
        let b = graph(&["dog"], &[(0, "red")], &[]);
        assert!(matches!(build_vocabularies(&[a, b]), Err(Error::Data(m)) if m.contains("red")));
        assert!(matches!(build_vocabularies(&[]), Err(Error::Data(_))));
    }

    fn one_hot_table(labels: &[&str], d: usize) -> (Vocab, Tensor) {
        let vocab: Vocab = labels.iter().map(|s| s.to_string()).collect::<Vec<_>>().into();
        let mut t = Tensor::zeros(vec![labels.len(), d]);
        for i in 0..labels.len() {
            t.row_mut(i)[i % d] = 1.0;
            t.row_mut(i)[(i + 1) % d] += 0.5;
        }
        (vocab, t)
    }

    #[test]
    fn verbatim_labels_are_kept() {
        let g = ToyGrammar::default();
        let tokens: Vec<String> = "red dog chases cat".split(' ').map(String::from).collect();
        let lsg = parse_toy_lsg(&tokens, &g).unwrap();
        let vocab = build_vocabularies(&[lsg.clone().with_modality(Modality::Visual)]).unwrap();
        let (labels, table) = one_hot_table(&["dog", "cat", "red", "chases"], 4);
        let sk = sketch_skeleton(&lsg, &vocab, &labels, &table).unwrap();
        assert_eq!(sk.nodes(), lsg.nodes());
        assert_eq!(sk.edges(), lsg.edges());
        assert_eq!(sk.modality(), Modality::Visual);
    }

    #[test]
    fn nearest_visual_object_is_chosen() {
        let labels: Vocab = ["pup", "dog", "cat"].map(String::from).to_vec().into();
        let table = Tensor::matrix(3, 3, vec![0.9, 0.2, 0.1, 1.0, 0.1, 0.0, 0.0, 1.0, 0.2]).unwrap();
        let vocab = build_vocabularies(&[graph(&["dog", "cat"], &[], &[])]).unwrap();
        let mut lsg = SceneGraph::new(Modality::Language);
        lsg.add_node(NodeKind::Object, "pup");
        let sk = sketch_skeleton(&lsg, &vocab, &labels, &table).unwrap();
        // Brute force over the object table.
        let e = table.row(0);
        let best = ["dog", "cat"]
            .iter()
            .max_by(|a, b| {
                let ca = cosine_similarity(e, table.row(labels.get(a).unwrap())).unwrap();
                let cb = cosine_similarity(e, table.row(labels.get(b).unwrap())).unwrap();
                ca.total_cmp(&cb)
            })
            .unwrap();
        assert_eq!(sk.node(0).label, *best);
        assert_eq!(sk.node(0).label, "dog");
    }

    #[test]
    fn empty_object_table_is_config_error() {
        let vocab = VsgVocabularies {
            objects: Vocab::new(),
            attributes: Vocab::new(),
            relations: Vocab::new(),
        };
        let mut lsg = SceneGraph::new(Modality::Language);
        lsg.add_node(NodeKind::Object, "dog");
        let (labels, table) = one_hot_table(&["dog"], 2);
        assert!(matches!(
            sketch_skeleton(&lsg, &vocab, &labels, &table),
            Err(Error::Config(_))
        ));
    }
}
