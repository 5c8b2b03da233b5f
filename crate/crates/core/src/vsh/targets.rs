use crate::error::Result;
use crate::numerics::{argmax, Tape, Var};
use crate::scene_graph::{degenerate_relations, LabeledGraph, NodeKind, SceneGraph};

use super::augment::{candidate_pairs, folded_reps, node_augment_scores, node_relation_label, relation_augment_scores};
use super::{sketch_skeleton, VshContext};

/// Greedy correspondence from the nodes of `a` to the nodes of `b`.
///
/// Objects match by label in id order. Attributes match only under matched
/// parents, and relations only between matched endpoints.
pub fn match_graphs(a: &SceneGraph, b: &SceneGraph) -> Vec<Option<usize>> {
    let mut map = vec![None; a.len()];
    let mut used = vec![false; b.len()];
    for n in a.nodes().iter().filter(|n| n.kind == NodeKind::Object) {
        if let Some(m) = b
            .nodes()
            .iter()
            .find(|m| m.kind == NodeKind::Object && !used[m.id] && m.label == n.label)
        {
            used[m.id] = true;
            map[n.id] = Some(m.id);
        }
    }
    let b_attrs = b.attribute_pairs();
    for (o, at) in a.attribute_pairs() {
        let Some(p) = map[o] else { continue };
        if let Some(&(_, m)) = b_attrs
            .iter()
            .find(|&&(bo, m)| bo == p && !used[m] && b.node(m).label == a.node(at).label)
        {
            used[m] = true;
            map[at] = Some(m);
        }
    }
    let b_rels = b.relation_triples();
    for (s, r, o) in a.relation_triples() {
        let (Some(bs), Some(bo)) = (map[s], map[o]) else {
            continue;
        };
        if let Some(&(_, m, _)) = b_rels
            .iter()
            .find(|&&(x, m, y)| x == bs && y == bo && !used[m] && b.node(m).label == a.node(r).label)
        {
            used[m] = true;
            map[r] = Some(m);
        }
    }
    map
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeTarget {
    /// Object index in the relation-folded skeleton.
    pub node: usize,
    pub class: usize,
    /// Relation class when `class` is a new object.
    pub relation: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairTarget {
    pub a: usize,
    pub b: usize,
    pub class: usize,
}

/// Teacher-forcing targets for one skeleton against its gold visual graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VshTargets {
    pub folded: LabeledGraph,
    pub nodes: Vec<NodeTarget>,
    pub pairs: Vec<PairTarget>,
}

impl VshTargets {
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty() && self.pairs.is_empty()
    }
}

/// Diffs `skeleton` against `gold`. Each matched skeleton object targets the
/// lowest-id unmatched gold attribute or related object hanging off its
/// match, else the dummy class. Each unconnected matched pair targets the
/// label of an unmatched gold relation between the matches, else the dummy
/// class. Unmatched skeleton objects get no target, and extras with labels
/// outside the vocabularies are ignored.
pub fn vsh_targets(ctx: &VshContext<'_>, skeleton: &SceneGraph, gold: &SceneGraph) -> Result<VshTargets> {
    let folded = degenerate_relations(skeleton)?;
    let map = match_graphs(skeleton, gold);
    let mut matched_gold = vec![false; gold.len()];
    for m in map.iter().flatten() {
        matched_gold[*m] = true;
    }
    let attrs = gold.attribute_pairs();
    let rels = gold.relation_triples();
    let mut nodes = Vec::new();
    for (k, &(kind, _)) in folded.nodes.iter().enumerate() {
        if kind != NodeKind::Object {
            continue;
        }
        let Some(g) = folded.origin[k].and_then(|o| map[o]) else {
            continue;
        };
        let mut best: Option<(usize, NodeTarget)> = None;
        let mut offer = |id: usize, t: NodeTarget| {
            if best.is_none_or(|(b, _)| id < b) {
                best = Some((id, t));
            }
        };
        for &(o, at) in &attrs {
            if o == g && !matched_gold[at] {
                if let Some(class) = ctx.vocab.attribute_class(&gold.node(at).label) {
                    offer(
                        at,
                        NodeTarget {
                            node: k,
                            class,
                            relation: None,
                        },
                    );
                }
            }
        }
        for &(s, r, o) in &rels {
            if s == g && !matched_gold[r] && !matched_gold[o] {
                let class = ctx.vocab.object_class(&gold.node(o).label);
                let rel = ctx.vocab.relations.get(&gold.node(r).label);
                if let (Some(class), Some(rel)) = (class, rel) {
                    offer(
                        o,
                        NodeTarget {
                            node: k,
                            class,
                            relation: Some(rel),
                        },
                    );
                }
            }
        }
        let eps = NodeTarget {
            node: k,
            class: ctx.vocab.node_epsilon(),
            relation: None,
        };
        nodes.push(best.map_or(eps, |(_, t)| t));
    }
    let mut pairs = Vec::new();
    for (a, b) in candidate_pairs(&folded, ctx.max_pairs) {
        let (Some(ga), Some(gb)) = (
            folded.origin[a].and_then(|o| map[o]),
            folded.origin[b].and_then(|o| map[o]),
        ) else {
            continue;
        };
        let class = rels
            .iter()
            .filter(|&&(s, r, o)| s == ga && o == gb && !matched_gold[r])
            .find_map(|&(_, r, _)| ctx.vocab.relations.get(&gold.node(r).label))
            .unwrap_or(ctx.vocab.pair_epsilon());
        pairs.push(PairTarget { a, b, class });
    }
    Ok(VshTargets { folded, nodes, pairs })
}

/// Sum of node, relation-label and pair negative log-likelihoods for one
/// language graph and its gold visual graph. `None` when no skeleton object
/// can be matched to the gold graph.
pub fn vsh_loss(tape: &mut Tape, ctx: &VshContext<'_>, lsg: &SceneGraph, gold: &SceneGraph) -> Result<Option<Var>> {
    let skeleton = sketch_skeleton(lsg, ctx.vocab, ctx.labels, ctx.store.get(ctx.embed))?;
    let targets = vsh_targets(ctx, &skeleton, gold)?;
    if targets.nodes.is_empty() {
        return Ok(None);
    }
    let lg = &targets.folded;
    let reps = folded_reps(tape, ctx, &skeleton, lg)?;
    let mut terms = Vec::new();
    for t in &targets.nodes {
        let na = node_augment_scores(tape, ctx.store, ctx.aug, lg, &reps, t.node)?;
        terms.push(tape.nll(na.logits, t.class));
        if let Some(rel) = t.relation {
            let (logits, _) = node_relation_label(tape, ctx.store, ctx.aug, na.routed, reps[t.node]);
            terms.push(tape.nll(logits, rel));
        }
    }
    for t in &targets.pairs {
        let (logits, _) = relation_augment_scores(tape, ctx.store, ctx.aug, lg, &reps, t.a, t.b)?;
        terms.push(tape.nll(logits, t.class));
    }
    Ok(Some(tape.add_all(&terms)))
}

/// Top-1 recovery of planted content by the augmentors.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Recovery {
    /// Objects whose gold graph adds a node.
    pub node_total: usize,
    pub node_hits: usize,
    /// Planted edges: relations to added objects plus relations between existing pairs.
    pub edge_total: usize,
    pub edge_hits: usize,
    /// Additions predicted where the gold graph has none.
    pub spurious: usize,
    /// Examples with no matchable object.
    pub skipped: usize,
}

impl Recovery {
    pub fn node_rate(&self) -> Option<f64> {
        (self.node_total > 0).then(|| self.node_hits as f64 / self.node_total as f64)
    }

    pub fn edge_rate(&self) -> Option<f64> {
        (self.edge_total > 0).then(|| self.edge_hits as f64 / self.edge_total as f64)
    }
}

/// Scores argmax predictions against the teacher-forcing targets of each
/// `(language graph, gold visual graph)` pair.
pub fn recovery(ctx: &VshContext<'_>, examples: &[(SceneGraph, SceneGraph)]) -> Result<Recovery> {
    let mut out = Recovery::default();
    for (lsg, gold) in examples {
        let skeleton = sketch_skeleton(lsg, ctx.vocab, ctx.labels, ctx.store.get(ctx.embed))?;
        let targets = vsh_targets(ctx, &skeleton, gold)?;
        if targets.nodes.is_empty() {
            out.skipped += 1;
            continue;
        }
        let lg = &targets.folded;
        let mut tape = Tape::new();
        let reps = folded_reps(&mut tape, ctx, &skeleton, lg)?;
        let eps = ctx.vocab.node_epsilon();
        for t in &targets.nodes {
            let na = node_augment_scores(&mut tape, ctx.store, ctx.aug, lg, &reps, t.node)?;
            let pred = argmax(tape.value(na.probs));
            if t.class == eps {
                out.spurious += usize::from(pred != eps);
                continue;
            }
            out.node_total += 1;
            out.node_hits += usize::from(pred == t.class);
            if let Some(rel) = t.relation {
                let (_, probs) = node_relation_label(&mut tape, ctx.store, ctx.aug, na.routed, reps[t.node]);
                out.edge_total += 1;
                out.edge_hits += usize::from(pred == t.class && argmax(tape.value(probs)) == rel);
            }
        }
        let peps = ctx.vocab.pair_epsilon();
        for t in &targets.pairs {
            let (_, probs) = relation_augment_scores(&mut tape, ctx.store, ctx.aug, lg, &reps, t.a, t.b)?;
            let pred = argmax(tape.value(probs));
            if t.class == peps {
                out.spurious += usize::from(pred != peps);
            } else {
                out.edge_total += 1;
                out.edge_hits += usize::from(pred == t.class);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{uniform, GcnParams};
    use crate::numerics::{ParamId, ParamStore};
    use crate::scene_graph::Modality;
    use crate::vocab::Vocab;
    use crate::vsh::{AugParams, VsgVocabularies, EPSILON_BIAS};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Fixture {
        store: ParamStore,
        labels: Vocab,
        embed: ParamId,
        enc: GcnParams,
        vocab: VsgVocabularies,
        aug: AugParams,
    }

    fn words(xs: &[&str]) -> Vocab {
        xs.iter().map(|s| s.to_string()).collect::<Vec<_>>().into()
    }

    impl Fixture {
        fn new() -> Self {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let mut store = ParamStore::new();
            let vocab = VsgVocabularies {
                objects: words(&["ball", "ground", "dog", "cat", "road"]),
                attributes: words(&["red", "wooden"]),
                relations: words(&["on", "chases", "near"]),
            };
            let labels = words(&[
                "ball", "ground", "dog", "cat", "road", "red", "wooden", "on", "chases", "near",
            ]);
            let embed = store
                .add("embed", uniform(&mut rng, vec![labels.len(), 4], 1.0))
                .unwrap();
            let enc = GcnParams::init(&mut store, "enc", 4, 2, &mut rng).unwrap();
            let aug = AugParams::init(&mut store, "aug", 4, Some(3), 2, &vocab, &mut rng).unwrap();
            Fixture {
                store,
                labels,
                embed,
                enc,
                vocab,
                aug,
            }
        }

        fn ctx(&self) -> VshContext<'_> {
            VshContext {
                store: &self.store,
                labels: &self.labels,
                embed: self.embed,
                encoder: &self.enc,
                vocab: &self.vocab,
                aug: &self.aug,
                max_pairs: 500,
                passes: 1,
            }
        }
    }

    fn lsg() -> SceneGraph {
        let mut g = SceneGraph::new(Modality::Language);
        let d = g.add_node(NodeKind::Object, "dog");
        let b = g.add_node(NodeKind::Object, "ball");
        let c = g.add_node(NodeKind::Object, "cat");
        g.add_relation(d, "chases", b);
        g.add_attribute(c, "red");
        g
    }

    fn gold() -> SceneGraph {
        let mut g = lsg().with_modality(Modality::Visual);
        let ground = g.add_node(NodeKind::Object, "ground");
        g.add_relation(1, "on", ground);
        g.add_relation(0, "near", 2);
        g
    }

    #[test]
    fn matching_follows_labels_and_structure() {
        let a = lsg();
        let map = match_graphs(&a, &gold());
        assert_eq!(map, (0..a.len()).map(Some).collect::<Vec<_>>());
        let mut other = SceneGraph::new(Modality::Visual);
        let d = other.add_node(NodeKind::Object, "dog");
        let x = other.add_node(NodeKind::Object, "ball");
        other.add_attribute(d, "red");
        other.add_relation(x, "chases", d);
        let map = match_graphs(&a, &other);
        assert_eq!(map[0], Some(0));
        assert_eq!(map[1], Some(1));
        assert_eq!(map[2], None);
        // attribute under an unmatched parent, relation in the wrong direction
        assert!(map[3..].iter().all(Option::is_none));
    }

    #[test]
    fn targets_pick_planted_extras() {
        let f = Fixture::new();
        let ctx = f.ctx();
        let sk = lsg().with_modality(Modality::Visual);
        let t = vsh_targets(&ctx, &sk, &gold()).unwrap();
        let eps = f.vocab.node_epsilon();
        let ground = f.vocab.object_class("ground").unwrap();
        let classes: Vec<_> = t.nodes.iter().map(|n| (n.node, n.class, n.relation)).collect();
        assert_eq!(classes, vec![(0, eps, None), (1, ground, Some(0)), (2, eps, None)]);
        // (dog, cat) is the only unconnected pair; (ball, cat) too.
        let pairs: Vec<_> = t.pairs.iter().map(|p| (p.a, p.b, p.class)).collect();
        assert_eq!(pairs, vec![(0, 2, 2), (1, 2, f.vocab.pair_epsilon())]);
    }

    #[test]
    fn identical_gold_targets_nothing() {
        let f = Fixture::new();
        let sk = lsg().with_modality(Modality::Visual);
        let t = vsh_targets(&f.ctx(), &sk, &sk).unwrap();
        assert!(t.nodes.iter().all(|n| n.class == f.vocab.node_epsilon()));
        assert!(t.pairs.iter().all(|p| p.class == f.vocab.pair_epsilon()));
    }

    // Zero-initialised heads give softmax(bias) exactly: the dummy class has
    // logit EPSILON_BIAS, every other class logit 0.
    fn biased_nll(classes: usize, target_is_eps: bool) -> f64 {
        let z = EPSILON_BIAS.exp() + (classes - 1) as f64;
        if target_is_eps {
            z.ln() - EPSILON_BIAS
        } else {
            z.ln()
        }
    }

    #[test]
    fn random_init_loss_matches_analytic_expectation() {
        let f = Fixture::new();
        let ctx = f.ctx();
        let mut tape = Tape::new();
        let loss = vsh_loss(&mut tape, &ctx, &lsg(), &gold()).unwrap().unwrap();
        let (na, npa, nr) = (f.vocab.node_classes(), f.vocab.pair_classes(), f.vocab.relations.len());
        let expect = 2.0 * biased_nll(na, true)
            + biased_nll(na, false)
            + (nr as f64).ln()
            + biased_nll(npa, false)
            + biased_nll(npa, true);
        assert!(
            (tape.scalar(loss) - expect).abs() < 1e-6,
            "{} vs {expect}",
            tape.scalar(loss)
        );
    }

    #[test]
    fn loss_vanishes_for_a_confident_correct_predictor() {
        let mut f = Fixture::new();
        let sk = lsg();
        let nb = f.aug.node_b;
        f.store.get_mut(nb).values_mut()[f.vocab.node_epsilon()] = 60.0;
        let pb = f.aug.pair_b;
        f.store.get_mut(pb).values_mut()[f.vocab.pair_epsilon()] = 60.0;
        let mut tape = Tape::new();
        let gold = sk.clone().with_modality(Modality::Visual);
        let loss = vsh_loss(&mut tape, &f.ctx(), &sk, &gold).unwrap().unwrap();
        assert!(tape.scalar(loss) >= 0.0 && tape.scalar(loss) < 1e-20);
    }

    #[test]
    fn disjoint_gold_is_skipped() {
        let f = Fixture::new();
        let mut gold = SceneGraph::new(Modality::Visual);
        gold.add_node(NodeKind::Object, "road");
        let mut lsg = SceneGraph::new(Modality::Language);
        lsg.add_node(NodeKind::Object, "cat");
        let mut tape = Tape::new();
        assert!(vsh_loss(&mut tape, &f.ctx(), &lsg, &gold).unwrap().is_none());
        let r = recovery(&f.ctx(), &[(lsg, gold)]).unwrap();
        assert_eq!(r.skipped, 1);
    }

    #[test]
    fn untrained_recovery_is_zero_without_spurious_additions() {
        let f = Fixture::new();
        let r = recovery(&f.ctx(), &[(lsg(), gold())]).unwrap();
        assert_eq!(
            (r.node_total, r.node_hits, r.edge_total, r.edge_hits, r.spurious),
            (1, 0, 2, 0, 0)
        );
        assert_eq!(r.node_rate(), Some(0.0));
    }
}
