use rand_chacha::ChaCha8Rng;

use crate::encoder::{encode_graph, uniform, GcnParams};
use crate::error::{Error, Result};
use crate::numerics::{argmax, ParamId, ParamStore, Tape, Tensor, Var};
use crate::scene_graph::{
    degenerate_relations, inflate_relations, LabeledEdge, LabeledGraph, Modality, NodeKind, SceneGraph, ATTR_LABEL,
};
use crate::vocab::Vocab;

use super::{NodeClass, VsgVocabularies};

/// Initial logit bias of the "no addition" class, so an untrained model adds nothing.
pub const EPSILON_BIAS: f64 = 2.0;

/// Parameters of the node augmentor, its relation-label head, and the
/// trilinear relation augmentor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugParams {
    pub dim: usize,
    pub node_w: ParamId,
    pub node_b: ParamId,
    pub label_w: ParamId,
    pub label_b: ParamId,
    /// Projections of subject, object and path rows into the trilinear space.
    pub proj: Option<[ParamId; 3]>,
    pub tri: ParamId,
    pub pair_w: ParamId,
    pub pair_b: ParamId,
}

impl AugParams {
    /// Classification heads start at zero with the dummy-class bias set to
    /// [`EPSILON_BIAS`]; projections and the trilinear tensor start uniform.
    /// `tri_dim = None` feeds node rows to the trilinear form unprojected.
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        dim: usize,
        tri_dim: Option<usize>,
        tri_hidden: usize,
        vocab: &VsgVocabularies,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let (na, nr, npa) = (vocab.node_classes(), vocab.relations.len().max(1), vocab.pair_classes());
        let mut node_bias = Tensor::zeros(vec![na]);
        node_bias.values_mut()[vocab.node_epsilon()] = EPSILON_BIAS;
        let mut pair_bias = Tensor::zeros(vec![npa]);
        pair_bias.values_mut()[vocab.pair_epsilon()] = EPSILON_BIAS;
        let node_w = store.add(format!("{prefix}.node_w"), Tensor::zeros(vec![na, dim]))?;
        let node_b = store.add(format!("{prefix}.node_b"), node_bias)?;
        let label_w = store.add(format!("{prefix}.label_w"), Tensor::zeros(vec![nr, 2 * dim]))?;
        let label_b = store.add(format!("{prefix}.label_b"), Tensor::zeros(vec![nr]))?;
        let p = tri_dim.unwrap_or(dim);
        let proj = match tri_dim {
            Some(t) => {
                let bound = 1.0 / (dim as f64).sqrt();
                let mut mk = |n: &str| store.add(format!("{prefix}.{n}"), uniform(rng, vec![t, dim], bound));
                Some([mk("proj_subject")?, mk("proj_object")?, mk("proj_path")?])
            }
            None => None,
        };
        let tri_bound = 1.0 / ((p + 1) as f64);
        let tri = store.add(
            format!("{prefix}.tri"),
            uniform(rng, vec![tri_hidden, p + 1, p, p + 1], tri_bound),
        )?;
        let pair_w = store.add(format!("{prefix}.pair_w"), Tensor::zeros(vec![npa, tri_hidden]))?;
        let pair_b = store.add(format!("{prefix}.pair_b"), pair_bias)?;
        Ok(AugParams {
            dim,
            node_w,
            node_b,
            label_w,
            label_b,
            proj,
            tri,
            pair_w,
            pair_b,
        })
    }

    pub fn lookup(store: &ParamStore, prefix: &str, dim: usize) -> Result<Self> {
        let get = |n: &str| {
            store
                .id(&format!("{prefix}.{n}"))
                .ok_or(Error::Checkpoint(format!("missing tensor {prefix}.{n}")))
        };
        let proj = match store.id(&format!("{prefix}.proj_subject")) {
            Some(_) => Some([get("proj_subject")?, get("proj_object")?, get("proj_path")?]),
            None => None,
        };
        Ok(AugParams {
            dim,
            node_w: get("node_w")?,
            node_b: get("node_b")?,
            label_w: get("label_w")?,
            label_b: get("label_b")?,
            proj,
            tri: get("tri")?,
            pair_w: get("pair_w")?,
            pair_b: get("pair_b")?,
        })
    }
}

/// Everything hallucination needs, borrowed from a model.
#[derive(Debug, Clone, Copy)]
pub struct VshContext<'a> {
    pub store: &'a ParamStore,
    pub labels: &'a Vocab,
    pub embed: ParamId,
    pub encoder: &'a GcnParams,
    pub vocab: &'a VsgVocabularies,
    pub aug: &'a AugParams,
    /// Bound on object pairs scored per graph.
    pub max_pairs: usize,
    /// Number of growth passes.
    pub passes: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct NodeAugment {
    pub logits: Var,
    pub probs: Var,
    /// Routed representation `r_i + Σ α_k r_k`.
    pub routed: Var,
    /// Routing weights over the neighbours, absent for isolated nodes.
    pub attention: Option<Var>,
}

/// Class distribution for attaching a new node to object `i` of `lg`.
/// `reps` holds one row per node of `lg`.
pub fn node_augment_scores(
    tape: &mut Tape,
    store: &ParamStore,
    aug: &AugParams,
    lg: &LabeledGraph,
    reps: &[Var],
    i: usize,
) -> Result<NodeAugment> {
    if lg.nodes.get(i).map(|n| n.0) != Some(NodeKind::Object) {
        return Err(Error::Contract(format!("node augmentor called on non-object node {i}")));
    }
    let neighbors = &lg.undirected_neighbors()[i];
    let r = reps[i];
    let (routed, attention) = if neighbors.is_empty() {
        (r, None)
    } else {
        let scores: Vec<Var> = neighbors.iter().map(|&k| tape.dot(r, reps[k])).collect();
        let s = tape.concat(&scores);
        let alpha = tape.softmax(s);
        let mut h = r;
        for (n, &k) in neighbors.iter().enumerate() {
            let a = tape.index(alpha, n);
            let term = tape.scalar_mul(a, reps[k]);
            h = tape.add(h, term);
        }
        (h, Some(alpha))
    };
    let w = tape.param(store, aug.node_w);
    let b = tape.param(store, aug.node_b);
    let logits = tape.affine(w, routed, b);
    let probs = tape.softmax(logits);
    Ok(NodeAugment {
        logits,
        probs,
        routed,
        attention,
    })
}

/// Relation-label distribution for a new object hanging off a node with
/// routed row `routed` and own row `own`. Returns `(logits, probs)`.
pub fn node_relation_label(tape: &mut Tape, store: &ParamStore, aug: &AugParams, routed: Var, own: Var) -> (Var, Var) {
    let x = tape.concat(&[routed, own]);
    let w = tape.param(store, aug.label_w);
    let b = tape.param(store, aug.label_b);
    let logits = tape.affine(w, x, b);
    (logits, tape.softmax(logits))
}

/// Distribution over relation labels plus the dummy class for a new edge
/// `i → j` between unconnected nodes of `lg`. Returns `(logits, probs)`.
pub fn relation_augment_scores(
    tape: &mut Tape,
    store: &ParamStore,
    aug: &AugParams,
    lg: &LabeledGraph,
    reps: &[Var],
    i: usize,
    j: usize,
) -> Result<(Var, Var)> {
    let n = lg.nodes.len();
    if i == j || i >= n || j >= n {
        return Err(Error::Contract(format!(
            "relation augmentor needs two distinct nodes, got {i} and {j}"
        )));
    }
    if lg.has_edge_between(i, j) {
        return Err(Error::Contract(format!("nodes {i} and {j} are already connected")));
    }
    let path = match lg.shortest_path(i, j) {
        Some(p) => {
            let rows: Vec<Var> = p.iter().map(|&k| reps[k]).collect();
            tape.mean(&rows)?
        }
        None => tape.zeros(aug.dim),
    };
    let (a, b, c) = match aug.proj {
        Some([ps, po, pp]) => {
            let (ps, po, pp) = (tape.param(store, ps), tape.param(store, po), tape.param(store, pp));
            (
                tape.matvec(ps, reps[i]),
                tape.matvec(po, reps[j]),
                tape.matvec(pp, path),
            )
        }
        None => (reps[i], reps[j], path),
    };
    let w = tape.param(store, aug.tri);
    let t = tape.triaffine(w, a, b, c);
    let hidden = tape.sigmoid(t);
    let pw = tape.param(store, aug.pair_w);
    let pb = tape.param(store, aug.pair_b);
    let logits = tape.affine(pw, hidden, pb);
    Ok((logits, tape.softmax(logits)))
}

/// Encodes a node-form visual graph and returns rows aligned with its
/// relation-folded form.
pub(crate) fn folded_reps(
    tape: &mut Tape,
    ctx: &VshContext<'_>,
    g: &SceneGraph,
    lg: &LabeledGraph,
) -> Result<Vec<Var>> {
    let reps = encode_graph(tape, ctx.store, g, ctx.labels, ctx.embed, ctx.encoder)?;
    lg.origin
        .iter()
        .map(|o| {
            o.map(|k| reps.rows[k])
                .ok_or_else(|| Error::Internal("folded node without origin".into()))
        })
        .collect()
}

/// Object pairs `(a, b)`, `a < b`, with no edge between them, in id order.
pub(crate) fn candidate_pairs(lg: &LabeledGraph, max_pairs: usize) -> Vec<(usize, usize)> {
    let objects: Vec<usize> = (0..lg.nodes.len())
        .filter(|&k| lg.nodes[k].0 == NodeKind::Object)
        .collect();
    let mut out = Vec::new();
    for (x, &a) in objects.iter().enumerate() {
        for &b in &objects[x + 1..] {
            if out.len() == max_pairs {
                return out;
            }
            if !lg.has_edge_between(a, b) {
                out.push((a, b));
            }
        }
    }
    out
}

/// Grows a skeleton visual graph: one optional new node per object, then one
/// optional new edge per unconnected object pair, repeated `ctx.passes` times.
pub fn complete_vision(ctx: &VshContext<'_>, skeleton: &SceneGraph) -> Result<SceneGraph> {
    let mut g = skeleton.clone();
    for _ in 0..ctx.passes {
        g = grow_once(ctx, &g)?;
    }
    Ok(g)
}

fn grow_once(ctx: &VshContext<'_>, g: &SceneGraph) -> Result<SceneGraph> {
    let lg = degenerate_relations(g)?;
    let mut tape = Tape::new();
    let reps = folded_reps(&mut tape, ctx, g, &lg)?;
    let mut out = lg.clone();
    for k in 0..lg.nodes.len() {
        if lg.nodes[k].0 != NodeKind::Object {
            continue;
        }
        let na = node_augment_scores(&mut tape, ctx.store, ctx.aug, &lg, &reps, k)?;
        let class = argmax(tape.value(na.probs));
        match ctx.vocab.node_class(class) {
            NodeClass::Object(label) => {
                let (_, probs) = node_relation_label(&mut tape, ctx.store, ctx.aug, na.routed, reps[k]);
                let rel = ctx.vocab.relations.item(argmax(tape.value(probs))).to_string();
                out.nodes.push((NodeKind::Object, label.to_string()));
                out.origin.push(None);
                out.edges.push(LabeledEdge {
                    src: k,
                    dst: out.nodes.len() - 1,
                    label: rel,
                });
            }
            NodeClass::Attribute(label) => {
                out.nodes.push((NodeKind::Attribute, label.to_string()));
                out.origin.push(None);
                out.edges.push(LabeledEdge {
                    src: k,
                    dst: out.nodes.len() - 1,
                    label: ATTR_LABEL.to_string(),
                });
            }
            NodeClass::Nothing => {}
        }
    }
    for (a, b) in candidate_pairs(&lg, ctx.max_pairs) {
        let (_, probs) = relation_augment_scores(&mut tape, ctx.store, ctx.aug, &lg, &reps, a, b)?;
        let class = argmax(tape.value(probs));
        if class != ctx.vocab.pair_epsilon() {
            out.edges.push(LabeledEdge {
                src: a,
                dst: b,
                label: ctx.vocab.relations.item(class).to_string(),
            });
        }
    }
    out.modality = Modality::Visual;
    let grown = inflate_relations(&out, None)?;
    grown
        .validate()
        .map_err(|v| Error::Internal(format!("hallucinated graph is invalid: {v:?}")))?;
    Ok(grown)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_difference_check, GradcheckConfig, Gradients};
    use crate::scene_graph::is_isomorphic;
    use crate::vocab::Vocab;
    use rand::SeedableRng;

    fn vocab(objs: &[&str], attrs: &[&str], rels: &[&str]) -> VsgVocabularies {
        let v = |xs: &[&str]| -> Vocab { xs.iter().map(|s| s.to_string()).collect::<Vec<_>>().into() };
        VsgVocabularies {
            objects: v(objs),
            attributes: v(attrs),
            relations: v(rels),
        }
    }

    fn set(store: &mut ParamStore, id: ParamId, values: &[f64]) {
        store.get_mut(id).values_mut().copy_from_slice(values);
    }

    fn lg_star(neighbors: usize) -> LabeledGraph {
        let mut g = SceneGraph::new(Modality::Visual);
        let c = g.add_node(NodeKind::Object, "a");
        for _ in 0..neighbors {
            let o = g.add_node(NodeKind::Object, "b");
            g.add_relation(c, "r", o);
        }
        degenerate_relations(&g).unwrap()
    }

    #[test]
    fn routing_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let v = vocab(&["a", "b"], &["x"], &["r"]);
        let aug = AugParams::init(&mut store, "aug", 2, None, 2, &v, &mut rng).unwrap();
        let mut tape = Tape::new();
        let lg = lg_star(1);
        let reps = vec![tape.constant(vec![1.0, 0.0]), tape.constant(vec![0.3, 0.2])];
        let na = node_augment_scores(&mut tape, &store, &aug, &lg, &reps, 0).unwrap();
        assert_eq!(tape.value(na.attention.unwrap()), &[1.0]);
        let lg = lg_star(2);
        let reps = vec![
            tape.constant(vec![1.0, 0.5]),
            tape.constant(vec![0.3, 0.2]),
            tape.constant(vec![0.3, 0.2]),
        ];
        let na = node_augment_scores(&mut tape, &store, &aug, &lg, &reps, 0).unwrap();
        assert_eq!(tape.value(na.attention.unwrap()), &[0.5, 0.5]);
        let p: f64 = tape.value(na.probs).iter().sum();
        assert!((p - 1.0).abs() < 1e-9);
        assert!(matches!(
            node_augment_scores(&mut tape, &store, &aug, &degenerate_with_attr(), &reps, 1),
            Err(Error::Contract(_))
        ));
    }

    fn degenerate_with_attr() -> LabeledGraph {
        let mut g = SceneGraph::new(Modality::Visual);
        let o = g.add_node(NodeKind::Object, "a");
        g.add_attribute(o, "x");
        degenerate_relations(&g).unwrap()
    }

    // d = 2, two neighbours, fixed weights; compared with arithmetic done by hand.
    #[test]
    fn node_scores_match_hand_computation() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let v = vocab(&["a"], &["x"], &["r"]);
        let aug = AugParams::init(&mut store, "aug", 2, None, 2, &v, &mut rng).unwrap();
        set(&mut store, aug.node_w, &[1.0, 0.0, 0.0, 1.0, 0.5, -0.5]);
        set(&mut store, aug.node_b, &[0.0, 0.1, 0.2]);
        let lg = lg_star(2);
        let mut tape = Tape::new();
        let r0 = [1.0, 0.0];
        let r1 = [0.0, 1.0];
        let r2 = [1.0, 1.0];
        let reps = vec![
            tape.constant(r0.to_vec()),
            tape.constant(r1.to_vec()),
            tape.constant(r2.to_vec()),
        ];
        let na = node_augment_scores(&mut tape, &store, &aug, &lg, &reps, 0).unwrap();
        // scores r0·r1 = 0, r0·r2 = 1
        let e = 1f64.exp();
        let (a1, a2) = (1.0 / (1.0 + e), e / (1.0 + e));
        let h = [1.0 + a2, a1 + a2];
        let logits = [h[0], h[1] + 0.1, 0.5 * h[0] - 0.5 * h[1] + 0.2];
        let z: f64 = logits.iter().map(|x| x.exp()).sum();
        let expect: Vec<f64> = logits.iter().map(|x| x.exp() / z).collect();
        for (a, b) in tape.value(na.probs).iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in tape.value(na.routed).iter().zip(&h) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn relation_label_head_edges() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let one = vocab(&["a"], &[], &["on"]);
        let aug = AugParams::init(&mut store, "aug", 2, None, 2, &one, &mut rng).unwrap();
        let mut tape = Tape::new();
        let h = tape.constant(vec![0.3, -2.0]);
        let r = tape.constant(vec![1.0, 4.0]);
        let (_, p) = node_relation_label(&mut tape, &store, &aug, h, r);
        assert_eq!(tape.value(p), &[1.0]);
        let mut store = ParamStore::new();
        let three = vocab(&["a"], &[], &["on", "near", "has"]);
        let aug = AugParams::init(&mut store, "aug", 2, None, 2, &three, &mut rng).unwrap();
        let mut tape = Tape::new();
        let h = tape.constant(vec![0.3, -2.0]);
        let r = tape.constant(vec![1.0, 4.0]);
        let (_, p) = node_relation_label(&mut tape, &store, &aug, h, r);
        for x in tape.value(p) {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    fn two_objects() -> LabeledGraph {
        let mut g = SceneGraph::new(Modality::Visual);
        g.add_node(NodeKind::Object, "a");
        g.add_node(NodeKind::Object, "b");
        degenerate_relations(&g).unwrap()
    }

    #[test]
    fn zero_trilinear_and_head_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let v = vocab(&["a", "b"], &[], &["on", "near"]);
        let aug = AugParams::init(&mut store, "aug", 2, None, 3, &v, &mut rng).unwrap();
        store.get_mut(aug.tri).values_mut().fill(0.0);
        store.get_mut(aug.pair_b).values_mut().fill(0.0);
        let mut tape = Tape::new();
        let lg = two_objects();
        let reps = vec![tape.constant(vec![0.4, 1.0]), tape.constant(vec![-1.0, 2.0])];
        let (logits, p) = relation_augment_scores(&mut tape, &store, &aug, &lg, &reps, 0, 1).unwrap();
        assert_eq!(tape.value(logits), &[0.0, 0.0, 0.0]);
        for x in tape.value(p) {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    // d = 2, |D^r| = 2, disconnected pair (path row is zero), no projections.
    #[test]
    fn trilinear_matches_hand_contraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let v = vocab(&["a", "b"], &[], &["on", "near"]);
        let aug = AugParams::init(&mut store, "aug", 2, None, 1, &v, &mut rng).unwrap();
        // W[0, i, j, l] with i, l over 3 (bias-augmented) and j over 2.
        let w: Vec<f64> = (0..18).map(|k| (k as f64 - 8.0) / 10.0).collect();
        set(&mut store, aug.tri, &w);
        set(&mut store, aug.pair_w, &[1.0, -1.0, 0.5]);
        set(&mut store, aug.pair_b, &[0.0, 0.0, 0.0]);
        let ri = [0.5, -1.0];
        let rj = [2.0, 0.25];
        let mut tape = Tape::new();
        let lg = two_objects();
        let reps = vec![tape.constant(ri.to_vec()), tape.constant(rj.to_vec())];
        let (logits, p) = relation_augment_scores(&mut tape, &store, &aug, &lg, &reps, 0, 1).unwrap();
        let a = [ri[0], ri[1], 1.0];
        let c = [0.0, 0.0, 1.0];
        let mut t = 0.0;
        for i in 0..3 {
            for j in 0..2 {
                for l in 0..3 {
                    t += w[(i * 2 + j) * 3 + l] * a[i] * rj[j] * c[l];
                }
            }
        }
        let s = 1.0 / (1.0 + (-t).exp());
        let expect = [s, -s, 0.5 * s];
        for (x, y) in tape.value(logits).iter().zip(expect) {
            assert!((x - y).abs() < 1e-12);
        }
        let total: f64 = tape.value(p).iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        let (_, q) = relation_augment_scores(&mut tape, &store, &aug, &lg, &reps, 1, 0).unwrap();
        assert_ne!(tape.value(p), tape.value(q));
    }

    #[test]
    fn connected_pair_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let v = vocab(&["a", "b"], &[], &["r"]);
        let aug = AugParams::init(&mut store, "aug", 2, None, 1, &v, &mut rng).unwrap();
        let lg = lg_star(1);
        let mut tape = Tape::new();
        let reps = vec![tape.constant(vec![1.0, 0.0]), tape.constant(vec![0.0, 1.0])];
        assert!(matches!(
            relation_augment_scores(&mut tape, &store, &aug, &lg, &reps, 0, 1),
            Err(Error::Contract(_))
        ));
    }

    struct Fixture {
        store: ParamStore,
        labels: Vocab,
        embed: ParamId,
        enc: GcnParams,
        vocab: VsgVocabularies,
        aug: AugParams,
    }

    impl Fixture {
        fn new(seed: u64) -> Self {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut store = ParamStore::new();
            let vocab = vocab(
                &["dog", "cat", "ball", "ground"],
                &["red", "furry"],
                &["on", "chases", "near"],
            );
            let mut all: Vec<String> = vocab.objects.items().to_vec();
            all.extend(vocab.attributes.items().iter().cloned());
            all.extend(vocab.relations.items().iter().cloned());
            let labels: Vocab = all.into();
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

    fn skeleton() -> SceneGraph {
        let mut g = SceneGraph::new(Modality::Visual);
        let d = g.add_node(NodeKind::Object, "dog");
        let c = g.add_node(NodeKind::Object, "cat");
        let b = g.add_node(NodeKind::Object, "ball");
        g.add_attribute(d, "red");
        g.add_relation(d, "chases", c);
        g.add_relation(c, "chases", b);
        g
    }

    #[test]
    fn untrained_completion_adds_nothing() {
        let f = Fixture::new(1);
        let sk = skeleton();
        let out = complete_vision(&f.ctx(), &sk).unwrap();
        assert!(is_isomorphic(&out, &sk));
    }

    #[test]
    fn biased_heads_add_planted_content() {
        let mut f = Fixture::new(2);
        // Make "ground" the top node class and "on" the top relation, and
        // make every unconnected pair receive "near".
        let ground = f.vocab.object_class("ground").unwrap();
        let eps = f.vocab.node_epsilon();
        let nb = f.aug.node_b;
        f.store.get_mut(nb).values_mut()[eps] = 0.0;
        f.store.get_mut(nb).values_mut()[ground] = 5.0;
        let lb = f.aug.label_b;
        f.store.get_mut(lb).values_mut()[0] = 5.0;
        let pb = f.aug.pair_b;
        let pe = f.vocab.pair_epsilon();
        f.store.get_mut(pb).values_mut()[pe] = 0.0;
        f.store.get_mut(pb).values_mut()[2] = 5.0;
        let sk = skeleton();
        let out = complete_vision(&f.ctx(), &sk).unwrap();
        assert_eq!(out.count(NodeKind::Object), 6);
        assert_eq!(out.count(NodeKind::Relation), 2 + 3 + 1);
        assert!(out.validate().is_ok());
        let again = complete_vision(&f.ctx(), &sk).unwrap();
        assert_eq!(
            crate::scene_graph::serialize(&out),
            crate::scene_graph::serialize(&again)
        );
        let near: Vec<_> = out
            .relation_triples()
            .into_iter()
            .filter(|(_, r, _)| out.node(*r).label == "near")
            .map(|(s, _, o)| (out.node(s).label.clone(), out.node(o).label.clone()))
            .collect();
        assert_eq!(near, vec![("dog".to_string(), "ball".to_string())]);
    }

    #[test]
    fn augmentor_gradients_match_finite_differences() {
        let mut f = Fixture::new(3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for (id, name) in [
            (f.aug.node_w, "node_w"),
            (f.aug.label_w, "label_w"),
            (f.aug.pair_w, "pair_w"),
        ] {
            let n = f.store.get(id).numel();
            let t = uniform(&mut rng, vec![n], 0.5);
            f.store.get_mut(id).values_mut().copy_from_slice(t.values());
            assert!(!name.is_empty());
        }
        let sk = skeleton();
        let lg = degenerate_relations(&sk).unwrap();
        let Fixture {
            mut store,
            labels,
            embed,
            enc,
            vocab,
            aug,
        } = f;
        let report = finite_difference_check(
            &mut store,
            |s: &ParamStore, t: &mut Tape| -> Result<Var> {
                let ctx = VshContext {
                    store: s,
                    labels: &labels,
                    embed,
                    encoder: &enc,
                    vocab: &vocab,
                    aug: &aug,
                    max_pairs: 500,
                    passes: 1,
                };
                let reps = folded_reps(t, &ctx, &sk, &lg)?;
                let na = node_augment_scores(t, s, &aug, &lg, &reps, 0)?;
                let l1 = t.nll(na.logits, 2);
                let (rl, _) = node_relation_label(t, s, &aug, na.routed, reps[0]);
                let l2 = t.nll(rl, 1);
                let (pl, _) = relation_augment_scores(t, s, &aug, &lg, &reps, 0, 2)?;
                let l3 = t.nll(pl, 2);
                Ok(t.add_all(&[l1, l2, l3]))
            },
            |_: &mut Gradients, _: &ParamStore| {},
            &GradcheckConfig::default(),
        )
        .unwrap();
        assert!(report.passed(), "{:?}", report.worst);
    }
}
