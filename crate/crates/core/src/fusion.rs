//! Cross-modal alignment and fusion of a language graph with a visual graph.

use std::collections::BTreeSet;

use crate::encoder::{gcn_forward, GcnParams, NodeReps};
use crate::error::{Error, Result};
use crate::numerics::{cosine_similarity, ParamStore, Tape, Var};
use crate::scene_graph::{Modality, NodeKind, SceneGraph};

/// Where a fused node came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Provenance {
    Language(usize),
    Visual(usize),
    Merged(usize, usize),
}

#[derive(Debug, Clone)]
pub struct FusedGraph {
    pub graph: SceneGraph,
    pub provenance: Vec<Provenance>,
    /// Initial representation per node: the source row, or the mean of both rows when merged.
    pub rows: Vec<Var>,
}

impl FusedGraph {
    pub fn merged_pairs(&self) -> Vec<(usize, usize)> {
        self.provenance
            .iter()
            .filter_map(|p| match p {
                Provenance::Merged(i, j) => Some((*i, *j)),
                _ => None,
            })
            .collect()
    }
}

/// Cosine similarity, with zero for a zero-norm operand.
fn score(a: &[f64], b: &[f64]) -> f64 {
    cosine_similarity(a, b).unwrap_or(0.0)
}

/// Greedy one-to-one matching over `candidates` by descending score, keeping
/// scores above `alpha`; ties go to the lowest `(i, j)`.
fn greedy(
    mut candidates: Vec<(f64, usize, usize)>,
    alpha: f64,
    used_a: &mut [bool],
    used_b: &mut [bool],
) -> Vec<(usize, usize)> {
    candidates.retain(|c| c.0 > alpha);
    candidates.sort_by(|x, y| y.0.total_cmp(&x.0).then((x.1, x.2).cmp(&(y.1, y.2))));
    let mut out = Vec::new();
    for (_, i, j) in candidates {
        if !used_a[i] && !used_b[j] {
            used_a[i] = true;
            used_b[j] = true;
            out.push((i, j));
        }
    }
    out
}

/// Node pairs `(language id, visual id)` to merge.
///
/// Objects match greedily on cosine score above `alpha`. Attributes may only
/// match under a merged object pair. Relations may only match when both
/// endpoints are merged onto each other; same-label relations merge first,
/// the rest greedily above `alpha`. Pairs are returned sorted.
pub fn match_nodes(
    lsg: &SceneGraph,
    lsg_rows: &[Vec<f64>],
    vsg: &SceneGraph,
    vsg_rows: &[Vec<f64>],
    alpha: f64,
) -> Vec<(usize, usize)> {
    let (nl, nv) = (lsg.len(), vsg.len());
    let mut used_l = vec![false; nl];
    let mut used_v = vec![false; nv];
    let mut partner = vec![None; nl];
    let objects = |g: &SceneGraph| g.ids_of(NodeKind::Object);
    let mut cand = Vec::new();
    for &i in &objects(lsg) {
        for &j in &objects(vsg) {
            cand.push((score(&lsg_rows[i], &vsg_rows[j]), i, j));
        }
    }
    let mut pairs = greedy(cand, alpha, &mut used_l, &mut used_v);
    for &(i, j) in &pairs {
        partner[i] = Some(j);
    }

    let v_attrs = vsg.attribute_pairs();
    let mut cand = Vec::new();
    for (o, a) in lsg.attribute_pairs() {
        let Some(po) = partner[o] else { continue };
        for &(vo, va) in &v_attrs {
            if vo == po {
                cand.push((score(&lsg_rows[a], &vsg_rows[va]), a, va));
            }
        }
    }
    pairs.extend(greedy(cand, alpha, &mut used_l, &mut used_v));

    let v_rels = vsg.relation_triples();
    let mut cand = Vec::new();
    for (s, r, o) in lsg.relation_triples() {
        let (Some(ps), Some(po)) = (partner[s], partner[o]) else {
            continue;
        };
        for &(vs, vr, vo) in &v_rels {
            if vs == ps && vo == po {
                cand.push((score(&lsg_rows[r], &vsg_rows[vr]), r, vr));
            }
        }
    }
    let same: Vec<(f64, usize, usize)> = cand
        .iter()
        .filter(|c| lsg.node(c.1).label == vsg.node(c.2).label)
        .copied()
        .collect();
    pairs.extend(greedy(same, f64::NEG_INFINITY, &mut used_l, &mut used_v));
    pairs.extend(greedy(cand, alpha, &mut used_l, &mut used_v));
    pairs.sort_unstable();
    pairs
}

/// Merges aligned nodes and takes the union of the remaining structure.
///
/// Language nodes keep their ids; unmatched visual nodes follow in id order.
/// Merged nodes keep the language label and the mean of both rows.
pub fn align_and_fuse(
    tape: &mut Tape,
    lsg: &SceneGraph,
    lsg_reps: &[Var],
    vsg: &SceneGraph,
    vsg_reps: &[Var],
    alpha: f64,
) -> Result<FusedGraph> {
    if lsg_reps.len() != lsg.len() || vsg_reps.len() != vsg.len() {
        return Err(Error::Contract("representation rows do not match graph sizes".into()));
    }
    let dims: BTreeSet<usize> = lsg_reps.iter().chain(vsg_reps).map(|v| tape.numel(*v)).collect();
    if dims.len() > 1 {
        return Err(Error::Contract(format!("representation widths differ: {dims:?}")));
    }
    let lv: Vec<Vec<f64>> = lsg_reps.iter().map(|v| tape.value(*v).to_vec()).collect();
    let vv: Vec<Vec<f64>> = vsg_reps.iter().map(|v| tape.value(*v).to_vec()).collect();
    let pairs = match_nodes(lsg, &lv, vsg, &vv, alpha);

    let mut v_to_f = vec![usize::MAX; vsg.len()];
    let mut provenance: Vec<Provenance> = (0..lsg.len()).map(Provenance::Language).collect();
    let mut rows = lsg_reps.to_vec();
    for &(i, j) in &pairs {
        v_to_f[j] = i;
        provenance[i] = Provenance::Merged(i, j);
        rows[i] = tape.mean(&[lsg_reps[i], vsg_reps[j]])?;
    }
    let mut nodes: Vec<(NodeKind, String)> = lsg.nodes().iter().map(|n| (n.kind, n.label.clone())).collect();
    for n in vsg.nodes() {
        if v_to_f[n.id] == usize::MAX {
            v_to_f[n.id] = nodes.len();
            nodes.push((n.kind, n.label.clone()));
            provenance.push(Provenance::Visual(n.id));
            rows.push(vsg_reps[n.id]);
        }
    }
    let mut edges: Vec<(usize, usize)> = lsg.edges().to_vec();
    let mut seen: BTreeSet<(usize, usize)> = edges.iter().copied().collect();
    for &(s, d) in vsg.edges() {
        let e = (v_to_f[s], v_to_f[d]);
        if seen.insert(e) {
            edges.push(e);
        }
    }
    let graph = SceneGraph::from_parts(Modality::Mixed, nodes, edges);
    let max_components = lsg.components().len() + vsg.components().len();
    graph
        .validate_with(max_components)
        .map_err(|v| Error::Internal(format!("fused graph is invalid: {v:?}")))?;
    Ok(FusedGraph {
        graph,
        provenance,
        rows,
    })
}

/// Runs the target-side encoder from the fused rows and mean-pools the result.
pub fn encode_and_pool(
    tape: &mut Tape,
    store: &ParamStore,
    fused: &FusedGraph,
    enc: &GcnParams,
) -> Result<(NodeReps, Var)> {
    let reps = gcn_forward(tape, store, &fused.graph, &fused.rows, enc)?;
    let pooled = tape.mean(&reps.rows)?;
    Ok((reps, pooled))
}
