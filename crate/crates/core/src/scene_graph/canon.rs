//! Canonical labelling of scene graphs for isomorphism tests.
//!
//! Colour refinement seeded by `(kind, label)`, then individualisation of the
//! first non-singleton cell with backtracking; the lexicographically smallest
//! leaf encoding is the canonical form. Exponential only on graphs with large
//! automorphism groups, which scene graphs of desk size do not have.

use super::graph::{NodeKind, SceneGraph};

/// Canonical encoding: equal for two graphs exactly when they are isomorphic
/// (kinds, labels, directed edges and modality all respected).
pub fn canonical_form(g: &SceneGraph) -> String {
    let n = g.len();
    let (ins, outs) = g.adjacency();
    let mut keys: Vec<(NodeKind, &str)> = g.nodes().iter().map(|v| (v.kind, v.label.as_str())).collect();
    keys.sort();
    keys.dedup();
    let colors: Vec<usize> = g
        .nodes()
        .iter()
        .map(|v| keys.binary_search(&(v.kind, v.label.as_str())).unwrap())
        .collect();
    let colors = refine(colors, &ins, &outs);
    let mut best: Option<Vec<usize>> = None;
    search(g, &ins, &outs, colors, &mut best);
    let order = best.unwrap_or_default();
    encode(g, &order, n)
}

pub fn is_isomorphic(a: &SceneGraph, b: &SceneGraph) -> bool {
    a.len() == b.len() && a.edges().len() == b.edges().len() && canonical_form(a) == canonical_form(b)
}

fn refine(mut colors: Vec<usize>, ins: &[Vec<usize>], outs: &[Vec<usize>]) -> Vec<usize> {
    let n = colors.len();
    loop {
        let count = distinct(&colors);
        let sigs: Vec<(usize, Vec<usize>, Vec<usize>)> = (0..n)
            .map(|v| {
                let mut i: Vec<usize> = ins[v].iter().map(|&u| colors[u]).collect();
                let mut o: Vec<usize> = outs[v].iter().map(|&u| colors[u]).collect();
                i.sort_unstable();
                o.sort_unstable();
                (colors[v], i, o)
            })
            .collect();
        let mut uniq = sigs.clone();
        uniq.sort();
        uniq.dedup();
        colors = sigs.iter().map(|s| uniq.binary_search(s).unwrap()).collect();
        if distinct(&colors) == count {
            return colors;
        }
    }
}

fn distinct(colors: &[usize]) -> usize {
    let mut c = colors.to_vec();
    c.sort_unstable();
    c.dedup();
    c.len()
}

// `best` holds the node order (position → node) of the smallest encoding so far.
fn search(g: &SceneGraph, ins: &[Vec<usize>], outs: &[Vec<usize>], colors: Vec<usize>, best: &mut Option<Vec<usize>>) {
    let n = colors.len();
    let mut sizes = vec![0usize; n.max(1)];
    for &c in &colors {
        sizes[c] += 1;
    }
    let target = (0..n).find(|&c| sizes[c] > 1);
    let Some(cell) = target else {
        let mut order = vec![0; n];
        for (v, &c) in colors.iter().enumerate() {
            order[c] = v;
        }
        let better = match best {
            None => true,
            Some(b) => encode(g, &order, n) < encode(g, b, n),
        };
        if better {
            *best = Some(order);
        }
        return;
    };
    for v in (0..n).filter(|&v| colors[v] == cell) {
        // Split v off its cell: it keeps the cell's colour, the rest move up by one.
        let split: Vec<usize> = colors
            .iter()
            .enumerate()
            .map(|(u, &c)| if c > cell || (c == cell && u != v) { c + 1 } else { c })
            .collect();
        search(g, ins, outs, refine(split, ins, outs), best);
    }
}

fn encode(g: &SceneGraph, order: &[usize], n: usize) -> String {
    let mut pos = vec![0; n];
    for (p, &v) in order.iter().enumerate() {
        pos[v] = p;
    }
    let mut out = format!("{:?};", g.modality());
    for &v in order {
        let node = g.node(v);
        out.push_str(&format!("{}:{:?},", node.kind, node.label));
    }
    let mut edges: Vec<(usize, usize)> = g.edges().iter().map(|&(s, d)| (pos[s], pos[d])).collect();
    edges.sort_unstable();
    out.push(';');
    for (s, d) in edges {
        out.push_str(&format!("{s}>{d},"));
    }
    out
}
