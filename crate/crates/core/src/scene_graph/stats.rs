use std::fmt;

use super::graph::{NodeKind, SceneGraph};

pub const KINDS: [NodeKind; 3] = [NodeKind::Object, NodeKind::Attribute, NodeKind::Relation];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KindGrowth {
    pub kind: NodeKind,
    pub before: usize,
    pub after: usize,
}

impl KindGrowth {
    /// `(after - before) / before`, or `None` when `before` is zero.
    pub fn rate(&self) -> Option<f64> {
        (self.before > 0).then(|| (self.after as f64 - self.before as f64) / self.before as f64)
    }
}

/// Node counts per kind before and after a transformation.
#[derive(Debug, Clone, PartialEq)]
pub struct GrowthReport {
    pub kinds: [KindGrowth; 3],
}

impl GrowthReport {
    pub fn get(&self, kind: NodeKind) -> &KindGrowth {
        self.kinds.iter().find(|k| k.kind == kind).unwrap()
    }
}

pub fn graph_stats(before: &SceneGraph, after: &SceneGraph) -> GrowthReport {
    GrowthReport {
        kinds: KINDS.map(|kind| KindGrowth {
            kind,
            before: before.count(kind),
            after: after.count(kind),
        }),
    }
}

/// Sums counts over many reports so rates are corpus-level.
pub fn pooled(reports: &[GrowthReport]) -> GrowthReport {
    GrowthReport {
        kinds: KINDS.map(|kind| KindGrowth {
            kind,
            before: reports.iter().map(|r| r.get(kind).before).sum(),
            after: reports.iter().map(|r| r.get(kind).after).sum(),
        }),
    }
}

/// Mean of per-graph rates, skipping graphs where the rate is undefined.
pub fn mean_rate(reports: &[GrowthReport], kind: NodeKind) -> Option<f64> {
    let rates: Vec<f64> = reports.iter().filter_map(|r| r.get(kind).rate()).collect();
    (!rates.is_empty()).then(|| rates.iter().sum::<f64>() / rates.len() as f64)
}

impl fmt::Display for GrowthReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "kind\tbefore\tafter\trate")?;
        for k in &self.kinds {
            let rate = match k.rate() {
                Some(r) => format!("{r:.4}"),
                None => "undefined".to_string(),
            };
            writeln!(f, "{}\t{}\t{}\t{}", k.kind, k.before, k.after, rate)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene_graph::Modality;

    fn objects(n: usize) -> SceneGraph {
        let mut g = SceneGraph::new(Modality::Visual);
        for i in 0..n {
            g.add_node(NodeKind::Object, format!("o{i}"));
        }
        g
    }

    #[test]
    fn identical_graphs_zero_growth() {
        let mut g = objects(2);
        g.add_attribute(0, "red");
        g.add_relation(0, "on", 1);
        let r = graph_stats(&g, &g);
        assert!(r.kinds.iter().all(|k| k.rate() == Some(0.0)));
    }

    #[test]
    fn four_to_six_objects() {
        let r = graph_stats(&objects(4), &objects(6));
        assert_eq!(r.get(NodeKind::Object).rate(), Some(0.5));
        assert_eq!(r.get(NodeKind::Relation).rate(), None);
        assert!(r.to_string().contains("relation\t0\t0\tundefined"));
    }

    #[test]
    fn pooling_sums_counts() {
        let a = graph_stats(&objects(1), &objects(2));
        let b = graph_stats(&objects(3), &objects(3));
        let p = pooled(&[a.clone(), b.clone()]);
        assert_eq!(p.get(NodeKind::Object).rate(), Some(0.25));
        assert_eq!(mean_rate(&[a, b], NodeKind::Object), Some(0.5));
    }
}
