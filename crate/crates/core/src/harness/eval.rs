//! Test-set evaluation and node-growth statistics.

use crate::corpus::{Example, References};
use crate::error::{Error, Result};
use crate::model::{Direction, Model};
use crate::scene_graph::{graph_stats, pooled, GrowthReport};
use crate::vsh::{recovery, Recovery};

use super::bleu::corpus_bleu;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub sentences: usize,
    /// BLEU with hallucinated visual graphs.
    pub bleu_image_free: f64,
    /// BLEU with the gold visual graphs of the test images.
    pub bleu_gold: f64,
    pub recovery: Recovery,
}

/// Greedy forward translations of the test sentences, image-free or with
/// each example's gold visual graph.
pub fn translate_all(model: &Model, test: &[Example], gold_vsg: bool) -> Result<Vec<Vec<String>>> {
    test.iter()
        .map(|ex| {
            if gold_vsg {
                model.translate(Direction::Forward, &ex.lsg, &ex.vsg)
            } else {
                model.translate_image_free(&ex.tokens)
            }
        })
        .collect()
}

pub fn evaluate(model: &Model, test: &[Example], refs: &References, smooth: bool) -> Result<EvalReport> {
    if test.len() != refs.len() {
        return Err(Error::Data(format!(
            "{} test sentences but {} references",
            test.len(),
            refs.len()
        )));
    }
    let free = translate_all(model, test, false)?;
    let gold = translate_all(model, test, true)?;
    let r = refs.read();
    let pairs: Vec<_> = test.iter().map(|e| (e.lsg.clone(), e.vsg.clone())).collect();
    Ok(EvalReport {
        sentences: test.len(),
        bleu_image_free: corpus_bleu(&free, r, smooth)?,
        bleu_gold: corpus_bleu(&gold, r, smooth)?,
        recovery: recovery(&model.vsh(), &pairs)?,
    })
}

/// Node-kind growth from each language graph to its visual graph: the
/// hallucinated one when a model is given, the gold one otherwise.
pub fn growth_stats(model: Option<&Model>, examples: &[Example]) -> Result<GrowthReport> {
    let reports = examples
        .iter()
        .map(|ex| {
            let after = match model {
                Some(m) => m.hallucinate(&ex.lsg)?,
                None => ex.vsg.clone(),
            };
            Ok(graph_stats(&ex.lsg, &after))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(pooled(&reports))
}
