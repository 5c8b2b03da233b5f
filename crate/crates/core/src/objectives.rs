//! Training losses and the staged schedule.
//!
//! Pseudo sentences for back-translation and captioning are produced by
//! greedy decoding. Their token choices are discrete, so no gradient reaches
//! the decoders that generated them.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use crate::corpus::Example;
use crate::decoder::{greedy_decode, sentence_nll, Context};
use crate::encoder::NodeReps;
use crate::error::{Error, Result};
use crate::grammar::Lang;
use crate::model::{Direction, Model};
use crate::numerics::{NumericsError, Tape, Var};
use crate::scene_graph::{parse_detailed, SceneGraph};
use crate::vsh::{match_graphs, vsh_loss};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LossKind {
    Cma,
    Rec,
    Vcb,
    Cpb,
    Vsh,
}

impl LossKind {
    pub const ALL: [LossKind; 5] = [
        LossKind::Cma,
        LossKind::Rec,
        LossKind::Vcb,
        LossKind::Cpb,
        LossKind::Vsh,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Cma => "cma",
            LossKind::Rec => "rec",
            LossKind::Vcb => "vcb",
            LossKind::Cpb => "cpb",
            LossKind::Vsh => "vsh",
        }
    }

    pub fn parse(s: &str) -> Option<LossKind> {
        LossKind::ALL.into_iter().find(|k| k.name() == s)
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Losses active in training stage 1, 2 or 3.
pub fn training_schedule(stage: u8) -> Result<Vec<LossKind>> {
    use LossKind::*;
    match stage {
        1 => Ok(vec![Cma, Rec]),
        2 => Ok(vec![Vcb, Cpb, Vsh]),
        3 => Ok(LossKind::ALL.to_vec()),
        _ => Err(Error::Contract(format!("no training stage {stage}"))),
    }
}

/// Contrastive alignment of language rows against visual rows.
///
/// Positives for language node `i` are the visual nodes scoring above
/// `alpha` plus any `anchors` entries for `i`. Each positive adds its
/// cross-entropy against all visual nodes at temperature `tau`; the result
/// is averaged over nodes with at least one positive, and is zero when none has.
pub fn loss_cma(
    tape: &mut Tape,
    lsg_rows: &[Var],
    vsg_rows: &[Var],
    anchors: &[(usize, usize)],
    alpha: f64,
    tau: f64,
) -> Result<Var> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(NumericsError::Domain(format!("temperature must be positive, got {tau}")).into());
    }
    if lsg_rows.is_empty() || vsg_rows.is_empty() {
        return Err(Error::Contract("contrastive loss needs rows on both sides".into()));
    }
    let mut per_node = Vec::new();
    for (i, &li) in lsg_rows.iter().enumerate() {
        let sims: Vec<Var> = vsg_rows
            .iter()
            .map(|&v| tape.cosine(li, v))
            .collect::<std::result::Result<_, NumericsError>>()?;
        let mut pos: Vec<usize> = (0..vsg_rows.len()).filter(|&j| tape.scalar(sims[j]) > alpha).collect();
        for &(a, j) in anchors {
            if a == i && j < vsg_rows.len() && !pos.contains(&j) {
                pos.push(j);
            }
        }
        if pos.is_empty() {
            continue;
        }
        pos.sort_unstable();
        let s = tape.concat(&sims);
        let logits = tape.scale(s, 1.0 / tau);
        let terms: Vec<Var> = pos.iter().map(|&j| tape.nll(logits, j)).collect();
        per_node.push(tape.add_all(&terms));
    }
    if per_node.is_empty() {
        return Ok(tape.constant(vec![0.0]));
    }
    let total = tape.add_all(&per_node);
    Ok(tape.scale(total, 1.0 / per_node.len() as f64))
}

/// Label-identity correspondences between a language graph and its visual graph.
pub fn cma_anchors(lsg: &SceneGraph, vsg: &SceneGraph) -> Vec<(usize, usize)> {
    match_graphs(lsg, vsg)
        .into_iter()
        .enumerate()
        .filter_map(|(i, j)| j.map(|j| (i, j)))
        .collect()
}

/// Mean squared error between a linear readout of the pooled language rows and `z`.
pub fn feature_mse(tape: &mut Tape, model: &Model, lsg_rows: &[Var], z: &[f64]) -> Result<Var> {
    if z.len() != model.config.z_dim {
        return Err(Error::Contract(format!(
            "feature of length {} for z_dim {}",
            z.len(),
            model.config.z_dim
        )));
    }
    let pooled = tape.mean(lsg_rows)?;
    let w = tape.param(&model.store, model.reg_w);
    let b = tape.param(&model.store, model.reg_b);
    let pred = tape.affine(w, pooled, b);
    let target = tape.constant(z.to_vec());
    let diff = tape.sub(pred, target);
    let sq = tape.dot(diff, diff);
    Ok(tape.scale(sq, 1.0 / z.len() as f64))
}

/// Cross-entropy of `tokens` from the captioner of `lang` over pooled visual rows.
pub fn caption_nll(tape: &mut Tape, model: &Model, lang: Lang, vsg_rows: &[Var], tokens: &[String]) -> Result<Var> {
    if tokens.is_empty() {
        return Err(Error::Contract("cannot reconstruct an empty sentence".into()));
    }
    let ids = model.text(lang).encode(tokens)?;
    let pooled = tape.mean(vsg_rows)?;
    sentence_nll(
        tape,
        &model.store,
        model.captioner(lang),
        &Context {
            pooled,
            nodes: vsg_rows,
        },
        &ids,
    )
}

/// Sentence reconstruction from the visual graph plus image-feature
/// regression from the language graph.
pub fn loss_rec(
    tape: &mut Tape,
    model: &Model,
    lang: Lang,
    lsg_rows: &[Var],
    vsg_rows: &[Var],
    tokens: &[String],
    z: &[f64],
) -> Result<Var> {
    let text = caption_nll(tape, model, lang, vsg_rows, tokens)?;
    let feat = feature_mse(tape, model, lsg_rows, z)?;
    Ok(tape.add(text, feat))
}

/// Encodings shared by the losses of one example: the gold visual graph and
/// every sentence graph met so far, with their fusions.
pub struct Workspace<'m> {
    model: &'m Model,
    pub vsg: SceneGraph,
    pub vsg_reps: NodeReps,
    pub vsg_pooled: Var,
    lsgs: HashMap<Vec<String>, Option<(SceneGraph, NodeReps)>>,
    fused: HashMap<Vec<String>, (Var, Vec<Var>)>,
}

impl<'m> Workspace<'m> {
    pub fn new(tape: &mut Tape, model: &'m Model, vsg: &SceneGraph) -> Result<Self> {
        let vsg_reps = model.encode_vsg(tape, vsg)?;
        let vsg_pooled = tape.mean(&vsg_reps.rows)?;
        Ok(Workspace {
            model,
            vsg: vsg.clone(),
            vsg_reps,
            vsg_pooled,
            lsgs: HashMap::new(),
            fused: HashMap::new(),
        })
    }

    /// Registers a sentence whose graph is already known.
    pub fn add_sentence(&mut self, tape: &mut Tape, tokens: &[String], lsg: &SceneGraph) -> Result<()> {
        if !self.lsgs.contains_key(tokens) {
            let reps = self.model.encode_lsg(tape, lsg)?;
            self.lsgs.insert(tokens.to_vec(), Some((lsg.clone(), reps)));
        }
        Ok(())
    }

    /// Parsed and encoded graph of `tokens` in `lang`; `None` when the
    /// sentence does not parse in that language.
    pub fn sentence(
        &mut self,
        tape: &mut Tape,
        tokens: &[String],
        lang: Lang,
    ) -> Result<Option<&(SceneGraph, NodeReps)>> {
        if !self.lsgs.contains_key(tokens) {
            let entry = match parse_detailed(tokens, &self.model.grammar) {
                Ok(p) if p.lang == lang => {
                    let reps = self.model.encode_lsg(tape, &p.graph)?;
                    Some((p.graph, reps))
                }
                _ => None,
            };
            self.lsgs.insert(tokens.to_vec(), entry);
        }
        Ok(self.lsgs[tokens].as_ref())
    }

    /// Pooled fused vector and fused rows for a sentence of `lang` with the gold visual graph.
    pub fn fused(&mut self, tape: &mut Tape, tokens: &[String], lang: Lang) -> Result<Option<(Var, Vec<Var>)>> {
        if let Some(f) = self.fused.get(tokens) {
            return Ok(Some(f.clone()));
        }
        let model = self.model;
        let Some((lsg, reps)) = self.sentence(tape, tokens, lang)?.cloned() else {
            return Ok(None);
        };
        let f = model.fuse(tape, &lsg, &reps, &self.vsg, &self.vsg_reps)?;
        self.fused.insert(tokens.to_vec(), f.clone());
        Ok(Some(f))
    }

    /// Greedy translation of a sentence in the given direction.
    pub fn translate(&mut self, tape: &mut Tape, tokens: &[String], dir: Direction) -> Result<Option<Vec<String>>> {
        let input = dir.output_lang().other();
        let Some((pooled, nodes)) = self.fused(tape, tokens, input)? else {
            return Ok(None);
        };
        let model = self.model;
        let ids = greedy_decode(
            tape,
            &model.store,
            model.translator(dir),
            &Context { pooled, nodes: &nodes },
            model.config.max_len,
        )?;
        Ok(Some(model.words(dir.output_lang(), &ids)))
    }

    pub fn caption(&mut self, tape: &mut Tape, lang: Lang) -> Result<Vec<String>> {
        let model = self.model;
        let ids = greedy_decode(
            tape,
            &model.store,
            model.captioner(lang),
            &Context {
                pooled: self.vsg_pooled,
                nodes: &self.vsg_reps.rows,
            },
            model.config.max_len,
        )?;
        Ok(model.words(lang, &ids))
    }

    /// Teacher-forced cross-entropy of `target` from `source` through the
    /// translator of `dir`. `None` when `source` does not parse.
    pub fn translation_nll(
        &mut self,
        tape: &mut Tape,
        source: &[String],
        target: &[String],
        dir: Direction,
    ) -> Result<Option<Var>> {
        let input = dir.output_lang().other();
        let Some((pooled, nodes)) = self.fused(tape, source, input)? else {
            return Ok(None);
        };
        let model = self.model;
        let ids = model.text(dir.output_lang()).encode(target)?;
        let nll = sentence_nll(
            tape,
            &model.store,
            model.translator(dir),
            &Context { pooled, nodes: &nodes },
            &ids,
        )?;
        Ok(Some(nll))
    }
}

/// Back-translation through the visual pivot: `x → ȳ → x`. `None` when the
/// pseudo translation is empty or does not parse.
pub fn loss_vcb(tape: &mut Tape, ws: &mut Workspace<'_>, x: &[String]) -> Result<Option<Var>> {
    let Some(ybar) = ws.translate(tape, x, Direction::Forward)? else {
        return Ok(None);
    };
    if ybar.is_empty() {
        return Ok(None);
    }
    vcb_score(tape, ws, x, &ybar)
}

/// The differentiable part of [`loss_vcb`] for a given pseudo translation.
pub fn vcb_score(tape: &mut Tape, ws: &mut Workspace<'_>, x: &[String], ybar: &[String]) -> Result<Option<Var>> {
    ws.translation_nll(tape, ybar, x, Direction::Backward)
}

/// Pseudo-parallel captions of the gold visual graph: `(x̄, ȳ)`, or `None`
/// when either is empty or does not parse.
pub fn cpb_captions(tape: &mut Tape, ws: &mut Workspace<'_>) -> Result<Option<(Vec<String>, Vec<String>)>> {
    let xbar = ws.caption(tape, Lang::Source)?;
    let ybar = ws.caption(tape, Lang::Target)?;
    if xbar.is_empty() || ybar.is_empty() {
        return Ok(None);
    }
    Ok(Some((xbar, ybar)))
}

/// Captioning back-translation: each pseudo caption is reconstructed from
/// the other one by the translator of the matching direction.
pub fn loss_cpb(tape: &mut Tape, ws: &mut Workspace<'_>) -> Result<Option<Var>> {
    let Some((xbar, ybar)) = cpb_captions(tape, ws)? else {
        return Ok(None);
    };
    cpb_score(tape, ws, &xbar, &ybar)
}

/// The differentiable part of [`loss_cpb`] for given captions.
pub fn cpb_score(tape: &mut Tape, ws: &mut Workspace<'_>, xbar: &[String], ybar: &[String]) -> Result<Option<Var>> {
    let a = ws.translation_nll(tape, ybar, xbar, Direction::Backward)?;
    let b = ws.translation_nll(tape, xbar, ybar, Direction::Forward)?;
    match (a, b) {
        (Some(a), Some(b)) => Ok(Some(tape.add(a, b))),
        _ => Ok(None),
    }
}

/// Per-loss weights in the total objective.
#[derive(Debug, Clone, PartialEq)]
pub struct LossWeights(pub BTreeMap<LossKind, f64>);

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights(LossKind::ALL.into_iter().map(|k| (k, 1.0)).collect())
    }
}

impl LossWeights {
    pub fn get(&self, k: LossKind) -> f64 {
        self.0.get(&k).copied().unwrap_or(1.0)
    }
}

/// Loss terms of one example for one stage.
#[derive(Debug, Clone)]
pub struct LossBundle {
    pub stage: u8,
    pub parts: BTreeMap<LossKind, Var>,
    /// Active losses that did not apply to this example or were skipped.
    pub skipped: Vec<LossKind>,
}

/// Weighted sum of the active components. In stage 3 every component must be present.
pub fn total_loss(tape: &mut Tape, bundle: &LossBundle, weights: &LossWeights) -> Result<Var> {
    let active = training_schedule(bundle.stage)?;
    if bundle.stage == 3 {
        if let Some(k) = active.iter().find(|k| !bundle.parts.contains_key(k)) {
            return Err(Error::Contract(format!("stage 3 total is missing the {k} loss")));
        }
    }
    let mut terms = Vec::new();
    for (k, v) in &bundle.parts {
        if !active.contains(k) {
            return Err(Error::Contract(format!(
                "{k} loss is not active in stage {}",
                bundle.stage
            )));
        }
        let w = weights.get(*k);
        terms.push(if w == 1.0 { *v } else { tape.scale(*v, w) });
    }
    Ok(tape.add_all(&terms))
}

/// Computes every loss in `active` for one example. Losses that do not apply
/// (back-translation and hallucination for target-side examples) or whose
/// pseudo sentences are unusable contribute a zero and are listed as skipped.
pub fn example_losses(
    tape: &mut Tape,
    model: &Model,
    ex: &Example,
    stage: u8,
    active: &[LossKind],
) -> Result<LossBundle> {
    let mut ws = Workspace::new(tape, model, &ex.vsg)?;
    ws.add_sentence(tape, &ex.tokens, &ex.lsg)?;
    let mut parts = BTreeMap::new();
    let mut skipped = Vec::new();
    for &k in active {
        let value = match k {
            LossKind::Cma => {
                let anchors = cma_anchors(&ex.lsg, &ex.vsg);
                let (_, l) = ws
                    .sentence(tape, &ex.tokens, ex.lang)?
                    .expect("registered sentence")
                    .clone();
                Some(loss_cma(
                    tape,
                    &l.rows,
                    &ws.vsg_reps.rows,
                    &anchors,
                    model.config.alpha,
                    model.config.tau,
                )?)
            }
            LossKind::Rec => {
                let (_, l) = ws
                    .sentence(tape, &ex.tokens, ex.lang)?
                    .expect("registered sentence")
                    .clone();
                let v = ws.vsg_reps.rows.clone();
                Some(loss_rec(tape, model, ex.lang, &l.rows, &v, &ex.tokens, &ex.z)?)
            }
            LossKind::Vcb if ex.lang == Lang::Source => loss_vcb(tape, &mut ws, &ex.tokens)?,
            LossKind::Cpb => loss_cpb(tape, &mut ws)?,
            LossKind::Vsh if ex.lang == Lang::Source => vsh_loss(tape, &model.vsh(), &ex.lsg, &ex.vsg)?,
            LossKind::Vcb | LossKind::Vsh => None,
        };
        let v = match value {
            Some(v) => v,
            None => {
                skipped.push(k);
                tape.constant(vec![0.0])
            }
        };
        parts.insert(k, v);
    }
    Ok(LossBundle { stage, parts, skipped })
}

/// Mean cosine between corresponding language/visual rows and between all
/// other pairs, over source examples.
pub fn alignment_gap(model: &Model, examples: &[Example]) -> Result<(f64, f64)> {
    let (mut pos, mut npos, mut neg, mut nneg) = (0.0, 0usize, 0.0, 0usize);
    for ex in examples.iter().filter(|e| e.lang == Lang::Source) {
        let mut tape = Tape::new();
        let l = model.encode_lsg(&mut tape, &ex.lsg)?.values(&tape);
        let v = model.encode_vsg(&mut tape, &ex.vsg)?.values(&tape);
        let anchors = cma_anchors(&ex.lsg, &ex.vsg);
        for (i, li) in l.iter().enumerate() {
            for (j, vj) in v.iter().enumerate() {
                let c = crate::numerics::cosine_similarity(li, vj).unwrap_or(0.0);
                if anchors.contains(&(i, j)) {
                    pos += c;
                    npos += 1;
                } else {
                    neg += c;
                    nneg += 1;
                }
            }
        }
    }
    if npos == 0 || nneg == 0 {
        return Err(Error::Data("no aligned pairs to measure".into()));
    }
    Ok((pos / npos as f64, neg / nneg as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{gen_corpus, CorpusConfig};
    use crate::grammar::ToyGrammar;
    use crate::model::ModelConfig;
    use crate::vsh::build_vocabularies;

    fn tiny() -> (Model, Vec<Example>) {
        let grammar = ToyGrammar::default();
        let corpus = gen_corpus(
            &grammar,
            &CorpusConfig {
                n_train: 6,
                n_mono: 4,
                n_test: 2,
                z_dim: 4,
                ..CorpusConfig::default()
            },
        )
        .unwrap();
        let vsgs: Vec<SceneGraph> = corpus.train.iter().map(|e| e.vsg.clone()).collect();
        let vocab = build_vocabularies(&vsgs).unwrap();
        let config = ModelConfig {
            dim: 6,
            z_dim: 4,
            tri_dim: Some(3),
            tri_hidden: 2,
            ..ModelConfig::default()
        };
        let mut m = Model::new(config, grammar, vocab).unwrap();
        m.perturb(0.2, 3);
        let mut exs = corpus.train;
        exs.extend(corpus.mono);
        (m, exs)
    }

    fn unit_rows(tape: &mut Tape, rows: &[[f64; 2]]) -> Vec<Var> {
        rows.iter().map(|r| tape.constant(r.to_vec())).collect()
    }

    #[test]
    fn cma_single_positive_oracle() {
        let mut tape = Tape::new();
        let l = unit_rows(&mut tape, &[[1.0, 0.0]]);
        let v = unit_rows(
            &mut tape,
            &[[0.9, (1.0f64 - 0.81).sqrt()], [0.1, (1.0f64 - 0.01).sqrt()]],
        );
        let loss = loss_cma(&mut tape, &l, &v, &[], 0.5, 1.0).unwrap();
        let expected = -(0.9f64.exp() / (0.9f64.exp() + 0.1f64.exp())).ln();
        assert!((tape.scalar(loss) - expected).abs() < 1e-12);
        assert!((tape.scalar(loss) - 0.37110).abs() < 5e-6);
    }

    #[test]
    fn cma_without_positives_is_zero_and_anchors_count() {
        let mut tape = Tape::new();
        let l = unit_rows(&mut tape, &[[1.0, 0.0]]);
        let v = unit_rows(&mut tape, &[[0.0, 1.0], [-1.0, 0.0]]);
        let zero = loss_cma(&mut tape, &l, &v, &[], 0.5, 1.0).unwrap();
        assert_eq!(tape.scalar(zero), 0.0);
        let anchored = loss_cma(&mut tape, &l, &v, &[(0, 0)], 0.5, 1.0).unwrap();
        let expected = -(1.0 / (1.0 + (-1.0f64).exp())).ln();
        assert!((tape.scalar(anchored) - expected).abs() < 1e-12);
    }

    #[test]
    fn cma_rejects_bad_temperature() {
        let mut tape = Tape::new();
        let l = unit_rows(&mut tape, &[[1.0, 0.0]]);
        for tau in [0.0, -1.0, f64::NAN] {
            let err = loss_cma(&mut tape, &l, &l, &[], 0.5, tau).unwrap_err();
            assert!(matches!(err, Error::Numerics(NumericsError::Domain(_))), "{err:?}");
        }
    }

    #[test]
    fn schedule_by_stage() {
        use LossKind::*;
        assert_eq!(training_schedule(1).unwrap(), vec![Cma, Rec]);
        assert_eq!(training_schedule(2).unwrap(), vec![Vcb, Cpb, Vsh]);
        assert_eq!(training_schedule(3).unwrap().len(), 5);
        assert!(matches!(training_schedule(0), Err(Error::Contract(_))));
        assert!(matches!(training_schedule(4), Err(Error::Contract(_))));
        for k in LossKind::ALL {
            assert_eq!(LossKind::parse(k.name()), Some(k));
        }
    }

    #[test]
    fn total_is_weighted_sum_and_checks_completeness() {
        let mut tape = Tape::new();
        let mut parts = BTreeMap::new();
        for (i, k) in LossKind::ALL.into_iter().enumerate() {
            parts.insert(k, tape.constant(vec![i as f64 + 1.0]));
        }
        let mut weights = LossWeights::default();
        weights.0.insert(LossKind::Vsh, 0.5);
        let full = LossBundle {
            stage: 3,
            parts: parts.clone(),
            skipped: vec![],
        };
        let t = total_loss(&mut tape, &full, &weights).unwrap();
        assert!((tape.scalar(t) - (1.0 + 2.0 + 3.0 + 4.0 + 2.5)).abs() < 1e-12);

        parts.remove(&LossKind::Cpb);
        let partial = LossBundle {
            stage: 3,
            parts,
            skipped: vec![],
        };
        assert!(matches!(
            total_loss(&mut tape, &partial, &weights),
            Err(Error::Contract(_))
        ));

        let mut wrong = BTreeMap::new();
        wrong.insert(LossKind::Vsh, tape.constant(vec![1.0]));
        let b = LossBundle {
            stage: 1,
            parts: wrong,
            skipped: vec![],
        };
        assert!(matches!(total_loss(&mut tape, &b, &weights), Err(Error::Contract(_))));
    }

    #[test]
    fn rec_rejects_empty_sentence() {
        let (m, exs) = tiny();
        let mut tape = Tape::new();
        let v = m.encode_vsg(&mut tape, &exs[0].vsg).unwrap();
        let l = m.encode_lsg(&mut tape, &exs[0].lsg).unwrap();
        let err = loss_rec(&mut tape, &m, Lang::Source, &l.rows, &v.rows, &[], &exs[0].z).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn back_translation_blocks_generator_gradients() {
        let (m, exs) = tiny();
        let ex = exs.iter().find(|e| e.lang == Lang::Source).unwrap();
        let y = m.grammar.map_sentence(&ex.tokens, Lang::Source).unwrap();
        let mut tape = Tape::new();
        let mut ws = Workspace::new(&mut tape, &m, &ex.vsg).unwrap();
        ws.add_sentence(&mut tape, &ex.tokens, &ex.lsg).unwrap();
        let _ = ws.translate(&mut tape, &ex.tokens, Direction::Forward).unwrap();
        let loss = vcb_score(&mut tape, &mut ws, &ex.tokens, &y).unwrap().unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.group_norm(&m.store, "dec_tgt"), 0.0);
        assert!(g.group_norm(&m.store, "dec_src") > 0.0);
        assert!(g.group_norm(&m.store, "enc_fuse") > 0.0);
    }

    #[test]
    fn caption_pivot_blocks_captioner_gradients() {
        let (m, exs) = tiny();
        let ex = exs.iter().find(|e| e.lang == Lang::Source).unwrap();
        let y = m.grammar.map_sentence(&ex.tokens, Lang::Source).unwrap();
        let mut tape = Tape::new();
        let mut ws = Workspace::new(&mut tape, &m, &ex.vsg).unwrap();
        let _ = cpb_captions(&mut tape, &mut ws).unwrap();
        let loss = cpb_score(&mut tape, &mut ws, &ex.tokens, &y).unwrap().unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.group_norm(&m.store, "cap_src"), 0.0);
        assert_eq!(g.group_norm(&m.store, "cap_tgt"), 0.0);
        assert!(g.group_norm(&m.store, "dec_src") > 0.0);
        assert!(g.group_norm(&m.store, "dec_tgt") > 0.0);
    }

    #[test]
    fn unparseable_pseudo_sentence_is_skipped() {
        let (m, exs) = tiny();
        let ex = &exs[0];
        let mut tape = Tape::new();
        let mut ws = Workspace::new(&mut tape, &m, &ex.vsg).unwrap();
        let junk: Vec<String> = vec!["le".into(), "le".into()];
        assert!(vcb_score(&mut tape, &mut ws, &ex.tokens, &junk).unwrap().is_none());
        // A source sentence does not parse as target input.
        assert!(ws.fused(&mut tape, &ex.tokens, Lang::Target).unwrap().is_none());
    }

    #[test]
    fn example_bundle_per_stage() {
        let (m, exs) = tiny();
        for stage in 1..=3u8 {
            let active = training_schedule(stage).unwrap();
            for ex in &exs {
                let mut tape = Tape::new();
                let b = example_losses(&mut tape, &m, ex, stage, &active).unwrap();
                assert_eq!(b.parts.len(), active.len());
                let t = total_loss(&mut tape, &b, &LossWeights::default()).unwrap();
                assert!(tape.scalar(t).is_finite());
                if ex.lang == Lang::Target {
                    for k in [LossKind::Vcb, LossKind::Vsh] {
                        assert_eq!(b.parts.contains_key(&k), b.skipped.contains(&k));
                    }
                }
                tape.backward(t).unwrap();
            }
        }
    }

    #[test]
    fn alignment_gap_is_bounded() {
        let (m, exs) = tiny();
        let (p, n) = alignment_gap(&m, &exs).unwrap();
        assert!((-1.0..=1.0).contains(&p) && (-1.0..=1.0).contains(&n));
    }
}
