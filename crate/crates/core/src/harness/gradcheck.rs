//! Finite-difference checks of every training loss on a miniature batch.

use crate::corpus::{gen_corpus, CorpusConfig, Example};
use crate::error::{Error, Result};
use crate::grammar::{Lang, ToyGrammar};
use crate::model::{Model, ModelConfig};
use crate::numerics::{finite_difference_check, GradcheckConfig, GradcheckReport, Gradients, ParamStore, Tape, Var};
use crate::objectives::{cma_anchors, cpb_score, loss_cma, loss_rec, vcb_score, LossKind, Workspace};
use crate::scene_graph::SceneGraph;
use crate::vsh::{build_vocabularies, vsh_loss};

#[derive(Debug, Clone)]
pub struct LossCheck {
    pub loss: LossKind,
    pub report: GradcheckReport,
}

/// A small perturbed model and one source-side example.
pub fn fixture(seed: u64) -> Result<(Model, Example)> {
    let grammar = ToyGrammar::default();
    let corpus = gen_corpus(
        &grammar,
        &CorpusConfig {
            n_train: 4,
            n_mono: 1,
            n_test: 1,
            z_dim: 3,
            seed,
            ..CorpusConfig::default()
        },
    )?;
    let vsgs: Vec<SceneGraph> = corpus.train.iter().map(|e| e.vsg.clone()).collect();
    let vocab = build_vocabularies(&vsgs)?;
    let config = ModelConfig {
        dim: 5,
        z_dim: 3,
        tri_dim: Some(3),
        tri_hidden: 2,
        seed,
        ..ModelConfig::default()
    };
    let mut model = Model::new(config, grammar, vocab)?;
    model.perturb(0.3, seed);
    let ex = corpus
        .train
        .into_iter()
        .max_by_key(|e| e.vsg.len() - e.lsg.len())
        .ok_or_else(|| Error::Internal("empty fixture corpus".into()))?;
    Ok((model, ex))
}

/// Records `loss` for `ex` on `tape`. The pseudo sentences of the two
/// back-translation losses are generated without gradient during training,
/// so here they are held fixed at the grammar's translation of the example.
pub fn loss_for(tape: &mut Tape, model: &Model, ex: &Example, loss: LossKind) -> Result<Var> {
    let y = model
        .grammar
        .map_sentence(&ex.tokens, Lang::Source)
        .ok_or_else(|| Error::Internal("fixture sentence does not translate".into()))?;
    let missing = || Error::Internal(format!("{loss} loss does not apply to the fixture"));
    match loss {
        LossKind::Cma => {
            let l = model.encode_lsg(tape, &ex.lsg)?;
            let v = model.encode_vsg(tape, &ex.vsg)?;
            let anchors = cma_anchors(&ex.lsg, &ex.vsg);
            loss_cma(tape, &l.rows, &v.rows, &anchors, model.config.alpha, model.config.tau)
        }
        LossKind::Rec => {
            let l = model.encode_lsg(tape, &ex.lsg)?;
            let v = model.encode_vsg(tape, &ex.vsg)?;
            loss_rec(tape, model, ex.lang, &l.rows, &v.rows, &ex.tokens, &ex.z)
        }
        LossKind::Vcb => {
            let mut ws = Workspace::new(tape, model, &ex.vsg)?;
            vcb_score(tape, &mut ws, &ex.tokens, &y)?.ok_or_else(missing)
        }
        LossKind::Cpb => {
            let mut ws = Workspace::new(tape, model, &ex.vsg)?;
            cpb_score(tape, &mut ws, &ex.tokens, &y)?.ok_or_else(missing)
        }
        LossKind::Vsh => vsh_loss(tape, &model.vsh(), &ex.lsg, &ex.vsg)?.ok_or_else(missing),
    }
}

/// Checks all five losses. With `corrupt`, the analytic gradient of that
/// loss is tampered with before comparison.
pub fn run_gradcheck(seed: u64, corrupt: Option<LossKind>) -> Result<Vec<LossCheck>> {
    let (model, ex) = fixture(seed)?;
    let cfg = GradcheckConfig {
        seed,
        ..GradcheckConfig::default()
    };
    let mut out = Vec::new();
    for loss in LossKind::ALL {
        let mut store = model.store.clone();
        let mut m = model.clone();
        let f = |s: &ParamStore, t: &mut Tape| -> Result<Var> {
            m.store.clone_from(s);
            loss_for(t, &m, &ex, loss)
        };
        let tamper = |g: &mut Gradients, s: &ParamStore| {
            if corrupt == Some(loss) {
                corrupt_gradient(g, s);
            }
        };
        let report = finite_difference_check(&mut store, f, tamper, &cfg)?;
        out.push(LossCheck { loss, report });
    }
    Ok(out)
}

// Doubles the first gradient tensor with a nonzero entry.
fn corrupt_gradient(g: &mut Gradients, s: &ParamStore) {
    for id in s.ids() {
        if let Some(v) = g.param_mut(id) {
            if v.iter().any(|x| *x != 0.0) {
                v.iter_mut().for_each(|x| *x *= 2.0);
                return;
            }
        }
    }
}
