//! The full translation model: shared label embeddings, the three graph
//! encoders, the hallucination heads, the image-feature regressor, two
//! translators' decoders and two captioners.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decoder::{greedy_decode, Context, DecoderParams};
use crate::encoder::{encode_graph, uniform, GcnParams, NodeReps};
use crate::error::{Error, Result};
use crate::fusion::{align_and_fuse, encode_and_pool};
use crate::grammar::{Lang, ToyGrammar};
use crate::numerics::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::scene_graph::{parse_toy_lsg, Modality, SceneGraph};
use crate::vocab::{TextVocab, Vocab};
use crate::vsh::{complete_vision, sketch_skeleton, AugParams, VsgVocabularies, VshContext};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub dim: usize,
    pub layers: usize,
    pub z_dim: usize,
    /// Width of the trilinear projections; `None` uses node rows directly.
    pub tri_dim: Option<usize>,
    pub tri_hidden: usize,
    /// Per-step attention over fused node rows in the decoders.
    pub attention: bool,
    /// Alignment threshold shared by fusion and the contrastive loss.
    pub alpha: f64,
    pub tau: f64,
    pub max_len: usize,
    pub max_pairs: usize,
    pub vsh_passes: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 64,
            layers: 2,
            z_dim: 64,
            tri_dim: Some(8),
            tri_hidden: 8,
            attention: false,
            alpha: 0.5,
            tau: 0.1,
            max_len: 12,
            max_pairs: 500,
            vsh_passes: 1,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.dim == 0 || self.layers == 0 || self.z_dim == 0 || self.tri_hidden == 0 {
            return bad("dimensions and layer count must be positive");
        }
        if self.tri_dim == Some(0) {
            return bad("tri_dim must be positive");
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return bad("tau must be positive");
        }
        if !self.alpha.is_finite() {
            return bad("alpha must be finite");
        }
        if self.max_len == 0 {
            return bad("max_len must be at least 1");
        }
        Ok(())
    }
}

/// Translation direction: `Forward` reads a source graph and writes the
/// target language, `Backward` the reverse.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn output_lang(self) -> Lang {
        match self {
            Direction::Forward => Lang::Target,
            Direction::Backward => Lang::Source,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub grammar: ToyGrammar,
    pub store: ParamStore,
    /// Every graph label: source words, target words, then visual-only labels.
    pub labels: Vocab,
    pub src_text: TextVocab,
    pub tgt_text: TextVocab,
    pub vsg_vocab: VsgVocabularies,
    pub embed: ParamId,
    pub enc_lsg: GcnParams,
    pub enc_vsg: GcnParams,
    pub enc_fuse: GcnParams,
    pub reg_w: ParamId,
    pub reg_b: ParamId,
    pub aug: AugParams,
    pub dec_tgt: DecoderParams,
    pub dec_src: DecoderParams,
    pub cap_src: DecoderParams,
    pub cap_tgt: DecoderParams,
}

fn label_vocab(grammar: &ToyGrammar, vsg_vocab: &VsgVocabularies) -> Vocab {
    let mut labels = Vocab::new();
    for lang in [Lang::Source, Lang::Target] {
        for w in grammar.vocabulary(lang) {
            labels.insert(w);
        }
    }
    for v in [&vsg_vocab.objects, &vsg_vocab.attributes, &vsg_vocab.relations] {
        for l in v.items() {
            labels.insert(l);
        }
    }
    labels
}

impl Model {
    /// Fresh parameters from `config.seed`. Each component draws from its
    /// own seeded stream so adding one does not shift the others.
    pub fn new(config: ModelConfig, grammar: ToyGrammar, vsg_vocab: VsgVocabularies) -> Result<Self> {
        config.check()?;
        grammar.check()?;
        let labels = label_vocab(&grammar, &vsg_vocab);
        let src_text = TextVocab::new(&grammar.vocabulary(Lang::Source));
        let tgt_text = TextVocab::new(&grammar.vocabulary(Lang::Target));
        let d = config.dim;
        let rng = |k: u64| ChaCha8Rng::seed_from_u64(config.seed.wrapping_mul(1_000_003).wrapping_add(k));
        let mut store = ParamStore::new();
        let embed = store.add(
            "embed",
            uniform(&mut rng(1), vec![labels.len(), d], 1.0 / (d as f64).sqrt()),
        )?;
        let enc_lsg = GcnParams::init(&mut store, "enc_lsg", d, config.layers, &mut rng(2))?;
        let enc_vsg = GcnParams::init(&mut store, "enc_vsg", d, config.layers, &mut rng(3))?;
        let enc_fuse = GcnParams::init(&mut store, "enc_fuse", d, config.layers, &mut rng(4))?;
        let reg_w = store.add(
            "reg.w",
            uniform(&mut rng(5), vec![config.z_dim, d], 1.0 / (d as f64).sqrt()),
        )?;
        let reg_b = store.add("reg.b", Tensor::zeros(vec![config.z_dim]))?;
        let aug = AugParams::init(
            &mut store,
            "aug",
            d,
            config.tri_dim,
            config.tri_hidden,
            &vsg_vocab,
            &mut rng(6),
        )?;
        let att = config.attention;
        let dec_tgt = DecoderParams::init(&mut store, "dec_tgt", tgt_text.len(), d, att, &mut rng(7))?;
        let dec_src = DecoderParams::init(&mut store, "dec_src", src_text.len(), d, att, &mut rng(8))?;
        let cap_src = DecoderParams::init(&mut store, "cap_src", src_text.len(), d, false, &mut rng(9))?;
        let cap_tgt = DecoderParams::init(&mut store, "cap_tgt", tgt_text.len(), d, false, &mut rng(10))?;
        Ok(Model {
            config,
            grammar,
            store,
            labels,
            src_text,
            tgt_text,
            vsg_vocab,
            embed,
            enc_lsg,
            enc_vsg,
            enc_fuse,
            reg_w,
            reg_b,
            aug,
            dec_tgt,
            dec_src,
            cap_src,
            cap_tgt,
        })
    }

    /// Rebuilds a model around loaded parameters, checking every tensor's shape
    /// against a freshly initialised reference.
    pub fn from_store(
        config: ModelConfig,
        grammar: ToyGrammar,
        vsg_vocab: VsgVocabularies,
        store: ParamStore,
    ) -> Result<Self> {
        let mut m = Model::new(config, grammar, vsg_vocab)?;
        if store.len() != m.store.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                m.store.len(),
                store.len()
            )));
        }
        for (id, name, t) in m.store.iter() {
            let other = store
                .id(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            if other != id {
                return Err(Error::Checkpoint(format!("tensor {name} is out of order")));
            }
            if store.get(other).shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    store.get(other).shape(),
                    t.shape()
                )));
            }
        }
        m.store = store;
        Ok(m)
    }

    pub fn text(&self, lang: Lang) -> &TextVocab {
        match lang {
            Lang::Source => &self.src_text,
            Lang::Target => &self.tgt_text,
        }
    }

    pub fn translator(&self, dir: Direction) -> &DecoderParams {
        match dir {
            Direction::Forward => &self.dec_tgt,
            Direction::Backward => &self.dec_src,
        }
    }

    pub fn captioner(&self, lang: Lang) -> &DecoderParams {
        match lang {
            Lang::Source => &self.cap_src,
            Lang::Target => &self.cap_tgt,
        }
    }

    pub fn vsh(&self) -> VshContext<'_> {
        VshContext {
            store: &self.store,
            labels: &self.labels,
            embed: self.embed,
            encoder: &self.enc_vsg,
            vocab: &self.vsg_vocab,
            aug: &self.aug,
            max_pairs: self.config.max_pairs,
            passes: self.config.vsh_passes,
        }
    }

    pub fn encode_lsg(&self, tape: &mut Tape, lsg: &SceneGraph) -> Result<NodeReps> {
        encode_graph(tape, &self.store, lsg, &self.labels, self.embed, &self.enc_lsg)
    }

    pub fn encode_vsg(&self, tape: &mut Tape, vsg: &SceneGraph) -> Result<NodeReps> {
        encode_graph(tape, &self.store, vsg, &self.labels, self.embed, &self.enc_vsg)
    }

    /// Fuses encoded graphs and runs the target-side encoder. Returns the
    /// pooled vector and the fused node rows.
    pub fn fuse(
        &self,
        tape: &mut Tape,
        lsg: &SceneGraph,
        l: &NodeReps,
        vsg: &SceneGraph,
        v: &NodeReps,
    ) -> Result<(Var, Vec<Var>)> {
        let fused = align_and_fuse(tape, lsg, &l.rows, vsg, &v.rows, self.config.alpha)?;
        let (reps, pooled) = encode_and_pool(tape, &self.store, &fused, &self.enc_fuse)?;
        Ok((pooled, reps.rows))
    }

    /// Words for a decoded id sequence.
    pub fn words(&self, lang: Lang, ids: &[usize]) -> Vec<String> {
        self.text(lang).decode(ids)
    }

    /// Greedy translation of a parsed sentence with the given visual graph.
    pub fn translate(&self, dir: Direction, lsg: &SceneGraph, vsg: &SceneGraph) -> Result<Vec<String>> {
        let mut tape = Tape::new();
        let l = self.encode_lsg(&mut tape, lsg)?;
        let v = self.encode_vsg(&mut tape, vsg)?;
        let (pooled, nodes) = self.fuse(&mut tape, lsg, &l, vsg, &v)?;
        let ids = greedy_decode(
            &mut tape,
            &self.store,
            self.translator(dir),
            &Context { pooled, nodes: &nodes },
            self.config.max_len,
        )?;
        Ok(self.words(dir.output_lang(), &ids))
    }

    /// Skeleton plus completion: the visual graph imagined for a language graph.
    pub fn hallucinate(&self, lsg: &SceneGraph) -> Result<SceneGraph> {
        let skeleton = sketch_skeleton(lsg, &self.vsg_vocab, &self.labels, self.store.get(self.embed))?;
        complete_vision(&self.vsh(), &skeleton)
    }

    /// Image-free translation of source tokens: parse, hallucinate, translate.
    pub fn translate_image_free(&self, tokens: &[String]) -> Result<Vec<String>> {
        let lsg = parse_toy_lsg(tokens, &self.grammar)?;
        let vsg = self.hallucinate(&lsg)?;
        self.translate(Direction::Forward, &lsg, &vsg)
    }

    pub fn caption(&self, vsg: &SceneGraph, lang: Lang) -> Result<Vec<String>> {
        if vsg.modality() != Modality::Visual {
            return Err(Error::Contract("captioning expects a visual graph".into()));
        }
        vsg.ensure_valid()?;
        let mut tape = Tape::new();
        let v = self.encode_vsg(&mut tape, vsg)?;
        let pooled = tape.mean(&v.rows)?;
        let ids = greedy_decode(
            &mut tape,
            &self.store,
            self.captioner(lang),
            &Context { pooled, nodes: &v.rows },
            self.config.max_len,
        )?;
        Ok(self.words(lang, &ids))
    }

    /// Adds uniform noise in `±scale` to every parameter; used to move off
    /// the zero-initialised heads in tests and gradient checks.
    pub fn perturb(&mut self, scale: f64, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ids: Vec<ParamId> = self.store.ids().collect();
        for id in ids {
            let n = self.store.get(id).numel();
            let noise = uniform(&mut rng, vec![n], scale);
            for (x, e) in self.store.get_mut(id).values_mut().iter_mut().zip(noise.values()) {
                *x += e;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vsh::build_vocabularies;

    pub(crate) fn small_model() -> Model {
        let grammar = ToyGrammar::default();
        let tokens: Vec<String> = "red ball runs and jumps on big dog"
            .split(' ')
            .map(String::from)
            .collect();
        let lsg = parse_toy_lsg(&tokens, &grammar).unwrap();
        let mut vsg = lsg.clone().with_modality(Modality::Visual);
        let ground = vsg.add_node(crate::scene_graph::NodeKind::Object, "ground");
        vsg.add_relation(0, "on", ground);
        let vocab = build_vocabularies(&[vsg]).unwrap();
        let config = ModelConfig {
            dim: 6,
            z_dim: 4,
            tri_dim: Some(3),
            tri_hidden: 2,
            ..ModelConfig::default()
        };
        Model::new(config, grammar, vocab).unwrap()
    }

    #[test]
    fn untrained_outputs_are_well_formed() {
        let m = small_model();
        let x: Vec<String> = "red ball runs and jumps on big dog"
            .split(' ')
            .map(String::from)
            .collect();
        let out = m.translate_image_free(&x).unwrap();
        assert!(out.len() <= m.config.max_len);
        assert!(out.iter().all(|w| m.tgt_text.encode(std::slice::from_ref(w)).is_ok()));
        let lsg = parse_toy_lsg(&x, &m.grammar).unwrap();
        let h = m.hallucinate(&lsg).unwrap();
        assert_eq!(h.len(), lsg.len());
        let vsg = lsg.with_modality(Modality::Visual);
        let a = m.caption(&vsg, Lang::Source).unwrap();
        let b = m.caption(&vsg, Lang::Target).unwrap();
        assert!(a.iter().all(|w| m.src_text.encode(std::slice::from_ref(w)).is_ok()));
        assert!(b.iter().all(|w| m.tgt_text.encode(std::slice::from_ref(w)).is_ok()));
    }

    #[test]
    fn from_store_checks_shapes() {
        let m = small_model();
        let again = Model::from_store(
            m.config.clone(),
            m.grammar.clone(),
            m.vsg_vocab.clone(),
            m.store.clone(),
        )
        .unwrap();
        assert_eq!(again.store.len(), m.store.len());
        let mut other = m.config.clone();
        other.dim = 5;
        assert!(matches!(
            Model::from_store(other, m.grammar.clone(), m.vsg_vocab.clone(), m.store.clone()),
            Err(Error::Checkpoint(_))
        ));
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = small_model();
        let b = small_model();
        for ((_, _, x), (_, _, y)) in a.store.iter().zip(b.store.iter()) {
            assert_eq!(x, y);
        }
    }
}
