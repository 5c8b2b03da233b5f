//! Synthetic bilingual corpus with gold visual graphs and image features.
//!
//! Every example starts from a scene rendered as a source sentence. Its gold
//! visual graph is the parsed source graph plus the extras implied by the
//! grammar's planted rules. Target-side monolingual examples come from
//! scenes disjoint from the source ones and only expose the target sentence.

use std::cell::Cell;
use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grammar::{Lang, PlantedRule, Pos, Slot, ToyGrammar};
use crate::scene_graph::{deserialize, parse_toy_lsg, serialize, Modality, NodeKind, SceneGraph};

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    /// Language of `tokens` and `lsg`.
    pub lang: Lang,
    pub tokens: Vec<String>,
    pub lsg: SceneGraph,
    pub vsg: SceneGraph,
    pub z: Vec<f64>,
}

/// Test references, kept apart from the examples. Every read is counted so
/// a run can prove it never looked at them.
#[derive(Debug, Default)]
pub struct References {
    refs: Vec<Vec<String>>,
    reads: Cell<usize>,
}

impl References {
    pub fn new(refs: Vec<Vec<String>>) -> Self {
        References {
            refs,
            reads: Cell::new(0),
        }
    }

    pub fn read(&self) -> &[Vec<String>] {
        self.reads.set(self.reads.get() + 1);
        &self.refs
    }

    pub fn reads(&self) -> usize {
        self.reads.get()
    }

    pub fn len(&self) -> usize {
        self.refs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.refs.is_empty()
    }
}

#[derive(Debug)]
pub struct Corpus {
    pub grammar: ToyGrammar,
    /// Source sentences with their images.
    pub train: Vec<Example>,
    /// Target sentences with their images, from other scenes.
    pub mono: Vec<Example>,
    pub test: Vec<Example>,
    pub refs: References,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub n_train: usize,
    pub n_mono: usize,
    pub n_test: usize,
    pub z_dim: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            n_train: 500,
            n_mono: 500,
            n_test: 50,
            z_dim: 64,
            noise: 0.1,
            seed: 7,
        }
    }
}

/// Draws one source sentence. Noun phrases use distinct nouns, and repeated
/// verb slots take distinct verbs in lexicon order.
pub fn sample_sentence(grammar: &ToyGrammar, rng: &mut ChaCha8Rng) -> Result<Vec<String>> {
    let weights: Vec<f64> = grammar.templates.iter().map(|t| t.weight).collect();
    let pick = WeightedIndex::new(&weights).map_err(|e| Error::Config(format!("template weights: {e}")))?;
    let t = &grammar.templates[pick.sample(rng)];
    let nouns = grammar.words(Pos::Noun, Lang::Source);
    let adjs = grammar.words(Pos::Adj, Lang::Source);
    if nouns.len() < t.noun_phrases() {
        return Err(Error::Config(format!("template {} needs more nouns", t.name)));
    }
    let chosen_nouns = rand::seq::index::sample(rng, nouns.len(), t.noun_phrases()).into_vec();
    let mut verbs: Vec<Vec<usize>> = Vec::new();
    for pos in [Pos::TransVerb, Pos::IntransVerb, Pos::Prep, Pos::Conj] {
        let k = t.slots.iter().filter(|s| **s == Slot::Word(pos)).count();
        let n = grammar.words(pos, Lang::Source).len();
        if k > n {
            return Err(Error::Config(format!(
                "template {} needs {k} distinct {pos:?} words",
                t.name
            )));
        }
        let mut idx = if pos == Pos::Conj {
            vec![0; k]
        } else {
            rand::seq::index::sample(rng, n, k).into_vec()
        };
        idx.sort_unstable();
        verbs.push(idx);
    }
    let mut used = [0usize; 4];
    let mut np = 0;
    let mut out = Vec::new();
    for slot in &t.slots {
        match slot {
            Slot::Np => {
                if !adjs.is_empty() && rng.random_bool(grammar.adj_prob) {
                    out.push(adjs[rng.random_range(0..adjs.len())].to_string());
                }
                out.push(nouns[chosen_nouns[np]].to_string());
                np += 1;
            }
            Slot::Word(pos) => {
                let k = match pos {
                    Pos::TransVerb => 0,
                    Pos::IntransVerb => 1,
                    Pos::Prep => 2,
                    Pos::Conj => 3,
                    _ => return Err(Error::Config(format!("template {} has a bare {pos:?} slot", t.name))),
                };
                let words = grammar.words(*pos, Lang::Source);
                out.push(words[verbs[k][used[k]]].to_string());
                used[k] += 1;
            }
        }
    }
    Ok(out)
}

/// Visual copy of a source graph plus the planted extras.
pub fn plant_extras(grammar: &ToyGrammar, lsg: &SceneGraph) -> SceneGraph {
    let mut g = lsg.clone().with_modality(Modality::Visual);
    let objects = lsg.ids_of(NodeKind::Object);
    let triples = lsg.relation_triples();
    for rule in &grammar.rules {
        match rule {
            PlantedRule::Object {
                trigger,
                object,
                relation,
            } => {
                for &o in &objects {
                    if lsg.node(o).label == *trigger {
                        let n = g.add_node(NodeKind::Object, object.clone());
                        g.add_relation(o, relation.clone(), n);
                    }
                }
            }
            PlantedRule::Attribute { trigger, attribute } => {
                for &o in &objects {
                    if lsg.node(o).label == *trigger {
                        g.add_attribute(o, attribute.clone());
                    }
                }
            }
            PlantedRule::Chain { preps, relation } => {
                let mut added = BTreeSet::new();
                for &(x, _, y) in &triples {
                    for &(y2, r2, z) in &triples {
                        if y2 == y && z != x && preps.contains(&lsg.node(r2).label) && added.insert((x, z)) {
                            g.add_relation(x, relation.clone(), z);
                        }
                    }
                }
            }
        }
    }
    g
}

/// Fixed pseudo-random feature row for a visual label.
pub fn codebook_row(label: &str, z_dim: usize) -> Vec<f64> {
    let digest = Sha256::digest(label.as_bytes());
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    let mut rng = ChaCha8Rng::from_seed(seed);
    let normal = Normal::new(0.0, 1.0 / (z_dim as f64).sqrt()).expect("valid normal");
    (0..z_dim).map(|_| normal.sample(&mut rng)).collect()
}

/// Image feature: the codebook rows of every node label plus Gaussian noise.
pub fn image_feature(vsg: &SceneGraph, z_dim: usize, noise: f64, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let mut z = vec![0.0; z_dim];
    for n in vsg.nodes() {
        for (a, b) in z.iter_mut().zip(codebook_row(&n.label, z_dim)) {
            *a += b;
        }
    }
    let normal = Normal::new(0.0, noise).map_err(|e| Error::Config(format!("noise: {e}")))?;
    for a in z.iter_mut() {
        *a += normal.sample(rng);
    }
    Ok(z)
}

pub fn gen_corpus(grammar: &ToyGrammar, cfg: &CorpusConfig) -> Result<Corpus> {
    grammar.check()?;
    if cfg.n_train == 0 {
        return Err(Error::Config("n_train must be at least 1".into()));
    }
    if cfg.z_dim == 0 {
        return Err(Error::Config("z_dim must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let total = cfg.n_train + cfg.n_mono + cfg.n_test;
    let mut seen = BTreeSet::new();
    let mut sentences = Vec::with_capacity(total);
    let budget = 200 * total + 1000;
    for _ in 0..budget {
        if sentences.len() == total {
            break;
        }
        let s = sample_sentence(grammar, &mut rng)?;
        if seen.insert(s.clone()) {
            sentences.push(s);
        }
    }
    if sentences.len() < total {
        return Err(Error::Config(format!(
            "grammar yields only {} distinct sentences, {total} requested",
            sentences.len()
        )));
    }
    let mut build = |tokens: &[String], lang: Lang, id: String| -> Result<Example> {
        let src = parse_toy_lsg(tokens, grammar)?;
        let vsg = plant_extras(grammar, &src);
        let z = image_feature(&vsg, cfg.z_dim, cfg.noise, &mut rng)?;
        let tokens = match lang {
            Lang::Source => tokens.to_vec(),
            Lang::Target => grammar
                .map_sentence(tokens, Lang::Source)
                .ok_or_else(|| Error::Internal("sampled word outside the lexicon".into()))?,
        };
        let lsg = match lang {
            Lang::Source => src,
            Lang::Target => parse_toy_lsg(&tokens, grammar)?,
        };
        Ok(Example {
            id,
            lang,
            tokens,
            lsg,
            vsg,
            z,
        })
    };
    let mut it = sentences.into_iter();
    let mut take = |n: usize, lang: Lang, prefix: &str| -> Result<Vec<Example>> {
        (0..n)
            .map(|i| {
                let s = it.next().expect("enough sentences");
                build(&s, lang, format!("{prefix}-{i:05}"))
            })
            .collect()
    };
    let train = take(cfg.n_train, Lang::Source, "train")?;
    let mono = take(cfg.n_mono, Lang::Target, "mono")?;
    let test = take(cfg.n_test, Lang::Source, "test")?;
    let refs = test
        .iter()
        .map(|e| {
            grammar
                .map_sentence(&e.tokens, Lang::Source)
                .ok_or_else(|| Error::Internal("test sentence outside the lexicon".into()))
        })
        .collect::<Result<_>>()?;
    Ok(Corpus {
        grammar: grammar.clone(),
        train,
        mono,
        test,
        refs: References::new(refs),
    })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExampleRecord {
    id: String,
    lang: Lang,
    tokens: Vec<String>,
    lsg: serde_json::Value,
    vsg: serde_json::Value,
    z: Vec<f64>,
}

fn graph_value(g: &SceneGraph) -> serde_json::Value {
    serde_json::from_str(&serialize(g)).expect("serialized graph is JSON")
}

pub fn example_to_line(e: &Example) -> String {
    let rec = ExampleRecord {
        id: e.id.clone(),
        lang: e.lang,
        tokens: e.tokens.clone(),
        lsg: graph_value(&e.lsg),
        vsg: graph_value(&e.vsg),
        z: e.z.clone(),
    };
    serde_json::to_string(&rec).expect("example serializes")
}

pub fn example_from_line(line: &str) -> Result<Example> {
    let rec: ExampleRecord = serde_json::from_str(line).map_err(|e| Error::Data(format!("bad example record: {e}")))?;
    let lsg = deserialize(&rec.lsg.to_string())?;
    let vsg = deserialize(&rec.vsg.to_string())?;
    lsg.ensure_valid()?;
    vsg.ensure_valid()?;
    Ok(Example {
        id: rec.id,
        lang: rec.lang,
        tokens: rec.tokens,
        lsg,
        vsg,
        z: rec.z,
    })
}

fn write_lines<I: IntoIterator<Item = String>>(path: &Path, lines: I) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for l in lines {
        writeln!(f, "{l}")?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_examples(path: &Path) -> Result<Vec<Example>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| example_from_line(l).map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), i + 1))))
        .collect()
}

/// One whitespace-separated sentence per line.
pub fn read_sentences(path: &Path) -> Result<Vec<Vec<String>>> {
    let text = fs::read_to_string(path)?;
    Ok(text
        .lines()
        .map(|l| l.split_whitespace().map(String::from).collect())
        .collect())
}

pub fn write_sentences(path: &Path, sentences: &[Vec<String>]) -> Result<()> {
    write_lines(path, sentences.iter().map(|s| s.join(" ")))
}

pub const GRAMMAR_FILE: &str = "grammar.json";
pub const TRAIN_FILE: &str = "train.jsonl";
pub const MONO_FILE: &str = "mono.jsonl";
pub const TEST_FILE: &str = "test.jsonl";
pub const TEST_SRC_FILE: &str = "test.src";
pub const REF_FILE: &str = "test.ref";

/// Reads and checks the grammar stored in a corpus directory.
pub fn read_grammar(dir: &Path) -> Result<ToyGrammar> {
    let text = fs::read_to_string(dir.join(GRAMMAR_FILE))?;
    let grammar: ToyGrammar = serde_json::from_str(&text).map_err(|e| Error::Data(format!("{GRAMMAR_FILE}: {e}")))?;
    grammar.check()?;
    Ok(grammar)
}

impl Corpus {
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let grammar = serde_json::to_string_pretty(&self.grammar).expect("grammar serializes");
        fs::write(dir.join(GRAMMAR_FILE), grammar + "\n")?;
        for (name, set) in [
            (TRAIN_FILE, &self.train),
            (MONO_FILE, &self.mono),
            (TEST_FILE, &self.test),
        ] {
            write_lines(&dir.join(name), set.iter().map(example_to_line))?;
        }
        let src: Vec<Vec<String>> = self.test.iter().map(|e| e.tokens.clone()).collect();
        write_sentences(&dir.join(TEST_SRC_FILE), &src)?;
        write_sentences(&dir.join(REF_FILE), &self.refs.refs)?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let grammar = read_grammar(dir)?;
        let refs = read_sentences(&dir.join(REF_FILE))?;
        let test = read_examples(&dir.join(TEST_FILE))?;
        if refs.len() != test.len() {
            return Err(Error::Data(format!(
                "{} test examples but {} references",
                test.len(),
                refs.len()
            )));
        }
        Ok(Corpus {
            grammar,
            train: read_examples(&dir.join(TRAIN_FILE))?,
            mono: read_examples(&dir.join(MONO_FILE))?,
            test,
            refs: References::new(refs),
        })
    }
}
