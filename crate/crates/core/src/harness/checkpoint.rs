//! Versioned binary checkpoints.
//!
//! Layout, all integers little-endian: magic `SGPV`, `u32` version, three
//! length-prefixed UTF-8 strings (grammar fingerprint, training config,
//! visual vocabularies as JSON), a `u32` tensor count, then per tensor a
//! `u32` name length, the name, a `u32` rank, `u64` dimensions and the
//! row-major `f64` values.

use std::path::Path;

use crate::error::{Error, Result};
use crate::grammar::ToyGrammar;
use crate::model::Model;
use crate::numerics::{ParamStore, Tensor};
use crate::vsh::VsgVocabularies;

use super::config::TrainConfig;

pub const MAGIC: &[u8; 4] = b"SGPV";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub fingerprint: String,
    pub config: TrainConfig,
    pub vsg_vocab: VsgVocabularies,
    pub store: ParamStore,
}

impl Checkpoint {
    pub fn of(model: &Model, config: &TrainConfig) -> Self {
        Checkpoint {
            fingerprint: model.grammar.fingerprint(),
            config: config.clone(),
            vsg_vocab: model.vsg_vocab.clone(),
            store: model.store.clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let vocab = serde_json::to_string(&self.vsg_vocab).expect("vocabularies serialize");
        for s in [self.fingerprint.as_str(), &self.config.to_text(), &vocab] {
            put_str(&mut out, s);
        }
        out.extend_from_slice(&(self.store.len() as u32).to_le_bytes());
        for (_, name, t) in self.store.iter() {
            put_str(&mut out, name);
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in t.values() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    /// Decodes a checkpoint without checking its grammar.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let fingerprint = r.string()?;
        let config = TrainConfig::parse(&r.string()?)?;
        let vsg_vocab: VsgVocabularies =
            serde_json::from_str(&r.string()?).map_err(|e| Error::Checkpoint(format!("bad vocabularies: {e}")))?;
        let count = r.u32()?;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let values = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            let t = Tensor::new(shape, values)?;
            store.add(name, t).map_err(|e| Error::Checkpoint(e.to_string()))?;
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint {
            fingerprint,
            config,
            vsg_vocab,
            store,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    /// Reads a checkpoint and refuses it unless it was trained on `grammar`.
    pub fn load(path: &Path, grammar: &ToyGrammar) -> Result<Self> {
        let ck = Checkpoint::from_bytes(&std::fs::read(path)?)?;
        let want = grammar.fingerprint();
        if ck.fingerprint != want {
            return Err(Error::Checkpoint(format!(
                "grammar fingerprint {} does not match {}",
                ck.fingerprint, want
            )));
        }
        Ok(ck)
    }

    pub fn into_model(self, grammar: ToyGrammar) -> Result<Model> {
        Model::from_store(self.config.model, grammar, self.vsg_vocab, self.store)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid UTF-8 string".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::scene_graph::{parse_toy_lsg, Modality};
    use crate::vsh::build_vocabularies;

    fn model() -> (Model, TrainConfig) {
        let grammar = ToyGrammar::default();
        let tokens: Vec<String> = "red ball runs and jumps on big dog"
            .split(' ')
            .map(String::from)
            .collect();
        let lsg = parse_toy_lsg(&tokens, &grammar).unwrap();
        let vocab = build_vocabularies(&[lsg.with_modality(Modality::Visual)]).unwrap();
        let mut config = TrainConfig::default();
        config.model = ModelConfig {
            dim: 4,
            z_dim: 3,
            tri_dim: Some(2),
            tri_hidden: 2,
            ..ModelConfig::default()
        };
        (Model::new(config.model.clone(), grammar, vocab).unwrap(), config)
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let (m, cfg) = model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let ck = Checkpoint::of(&m, &cfg);
        ck.save(&path).unwrap();
        let first = std::fs::read(&path).unwrap();
        assert_eq!(&first[..4], MAGIC);
        let back = Checkpoint::load(&path, &m.grammar).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), first);
        let again = back.into_model(m.grammar.clone()).unwrap();
        assert_eq!(again.store, m.store);
    }

    #[test]
    fn refuses_other_grammar_and_corruption() {
        let (m, cfg) = model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        Checkpoint::of(&m, &cfg).save(&path).unwrap();
        let mut other = m.grammar.clone();
        other.adj_prob = 0.123;
        assert!(matches!(Checkpoint::load(&path, &other), Err(Error::Checkpoint(_))));

        let bytes = std::fs::read(&path).unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Checkpoint(_))));
    }
}
