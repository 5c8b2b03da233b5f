//! The toy bilingual grammar: lexicon, sentence templates and the planted
//! visual co-occurrence rules used to build gold visual graphs.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Lang {
    Source,
    Target,
}

impl Lang {
    pub fn other(self) -> Lang {
        match self {
            Lang::Source => Lang::Target,
            Lang::Target => Lang::Source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pos {
    Noun,
    Adj,
    TransVerb,
    IntransVerb,
    Prep,
    Conj,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entry {
    pub source: String,
    pub target: String,
    pub pos: Pos,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slot {
    /// Optional adjective followed by a noun.
    Np,
    Word(Pos),
}

/// A relation built from template slot `label_slot` between the
/// `subject`-th and `object`-th noun phrase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelSpec {
    pub label_slot: usize,
    pub subject: usize,
    pub object: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Template {
    pub name: String,
    pub slots: Vec<Slot>,
    pub relations: Vec<RelSpec>,
    /// Sampling weight for corpus generation; zero keeps the template
    /// parseable but never generated.
    pub weight: f64,
}

impl Template {
    pub fn noun_phrases(&self) -> usize {
        self.slots.iter().filter(|s| **s == Slot::Np).count()
    }
}

/// Visual facts that always accompany certain scene content.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PlantedRule {
    /// `trigger` is always accompanied by `object`, linked `trigger → relation → object`.
    Object {
        trigger: String,
        object: String,
        relation: String,
    },
    /// `trigger` always carries attribute `attribute`.
    Attribute { trigger: String, attribute: String },
    /// In `X verb Y prep Z` with `prep` in `preps`, X is also related to Z.
    Chain { preps: Vec<String>, relation: String },
}

#[derive(Debug, Error, PartialEq)]
pub enum GrammarError {
    #[error("token {0:?} appears more than once in the lexicon")]
    DuplicateToken(String),
    #[error("template {template} refers to slot {slot} which is not a relation word")]
    BadRelationSlot { template: String, slot: usize },
    #[error("template {template} refers to noun phrase {np} but has only {count}")]
    BadNounPhrase { template: String, np: usize, count: usize },
    #[error("planted rule references unknown word {0:?}")]
    UnknownRuleWord(String),
    #[error("no template has positive weight")]
    NoTemplates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyGrammar {
    pub lexicon: Vec<Entry>,
    pub templates: Vec<Template>,
    pub rules: Vec<PlantedRule>,
    /// Probability that a noun phrase carries an adjective.
    pub adj_prob: f64,
}

const NOUNS: [(&str, &str); 16] = [
    ("dog", "chien"),
    ("cat", "chat"),
    ("man", "homme"),
    ("woman", "femme"),
    ("boy", "garcon"),
    ("girl", "fille"),
    ("ball", "balle"),
    ("car", "voiture"),
    ("tree", "arbre"),
    ("table", "pupitre"),
    ("cup", "tasse"),
    ("bird", "oiseau"),
    ("horse", "cheval"),
    ("fence", "cloture"),
    ("house", "maison"),
    ("bench", "banc"),
];
const ADJS: [(&str, &str); 8] = [
    ("red", "rouge"),
    ("blue", "bleu"),
    ("green", "vert"),
    ("big", "grand"),
    ("small", "petit"),
    ("old", "vieux"),
    ("young", "jeune"),
    ("white", "blanc"),
];
const TRANS: [(&str, &str); 6] = [
    ("chases", "chasse"),
    ("holds", "tient"),
    ("watches", "regarde"),
    ("kicks", "frappe"),
    ("rides", "monte"),
    ("carries", "porte"),
];
const INTRANS: [(&str, &str); 5] = [
    ("sleeps", "dort"),
    ("runs", "court"),
    ("jumps", "saute"),
    ("sits", "assis"),
    ("stands", "debout"),
];
const PREPS: [(&str, &str); 5] = [
    ("on", "sur"),
    ("near", "pres"),
    ("under", "sous"),
    ("behind", "derriere"),
    ("beside", "cote"),
];

impl Default for ToyGrammar {
    fn default() -> Self {
        let mut lexicon = Vec::new();
        let groups: [(&[(&str, &str)], Pos); 5] = [
            (&NOUNS, Pos::Noun),
            (&ADJS, Pos::Adj),
            (&TRANS, Pos::TransVerb),
            (&INTRANS, Pos::IntransVerb),
            (&PREPS, Pos::Prep),
        ];
        for (words, pos) in groups {
            for (s, t) in words {
                lexicon.push(Entry {
                    source: s.to_string(),
                    target: t.to_string(),
                    pos,
                });
            }
        }
        lexicon.push(Entry {
            source: "and".into(),
            target: "et".into(),
            pos: Pos::Conj,
        });
        use Pos::*;
        use Slot::*;
        let rel = |label_slot, subject, object| RelSpec {
            label_slot,
            subject,
            object,
        };
        let templates = vec![
            Template {
                name: "intrans_pp".into(),
                slots: vec![Np, Word(IntransVerb), Word(Conj), Word(IntransVerb), Word(Prep), Np],
                relations: vec![rel(1, 0, 1), rel(3, 0, 1), rel(4, 0, 1)],
                weight: 0.75,
            },
            Template {
                name: "trans_conj".into(),
                slots: vec![Np, Word(TransVerb), Word(Conj), Word(TransVerb), Np],
                relations: vec![rel(1, 0, 1), rel(3, 0, 1)],
                weight: 0.05,
            },
            Template {
                name: "chain".into(),
                slots: vec![Np, Word(TransVerb), Np, Word(Prep), Np],
                relations: vec![rel(1, 0, 1), rel(3, 1, 2)],
                weight: 0.15,
            },
            Template {
                name: "trans".into(),
                slots: vec![Np, Word(TransVerb), Np],
                relations: vec![rel(1, 0, 1)],
                weight: 0.05,
            },
            Template {
                name: "intrans".into(),
                slots: vec![Np, Word(IntransVerb)],
                relations: vec![],
                weight: 0.0,
            },
        ];
        let obj = |t: &str, o: &str, r: &str| PlantedRule::Object {
            trigger: t.into(),
            object: o.into(),
            relation: r.into(),
        };
        let attr = |t: &str, a: &str| PlantedRule::Attribute {
            trigger: t.into(),
            attribute: a.into(),
        };
        let rules = vec![
            obj("ball", "ground", "on"),
            obj("car", "road", "on"),
            obj("dog", "leash", "wears"),
            obj("horse", "saddle", "wears"),
            obj("bench", "grass", "on"),
            obj("table", "plate", "has"),
            attr("house", "wooden"),
            attr("cat", "furry"),
            PlantedRule::Chain {
                preps: vec!["on".into(), "under".into()],
                relation: "near".into(),
            },
        ];
        ToyGrammar {
            lexicon,
            templates,
            rules,
            adj_prob: 0.5,
        }
    }
}

impl ToyGrammar {
    /// Checks the structural invariants of the grammar.
    pub fn check(&self) -> Result<(), GrammarError> {
        let mut seen = BTreeSet::new();
        for e in &self.lexicon {
            for w in [&e.source, &e.target] {
                if !seen.insert(w.as_str()) {
                    return Err(GrammarError::DuplicateToken(w.clone()));
                }
            }
        }
        for t in &self.templates {
            let count = t.noun_phrases();
            for r in &t.relations {
                let ok = matches!(
                    t.slots.get(r.label_slot),
                    Some(Slot::Word(Pos::TransVerb | Pos::IntransVerb | Pos::Prep))
                );
                if !ok {
                    return Err(GrammarError::BadRelationSlot {
                        template: t.name.clone(),
                        slot: r.label_slot,
                    });
                }
                for np in [r.subject, r.object] {
                    if np >= count {
                        return Err(GrammarError::BadNounPhrase {
                            template: t.name.clone(),
                            np,
                            count,
                        });
                    }
                }
            }
        }
        if !self.templates.iter().any(|t| t.weight > 0.0) {
            return Err(GrammarError::NoTemplates);
        }
        for r in &self.rules {
            let words: Vec<&String> = match r {
                PlantedRule::Object { trigger, .. } | PlantedRule::Attribute { trigger, .. } => vec![trigger],
                PlantedRule::Chain { preps, .. } => preps.iter().collect(),
            };
            for w in words {
                if self.source_entry(w).is_none() {
                    return Err(GrammarError::UnknownRuleWord(w.clone()));
                }
            }
        }
        Ok(())
    }

    pub fn source_entry(&self, word: &str) -> Option<&Entry> {
        self.lexicon.iter().find(|e| e.source == word)
    }

    /// Part of speech of `word` in language `lang`.
    pub fn pos(&self, word: &str, lang: Lang) -> Option<Pos> {
        self.lexicon
            .iter()
            .find(|e| match lang {
                Lang::Source => e.source == word,
                Lang::Target => e.target == word,
            })
            .map(|e| e.pos)
    }

    pub fn words(&self, pos: Pos, lang: Lang) -> Vec<&str> {
        self.lexicon
            .iter()
            .filter(|e| e.pos == pos)
            .map(|e| match lang {
                Lang::Source => e.source.as_str(),
                Lang::Target => e.target.as_str(),
            })
            .collect()
    }

    pub fn vocabulary(&self, lang: Lang) -> Vec<&str> {
        self.lexicon
            .iter()
            .map(|e| match lang {
                Lang::Source => e.source.as_str(),
                Lang::Target => e.target.as_str(),
            })
            .collect()
    }

    /// Word-by-word translation through the bijective map.
    pub fn map_sentence(&self, tokens: &[String], from: Lang) -> Option<Vec<String>> {
        let map: BTreeMap<&str, &str> = self
            .lexicon
            .iter()
            .map(|e| match from {
                Lang::Source => (e.source.as_str(), e.target.as_str()),
                Lang::Target => (e.target.as_str(), e.source.as_str()),
            })
            .collect();
        tokens
            .iter()
            .map(|t| map.get(t.as_str()).map(|s| s.to_string()))
            .collect()
    }

    /// Labels that only ever occur in visual graphs (planted extras).
    pub fn visual_only_labels(&self) -> Vec<String> {
        let mut out = Vec::new();
        for r in &self.rules {
            let labels: Vec<&String> = match r {
                PlantedRule::Object { object, relation, .. } => vec![object, relation],
                PlantedRule::Attribute { attribute, .. } => vec![attribute],
                PlantedRule::Chain { relation, .. } => vec![relation],
            };
            for l in labels {
                if self.source_entry(l).is_none() && !out.contains(l) {
                    out.push(l.clone());
                }
            }
        }
        out
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("grammar serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grammar_is_consistent() {
        let g = ToyGrammar::default();
        g.check().unwrap();
        let content = g.lexicon.iter().filter(|e| e.pos != Pos::Conj).count();
        assert_eq!(content, 40);
        assert_eq!(g.vocabulary(Lang::Source).len(), g.vocabulary(Lang::Target).len());
    }

    #[test]
    fn map_round_trip() {
        let g = ToyGrammar::default();
        let x: Vec<String> = ["red", "dog", "chases", "cat"].map(String::from).to_vec();
        let y = g.map_sentence(&x, Lang::Source).unwrap();
        assert_eq!(y, ["rouge", "chien", "chasse", "chat"].map(String::from).to_vec());
        assert_eq!(g.map_sentence(&y, Lang::Target).unwrap(), x);
        assert!(g.map_sentence(&["zzz".to_string()], Lang::Source).is_none());
    }

    #[test]
    fn duplicate_token_detected() {
        let mut g = ToyGrammar::default();
        g.lexicon[1].target = "chien".into();
        assert_eq!(g.check(), Err(GrammarError::DuplicateToken("chien".into())));
    }

    #[test]
    fn fingerprint_tracks_content() {
        let a = ToyGrammar::default();
        let mut b = a.clone();
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.adj_prob = 0.4;
        assert_ne!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn visual_only_labels_listed() {
        let g = ToyGrammar::default();
        let v = g.visual_only_labels();
        for l in [
            "ground", "road", "leash", "wears", "saddle", "grass", "plate", "has", "wooden", "furry",
        ] {
            assert!(v.contains(&l.to_string()), "{l}");
        }
        assert!(!v.contains(&"on".to_string()));
    }
}
