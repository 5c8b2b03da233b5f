use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered set of strings with index lookup.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    items: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(items: Vec<String>) -> Self {
        let mut v = Vocab::default();
        for i in items {
            v.insert(&i);
        }
        v
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.items
    }
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `item` if absent and returns its index.
    pub fn insert(&mut self, item: &str) -> usize {
        if let Some(&i) = self.index.get(item) {
            return i;
        }
        self.items.push(item.to_string());
        self.index.insert(item.to_string(), self.items.len() - 1);
        self.items.len() - 1
    }

    pub fn get(&self, item: &str) -> Option<usize> {
        self.index.get(item).copied()
    }

    pub fn require(&self, item: &str) -> Result<usize> {
        self.get(item).ok_or_else(|| Error::Oov(item.to_string()))
    }

    pub fn item(&self, i: usize) -> &str {
        &self.items[i]
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn contains(&self, item: &str) -> bool {
        self.index.contains_key(item)
    }
}

pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const BOS_ID: usize = 0;
pub const EOS_ID: usize = 1;

/// Sentence vocabulary: `<bos>`, `<eos>`, then the words.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextVocab(Vocab);

impl TextVocab {
    pub fn new<S: AsRef<str>>(words: &[S]) -> Self {
        let mut v = Vocab::new();
        v.insert(BOS);
        v.insert(EOS);
        for w in words {
            v.insert(w.as_ref());
        }
        TextVocab(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn encode(&self, tokens: &[String]) -> Result<Vec<usize>> {
        tokens
            .iter()
            .map(|t| match self.0.get(t) {
                Some(i) if i > EOS_ID => Ok(i),
                _ => Err(Error::Oov(t.clone())),
            })
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.0.item(i).to_string()).collect()
    }

    pub fn token(&self, i: usize) -> &str {
        self.0.item(i)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_vocab_reserves_markers() {
        let v = TextVocab::new(&["dog", "cat"]);
        assert_eq!(v.len(), 4);
        assert_eq!(v.encode(&["cat".to_string()]).unwrap(), vec![3]);
        assert!(matches!(v.encode(&[BOS.to_string()]), Err(Error::Oov(_))));
        assert_eq!(v.decode(&[2, 3]), vec!["dog", "cat"]);
    }

    #[test]
    fn vocab_serde_round_trip() {
        let v: Vocab = vec!["a".to_string(), "b".to_string()].into();
        let s = serde_json::to_string(&v).unwrap();
        assert_eq!(s, r#"["a","b"]"#);
        let back: Vocab = serde_json::from_str(&s).unwrap();
        assert_eq!(back.get("b"), Some(1));
    }
}
