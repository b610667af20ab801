use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

pub const CLS: usize = 0;
pub const SEP: usize = 1;
pub const PAD: usize = 2;
pub const UNK: usize = 3;

const SPECIALS: [&str; 4] = ["[CLS]", "[SEP]", "[PAD]", "[UNK]"];

/// Lowercases and splits on anything that is not alphanumeric.
pub fn normalize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Whitespace-level vocabulary with the four specials at ids 0–3.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary over `texts`; content tokens are ordered
    /// lexicographically so the id assignment depends only on the token set.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let set: BTreeSet<String> = texts.into_iter().flat_map(normalize).collect();
        let tokens = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(set)
            .collect();
        Self::from_tokens(tokens)
    }

    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self { tokens, index }
    }

    /// Restores the lookup table after deserialization.
    pub fn reindex(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }
}

/// `[CLS] tokens… [SEP] [PAD]…` of exactly `max_len` ids with its validity
/// mask. At most `max_len − 2` content tokens are kept.
pub fn tokenize(text: &str, vocab: &Vocabulary, max_len: usize) -> (Vec<usize>, Vec<bool>) {
    assert!(max_len >= 2, "max_len must hold [CLS] and [SEP]");
    let mut ids = Vec::with_capacity(max_len);
    ids.push(CLS);
    ids.extend(normalize(text).iter().take(max_len - 2).map(|t| vocab.id(t)));
    ids.push(SEP);
    let valid = ids.len();
    ids.resize(max_len, PAD);
    let mask = (0..max_len).map(|i| i < valid).collect();
    (ids, mask)
}
