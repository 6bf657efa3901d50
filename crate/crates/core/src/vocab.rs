//! Token to index mapping with an unknown-word fallback.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::lattice::{END_TOKEN, START_TOKEN};

pub const UNK_TOKEN: &str = "<unk>";

/// Fixed indices of the special tokens.
pub const UNK: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocab { tokens, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    /// Builds a vocabulary from token streams. Tokens seen fewer than
    /// `min_count` times map to the unknown token. Order is deterministic:
    /// specials first, then tokens sorted lexicographically.
    pub fn build<'a, I>(tokens: I, min_count: usize) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for t in tokens {
            *counts.entry(t).or_default() += 1;
        }
        let mut list: Vec<String> = [UNK_TOKEN, START_TOKEN, END_TOKEN]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for (t, c) in counts {
            if c >= min_count && ![UNK_TOKEN, START_TOKEN, END_TOKEN].contains(&t) {
                list.push(t.to_string());
            }
        }
        Vocab::from(list)
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

    pub fn ids<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}
