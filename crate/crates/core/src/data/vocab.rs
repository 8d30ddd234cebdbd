use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const CLS: usize = 2;
pub const SEP: usize = 3;

const SPECIALS: [&str; 4] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"];

/// Dense token ids `0..len()`, specials first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Keeps the most frequent words up to `cap` entries including the four
/// specials. Frequency ties are broken lexicographically.
pub fn build_vocab<'a>(corpus: impl IntoIterator<Item = &'a str>, cap: usize) -> Result<Vocabulary> {
    if cap < 5 {
        return Err(Error::Config(format!("vocabulary cap {cap} < 5")));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut sentences = 0usize;
    for line in corpus {
        sentences += 1;
        for w in line.split_whitespace() {
            if !SPECIALS.contains(&w) {
                *counts.entry(w).or_default() += 1;
            }
        }
    }
    if sentences == 0 {
        return Err(Error::Empty("corpus"));
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let tokens = SPECIALS
        .iter()
        .map(|s| s.to_string())
        .chain(ranked.into_iter().map(|(w, _)| w.to_owned()))
        .take(cap)
        .collect::<Vec<_>>();
    Ok(Vocabulary::from(tokens))
}

/// `[CLS] w_1 .. w_k [SEP]` with the words truncated to `max_len - 2`.
pub fn encode_hypothesis<S: AsRef<str>>(vocab: &Vocabulary, words: &[S], max_len: usize) -> Vec<usize> {
    debug_assert!(max_len >= 3);
    let keep = max_len.saturating_sub(2);
    std::iter::once(CLS)
        .chain(words.iter().take(keep).map(|w| vocab.id(w.as_ref())))
        .chain(std::iter::once(SEP))
        .collect()
}
