use std::collections::HashMap;
use std::path::Path;

use crate::error::CorpusError;

pub const PAD: u32 = 0;
pub const CLS: u32 = 1;
pub const SEP: u32 = 2;
pub const EOI: u32 = 3;
pub const BOS: u32 = 4;
pub const EOS: u32 = 5;
pub const UNK: u32 = 6;
pub const NUM_SPECIAL: usize = 7;

pub const SPECIAL_TOKENS: [&str; NUM_SPECIAL] = ["[PAD]", "[CLS]", "[SEP]", "[EOI]", "[BOS]", "[EOS]", "[UNK]"];

pub fn is_special(id: u32) -> bool {
    (id as usize) < NUM_SPECIAL
}

/// Lowercased whitespace tokenisation.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().map(str::to_lowercase)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Vocabulary {
    pub fn specials_only() -> Self {
        Self::from_tokens(Vec::<String>::new())
    }

    /// Builds a vocabulary from non-special tokens, placed after the fixed
    /// special block in the given order. Duplicates keep their first slot.
    pub fn from_tokens<S: AsRef<str>>(tokens: impl IntoIterator<Item = S>) -> Self {
        let mut v = Self { tokens: Vec::new(), ids: HashMap::new() };
        for s in SPECIAL_TOKENS.iter().copied().map(str::to_string) {
            v.push(s);
        }
        for t in tokens {
            let t = t.as_ref();
            if !v.ids.contains_key(t) {
                v.push(t.to_string());
            }
        }
        v
    }

    fn push(&mut self, tok: String) {
        self.ids.insert(tok.clone(), self.tokens.len() as u32);
        self.tokens.push(tok);
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        tokenize(text)
            .map(|t| match self.ids.get(&t) {
                Some(&id) if !is_special(id) => id,
                _ => UNK,
            })
            .collect()
    }

    /// Space-joined surface form; special ids other than `[UNK]` are skipped.
    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter()
            .filter(|&&id| !is_special(id) || id == UNK)
            .map(|&id| self.token(id).unwrap_or("[UNK]"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// One non-special token per line.
    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        let mut s = String::new();
        for t in &self.tokens[NUM_SPECIAL..] {
            s.push_str(t);
            s.push('\n');
        }
        std::fs::write(path, s).map_err(|e| CorpusError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
        Ok(Self::from_tokens(text.lines().map(str::trim).filter(|l| !l.is_empty())))
    }
}

/// Frequency-ranked vocabulary; ties break lexicographically, tokens below
/// `min_freq` are dropped and the result holds at most `max_size` entries.
pub fn build_vocab<S: AsRef<str>>(texts: &[S], max_size: usize, min_freq: usize) -> Vocabulary {
    assert!(max_size > NUM_SPECIAL, "max_size must exceed the special block");
    let mut counts: HashMap<String, usize> = HashMap::new();
    for text in texts {
        for tok in tokenize(text.as_ref()) {
            *counts.entry(tok).or_default() += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(t, c)| *c >= min_freq && !SPECIAL_TOKENS.contains(&t.as_str()))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(max_size - NUM_SPECIAL);
    Vocabulary::from_tokens(ranked.into_iter().map(|(t, _)| t))
}
