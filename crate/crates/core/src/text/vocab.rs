use std::collections::HashMap;

use super::Sentence;
use crate::error::{Error, Result};

/// Token id. Specials occupy `0..NUM_SPECIAL`.
pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const UNK: TokenId = 1;
pub const CLS: TokenId = 2;
pub const MASK: TokenId = 3;
pub const SEP: TokenId = 4;
pub const NUM_SPECIAL: usize = 5;

pub const SPECIAL_TOKENS: [&str; NUM_SPECIAL] = ["[PAD]", "[UNK]", "[CLS]", "[MASK]", "[SEP]"];

/// Bidirectional word/id mapping. Special tokens come first, corpus words
/// follow ordered by descending frequency with lexicographic tie-breaking.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    token_to_id: HashMap<String, TokenId>,
    id_to_token: Vec<String>,
}

impl Vocab {
    pub fn build(corpus: &[Sentence], min_freq: usize) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        if min_freq == 0 {
            return Err(Error::invalid("min_freq must be at least 1"));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for sentence in corpus {
            for tok in sentence.tokens() {
                *counts.entry(tok.as_str()).or_default() += 1;
            }
        }
        let mut words: Vec<(&str, usize)> =
            counts.into_iter().filter(|&(_, c)| c >= min_freq).collect();
        words.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        Self::from_words(words.into_iter().map(|(w, _)| w.to_string()))
    }

    /// Builds a vocabulary whose non-special ids follow `words` in order.
    pub fn from_words(words: impl IntoIterator<Item = String>) -> Result<Self> {
        let mut id_to_token: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        let mut token_to_id: HashMap<String, TokenId> = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as TokenId))
            .collect();
        for w in words {
            if token_to_id.contains_key(&w) {
                return Err(Error::invalid(format!("duplicate vocabulary entry {w:?}")));
            }
            token_to_id.insert(w.clone(), id_to_token.len() as TokenId);
            id_to_token.push(w);
        }
        Ok(Self {
            token_to_id,
            id_to_token,
        })
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    /// Number of ordinary (non-special) words.
    pub fn num_words(&self) -> usize {
        self.len() - NUM_SPECIAL
    }

    pub fn get(&self, token: &str) -> Option<TokenId> {
        self.token_to_id.get(token).copied()
    }

    /// Id of `token`, falling back to UNK.
    pub fn id(&self, token: &str) -> TokenId {
        self.get(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    pub fn is_special(id: TokenId) -> bool {
        (id as usize) < NUM_SPECIAL
    }

    /// Words in id order, excluding specials.
    pub fn words(&self) -> &[String] {
        &self.id_to_token[NUM_SPECIAL..]
    }

    /// `[CLS] w1 w2 ...`, truncated to `max_len` positions.
    pub fn encode(&self, sentence: &Sentence, max_len: usize) -> Result<Vec<TokenId>> {
        if max_len < 2 {
            return Err(Error::invalid(format!("max_len must be >= 2, got {max_len}")));
        }
        let mut ids = Vec::with_capacity(max_len.min(sentence.len() + 1));
        ids.push(CLS);
        ids.extend(
            sentence
                .tokens()
                .iter()
                .take(max_len - 1)
                .map(|t| self.id(t)),
        );
        Ok(ids)
    }
}
