//! Word-level text handling: tokenization, vocabulary, corpus and lexicon files.
//!
//! Corpus files hold one example per line as `<label>\t<raw text>`. Lexicon
//! files hold one synonym group per line as space-separated words. Stopword
//! files hold one word per line.

mod lexicon;
mod vocab;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use lexicon::{StopwordSet, SynonymLexicon};
pub use vocab::{TokenId, Vocab, CLS, MASK, NUM_SPECIAL, PAD, SEP, SPECIAL_TOKENS, UNK};

/// A non-empty sequence of lowercased words.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Sentence(Vec<String>);

impl Sentence {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::EmptyText);
        }
        Ok(Self(tokens))
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn into_tokens(self) -> Vec<String> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub sentence: Sentence,
    pub label: usize,
}

/// Lowercases, splits on whitespace and strips non-alphanumeric characters
/// from token edges. Tokens that become empty are dropped.
pub fn tokenize(text: &str) -> Result<Sentence> {
    let tokens: Vec<String> = text
        .split_whitespace()
        .map(|raw| raw.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|t| !t.is_empty())
        .collect();
    Sentence::new(tokens)
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

pub fn parse_corpus(path: &Path, content: &str) -> Result<Vec<LabeledExample>> {
    let mut out = Vec::new();
    for (i, line) in content.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (label, text) = line
            .split_once('\t')
            .ok_or_else(|| parse_err(path, lineno, "expected `<label>\\t<text>`"))?;
        let label: usize = label
            .trim()
            .parse()
            .map_err(|_| parse_err(path, lineno, format!("bad label {label:?}")))?;
        let sentence =
            tokenize(text).map_err(|_| parse_err(path, lineno, "text has no tokens"))?;
        out.push(LabeledExample { sentence, label });
    }
    if out.is_empty() {
        return Err(parse_err(path, 0, "no examples"));
    }
    Ok(out)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<LabeledExample>> {
    let path = path.as_ref();
    parse_corpus(path, &read_to_string(path)?)
}

pub fn load_lexicon(path: impl AsRef<Path>) -> Result<SynonymLexicon> {
    let path = path.as_ref();
    SynonymLexicon::parse(path, &read_to_string(path)?)
}

pub fn load_stopwords(path: impl AsRef<Path>) -> Result<StopwordSet> {
    let path = path.as_ref();
    Ok(StopwordSet::parse(&read_to_string(path)?))
}

/// Writes examples in corpus format.
pub fn format_corpus(examples: &[LabeledExample]) -> String {
    let mut s = String::new();
    for ex in examples {
        s.push_str(&ex.label.to_string());
        s.push('\t');
        s.push_str(&ex.sentence.tokens().join(" "));
        s.push('\n');
    }
    s
}
