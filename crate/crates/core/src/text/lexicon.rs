use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::Path;

use crate::error::{Error, Result};

const DEFAULT_STOPWORDS: &str = include_str!("../../data/stopwords.txt");

/// Groups of mutually synonymous words.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SynonymLexicon {
    synsets: Vec<Vec<String>>,
    word_to_synsets: HashMap<String, Vec<usize>>,
}

impl SynonymLexicon {
    pub fn new(groups: Vec<Vec<String>>) -> Result<Self> {
        let mut lex = Self::default();
        for (i, group) in groups.into_iter().enumerate() {
            lex.push_group(group)
                .map_err(|msg| Error::invalid(format!("synset {i}: {msg}")))?;
        }
        Ok(lex)
    }

    fn push_group(&mut self, group: Vec<String>) -> Result<(), String> {
        let mut seen = HashSet::new();
        let words: Vec<String> = group
            .into_iter()
            .map(|w| w.to_lowercase())
            .filter(|w| seen.insert(w.clone()))
            .collect();
        if words.len() < 2 {
            return Err("a synonym group needs at least two distinct words".into());
        }
        let idx = self.synsets.len();
        for w in &words {
            self.word_to_synsets.entry(w.clone()).or_default().push(idx);
        }
        self.synsets.push(words);
        Ok(())
    }

    pub(crate) fn parse(path: &Path, content: &str) -> Result<Self> {
        let mut lex = Self::default();
        for (i, line) in content.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let group = line.split_whitespace().map(str::to_string).collect();
            lex.push_group(group).map_err(|msg| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg,
            })?;
        }
        Ok(lex)
    }

    pub fn synsets(&self) -> &[Vec<String>] {
        &self.synsets
    }

    pub fn is_empty(&self) -> bool {
        self.synsets.is_empty()
    }

    /// Every word sharing a group with `word`, excluding `word`, sorted.
    pub fn synonyms_of(&self, word: &str) -> Vec<&str> {
        let Some(groups) = self.word_to_synsets.get(word) else {
            return Vec::new();
        };
        let set: BTreeSet<&str> = groups
            .iter()
            .flat_map(|&g| self.synsets[g].iter())
            .map(String::as_str)
            .filter(|&w| w != word)
            .collect();
        set.into_iter().collect()
    }

    pub fn has_synonyms(&self, word: &str) -> bool {
        self.word_to_synsets.contains_key(word)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for g in &self.synsets {
            s.push_str(&g.join(" "));
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StopwordSet {
    words: HashSet<String>,
}

impl StopwordSet {
    pub fn new<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self {
            words: words
                .into_iter()
                .map(|w| w.as_ref().trim().to_lowercase())
                .filter(|w| !w.is_empty())
                .collect(),
        }
    }

    pub(crate) fn parse(content: &str) -> Self {
        Self::new(content.lines())
    }

    /// The bundled English list of common function words.
    pub fn english() -> Self {
        Self::parse(DEFAULT_STOPWORDS)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(&word.to_lowercase())
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}
