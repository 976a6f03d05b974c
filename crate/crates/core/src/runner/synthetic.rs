use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{LabeledExample, Sentence, SynonymLexicon};

/// Shape of the generated classification task.
///
/// Every class owns `signature_words` words. A text is a run of filler
/// words in which each position holds a signature word with probability
/// `signature_rate` (at least one per text). A signature word comes from
/// the text's own class with probability `1 - noise` and from a uniformly
/// drawn class otherwise, so `noise = 1` makes labels independent of text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub num_classes: usize,
    /// Distinct word types, signature and filler together.
    pub vocab_size: usize,
    pub signature_words: usize,
    pub noise: f64,
    pub signature_rate: f64,
    pub min_words: usize,
    pub max_words: usize,
    /// Filler words per synonym group in the generated lexicon.
    pub synset_size: usize,
    /// Chance that a filler word comes from the text's topic (one synonym
    /// group drawn per text) rather than the whole filler list.
    pub topic_rate: f64,
    pub num_train: usize,
    pub num_dev: usize,
    pub num_test: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_classes: 2,
            vocab_size: 120,
            signature_words: 6,
            noise: 0.3,
            signature_rate: 0.15,
            min_words: 8,
            max_words: 16,
            synset_size: 4,
            topic_rate: 0.0,
            num_train: 100,
            num_dev: 200,
            num_test: 1000,
        }
    }
}

impl SyntheticConfig {
    pub fn num_filler(&self) -> usize {
        self.vocab_size.saturating_sub(self.num_classes * self.signature_words)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(format!("synthetic: {m}")));
        if self.num_classes < 2 {
            return bad(format!("num_classes must be >= 2, got {}", self.num_classes));
        }
        if self.signature_words == 0 {
            return bad("signature_words must be >= 1".into());
        }
        if self.synset_size < 2 {
            return bad(format!("synset_size must be >= 2, got {}", self.synset_size));
        }
        if self.num_filler() < self.synset_size {
            return bad(format!(
                "vocab_size {} leaves fewer than {} filler words",
                self.vocab_size, self.synset_size
            ));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return bad(format!("noise must be in [0, 1], got {}", self.noise));
        }
        if !(0.0..=1.0).contains(&self.topic_rate) {
            return bad(format!("topic_rate must be in [0, 1], got {}", self.topic_rate));
        }
        if !(self.signature_rate > 0.0 && self.signature_rate <= 1.0) {
            return bad(format!("signature_rate must be in (0, 1], got {}", self.signature_rate));
        }
        if self.min_words == 0 || self.min_words > self.max_words {
            return bad(format!(
                "need 1 <= min_words <= max_words, got {}..{}",
                self.min_words, self.max_words
            ));
        }
        if self.num_train == 0 || self.num_dev == 0 {
            return bad("num_train and num_dev must be >= 1".into());
        }
        Ok(())
    }
}

/// Word inventory of a synthetic task.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    config: SyntheticConfig,
    signatures: Vec<Vec<String>>,
    filler: Vec<String>,
    topics: SynonymLexicon,
}

impl SyntheticTask {
    pub fn new(config: SyntheticConfig) -> Result<Self> {
        config.validate()?;
        let signatures = (0..config.num_classes)
            .map(|c| (0..config.signature_words).map(|j| format!("c{c}s{j}")).collect())
            .collect();
        let filler: Vec<String> = (0..config.num_filler()).map(|j| format!("w{j:03}")).collect();
        let topics = group_filler(&filler, config.synset_size);
        Ok(Self {
            config,
            signatures,
            filler,
            topics,
        })
    }

    pub fn config(&self) -> &SyntheticConfig {
        &self.config
    }

    pub fn signature_words(&self, class: usize) -> &[String] {
        &self.signatures[class]
    }

    pub fn filler_words(&self) -> &[String] {
        &self.filler
    }

    /// Filler words in consecutive groups of `synset_size`; a short tail
    /// joins the previous group.
    pub fn lexicon(&self) -> SynonymLexicon {
        self.topics.clone()
    }

    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> LabeledExample {
        let c = &self.config;
        let label = rng.gen_range(0..c.num_classes);
        let len = rng.gen_range(c.min_words..=c.max_words);
        let topic = self.topics.synsets().choose(rng).expect("at least one group");
        let mut is_sig: Vec<bool> = (0..len).map(|_| rng.gen_bool(c.signature_rate)).collect();
        if !is_sig.iter().any(|&b| b) {
            let at = rng.gen_range(0..len);
            is_sig[at] = true;
        }
        let words = is_sig
            .into_iter()
            .map(|sig| {
                if sig {
                    let class = if rng.gen_bool(c.noise) {
                        rng.gen_range(0..c.num_classes)
                    } else {
                        label
                    };
                    self.signatures[class]
                        .choose(rng)
                        .expect("signature_words >= 1")
                        .clone()
                } else if c.topic_rate > 0.0 && rng.gen_bool(c.topic_rate) {
                    topic.choose(rng).expect("groups are non-empty").clone()
                } else {
                    self.filler.choose(rng).expect("filler is non-empty").clone()
                }
            })
            .collect();
        LabeledExample {
            sentence: Sentence::new(words).expect("length >= 1"),
            label,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<LabeledExample> {
        (0..n).map(|_| self.sample_one(rng)).collect()
    }
}

fn group_filler(filler: &[String], size: usize) -> SynonymLexicon {
    let mut groups: Vec<Vec<String>> = filler.chunks(size).map(<[String]>::to_vec).collect();
    if groups.len() > 1 && groups.last().is_some_and(|g| g.len() < 2) {
        let tail = groups.pop().unwrap_or_default();
        groups.last_mut().expect("at least one group").extend(tail);
    }
    SynonymLexicon::new(groups).expect("filler groups have distinct words")
}

/// Train, dev and test splits drawn from one task.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub train: Vec<LabeledExample>,
    pub dev: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
    pub lexicon: SynonymLexicon,
}

/// Draws the three splits in order train, dev, test from `rng`.
pub fn generate_splits<R: Rng + ?Sized>(config: &SyntheticConfig, rng: &mut R) -> Result<SyntheticData> {
    let task = SyntheticTask::new(config.clone())?;
    Ok(SyntheticData {
        train: task.sample(config.num_train, rng),
        dev: task.sample(config.num_dev, rng),
        test: task.sample(config.num_test, rng),
        lexicon: task.lexicon(),
    })
}

/// One corpus of `num_examples` texts plus the filler lexicon, other task
/// settings at their defaults.
pub fn gen_synthetic<R: Rng + ?Sized>(
    num_examples: usize,
    num_classes: usize,
    vocab_size: usize,
    noise: f64,
    rng: &mut R,
) -> Result<(Vec<LabeledExample>, SynonymLexicon)> {
    let task = SyntheticTask::new(SyntheticConfig {
        num_classes,
        vocab_size,
        noise,
        ..SyntheticConfig::default()
    })?;
    Ok((task.sample(num_examples, rng), task.lexicon()))
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::text::{format_corpus, parse_corpus};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn signature_class(word: &str) -> Option<usize> {
        let rest = word.strip_prefix('c')?;
        rest.split_once('s')?.0.parse().ok()
    }

    #[test]
    fn corpus_has_requested_size_and_format() {
        let (ex, lex) = gen_synthetic(500, 2, 120, 0.2, &mut rng(0)).unwrap();
        let text = format_corpus(&ex);
        assert_eq!(text.lines().count(), 500);
        assert_eq!(parse_corpus("synthetic".as_ref(), &text).unwrap(), ex);
        assert!(!lex.is_empty());
    }

    #[test]
    fn noiseless_task_is_separable_by_bag_of_words() {
        let (ex, _) = gen_synthetic(400, 3, 120, 0.0, &mut rng(1)).unwrap();
        for e in &ex {
            let classes: HashSet<usize> = e.sentence.tokens().iter().filter_map(|w| signature_class(w)).collect();
            assert_eq!(classes, HashSet::from([e.label]));
        }
    }

    #[test]
    fn full_noise_decouples_labels_from_text() {
        // the majority signature class should match the label about 1/k of the time
        let (ex, _) = gen_synthetic(4000, 2, 120, 1.0, &mut rng(2)).unwrap();
        let mut hits = 0usize;
        for e in &ex {
            let mut counts = [0usize; 2];
            for w in e.sentence.tokens() {
                if let Some(c) = signature_class(w) {
                    counts[c] += 1;
                }
            }
            let guess = usize::from(counts[1] > counts[0]);
            hits += usize::from(guess == e.label);
        }
        let acc = hits as f64 / ex.len() as f64;
        assert!((acc - 0.5).abs() < 0.03, "accuracy {acc}");
    }

    #[test]
    fn lexicon_covers_filler_only() {
        let task = SyntheticTask::new(SyntheticConfig {
            vocab_size: 12 + 9,
            ..SyntheticConfig::default()
        })
        .unwrap();
        let lex = task.lexicon();
        assert!(task.filler_words().iter().all(|w| lex.has_synonyms(w)));
        assert!(!lex.has_synonyms(&task.signature_words(0)[0]));
        // 9 filler words in groups of 4: 4 + 5
        assert_eq!(lex.synsets().iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 5]);
    }

    #[test]
    fn generation_is_deterministic() {
        let c = SyntheticConfig::default();
        assert_eq!(generate_splits(&c, &mut rng(5)).unwrap(), generate_splits(&c, &mut rng(5)).unwrap());
    }

    #[test]
    fn invalid_settings_are_rejected() {
        for c in [
            SyntheticConfig { num_classes: 1, ..Default::default() },
            SyntheticConfig { vocab_size: 10, ..Default::default() },
            SyntheticConfig { noise: 1.5, ..Default::default() },
            SyntheticConfig { min_words: 5, max_words: 4, ..Default::default() },
            SyntheticConfig { signature_rate: 0.0, ..Default::default() },
        ] {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }
}
