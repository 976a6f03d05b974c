//! Sentence augmentation operators and augmentation-type prediction instances.
//!
//! Each operator returns an [`Augmented`] value; `noop` is set when the
//! operator had nothing to act on and the sentence is returned unchanged.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{Sentence, StopwordSet, SynonymLexicon};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AugOp {
    /// Synonym replacement.
    SR,
    /// Random insertion.
    RI,
    /// Random swap.
    RS,
    /// Random deletion.
    RD,
}

impl AugOp {
    pub const ALL: [AugOp; 4] = [AugOp::SR, AugOp::RI, AugOp::RS, AugOp::RD];

    pub fn name(self) -> &'static str {
        match self {
            AugOp::SR => "SR",
            AugOp::RI => "RI",
            AugOp::RS => "RS",
            AugOp::RD => "RD",
        }
    }
}

impl fmt::Display for AugOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AugOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "SR" => Ok(AugOp::SR),
            "RI" => Ok(AugOp::RI),
            "RS" => Ok(AugOp::RS),
            "RD" => Ok(AugOp::RD),
            other => Err(Error::invalid(format!("unknown augmentation op {other:?}"))),
        }
    }
}

/// Non-empty subset of operators. Labels are dense indices in canonical
/// order SR, RI, RS, RD restricted to the members.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct OpSet(Vec<AugOp>);

impl OpSet {
    pub fn new(ops: impl IntoIterator<Item = AugOp>) -> Result<Self> {
        let mut ops: Vec<AugOp> = ops.into_iter().collect();
        ops.sort();
        ops.dedup();
        if ops.is_empty() {
            return Err(Error::invalid("operator set must not be empty"));
        }
        Ok(Self(ops))
    }

    pub fn all() -> Self {
        Self(AugOp::ALL.to_vec())
    }

    pub fn ops(&self) -> &[AugOp] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn label_of(&self, op: AugOp) -> Option<usize> {
        self.0.iter().position(|&o| o == op)
    }

    pub fn op_at(&self, label: usize) -> Option<AugOp> {
        self.0.get(label).copied()
    }
}

impl fmt::Display for OpSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.0.iter().map(|o| o.name()).collect();
        f.write_str(&names.join("+"))
    }
}

/// Parses `SR+RD`, `SR,RD,RI` or `sr rd`.
impl FromStr for OpSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let ops = s
            .split(|c: char| c == '+' || c == ',' || c.is_whitespace())
            .filter(|p| !p.is_empty())
            .map(str::parse)
            .collect::<Result<Vec<_>>>()?;
        Self::new(ops)
    }
}

impl TryFrom<String> for OpSet {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<OpSet> for String {
    fn from(ops: OpSet) -> String {
        ops.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Augmented {
    pub sentence: Sentence,
    pub noop: bool,
}

impl Augmented {
    fn changed(tokens: Vec<String>) -> Self {
        Self {
            sentence: Sentence::new(tokens).expect("augmentation keeps at least one token"),
            noop: false,
        }
    }

    fn unchanged(s: &Sentence) -> Self {
        Self {
            sentence: s.clone(),
            noop: true,
        }
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if rate > 0.0 && rate <= 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("rate must be in (0, 1], got {rate}")))
    }
}

/// `max(1, round(rate * n))`.
pub fn op_count(rate: f64, n: usize) -> usize {
    ((rate * n as f64).round() as usize).max(1)
}

/// Replaces `k` distinct eligible words (non-stop, with synonyms) at all of
/// their occurrences by one synonym each.
pub fn synonym_replacement<R: Rng + ?Sized>(
    s: &Sentence,
    lexicon: &SynonymLexicon,
    stopwords: &StopwordSet,
    rate: f64,
    rng: &mut R,
) -> Result<Augmented> {
    check_rate(rate)?;
    let eligible = |w: &String| !stopwords.contains(w) && lexicon.has_synonyms(w);
    let eligible_tokens = s.tokens().iter().filter(|w| eligible(w)).count();
    if eligible_tokens == 0 {
        return Ok(Augmented::unchanged(s));
    }
    let mut distinct: Vec<&String> = Vec::new();
    for w in s.tokens().iter().filter(|w| eligible(w)) {
        if !distinct.contains(&w) {
            distinct.push(w);
        }
    }
    let k = op_count(rate, eligible_tokens).min(distinct.len());
    let chosen: Vec<&String> = distinct.choose_multiple(rng, k).copied().collect();
    let mut tokens = s.tokens().to_vec();
    for word in chosen {
        let syns = lexicon.synonyms_of(word);
        let replacement = syns.choose(rng).expect("eligible word has synonyms").to_string();
        for t in tokens.iter_mut().filter(|t| *t == word) {
            *t = replacement.clone();
        }
    }
    Ok(Augmented::changed(tokens))
}

/// Inserts `k = max(1, round(rate * |s|))` synonyms of randomly chosen
/// eligible words at uniformly random positions.
pub fn random_insertion<R: Rng + ?Sized>(
    s: &Sentence,
    lexicon: &SynonymLexicon,
    stopwords: &StopwordSet,
    rate: f64,
    rng: &mut R,
) -> Result<Augmented> {
    check_rate(rate)?;
    let eligible = |w: &String| !stopwords.contains(w) && lexicon.has_synonyms(w);
    if !s.tokens().iter().any(eligible) {
        return Ok(Augmented::unchanged(s));
    }
    let k = op_count(rate, s.len());
    let mut tokens = s.tokens().to_vec();
    for _ in 0..k {
        let candidates: Vec<&String> = tokens.iter().filter(|w| eligible(w)).collect();
        let source = *candidates.choose(rng).expect("at least one eligible token");
        let syn = lexicon
            .synonyms_of(source)
            .choose(rng)
            .expect("eligible word has synonyms")
            .to_string();
        let pos = rng.gen_range(0..=tokens.len());
        tokens.insert(pos, syn);
    }
    Ok(Augmented::changed(tokens))
}

/// Applies `k = max(1, round(rate * |s|))` swaps of two distinct positions.
pub fn random_swap<R: Rng + ?Sized>(s: &Sentence, rate: f64, rng: &mut R) -> Result<Augmented> {
    check_rate(rate)?;
    let n = s.len();
    if n < 2 {
        return Ok(Augmented::unchanged(s));
    }
    let mut tokens = s.tokens().to_vec();
    for _ in 0..op_count(rate, n) {
        let i = rng.gen_range(0..n);
        let mut j = rng.gen_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        tokens.swap(i, j);
    }
    Ok(Augmented::changed(tokens))
}

/// Deletes each token independently with probability `p`. If everything
/// would be deleted, one uniformly chosen original token survives.
pub fn random_deletion<R: Rng + ?Sized>(s: &Sentence, p: f64, rng: &mut R) -> Result<Augmented> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::invalid(format!("deletion probability must be in [0, 1), got {p}")));
    }
    let mut kept: Vec<String> = s
        .tokens()
        .iter()
        .filter(|_| !rng.gen_bool(p))
        .cloned()
        .collect();
    if kept.is_empty() {
        kept.push(s.tokens().choose(rng).expect("sentence is non-empty").clone());
    }
    Ok(Augmented::changed(kept))
}

/// Parameters shared by all operators.
#[derive(Debug, Clone, Copy)]
pub struct AugmentContext<'a> {
    pub lexicon: &'a SynonymLexicon,
    pub stopwords: &'a StopwordSet,
    /// Fraction for SR, RI and RS.
    pub rate: f64,
    /// Per-token deletion probability for RD.
    pub p_delete: f64,
}

impl AugmentContext<'_> {
    pub fn apply<R: Rng + ?Sized>(&self, op: AugOp, s: &Sentence, rng: &mut R) -> Result<Augmented> {
        match op {
            AugOp::SR => synonym_replacement(s, self.lexicon, self.stopwords, self.rate, rng),
            AugOp::RI => random_insertion(s, self.lexicon, self.stopwords, self.rate, rng),
            AugOp::RS => random_swap(s, self.rate, rng),
            AugOp::RD => random_deletion(s, self.p_delete, rng),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugmentedInstance {
    pub sentence: Sentence,
    pub op: AugOp,
    /// Dense index of `op` within the active operator set.
    pub op_label: usize,
}

/// Draws one operator uniformly from `ops` and applies it. Operators that
/// report a no-op are dropped and the draw repeats among the rest; `None`
/// means no active operator could act on `s`.
pub fn make_satp_instance<R: Rng + ?Sized>(
    s: &Sentence,
    ops: &OpSet,
    ctx: &AugmentContext<'_>,
    rng: &mut R,
) -> Result<Option<AugmentedInstance>> {
    let mut candidates = ops.ops().to_vec();
    while !candidates.is_empty() {
        let idx = rng.gen_range(0..candidates.len());
        let op = candidates[idx];
        let out = ctx.apply(op, s, rng)?;
        if !out.noop {
            return Ok(Some(AugmentedInstance {
                sentence: out.sentence,
                op,
                op_label: ops.label_of(op).expect("op drawn from the set"),
            }));
        }
        candidates.remove(idx);
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn sent(words: &[&str]) -> Sentence {
        Sentence::new(words.iter().map(|w| w.to_string()).collect()).unwrap()
    }

    fn lex(groups: &[&[&str]]) -> SynonymLexicon {
        SynonymLexicon::new(
            groups
                .iter()
                .map(|g| g.iter().map(|w| w.to_string()).collect())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn sr_replaces_the_only_eligible_word() {
        let lexicon = lex(&[&["good", "fine"]]);
        let stop = StopwordSet::new(["the", "was"]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = synonym_replacement(&sent(&["the", "movie", "was", "good"]), &lexicon, &stop, 0.1, &mut rng)
            .unwrap();
        assert!(!out.noop);
        assert_eq!(out.sentence.tokens(), ["the", "movie", "was", "fine"]);
    }

    #[test]
    fn sr_replaces_every_occurrence() {
        let lexicon = lex(&[&["good", "fine"]]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = synonym_replacement(&sent(&["good", "good"]), &lexicon, &StopwordSet::default(), 0.1, &mut rng)
            .unwrap();
        assert_eq!(out.sentence.tokens(), ["fine", "fine"]);
    }

    #[test]
    fn sr_without_eligible_words_is_noop() {
        let lexicon = lex(&[&["the", "a"]]);
        let stop = StopwordSet::new(["the", "of"]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = sent(&["the", "of"]);
        let out = synonym_replacement(&s, &lexicon, &stop, 0.1, &mut rng).unwrap();
        assert!(out.noop);
        assert_eq!(out.sentence, s);
    }

    #[test]
    fn ri_length_follows_count_rule() {
        let lexicon = lex(&[&["w0", "alt"]]);
        let stop = StopwordSet::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ten: Vec<&str> = vec!["w0"; 10];
        let out = random_insertion(&sent(&ten), &lexicon, &stop, 0.1, &mut rng).unwrap();
        assert_eq!(out.sentence.len(), 11);
        let out = random_insertion(&sent(&["w0", "x", "y", "z"]), &lexicon, &stop, 0.1, &mut rng).unwrap();
        assert_eq!(out.sentence.len(), 5);
        let s = sent(&["x", "y"]);
        let out = random_insertion(&s, &lexicon, &stop, 0.1, &mut rng).unwrap();
        assert!(out.noop);
        assert_eq!(out.sentence, s);
    }

    #[test]
    fn rs_on_pair_swaps() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let out = random_swap(&sent(&["a", "b"]), 0.1, &mut rng).unwrap();
        assert_eq!(out.sentence.tokens(), ["b", "a"]);
        let one = sent(&["a"]);
        let out = random_swap(&one, 0.1, &mut rng).unwrap();
        assert!(out.noop);
    }

    #[test]
    fn rs_swap_count() {
        assert_eq!(op_count(0.1, 20), 2);
        assert_eq!(op_count(0.1, 4), 1);
        assert_eq!(op_count(0.1, 15), 2);
    }

    #[test]
    fn rd_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = sent(&["a", "b", "c"]);
        assert_eq!(random_deletion(&s, 0.0, &mut rng).unwrap().sentence, s);
        // p close to 1 deletes everything, keep-one guard applies
        let out = random_deletion(&sent(&["a"]), 0.999_999, &mut rng).unwrap();
        assert_eq!(out.sentence.tokens(), ["a"]);
        assert!(random_deletion(&s, 1.0, &mut rng).is_err());
    }

    #[test]
    fn rates_are_validated() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        assert!(random_swap(&sent(&["a", "b"]), 0.0, &mut rng).is_err());
        assert!(random_swap(&sent(&["a", "b"]), 1.5, &mut rng).is_err());
    }

    #[test]
    fn opset_labels_are_dense_and_canonical() {
        let set: OpSet = "RD+SR".parse().unwrap();
        assert_eq!(set.ops(), [AugOp::SR, AugOp::RD]);
        assert_eq!(set.label_of(AugOp::RD), Some(1));
        assert_eq!(set.to_string(), "SR+RD");
        let set: OpSet = "SR,RD,RI".parse().unwrap();
        assert_eq!(set.ops(), [AugOp::SR, AugOp::RI, AugOp::RD]);
        assert_eq!(OpSet::all().label_of(AugOp::RD), Some(3));
        assert!("".parse::<OpSet>().is_err());
        assert!("SR+XX".parse::<OpSet>().is_err());
    }

    #[test]
    fn satp_forced_swap() {
        let lexicon = SynonymLexicon::default();
        let stop = StopwordSet::default();
        let ctx = AugmentContext { lexicon: &lexicon, stopwords: &stop, rate: 0.1, p_delete: 0.1 };
        let ops = OpSet::new([AugOp::RS]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let inst = make_satp_instance(&sent(&["x", "y"]), &ops, &ctx, &mut rng).unwrap().unwrap();
        assert_eq!(inst.sentence.tokens(), ["y", "x"]);
        assert_eq!(inst.op_label, 0);
    }

    #[test]
    fn satp_resamples_past_noops() {
        let lexicon = SynonymLexicon::default();
        let stop = StopwordSet::default();
        let ctx = AugmentContext { lexicon: &lexicon, stopwords: &stop, rate: 0.1, p_delete: 0.1 };
        let ops = "SR+RI+RS".parse::<OpSet>().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let inst = make_satp_instance(&sent(&["x", "y", "z"]), &ops, &ctx, &mut rng)
                .unwrap()
                .unwrap();
            assert_eq!(inst.op, AugOp::RS);
            assert_eq!(inst.op_label, 2);
        }
        let ops = "SR+RI".parse::<OpSet>().unwrap();
        assert!(make_satp_instance(&sent(&["x"]), &ops, &ctx, &mut rng).unwrap().is_none());
    }

    #[test]
    fn subset_labels_stay_in_range() {
        let lexicon = lex(&[&["good", "fine"]]);
        let stop = StopwordSet::default();
        let ctx = AugmentContext { lexicon: &lexicon, stopwords: &stop, rate: 0.1, p_delete: 0.1 };
        let ops: OpSet = "SR+RD".parse().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let inst = make_satp_instance(&sent(&["good", "movie", "tonight"]), &ops, &ctx, &mut rng)
                .unwrap()
                .unwrap();
            assert!(inst.op_label < 2);
        }
    }
}
