use std::collections::HashSet;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sslreg::augment::{
    make_satp_instance, op_count, random_deletion, random_insertion, random_swap, synonym_replacement,
    AugmentContext, OpSet,
};
use sslreg::masking::mask_tokens;
use sslreg::text::{Sentence, StopwordSet, SynonymLexicon, TokenId, Vocab, CLS, PAD};

const WORDS: [&str; 12] = [
    "the", "of", "good", "fine", "nice", "bad", "poor", "film", "movie", "plot", "cast", "scene",
];

fn lexicon() -> SynonymLexicon {
    let g = |ws: &[&str]| ws.iter().map(|w| w.to_string()).collect::<Vec<_>>();
    SynonymLexicon::new(vec![g(&["good", "fine", "nice"]), g(&["bad", "poor"]), g(&["film", "movie"])]).unwrap()
}

fn stopwords() -> StopwordSet {
    StopwordSet::new(["the", "of"])
}

fn sentence() -> impl Strategy<Value = Sentence> {
    prop::collection::vec(prop::sample::select(WORDS.to_vec()), 1..40)
        .prop_map(|ws| Sentence::new(ws.into_iter().map(String::from).collect()).unwrap())
}

fn sorted(s: &Sentence) -> Vec<String> {
    let mut t = s.tokens().to_vec();
    t.sort();
    t
}

proptest! {
    #[test]
    fn vocab_ids_round_trip(corpus in prop::collection::vec(sentence(), 1..8), min_freq in 1usize..3) {
        match Vocab::build(&corpus, min_freq) {
            Ok(v) => {
                for w in v.words() {
                    prop_assert_eq!(v.token(v.id(w)), Some(w.as_str()));
                }
            }
            // every word may fall below min_freq
            Err(_) => prop_assert!(min_freq > 1),
        }
    }

    #[test]
    fn encode_is_bounded_and_starts_with_cls(s in sentence(), max_len in 2usize..50) {
        let v = Vocab::build(std::slice::from_ref(&s), 1).unwrap();
        let ids = v.encode(&s, max_len).unwrap();
        prop_assert!(ids.len() <= max_len);
        prop_assert_eq!(ids.len(), (s.len() + 1).min(max_len));
        prop_assert_eq!(ids[0], CLS);
        prop_assert_eq!(&ids, &v.encode(&s, max_len).unwrap());
    }

    #[test]
    fn synonyms_are_symmetric_and_exclude_self(w in prop::sample::select(WORDS.to_vec())) {
        let lex = lexicon();
        let syns = lex.synonyms_of(w);
        prop_assert!(!syns.contains(&w));
        for s in syns {
            prop_assert!(lex.synonyms_of(s).contains(&w));
        }
    }

    #[test]
    fn synonym_replacement_keeps_length_and_replaces_whole_words(s in sentence(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = synonym_replacement(&s, &lexicon(), &stopwords(), 0.1, &mut rng).unwrap();
        prop_assert_eq!(out.sentence.len(), s.len());
        // a word type is either kept everywhere or replaced everywhere
        let mut changed: HashSet<&str> = HashSet::new();
        for (a, b) in s.tokens().iter().zip(out.sentence.tokens()) {
            if a != b {
                changed.insert(a);
                prop_assert!(lexicon().synonyms_of(a).contains(&b.as_str()));
            }
        }
        for (a, b) in s.tokens().iter().zip(out.sentence.tokens()) {
            if changed.contains(a.as_str()) {
                prop_assert_ne!(a, b);
            }
        }
        prop_assert_eq!(out.noop, changed.is_empty());
    }

    #[test]
    fn random_insertion_adds_exactly_k(s in sentence(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = random_insertion(&s, &lexicon(), &stopwords(), 0.1, &mut rng).unwrap();
        if out.noop {
            prop_assert_eq!(&out.sentence, &s);
        } else {
            prop_assert_eq!(out.sentence.len(), s.len() + op_count(0.1, s.len()));
        }
    }

    #[test]
    fn random_swap_permutes(s in sentence(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = random_swap(&s, 0.1, &mut rng).unwrap();
        prop_assert_eq!(sorted(&out.sentence), sorted(&s));
        prop_assert_eq!(out.noop, s.len() < 2);
    }

    #[test]
    fn random_deletion_never_empties(s in sentence(), p in 0.0f64..0.999, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = random_deletion(&s, p, &mut rng).unwrap();
        prop_assert!(!out.sentence.is_empty() && out.sentence.len() <= s.len());
    }

    #[test]
    fn augmentation_replays_under_a_seed(s in sentence(), seed in any::<u64>()) {
        let lex = lexicon();
        let stop = stopwords();
        let ctx = AugmentContext { lexicon: &lex, stopwords: &stop, rate: 0.1, p_delete: 0.1 };
        let ops = OpSet::all();
        let a = make_satp_instance(&s, &ops, &ctx, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let b = make_satp_instance(&s, &ops, &ctx, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(&a, &b);
        if let Some(inst) = a {
            prop_assert!(inst.op_label < ops.len());
        }
    }

    #[test]
    fn masking_is_reconstructable(
        words in prop::collection::vec(5u32..40, 1..60),
        pads in 0usize..5,
        p in 0.01f64..0.99,
        seed in any::<u64>(),
    ) {
        let vocab = Vocab::from_words((0..35).map(|i| format!("w{i}"))).unwrap();
        let mut ids: Vec<TokenId> = std::iter::once(CLS).chain(words).collect();
        ids.extend(std::iter::repeat_n(PAD, pads));
        let inst = mask_tokens(&ids, p, &vocab, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap().unwrap();
        prop_assert_eq!(inst.reconstruct(), ids.clone());
        prop_assert!(!inst.mask_positions.is_empty());
        prop_assert!(inst.mask_positions.windows(2).all(|w| w[0] < w[1]));
        for (p, (&orig, &input)) in ids.iter().zip(&inst.input_ids).enumerate() {
            if inst.mask_positions.contains(&p) {
                prop_assert!(p != 0 && orig != PAD);
                prop_assert_eq!(inst.target_ids[p], orig);
            } else {
                prop_assert_eq!(input, orig);
            }
        }
        let again = mask_tokens(&ids, p, &vocab, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap().unwrap();
        prop_assert_eq!(inst, again);
    }
}
