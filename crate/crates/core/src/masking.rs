//! Masked-token corruption for the masked-token-prediction task.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::text::{TokenId, Vocab, CLS, MASK, NUM_SPECIAL, PAD};

pub const MASK_TOKEN_PROB: f64 = 0.8;
pub const RANDOM_TOKEN_PROB: f64 = 0.1;

/// What happened to a selected position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Corruption {
    Mask,
    Random,
    Keep,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MaskedInstance {
    pub input_ids: Vec<TokenId>,
    /// Original id at selected positions, PAD elsewhere.
    pub target_ids: Vec<TokenId>,
    /// Selected positions in increasing order. Never 0 and never a PAD slot.
    pub mask_positions: Vec<usize>,
    /// Corruption branch per entry of `mask_positions`.
    pub corruption: Vec<Corruption>,
}

impl MaskedInstance {
    /// Targets at the selected positions, in position order.
    pub fn targets(&self) -> Vec<TokenId> {
        self.mask_positions.iter().map(|&p| self.target_ids[p]).collect()
    }

    /// Undoes the corruption.
    pub fn reconstruct(&self) -> Vec<TokenId> {
        let mut ids = self.input_ids.clone();
        for &p in &self.mask_positions {
            ids[p] = self.target_ids[p];
        }
        ids
    }
}

/// Selects each maskable position with probability `p_mask` (forcing one
/// selection when none is drawn) and corrupts it 80/10/10 into
/// `[MASK]`/random word/unchanged. Returns `None` when no position is
/// maskable.
pub fn mask_tokens<R: Rng + ?Sized>(
    ids: &[TokenId],
    p_mask: f64,
    vocab: &Vocab,
    rng: &mut R,
) -> Result<Option<MaskedInstance>> {
    if ids.first() != Some(&CLS) {
        return Err(Error::invalid("sequence must start with [CLS]"));
    }
    if !(p_mask > 0.0 && p_mask < 1.0) {
        return Err(Error::invalid(format!("p_mask must be in (0, 1), got {p_mask}")));
    }
    let maskable: Vec<usize> = (1..ids.len()).filter(|&p| ids[p] != PAD).collect();
    if maskable.is_empty() {
        return Ok(None);
    }
    let mut selected: Vec<usize> = maskable
        .iter()
        .copied()
        .filter(|_| rng.gen_bool(p_mask))
        .collect();
    if selected.is_empty() {
        selected.push(maskable[rng.gen_range(0..maskable.len())]);
    }

    let mut input_ids = ids.to_vec();
    let mut target_ids = vec![PAD; ids.len()];
    let mut corruption = Vec::with_capacity(selected.len());
    for &p in &selected {
        target_ids[p] = ids[p];
        let u: f64 = rng.gen();
        let branch = if u < MASK_TOKEN_PROB {
            input_ids[p] = MASK;
            Corruption::Mask
        } else if u < MASK_TOKEN_PROB + RANDOM_TOKEN_PROB {
            if vocab.num_words() > 0 {
                input_ids[p] = rng.gen_range(NUM_SPECIAL..vocab.len()) as TokenId;
            }
            Corruption::Random
        } else {
            Corruption::Keep
        };
        corruption.push(branch);
    }
    Ok(Some(MaskedInstance {
        input_ids,
        target_ids,
        mask_positions: selected,
        corruption,
    }))
}

/// Aggregate selection and branch counts over many instances.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MaskStats {
    pub sequences: usize,
    pub skipped: usize,
    pub maskable: usize,
    pub selected: usize,
    pub mask: usize,
    pub random: usize,
    pub keep: usize,
}

impl MaskStats {
    pub fn record(&mut self, ids: &[TokenId], inst: Option<&MaskedInstance>) {
        self.sequences += 1;
        let Some(inst) = inst else {
            self.skipped += 1;
            return;
        };
        self.maskable += ids.iter().skip(1).filter(|&&t| t != PAD).count();
        self.selected += inst.mask_positions.len();
        for c in &inst.corruption {
            match c {
                Corruption::Mask => self.mask += 1,
                Corruption::Random => self.random += 1,
                Corruption::Keep => self.keep += 1,
            }
        }
    }

    pub fn selected_fraction(&self) -> f64 {
        self.selected as f64 / self.maskable.max(1) as f64
    }

    /// Fractions of selected positions per branch: (mask, random, keep).
    pub fn branch_fractions(&self) -> (f64, f64, f64) {
        let n = self.selected.max(1) as f64;
        (self.mask as f64 / n, self.random as f64 / n, self.keep as f64 / n)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn vocab() -> Vocab {
        Vocab::from_words((0..20).map(|i| format!("w{i}"))).unwrap()
    }

    #[test]
    fn single_slot_is_forced() {
        let v = vocab();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            let inst = mask_tokens(&[CLS, 9], 0.15, &v, &mut rng).unwrap().unwrap();
            assert_eq!(inst.mask_positions, vec![1]);
            assert_eq!(inst.target_ids[1], 9);
            assert_eq!(inst.reconstruct(), vec![CLS, 9]);
        }
    }

    #[test]
    fn cls_only_is_skipped() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(mask_tokens(&[CLS], 0.15, &vocab(), &mut rng).unwrap().is_none());
    }

    #[test]
    fn rejects_bad_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(mask_tokens(&[7, 8], 0.15, &vocab(), &mut rng).is_err());
        assert!(mask_tokens(&[CLS, 8], 0.0, &vocab(), &mut rng).is_err());
        assert!(mask_tokens(&[CLS, 8], 1.0, &vocab(), &mut rng).is_err());
    }

    #[test]
    fn pad_and_cls_are_never_selected() {
        let v = vocab();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ids = [CLS, 7, PAD, 8, PAD, 9];
        for _ in 0..200 {
            let inst = mask_tokens(&ids, 0.5, &v, &mut rng).unwrap().unwrap();
            for &p in &inst.mask_positions {
                assert!(p != 0 && ids[p] != PAD);
            }
        }
    }

    #[test]
    fn random_branch_draws_ordinary_words() {
        let v = vocab();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ids: Vec<TokenId> = std::iter::once(CLS).chain((0..50).map(|_| 10)).collect();
        for _ in 0..100 {
            let inst = mask_tokens(&ids, 0.3, &v, &mut rng).unwrap().unwrap();
            for (&p, c) in inst.mask_positions.iter().zip(&inst.corruption) {
                if *c == Corruption::Random {
                    assert!(!Vocab::is_special(inst.input_ids[p]));
                }
            }
        }
    }
}
