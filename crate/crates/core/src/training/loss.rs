use rand::RngCore;

use crate::encoder::Model;
use crate::error::{Error, Result};
use crate::masking::MaskedInstance;
use crate::numerics::{Real, Tape, Var};
use crate::text::TokenId;

/// Encoded sequence with a class (or augmentation-type) label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledIds {
    pub ids: Vec<TokenId>,
    pub label: usize,
}

/// Corrupted copies of a classification batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SslBatch {
    Mtp(Vec<MaskedInstance>),
    Satp(Vec<LabeledIds>),
}

impl SslBatch {
    pub fn len(&self) -> usize {
        match self {
            SslBatch::Mtp(b) => b.len(),
            SslBatch::Satp(b) => b.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JointLoss {
    pub total: Var,
    pub lc: Var,
    /// Absent when lambda is 0 or the SSL batch was empty.
    pub lp: Option<Var>,
}

fn sum_vars<T: Real>(tape: &mut Tape<'_, T>, vars: &[Var]) -> Result<Var> {
    let (&first, rest) = vars.split_first().ok_or_else(|| Error::invalid("nothing to sum"))?;
    rest.iter().try_fold(first, |acc, &v| tape.add(acc, v))
}

fn reborrow<'a>(rng: &'a mut Option<&mut dyn RngCore>) -> Option<&'a mut dyn RngCore> {
    rng.as_mut().map(|r| &mut **r as &mut dyn RngCore)
}

type Head<T> = fn(&Model<T>, &mut Tape<'_, T>, Var) -> Result<Var>;

fn pooled_loss<T: Real>(
    model: &Model<T>,
    tape: &mut Tape<'_, T>,
    batch: &[LabeledIds],
    head: Head<T>,
    mut dropout: Option<&mut dyn RngCore>,
) -> Result<Var> {
    let mut losses = Vec::with_capacity(batch.len());
    for ex in batch {
        let h = model.encode(tape, &ex.ids, reborrow(&mut dropout))?;
        let logits = head(model, tape, h)?;
        losses.push(tape.cross_entropy(logits, &[ex.label])?);
    }
    let total = sum_vars(tape, &losses)?;
    tape.scale(total, T::lit(1.0 / batch.len() as f64))
}

/// Mean cross-entropy of the classification head over the batch.
pub fn classification_loss<T: Real>(
    model: &Model<T>,
    tape: &mut Tape<'_, T>,
    batch: &[LabeledIds],
    dropout: Option<&mut dyn RngCore>,
) -> Result<Var> {
    if batch.is_empty() {
        return Err(Error::invalid("empty classification batch"));
    }
    pooled_loss(model, tape, batch, Model::classification_logits, dropout)
}

/// Mean cross-entropy of the augmentation-type head. `None` for an empty
/// batch.
pub fn satp_loss<T: Real>(
    model: &Model<T>,
    tape: &mut Tape<'_, T>,
    batch: &[LabeledIds],
    dropout: Option<&mut dyn RngCore>,
) -> Result<Option<Var>> {
    if batch.is_empty() {
        log::warn!("SATP batch has no instances; skipping its loss");
        return Ok(None);
    }
    pooled_loss(model, tape, batch, Model::satp_logits, dropout).map(Some)
}

/// Mean cross-entropy over every masked position in the batch. `None` for
/// an empty batch.
pub fn mtp_loss<T: Real>(
    model: &Model<T>,
    tape: &mut Tape<'_, T>,
    batch: &[MaskedInstance],
    mut dropout: Option<&mut dyn RngCore>,
) -> Result<Option<Var>> {
    if batch.is_empty() {
        log::warn!("MTP batch has no masked instances; skipping its loss");
        return Ok(None);
    }
    let total: usize = batch.iter().map(|i| i.mask_positions.len()).sum();
    let mut parts = Vec::with_capacity(batch.len());
    for inst in batch {
        if inst.mask_positions.is_empty() {
            return Err(Error::invalid("masked instance without masked positions"));
        }
        let h = model.encode(tape, &inst.input_ids, reborrow(&mut dropout))?;
        let logits = model.mtp_logits(tape, h, &inst.mask_positions)?;
        let targets: Vec<usize> = inst.targets().into_iter().map(|t| t as usize).collect();
        let ce = tape.cross_entropy(logits, &targets)?;
        let weight = inst.mask_positions.len() as f64 / total as f64;
        parts.push(tape.scale(ce, T::lit(weight))?);
    }
    sum_vars(tape, &parts).map(Some)
}

/// `lc + lambda * lp`; with no `lp` the result is `lc` itself.
pub fn combine<T: Real>(tape: &mut Tape<'_, T>, lc: Var, lp: Option<Var>, lambda: f64) -> Result<Var> {
    match lp {
        Some(lp) => {
            let weighted = tape.scale(lp, T::lit(lambda))?;
            tape.add(lc, weighted)
        }
        None => Ok(lc),
    }
}

/// Classification loss plus `lambda` times the self-supervised loss of
/// `ssl`. At `lambda == 0` the SSL batch is never touched.
pub fn joint_loss<T: Real>(
    model: &Model<T>,
    tape: &mut Tape<'_, T>,
    batch: &[LabeledIds],
    ssl: Option<&SslBatch>,
    lambda: f64,
    mut dropout: Option<&mut dyn RngCore>,
) -> Result<JointLoss> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::invalid(format!("lambda must be >= 0, got {lambda}")));
    }
    let lc = classification_loss(model, tape, batch, reborrow(&mut dropout))?;
    let lp = match ssl {
        Some(ssl) if lambda > 0.0 => match ssl {
            SslBatch::Mtp(b) => mtp_loss(model, tape, b, dropout)?,
            SslBatch::Satp(b) => satp_loss(model, tape, b, dropout)?,
        },
        _ => None,
    };
    let total = combine(tape, lc, lp, lambda)?;
    Ok(JointLoss { total, lc, lp })
}
