//! Losses, the joint objective, AdamW with a warmup/decay schedule, and
//! the training loop for every regime.
//!
//! Fine-tuning minimizes `Lc + lambda * Lp` where `Lc` is the mean
//! classification cross-entropy and `Lp` the self-supervised loss computed
//! on corrupted copies of the same batch. The TAPT regimes first run an
//! MTP-only phase, then re-draw the heads and fine-tune.

mod config;
mod history;
mod loss;
mod optim;
mod trainer;

pub use config::{AdamWConfig, Regime, SslTask, TrainConfig};
pub use history::{EpochRecord, Phase, RunHistory};
pub use loss::{classification_loss, combine, joint_loss, mtp_loss, satp_loss, JointLoss, LabeledIds, SslBatch};
pub use optim::{adamw_step, lr_at, warmup_steps, OptimizerState};
pub use trainer::{
    evaluate, predict_all, stream_rng, train, EncodedSplit, Stream, TrainData, TrainOutput, THREADS_ENV,
};
