use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::augment::{make_satp_instance, AugmentContext};
use crate::encoder::{EncoderConfig, Model};
use crate::error::{Error, Result};
use crate::masking::{mask_tokens, MaskedInstance};
use crate::metrics::{ConfusionCounts, Metrics};
use crate::numerics::Real;
use crate::text::{LabeledExample, Sentence, StopwordSet, SynonymLexicon, TokenId, Vocab};

use super::config::{SslTask, TrainConfig};
use super::history::{EpochRecord, Phase, RunHistory};
use super::loss::{joint_loss, mtp_loss, LabeledIds, SslBatch};
use super::optim::{adamw_step, lr_at, OptimizerState};

/// Environment variable capping evaluation threads.
pub const THREADS_ENV: &str = "SSLREG_THREADS";

/// Independent random streams derived from one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init = 0,
    Order = 1,
    Dropout = 2,
    SslData = 3,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// A labeled split with its token ids.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSplit {
    pub sentences: Vec<Sentence>,
    pub ids: Vec<Vec<TokenId>>,
    pub labels: Vec<usize>,
}

impl EncodedSplit {
    pub fn encode(examples: &[LabeledExample], vocab: &Vocab, max_len: usize) -> Result<Self> {
        let ids = examples
            .iter()
            .map(|e| vocab.encode(&e.sentence, max_len))
            .collect::<Result<_>>()?;
        Ok(Self {
            sentences: examples.iter().map(|e| e.sentence.clone()).collect(),
            ids,
            labels: examples.iter().map(|e| e.label).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Everything `train` reads besides the configs.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub vocab: &'a Vocab,
    pub train: &'a EncodedSplit,
    pub dev: &'a EncodedSplit,
    pub test: Option<&'a EncodedSplit>,
    pub lexicon: &'a SynonymLexicon,
    pub stopwords: &'a StopwordSet,
    pub num_classes: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutput<T: Real> {
    /// Weights from the epoch with the best dev score.
    pub model: Model<T>,
    pub history: RunHistory,
    pub best_epoch: usize,
    pub best_dev: Metrics,
    /// Test metrics of `model`, when a test split was given.
    pub test: Option<Metrics>,
}

fn eval_pool() -> &'static rayon::ThreadPool {
    static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        let threads = match std::env::var(THREADS_ENV) {
            Ok(v) => v.trim().parse::<usize>().unwrap_or_else(|_| {
                log::warn!("ignoring {THREADS_ENV}={v:?}: not a thread count");
                0
            }),
            Err(_) => 0,
        };
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("evaluation thread pool")
    })
}

/// Predicted class for every sequence, in input order.
pub fn predict_all<T: Real>(model: &Model<T>, ids: &[Vec<TokenId>]) -> Result<Vec<usize>> {
    eval_pool().install(|| ids.par_iter().map(|x| model.predict(x)).collect())
}

pub fn evaluate<T: Real>(model: &Model<T>, split: &EncodedSplit) -> Result<Metrics> {
    let pred = predict_all(model, &split.ids)?;
    Ok(ConfusionCounts::from_predictions(&split.labels, &pred, model.num_classes())?.summary())
}

enum Objective {
    Mtp,
    Joint { task: Option<SslTask>, lambda: f64 },
}

struct Trainer<'a> {
    cfg: &'a TrainConfig,
    data: TrainData<'a>,
    max_len: usize,
    order_rng: ChaCha8Rng,
    dropout_rng: ChaCha8Rng,
    ssl_rng: ChaCha8Rng,
}

impl Trainer<'_> {
    fn masked(&mut self, idx: &[usize]) -> Result<Vec<MaskedInstance>> {
        let mut out = Vec::with_capacity(idx.len());
        for &i in idx {
            match mask_tokens(&self.data.train.ids[i], self.cfg.p_mask, self.data.vocab, &mut self.ssl_rng)? {
                Some(m) => out.push(m),
                None => log::debug!("example {i} has no maskable token"),
            }
        }
        Ok(out)
    }

    fn augmented(&mut self, idx: &[usize]) -> Result<Vec<LabeledIds>> {
        let ctx = AugmentContext {
            lexicon: self.data.lexicon,
            stopwords: self.data.stopwords,
            rate: self.cfg.aug_rate,
            p_delete: self.cfg.p_delete,
        };
        let mut out = Vec::with_capacity(idx.len());
        for &i in idx {
            let s = &self.data.train.sentences[i];
            match make_satp_instance(s, &self.cfg.active_ops, &ctx, &mut self.ssl_rng)? {
                Some(inst) => out.push(LabeledIds {
                    ids: self.data.vocab.encode(&inst.sentence, self.max_len)?,
                    label: inst.op_label,
                }),
                None => log::debug!("no augmentation applies to example {i}"),
            }
        }
        Ok(out)
    }

    /// Forward and backward on one micro-batch, adding `scale` times the
    /// gradients into the parameter buffers. Returns the (Lc, Lp) values.
    fn micro_step<T: Real>(
        &mut self,
        model: &mut Model<T>,
        idx: &[usize],
        objective: &Objective,
        scale: f64,
    ) -> Result<(Option<f64>, Option<f64>)> {
        let (grads, lc, lp) = match *objective {
            Objective::Mtp => {
                let batch = self.masked(idx)?;
                let mut tape = model.tape();
                let Some(lp) = mtp_loss(model, &mut tape, &batch, Some(&mut self.dropout_rng as &mut dyn RngCore))?
                else {
                    return Ok((None, None));
                };
                let value = tape.scalar(lp).to_f64_lossy();
                (tape.backward(lp)?, None, Some(value))
            }
            Objective::Joint { task, lambda } => {
                let batch: Vec<LabeledIds> = idx
                    .iter()
                    .map(|&i| LabeledIds {
                        ids: self.data.train.ids[i].clone(),
                        label: self.data.train.labels[i],
                    })
                    .collect();
                let ssl = match task {
                    Some(SslTask::Mtp) if lambda > 0.0 => Some(SslBatch::Mtp(self.masked(idx)?)),
                    Some(SslTask::Satp) if lambda > 0.0 => Some(SslBatch::Satp(self.augmented(idx)?)),
                    _ => None,
                };
                let mut tape = model.tape();
                let loss = joint_loss(
                    model,
                    &mut tape,
                    &batch,
                    ssl.as_ref(),
                    lambda,
                    Some(&mut self.dropout_rng as &mut dyn RngCore),
                )?;
                let lc = tape.scalar(loss.lc).to_f64_lossy();
                let lp = loss.lp.map(|v| tape.scalar(v).to_f64_lossy());
                (tape.backward(loss.total)?, Some(lc), lp)
            }
        };
        model.params_mut().accumulate(&grads, T::lit(scale));
        Ok((lc, lp))
    }

    /// Runs `epochs` epochs with a fresh optimizer and schedule.
    fn run_phase<T: Real>(
        &mut self,
        model: &mut Model<T>,
        phase: Phase,
        epochs: usize,
        lr_max: f64,
        objective: Objective,
        state: &mut PhaseState<'_, T>,
    ) -> Result<()> {
        let n = self.data.train.len();
        let micro_per_epoch = n.div_ceil(self.cfg.batch_size);
        let steps_per_epoch = micro_per_epoch.div_ceil(self.cfg.grad_accum_steps);
        let total_steps = steps_per_epoch * epochs;
        let adamw = self.cfg.adamw();
        let mut opt = OptimizerState::new(model.params());
        let mut step = 0;
        for epoch in 1..=epochs {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut self.order_rng);
            let micro: Vec<&[usize]> = order.chunks(self.cfg.batch_size).collect();
            let (mut sum_c, mut n_c, mut sum_p, mut n_p) = (0.0, 0usize, 0.0, 0usize);
            let mut lr = 0.0;
            for group in micro.chunks(self.cfg.grad_accum_steps) {
                model.params_mut().zero_grad();
                let scale = 1.0 / group.len() as f64;
                for mb in group {
                    let (lc, lp) = self.micro_step(model, mb, &objective, scale)?;
                    if let Some(v) = lc {
                        sum_c += v;
                        n_c += 1;
                    }
                    if let Some(v) = lp {
                        sum_p += v;
                        n_p += 1;
                    }
                }
                lr = lr_at(step, total_steps, self.cfg.warmup_proportion, lr_max);
                adamw_step(model.params_mut(), &mut opt, lr, &adamw)?;
                step += 1;
            }
            model.params_mut().zero_grad();

            let mean = |s: f64, k: usize| (k > 0).then(|| s / k as f64);
            let mut record = EpochRecord {
                phase,
                epoch,
                lr,
                loss_c: mean(sum_c, n_c),
                loss_p: mean(sum_p, n_p),
                lambda: None,
                train: None,
                dev: None,
                test: None,
            };
            if let Objective::Joint { lambda, .. } = objective {
                record.lambda = Some(lambda);
                if self.cfg.eval_train_each_epoch {
                    record.train = Some(evaluate(model, self.data.train)?);
                }
                let dev = evaluate(model, self.data.dev)?;
                record.dev = Some(dev);
                if self.cfg.eval_test_each_epoch {
                    if let Some(test) = self.data.test {
                        record.test = Some(evaluate(model, test)?);
                    }
                }
                let score = dev.get(self.cfg.select_metric);
                if state.best.as_ref().is_none_or(|b| score > b.score) {
                    state.best = Some(Best {
                        model: model.clone(),
                        epoch,
                        dev,
                        score,
                    });
                }
            }
            log::info!(
                "{phase:?} epoch {epoch}/{epochs}: loss_c {:?} loss_p {:?} dev {:?}",
                record.loss_c,
                record.loss_p,
                record.dev.map(|m| m.get(self.cfg.select_metric))
            );
            state.history.push(record);
            (state.on_epoch)(&state.history)?;
        }
        Ok(())
    }
}

struct Best<T: Real> {
    model: Model<T>,
    epoch: usize,
    dev: Metrics,
    score: f64,
}

struct PhaseState<'f, T: Real> {
    history: RunHistory,
    best: Option<Best<T>>,
    on_epoch: &'f mut dyn FnMut(&RunHistory) -> Result<()>,
}

fn check_split(name: &str, split: &EncodedSplit, num_classes: usize) -> Result<()> {
    if split.is_empty() {
        return Err(Error::invalid(format!("{name} split is empty")));
    }
    if split.labels.len() != split.ids.len() || split.sentences.len() != split.ids.len() {
        return Err(Error::invalid(format!("{name} split has ragged columns")));
    }
    if let Some(&bad) = split.labels.iter().find(|&&l| l >= num_classes) {
        return Err(Error::invalid(format!(
            "{name} split has label {bad} but only {num_classes} classes"
        )));
    }
    Ok(())
}

/// Trains a fresh model under `cfg.regime`. `on_epoch` sees the history
/// after every completed epoch.
pub fn train<T: Real>(
    cfg: &TrainConfig,
    encoder: &EncoderConfig,
    data: &TrainData<'_>,
    on_epoch: &mut dyn FnMut(&RunHistory) -> Result<()>,
) -> Result<TrainOutput<T>> {
    cfg.validate()?;
    encoder.validate()?;
    if encoder.vocab_size != data.vocab.len() {
        return Err(Error::config(format!(
            "vocab_size {} does not match vocabulary of {} entries",
            encoder.vocab_size,
            data.vocab.len()
        )));
    }
    check_split("train", data.train, data.num_classes)?;
    check_split("dev", data.dev, data.num_classes)?;
    if let Some(test) = data.test {
        check_split("test", test, data.num_classes)?;
    }

    let mut init_rng = stream_rng(cfg.seed, Stream::Init);
    let mut model = Model::<T>::init(
        encoder.clone(),
        data.num_classes,
        cfg.active_ops.len(),
        cfg.init_std,
        &mut init_rng,
    )?;
    let mut trainer = Trainer {
        cfg,
        data: *data,
        max_len: encoder.max_len,
        order_rng: stream_rng(cfg.seed, Stream::Order),
        dropout_rng: stream_rng(cfg.seed, Stream::Dropout),
        ssl_rng: stream_rng(cfg.seed, Stream::SslData),
    };
    let mut state = PhaseState {
        history: RunHistory::new(),
        best: None,
        on_epoch,
    };

    if cfg.regime.pretrains() {
        let lr = cfg.tapt_lr_max.unwrap_or(cfg.lr_max);
        trainer.run_phase(&mut model, Phase::Pretrain, cfg.tapt_epochs, lr, Objective::Mtp, &mut state)?;
        model.reinit_heads(cfg.init_std, &mut init_rng);
    }
    let objective = Objective::Joint {
        task: cfg.regime.joint_task(),
        lambda: cfg.lambda,
    };
    trainer.run_phase(&mut model, Phase::Finetune, cfg.epochs, cfg.lr_max, objective, &mut state)?;

    let best = state.best.expect("fine-tuning runs at least one epoch");
    let test = data.test.map(|t| evaluate(&best.model, t)).transpose()?;
    Ok(TrainOutput {
        model: best.model,
        history: state.history,
        best_epoch: best.epoch,
        best_dev: best.dev,
        test,
    })
}
