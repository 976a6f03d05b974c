//! Config-driven experiments: data preparation, training runs, checkpoint
//! evaluation and lambda sweeps, each leaving its artifacts in a run
//! directory.
//!
//! A run directory holds `config.toml`, `history.jsonl`, `best.ckpt` and
//! `metrics.json`. Every file is replaced atomically.

mod config;
mod synthetic;

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use config::{EncoderSettings, ExperimentConfig, RunSettings};
pub use synthetic::{gen_synthetic, generate_splits, SyntheticConfig, SyntheticData, SyntheticTask};

use crate::encoder::{load_checkpoint, save_checkpoint, EncoderConfig, Model};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::masking::mask_tokens;
use crate::metrics::{train_test_gap, Gap, MetricKind, Metrics};
use crate::numerics::{grad_check, GradCheckOptions, GradCheckReport, Precision, Real, Tape, Var};
use crate::text::{
    format_corpus, load_corpus, load_lexicon, load_stopwords, LabeledExample, Sentence, StopwordSet, SynonymLexicon,
    Vocab, CLS,
};
use crate::training::{
    classification_loss, evaluate, joint_loss, mtp_loss, satp_loss, stream_rng, train, EncodedSplit, LabeledIds,
    RunHistory, SslBatch, Stream, TrainData,
};

pub const HISTORY_FILE: &str = "history.jsonl";
pub const CHECKPOINT_FILE: &str = "best.ckpt";
pub const METRICS_FILE: &str = "metrics.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const SWEEP_FILE: &str = "sweep_summary.json";

/// Random stream reserved for synthetic data, apart from the training
/// streams.
const DATA_STREAM: u64 = 16;

/// Loaded and encoded inputs of an experiment.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub vocab: Vocab,
    pub encoder: EncoderConfig,
    pub train: EncodedSplit,
    pub dev: EncodedSplit,
    pub test: Option<EncodedSplit>,
    pub lexicon: SynonymLexicon,
    pub stopwords: StopwordSet,
    pub num_classes: usize,
}

impl Prepared {
    pub fn data(&self) -> TrainData<'_> {
        TrainData {
            vocab: &self.vocab,
            train: &self.train,
            dev: &self.dev,
            test: self.test.as_ref(),
            lexicon: &self.lexicon,
            stopwords: &self.stopwords,
            num_classes: self.num_classes,
        }
    }

    pub fn split(&self, which: Split) -> Result<&EncodedSplit> {
        match which {
            Split::Train => Ok(&self.train),
            Split::Dev => Ok(&self.dev),
            Split::Test => self
                .test
                .as_ref()
                .ok_or_else(|| Error::config("no test split configured")),
        }
    }
}

/// Raw splits and lexicon before encoding.
#[derive(Debug, Clone)]
pub struct RawData {
    pub train: Vec<LabeledExample>,
    pub dev: Vec<LabeledExample>,
    pub test: Option<Vec<LabeledExample>>,
    pub lexicon: SynonymLexicon,
}

/// Synthetic data depends only on the synthetic settings and the seed.
pub fn synthetic_data(cfg: &SyntheticConfig, seed: u64) -> Result<SyntheticData> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(DATA_STREAM);
    generate_splits(cfg, &mut rng)
}

pub fn load_raw(cfg: &ExperimentConfig) -> Result<RawData> {
    let r = &cfg.run;
    let lexicon_file = r.lexicon_path.as_ref().map(load_lexicon).transpose()?;
    match (&r.train_path, &r.dev_path) {
        (Some(train), Some(dev)) => Ok(RawData {
            train: load_corpus(train)?,
            dev: load_corpus(dev)?,
            test: r.test_path.as_ref().map(load_corpus).transpose()?,
            lexicon: lexicon_file.unwrap_or_default(),
        }),
        _ => {
            let d = synthetic_data(&cfg.synthetic, cfg.train.seed)?;
            Ok(RawData {
                train: d.train,
                dev: d.dev,
                test: (!d.test.is_empty()).then_some(d.test),
                lexicon: lexicon_file.unwrap_or(d.lexicon),
            })
        }
    }
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    cfg.validate()?;
    let raw = load_raw(cfg)?;
    let sentences: Vec<Sentence> = raw.train.iter().map(|e| e.sentence.clone()).collect();
    let vocab = Vocab::build(&sentences, cfg.run.min_freq)?;
    let encoder = cfg.encoder.resolve(vocab.len())?;
    let max_label = raw
        .train
        .iter()
        .chain(&raw.dev)
        .chain(raw.test.iter().flatten())
        .map(|e| e.label)
        .max()
        .unwrap_or(0);
    let num_classes = if cfg.uses_synthetic() {
        cfg.synthetic.num_classes
    } else {
        (max_label + 1).max(2)
    };
    let enc = |ex: &[LabeledExample]| EncodedSplit::encode(ex, &vocab, encoder.max_len);
    let stopwords = match &cfg.run.stopwords_path {
        Some(p) => load_stopwords(p)?,
        None => StopwordSet::english(),
    };
    Ok(Prepared {
        train: enc(&raw.train)?,
        dev: enc(&raw.dev)?,
        test: raw.test.as_deref().map(enc).transpose()?,
        lexicon: raw.lexicon,
        stopwords,
        num_classes,
        encoder,
        vocab,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split {other:?}"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

/// Contents of `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_name: String,
    pub regime: String,
    pub lambda: f64,
    pub seed: u64,
    pub precision: u32,
    pub vocab_size: usize,
    pub num_parameters: usize,
    pub best_epoch: usize,
    pub select_metric: MetricKind,
    pub train: Metrics,
    pub dev: Metrics,
    pub test: Option<Metrics>,
    /// Train minus test on `select_metric`, for the retained model.
    pub gap: Option<Gap>,
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn run_typed<T: Real>(cfg: &ExperimentConfig, dir: &Path) -> Result<RunSummary> {
    let prep = prepare(cfg)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_atomic(&dir.join(CONFIG_FILE), cfg.to_toml()?.as_bytes())?;
    let history_path = dir.join(HISTORY_FILE);
    let mut on_epoch = |h: &RunHistory| write_atomic(&history_path, h.to_jsonl()?.as_bytes());
    let out = train::<T>(&cfg.train, &prep.encoder, &prep.data(), &mut on_epoch)?;
    save_checkpoint(&out.model, dir.join(CHECKPOINT_FILE))?;

    let metric = cfg.train.select_metric;
    let gap = prep
        .test
        .as_ref()
        .map(|t| train_test_gap(&out.model, &prep.train, t, metric))
        .transpose()?;
    let summary = RunSummary {
        run_name: cfg.run.run_name.clone(),
        regime: cfg.train.regime.to_string(),
        lambda: cfg.train.lambda,
        seed: cfg.train.seed,
        precision: cfg.run.precision.bits(),
        vocab_size: prep.vocab.len(),
        num_parameters: out.model.num_parameters(),
        best_epoch: out.best_epoch,
        select_metric: metric,
        train: evaluate(&out.model, &prep.train)?,
        dev: out.best_dev,
        test: out.test,
        gap,
    };
    write_json(&dir.join(METRICS_FILE), &summary)?;
    Ok(summary)
}

/// Trains per `cfg` into `cfg.run_dir()`.
pub fn run(cfg: &ExperimentConfig) -> Result<RunSummary> {
    run_in(cfg, &cfg.run_dir())
}

pub fn run_in(cfg: &ExperimentConfig, dir: &Path) -> Result<RunSummary> {
    match cfg.run.precision {
        Precision::F32 => run_typed::<f32>(cfg, dir),
        Precision::F64 => run_typed::<f64>(cfg, dir),
    }
}

fn evaluate_typed<T: Real>(cfg: &ExperimentConfig, checkpoint: &Path, split: Split) -> Result<Metrics> {
    let prep = prepare(cfg)?;
    let model: Model<T> = load_checkpoint(checkpoint)?;
    if model.config().vocab_size != prep.vocab.len() {
        return Err(Error::Checkpoint {
            path: checkpoint.to_path_buf(),
            msg: format!(
                "model vocabulary has {} entries but the configured corpus yields {}",
                model.config().vocab_size,
                prep.vocab.len()
            ),
        });
    }
    if model.num_classes() != prep.num_classes {
        return Err(Error::Checkpoint {
            path: checkpoint.to_path_buf(),
            msg: format!("model has {} classes, data has {}", model.num_classes(), prep.num_classes),
        });
    }
    evaluate(&model, prep.split(split)?)
}

/// Scores a saved checkpoint on one split of the configured data.
pub fn evaluate_checkpoint(cfg: &ExperimentConfig, checkpoint: &Path, split: Split) -> Result<Metrics> {
    match cfg.run.precision {
        Precision::F32 => evaluate_typed::<f32>(cfg, checkpoint, split),
        Precision::F64 => evaluate_typed::<f64>(cfg, checkpoint, split),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub run_dir: PathBuf,
    pub dev: f64,
    pub gap: Option<Gap>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub metric: MetricKind,
    pub rows: Vec<SweepRow>,
}

/// Directory name of one sweep point, e.g. `lambda_0.1`.
pub fn lambda_dir_name(lambda: f64) -> String {
    format!("lambda_{lambda}")
}

/// One run per lambda under `cfg.run_dir()`, sharing the seed, then
/// `sweep_summary.json` beside them.
pub fn sweep(cfg: &ExperimentConfig, lambdas: &[f64]) -> Result<SweepSummary> {
    if lambdas.is_empty() {
        return Err(Error::config("lambda list is empty"));
    }
    let mut seen = BTreeSet::new();
    for &l in lambdas {
        if !(l.is_finite() && l >= 0.0) {
            return Err(Error::config(format!("lambda must be >= 0, got {l}")));
        }
        if !seen.insert(l.to_bits()) {
            return Err(Error::config(format!("duplicate lambda {l}")));
        }
    }
    let root = cfg.run_dir();
    let mut rows = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let mut point = cfg.clone();
        point.train.lambda = lambda;
        point.validate()?;
        let dir = root.join(lambda_dir_name(lambda));
        log::info!("sweep point lambda = {lambda} -> {}", dir.display());
        let s = run_in(&point, &dir)?;
        rows.push(SweepRow {
            lambda,
            run_dir: dir,
            dev: s.dev.get(s.select_metric),
            gap: s.gap,
        });
    }
    let summary = SweepSummary {
        metric: cfg.train.select_metric,
        rows,
    };
    write_json(&root.join(SWEEP_FILE), &summary)?;
    Ok(summary)
}

/// Paths written by [`write_synthetic`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneratedFiles {
    pub train: PathBuf,
    pub dev: PathBuf,
    pub test: Option<PathBuf>,
    pub lexicon: PathBuf,
}

/// Writes `train.tsv`, `dev.tsv`, `test.tsv` and `lexicon.txt` into `dir`.
pub fn write_synthetic(cfg: &SyntheticConfig, seed: u64, dir: &Path) -> Result<GeneratedFiles> {
    let data = synthetic_data(cfg, seed)?;
    let files = GeneratedFiles {
        train: dir.join("train.tsv"),
        dev: dir.join("dev.tsv"),
        test: (!data.test.is_empty()).then(|| dir.join("test.tsv")),
        lexicon: dir.join("lexicon.txt"),
    };
    write_atomic(&files.train, format_corpus(&data.train).as_bytes())?;
    write_atomic(&files.dev, format_corpus(&data.dev).as_bytes())?;
    if let Some(p) = &files.test {
        write_atomic(p, format_corpus(&data.test).as_bytes())?;
    }
    write_atomic(&files.lexicon, data.lexicon.to_text().as_bytes())?;
    Ok(files)
}

/// Gradient checks of every loss on a 2-layer, `d_model = 16` model with
/// all three heads, in 64-bit with dropout off.
pub fn gradcheck_suite(seed: u64, opts: &GradCheckOptions) -> Result<Vec<(String, GradCheckReport)>> {
    let config = EncoderConfig {
        num_layers: 2,
        num_heads: 2,
        d_model: 16,
        d_ff: 32,
        max_len: 12,
        vocab_size: 24,
        dropout: 0.0,
    };
    let mut init = stream_rng(seed, Stream::Init);
    let mut model = Model::<f64>::init(config, 3, 4, 0.5, &mut init)?;
    let mut data_rng = stream_rng(seed, Stream::SslData);

    let cls = vec![
        LabeledIds { ids: vec![CLS, 7, 9, 11, 5], label: 0 },
        LabeledIds { ids: vec![CLS, 12, 6, 20], label: 2 },
        LabeledIds { ids: vec![CLS, 8, 8, 23, 14, 10], label: 1 },
    ];
    let vocab = Vocab::from_words((5..24).map(|i| format!("t{i}")))?;
    let mut masked = Vec::new();
    for x in &cls {
        masked.extend(mask_tokens(&x.ids, 0.3, &vocab, &mut data_rng)?);
    }
    let augmented = vec![
        LabeledIds { ids: vec![CLS, 9, 7, 11, 5], label: 2 },
        LabeledIds { ids: vec![CLS, 12, 20], label: 3 },
        LabeledIds { ids: vec![CLS, 8, 13, 8, 23, 14, 10], label: 1 },
    ];
    let mtp = SslBatch::Mtp(masked.clone());
    let satp = SslBatch::Satp(augmented.clone());

    // encode() reads weights from the tape, so a snapshot supplies the layout
    let snapshot = model.clone();
    let m = &snapshot;
    let some = |v: Option<Var>| v.ok_or_else(|| Error::invalid("empty SSL batch"));
    type LossFn<'a> = Box<dyn Fn(&mut Tape<'_, f64>) -> Result<Var> + 'a>;
    let cases: Vec<(&str, LossFn<'_>)> = vec![
        ("classification", Box::new(|t| classification_loss(m, t, &cls, None))),
        ("mtp", Box::new(|t| some(mtp_loss(m, t, &masked, None)?))),
        ("satp", Box::new(|t| some(satp_loss(m, t, &augmented, None)?))),
        ("joint_mtp", Box::new(|t| Ok(joint_loss(m, t, &cls, Some(&mtp), 0.5, None)?.total))),
        ("joint_satp", Box::new(|t| Ok(joint_loss(m, t, &cls, Some(&satp), 0.5, None)?.total))),
    ];
    let mut probe_rng = stream_rng(seed, Stream::Order);
    let mut reports = Vec::with_capacity(cases.len());
    for (name, loss) in cases {
        let report = grad_check(model.params_mut(), |t| loss(t), opts, &mut probe_rng)?;
        reports.push((name.to_string(), report));
    }
    Ok(reports)
}

/// Raw corpus helper for the CLI `augment` and `mask` commands.
pub fn training_examples(cfg: &ExperimentConfig) -> Result<(Vec<LabeledExample>, SynonymLexicon)> {
    let raw = load_raw(cfg)?;
    Ok((raw.train, raw.lexicon))
}
