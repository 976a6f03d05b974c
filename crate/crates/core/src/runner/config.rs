use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::synthetic::SyntheticConfig;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::numerics::Precision;
use crate::text::NUM_SPECIAL;
use crate::training::TrainConfig;

/// Where data comes from and where results go.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSettings {
    pub run_name: String,
    pub out_dir: PathBuf,
    /// Corpus files; when `train_path` is absent the synthetic task is used.
    pub train_path: Option<PathBuf>,
    pub dev_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    pub lexicon_path: Option<PathBuf>,
    /// Defaults to the built-in English list.
    pub stopwords_path: Option<PathBuf>,
    pub min_freq: usize,
    pub precision: Precision,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            run_name: "run".into(),
            out_dir: PathBuf::from("out"),
            train_path: None,
            dev_path: None,
            test_path: None,
            lexicon_path: None,
            stopwords_path: None,
            min_freq: 1,
            precision: Precision::F32,
        }
    }
}

/// Encoder shape; the vocabulary size comes from the data unless pinned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSettings {
    pub num_layers: usize,
    pub num_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub dropout: f64,
    pub vocab_size: Option<usize>,
}

impl Default for EncoderSettings {
    fn default() -> Self {
        let e = EncoderConfig::default();
        Self {
            num_layers: e.num_layers,
            num_heads: e.num_heads,
            d_model: e.d_model,
            d_ff: e.d_ff,
            max_len: e.max_len,
            dropout: e.dropout,
            vocab_size: None,
        }
    }
}

impl EncoderSettings {
    pub fn resolve(&self, vocab_len: usize) -> Result<EncoderConfig> {
        if let Some(v) = self.vocab_size {
            if v != vocab_len {
                return Err(Error::config(format!(
                    "vocab_size is pinned to {v} but the training corpus yields {vocab_len}"
                )));
            }
        }
        let cfg = EncoderConfig {
            num_layers: self.num_layers,
            num_heads: self.num_heads,
            d_model: self.d_model,
            d_ff: self.d_ff,
            max_len: self.max_len,
            vocab_size: vocab_len,
            dropout: self.dropout,
        };
        cfg.validate().map_err(|e| Error::config(e.to_string()))?;
        Ok(cfg)
    }
}

const RUN_KEYS: &[&str] = &[
    "run_name",
    "out_dir",
    "train_path",
    "dev_path",
    "test_path",
    "lexicon_path",
    "stopwords_path",
    "min_freq",
    "precision",
];

const ENCODER_KEYS: &[&str] = &["num_layers", "num_heads", "d_model", "d_ff", "max_len", "dropout", "vocab_size"];

const TRAIN_KEYS: &[&str] = &[
    "regime",
    "lambda",
    "lr_max",
    "warmup_proportion",
    "weight_decay",
    "beta1",
    "beta2",
    "adam_eps",
    "epochs",
    "batch_size",
    "grad_accum_steps",
    "seed",
    "p_mask",
    "aug_rate",
    "p_delete",
    "active_ops",
    "tapt_epochs",
    "tapt_lr_max",
    "init_std",
    "select_metric",
    "eval_train_each_epoch",
    "eval_test_each_epoch",
];

/// Synthetic-task keys carry a `synthetic_` prefix in the flat file.
const SYNTHETIC_PREFIX: &str = "synthetic_";

const SYNTHETIC_KEYS: &[&str] = &[
    "num_classes",
    "vocab_size",
    "signature_words",
    "noise",
    "signature_rate",
    "min_words",
    "max_words",
    "synset_size",
    "topic_rate",
    "num_train",
    "num_dev",
    "num_test",
];

/// A complete experiment, read from one flat TOML table.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentConfig {
    pub run: RunSettings,
    pub encoder: EncoderSettings,
    pub train: TrainConfig,
    pub synthetic: SyntheticConfig,
}

fn from_table<T: DeserializeOwned>(table: toml::Table, group: &str) -> Result<T> {
    toml::Value::Table(table)
        .try_into()
        .map_err(|e| Error::config(format!("{group} settings: {e}")))
}

fn to_table<T: Serialize>(value: &T) -> Result<toml::Table> {
    toml::Table::try_from(value).map_err(|e| Error::config(e.to_string()))
}

impl ExperimentConfig {
    /// Parses and validates. Unknown keys are an error.
    pub fn from_toml(text: &str) -> Result<Self> {
        let table: toml::Table = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        let mut run = toml::Table::new();
        let mut encoder = toml::Table::new();
        let mut train = toml::Table::new();
        let mut synthetic = toml::Table::new();
        for (key, value) in table {
            if RUN_KEYS.contains(&key.as_str()) {
                run.insert(key, value);
            } else if ENCODER_KEYS.contains(&key.as_str()) {
                encoder.insert(key, value);
            } else if TRAIN_KEYS.contains(&key.as_str()) {
                train.insert(key, value);
            } else if let Some(k) = key.strip_prefix(SYNTHETIC_PREFIX).filter(|k| SYNTHETIC_KEYS.contains(k)) {
                synthetic.insert(k.to_string(), value);
            } else {
                return Err(Error::config(format!("unknown key `{key}`")));
            }
        }
        let cfg = Self {
            run: from_table(run, "run")?,
            encoder: from_table(encoder, "encoder")?,
            train: from_table(train, "training")?,
            synthetic: from_table(synthetic, "synthetic")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Flat TOML with every key, suitable for `from_toml`.
    pub fn to_toml(&self) -> Result<String> {
        let mut out = to_table(&self.run)?;
        out.extend(to_table(&self.encoder)?);
        out.extend(to_table(&self.train)?);
        for (k, v) in to_table(&self.synthetic)? {
            out.insert(format!("{SYNTHETIC_PREFIX}{k}"), v);
        }
        toml::to_string(&out).map_err(|e| Error::config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.run;
        if r.run_name.is_empty() || r.run_name.contains(['/', '\\']) || r.run_name == "." || r.run_name == ".." {
            return Err(Error::config(format!("run_name {:?} is not a plain directory name", r.run_name)));
        }
        if r.min_freq == 0 {
            return Err(Error::config("min_freq must be >= 1"));
        }
        if r.train_path.is_some() != r.dev_path.is_some() {
            return Err(Error::config("train_path and dev_path must be given together"));
        }
        if r.train_path.is_none() {
            if r.test_path.is_some() {
                return Err(Error::config("test_path requires train_path and dev_path"));
            }
            self.synthetic.validate()?;
        }
        let vocab = self.encoder.vocab_size.unwrap_or(NUM_SPECIAL + 1);
        if vocab <= NUM_SPECIAL {
            return Err(Error::config(format!("vocab_size {vocab} leaves no room for words")));
        }
        self.encoder.resolve(vocab)?;
        self.train.validate()
    }

    pub fn uses_synthetic(&self) -> bool {
        self.run.train_path.is_none()
    }

    pub fn run_dir(&self) -> PathBuf {
        self.run.out_dir.join(&self.run.run_name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::Regime;

    #[test]
    fn key_lists_match_serde_fields() {
        let run = RunSettings {
            train_path: Some("a".into()),
            dev_path: Some("b".into()),
            test_path: Some("c".into()),
            lexicon_path: Some("d".into()),
            stopwords_path: Some("e".into()),
            ..RunSettings::default()
        };
        let encoder = EncoderSettings {
            vocab_size: Some(50),
            ..EncoderSettings::default()
        };
        let train = TrainConfig {
            tapt_lr_max: Some(1e-4),
            ..TrainConfig::default()
        };
        let keys = |t: toml::Table| {
            let mut k: Vec<String> = t.keys().cloned().collect();
            k.sort();
            k
        };
        let sorted = |s: &[&str]| {
            let mut k: Vec<String> = s.iter().map(|x| x.to_string()).collect();
            k.sort();
            k
        };
        assert_eq!(keys(to_table(&run).unwrap()), sorted(RUN_KEYS));
        assert_eq!(keys(to_table(&encoder).unwrap()), sorted(ENCODER_KEYS));
        assert_eq!(keys(to_table(&train).unwrap()), sorted(TRAIN_KEYS));
        assert_eq!(keys(to_table(&SyntheticConfig::default()).unwrap()), sorted(SYNTHETIC_KEYS));
    }

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(ExperimentConfig::from_toml("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn flat_keys_are_routed() {
        let cfg = ExperimentConfig::from_toml(
            r#"
            run_name = "cola"
            regime = "ssl_reg_satp"
            lambda = 0.4
            active_ops = "SR+RD"
            d_model = 32
            num_heads = 2
            precision = 64
            synthetic_noise = 0.1
            "#,
        )
        .unwrap();
        assert_eq!(cfg.run.run_name, "cola");
        assert_eq!(cfg.train.regime, Regime::SslRegSatp);
        assert_eq!(cfg.train.lambda, 0.4);
        assert_eq!(cfg.train.active_ops.to_string(), "SR+RD");
        assert_eq!(cfg.encoder.d_model, 32);
        assert_eq!(cfg.run.precision, Precision::F64);
        assert_eq!(cfg.synthetic.noise, 0.1);
        assert_eq!(cfg.run_dir(), Path::new("out/cola"));
    }

    #[test]
    fn round_trip_through_text() {
        let mut cfg = ExperimentConfig::default();
        cfg.run.train_path = Some("data/train.tsv".into());
        cfg.run.dev_path = Some("data/dev.tsv".into());
        cfg.train.tapt_lr_max = Some(5e-4);
        cfg.train.regime = Regime::TaptPlusSslReg;
        let text = cfg.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn errors_name_the_problem() {
        let err = |s: &str| ExperimentConfig::from_toml(s).unwrap_err().to_string();
        assert!(err("lamda = 0.1").contains("unknown key `lamda`"));
        assert!(err("synthetic_lambda = 0.1").contains("unknown key"));
        assert!(err("regime = \"tapt\"\nlambda = 0.1").contains("no self-supervised term"));
        assert!(err("precision = 16").contains("precision"));
        assert!(err("lambda = -1.0").contains("lambda"));
        assert!(err("epochs = \"ten\"").contains("training settings"));
        assert!(err("train_path = \"x.tsv\"").contains("dev_path"));
        assert!(err("run_name = \"../x\"").contains("run_name"));
        assert!(err("d_model = 30\nnum_heads = 4").contains("divisible"));
    }
}
