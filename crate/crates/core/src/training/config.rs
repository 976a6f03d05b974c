use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::augment::OpSet;
use crate::error::{Error, Result};
use crate::metrics::MetricKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Unregularized,
    #[default]
    SslRegMtp,
    SslRegSatp,
    Tapt,
    TaptPlusSslReg,
}

/// Auxiliary self-supervised objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SslTask {
    Mtp,
    Satp,
}

impl Regime {
    pub const ALL: [Regime; 5] = [
        Regime::Unregularized,
        Regime::SslRegMtp,
        Regime::SslRegSatp,
        Regime::Tapt,
        Regime::TaptPlusSslReg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Regime::Unregularized => "unregularized",
            Regime::SslRegMtp => "ssl_reg_mtp",
            Regime::SslRegSatp => "ssl_reg_satp",
            Regime::Tapt => "tapt",
            Regime::TaptPlusSslReg => "tapt_plus_ssl_reg",
        }
    }

    /// Objective added to the classification loss during fine-tuning.
    pub fn joint_task(self) -> Option<SslTask> {
        match self {
            Regime::SslRegMtp | Regime::TaptPlusSslReg => Some(SslTask::Mtp),
            Regime::SslRegSatp => Some(SslTask::Satp),
            Regime::Unregularized | Regime::Tapt => None,
        }
    }

    /// Whether an MTP-only pretraining phase precedes fine-tuning.
    pub fn pretrains(self) -> bool {
        matches!(self, Regime::Tapt | Regime::TaptPlusSslReg)
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Regime::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown regime {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub regime: Regime,
    pub lambda: f64,
    pub lr_max: f64,
    pub warmup_proportion: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub grad_accum_steps: usize,
    pub seed: u64,
    pub p_mask: f64,
    /// Fraction of tokens touched by SR, RI and RS.
    pub aug_rate: f64,
    /// Per-token deletion probability for RD.
    pub p_delete: f64,
    pub active_ops: OpSet,
    /// Epochs of MTP-only pretraining for the TAPT regimes.
    pub tapt_epochs: usize,
    /// Peak learning rate of the pretraining phase; defaults to `lr_max`.
    pub tapt_lr_max: Option<f64>,
    pub init_std: f64,
    /// Dev metric used to pick the retained checkpoint.
    pub select_metric: MetricKind,
    pub eval_train_each_epoch: bool,
    pub eval_test_each_epoch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            regime: Regime::SslRegMtp,
            lambda: 0.1,
            lr_max: 1e-3,
            warmup_proportion: 0.06,
            weight_decay: 0.1,
            beta1: 0.9,
            beta2: 0.98,
            adam_eps: 1e-6,
            epochs: 10,
            batch_size: 16,
            grad_accum_steps: 1,
            seed: 0,
            p_mask: 0.15,
            aug_rate: 0.1,
            p_delete: 0.1,
            active_ops: OpSet::all(),
            tapt_epochs: 10,
            tapt_lr_max: None,
            init_std: 0.02,
            select_metric: MetricKind::MacroF1,
            eval_train_each_epoch: true,
            eval_test_each_epoch: false,
        }
    }
}

fn in_unit_open(x: f64) -> bool {
    x > 0.0 && x < 1.0
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::config(msg));
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return bad(format!("lambda must be a finite value >= 0, got {}", self.lambda));
        }
        if self.lambda > 0.0 && self.regime.joint_task().is_none() {
            return bad(format!(
                "regime {} has no self-supervised term but lambda = {}",
                self.regime, self.lambda
            ));
        }
        if !(self.warmup_proportion >= 0.0 && self.warmup_proportion < 1.0) {
            return bad(format!("warmup_proportion must be in [0, 1), got {}", self.warmup_proportion));
        }
        for (name, lr) in [("lr_max", Some(self.lr_max)), ("tapt_lr_max", self.tapt_lr_max)] {
            if let Some(lr) = lr {
                if !(lr.is_finite() && lr > 0.0) {
                    return bad(format!("{name} must be positive, got {lr}"));
                }
            }
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b >= 0.0 && b < 1.0) {
                return bad(format!("{name} must be in [0, 1), got {b}"));
            }
        }
        if !(self.adam_eps > 0.0 && self.adam_eps.is_finite()) {
            return bad(format!("adam_eps must be positive, got {}", self.adam_eps));
        }
        for (name, n) in [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("grad_accum_steps", self.grad_accum_steps),
        ] {
            if n == 0 {
                return bad(format!("{name} must be >= 1"));
            }
        }
        if self.regime.pretrains() && self.tapt_epochs == 0 {
            return bad(format!("regime {} needs tapt_epochs >= 1", self.regime));
        }
        if !in_unit_open(self.p_mask) {
            return bad(format!("p_mask must be in (0, 1), got {}", self.p_mask));
        }
        if !(self.aug_rate > 0.0 && self.aug_rate <= 1.0) {
            return bad(format!("aug_rate must be in (0, 1], got {}", self.aug_rate));
        }
        if !(self.p_delete >= 0.0 && self.p_delete < 1.0) {
            return bad(format!("p_delete must be in [0, 1), got {}", self.p_delete));
        }
        if !(self.init_std.is_finite() && self.init_std > 0.0) {
            return bad(format!("init_std must be positive, got {}", self.init_std));
        }
        Ok(())
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            weight_decay: self.weight_decay,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}
