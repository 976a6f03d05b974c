//! Classification metrics computed from per-class confusion counts.
//!
//! Zero denominators are defined as 0 for per-class F1 and for the
//! Matthews correlation.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encoder::Model;
use crate::error::{Error, Result};
use crate::numerics::Real;
use crate::training::{evaluate, EncodedSplit};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: Vec<u64>,
    pub fp: Vec<u64>,
    pub fn_: Vec<u64>,
    pub correct: u64,
    pub total: u64,
}

impl ConfusionCounts {
    pub fn from_predictions(gold: &[usize], pred: &[usize], num_classes: usize) -> Result<Self> {
        if gold.is_empty() {
            return Err(Error::invalid("metrics need at least one example"));
        }
        if gold.len() != pred.len() {
            return Err(Error::invalid(format!(
                "{} gold labels but {} predictions",
                gold.len(),
                pred.len()
            )));
        }
        let mut c = Self {
            tp: vec![0; num_classes],
            fp: vec![0; num_classes],
            fn_: vec![0; num_classes],
            correct: 0,
            total: gold.len() as u64,
        };
        for (&g, &p) in gold.iter().zip(pred) {
            if g >= num_classes || p >= num_classes {
                return Err(Error::invalid(format!("label out of range: gold {g}, pred {p}")));
            }
            if g == p {
                c.tp[g] += 1;
                c.correct += 1;
            } else {
                c.fp[p] += 1;
                c.fn_[g] += 1;
            }
        }
        Ok(c)
    }

    pub fn num_classes(&self) -> usize {
        self.tp.len()
    }

    fn class_f1(&self, k: usize) -> f64 {
        let denom = 2 * self.tp[k] + self.fp[k] + self.fn_[k];
        if denom == 0 {
            0.0
        } else {
            2.0 * self.tp[k] as f64 / denom as f64
        }
    }

    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }

    /// F1 over counts pooled across classes.
    pub fn micro_f1(&self) -> f64 {
        let tp: u64 = self.tp.iter().sum();
        let fp: u64 = self.fp.iter().sum();
        let fn_: u64 = self.fn_.iter().sum();
        let denom = 2 * tp + fp + fn_;
        if denom == 0 {
            0.0
        } else {
            2.0 * tp as f64 / denom as f64
        }
    }

    /// Unweighted mean of per-class F1.
    pub fn macro_f1(&self) -> f64 {
        let k = self.num_classes();
        (0..k).map(|c| self.class_f1(c)).sum::<f64>() / k as f64
    }

    /// Multiclass Matthews correlation (Gorodkin's R_K), using
    /// true count `tp + fn` and predicted count `tp + fp` per class.
    pub fn matthews(&self) -> f64 {
        let s = self.total as f64;
        let c = self.correct as f64;
        let mut sum_pt = 0.0;
        let mut sum_pp = 0.0;
        let mut sum_tt = 0.0;
        for k in 0..self.num_classes() {
            let t = (self.tp[k] + self.fn_[k]) as f64;
            let p = (self.tp[k] + self.fp[k]) as f64;
            sum_pt += p * t;
            sum_pp += p * p;
            sum_tt += t * t;
        }
        let denom = ((s * s - sum_pp) * (s * s - sum_tt)).sqrt();
        if denom == 0.0 {
            0.0
        } else {
            (c * s - sum_pt) / denom
        }
    }

    pub fn summary(&self) -> Metrics {
        Metrics {
            accuracy: self.accuracy(),
            micro_f1: self.micro_f1(),
            macro_f1: self.macro_f1(),
            matthews: self.matthews(),
        }
    }
}

pub fn accuracy(counts: &ConfusionCounts) -> f64 {
    counts.accuracy()
}

pub fn micro_f1(counts: &ConfusionCounts) -> f64 {
    counts.micro_f1()
}

pub fn macro_f1(counts: &ConfusionCounts) -> f64 {
    counts.macro_f1()
}

pub fn matthews_corr(gold: &[usize], pred: &[usize]) -> Result<f64> {
    let k = gold.iter().chain(pred).max().map_or(0, |&m| m + 1);
    Ok(ConfusionCounts::from_predictions(gold, pred, k)?.matthews())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub matthews: f64,
}

impl Metrics {
    pub fn get(&self, kind: MetricKind) -> f64 {
        match kind {
            MetricKind::Accuracy => self.accuracy,
            MetricKind::MicroF1 => self.micro_f1,
            MetricKind::MacroF1 => self.macro_f1,
            MetricKind::Matthews => self.matthews,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Accuracy,
    MicroF1,
    #[default]
    MacroF1,
    Matthews,
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "accuracy" => Ok(Self::Accuracy),
            "micro_f1" => Ok(Self::MicroF1),
            "macro_f1" => Ok(Self::MacroF1),
            "matthews" => Ok(Self::Matthews),
            other => Err(Error::invalid(format!("unknown metric {other:?}"))),
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Accuracy => "accuracy",
            Self::MicroF1 => "micro_f1",
            Self::MacroF1 => "macro_f1",
            Self::Matthews => "matthews",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gap {
    pub train: f64,
    pub test: f64,
    /// `train - test`; negative when the test split scores higher.
    pub difference: f64,
}

impl Gap {
    pub fn new(train: f64, test: f64) -> Self {
        Self {
            train,
            test,
            difference: train - test,
        }
    }
}

/// Scores `model` on both splits with `metric`.
pub fn train_test_gap<T: Real>(
    model: &Model<T>,
    train: &EncodedSplit,
    test: &EncodedSplit,
    metric: MetricKind,
) -> Result<Gap> {
    let tr = evaluate(model, train)?.get(metric);
    let te = evaluate(model, test)?.get(metric);
    Ok(Gap::new(tr, te))
}
