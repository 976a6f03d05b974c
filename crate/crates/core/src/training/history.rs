use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::metrics::Metrics;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// MTP-only pretraining of the TAPT regimes.
    Pretrain,
    Finetune,
}

/// Summary of one completed epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub phase: Phase,
    /// 1-based within the phase.
    pub epoch: usize,
    /// Rate used by the last update of the epoch.
    pub lr: f64,
    /// Mean classification loss over the epoch's micro-batches.
    pub loss_c: Option<f64>,
    /// Mean self-supervised loss over micro-batches that had one.
    pub loss_p: Option<f64>,
    /// Weight of the self-supervised term; absent while pretraining.
    pub lambda: Option<f64>,
    pub train: Option<Metrics>,
    pub dev: Option<Metrics>,
    pub test: Option<Metrics>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RunHistory {
    records: Vec<EpochRecord>,
}

impl RunHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: EpochRecord) {
        self.records.push(record);
    }

    pub fn records(&self) -> &[EpochRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn phase(&self, phase: Phase) -> impl Iterator<Item = &EpochRecord> {
        self.records.iter().filter(move |r| r.phase == phase)
    }

    pub fn last_finetune(&self) -> Option<&EpochRecord> {
        self.phase(Phase::Finetune).last()
    }

    /// One JSON object per line.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<Vec<EpochRecord>, _>>()?;
        Ok(Self { records })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip() {
        let m = Metrics {
            accuracy: 0.5,
            micro_f1: 0.5,
            macro_f1: 0.25,
            matthews: 0.0,
        };
        let mut h = RunHistory::new();
        h.push(EpochRecord {
            phase: Phase::Pretrain,
            epoch: 1,
            lr: 1e-3,
            loss_c: None,
            loss_p: Some(3.2),
            lambda: None,
            train: None,
            dev: None,
            test: None,
        });
        h.push(EpochRecord {
            phase: Phase::Finetune,
            epoch: 1,
            lr: 5e-4,
            loss_c: Some(0.7),
            loss_p: Some(2.9),
            lambda: Some(0.1),
            train: Some(m),
            dev: Some(m),
            test: None,
        });
        let text = h.to_jsonl().unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.lines().next().unwrap().contains("\"phase\":\"pretrain\""));
        assert_eq!(RunHistory::from_jsonl(&text).unwrap(), h);
        assert_eq!(h.last_finetune().unwrap().lambda, Some(0.1));
    }
}
