//! Scoring against ground truth, active-time snapshots, action logs and
//! paired comparisons between strategies.

mod clock;
mod log;
mod report;

pub use clock::{ActiveClock, ClockError, SNAPSHOT_INTERVAL_SECS};
pub use log::{read_events, ActionEvent, ActionRegistry, EventLog, LogError, SEEDED_ACTION_KINDS};
pub use report::{report, write_report, FinalRow, Report, SeriesPoint, SessionRecord, METRICS};

use crate::types::{Decision, Strategy};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::collections::BTreeMap;
use thiserror::Error;

/// Confusion matrix with Remove as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn record(&mut self, predicted: Decision, actual: Decision) {
        match (predicted.is_remove(), actual.is_remove()) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    /// Undefined ratios are reported as 0 and flagged.
    pub fn metrics(&self) -> Metrics {
        let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(self.tp, self.tp + self.fp);
        let recall = ratio(self.tp, self.tp + self.fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Metrics {
            accuracy: ratio(self.tp + self.tn, self.total()),
            precision,
            recall,
            f1,
            undefined_precision: self.tp + self.fp == 0,
            undefined_recall: self.tp + self.fn_ == 0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    #[serde(default)]
    pub undefined_precision: bool,
    #[serde(default)]
    pub undefined_recall: bool,
}

impl Metrics {
    pub fn get(&self, name: &str) -> Option<f64> {
        match name {
            "accuracy" => Some(self.accuracy),
            "precision" => Some(self.precision),
            "recall" => Some(self.recall),
            "f1" => Some(self.f1),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub counts: ConfusionCounts,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum EvalError {
    #[error("no prediction for ground-truth ids: {}", .0.join(", "))]
    MissingPredictions(Vec<String>),
    #[error("need at least 2 complete pairs, got {0}")]
    TooFewPairs(usize),
}

/// Scores every ground-truth id. Predictions for other ids are ignored.
pub fn score(
    predictions: &BTreeMap<String, Decision>,
    ground_truth: &BTreeMap<String, Decision>,
) -> Result<Score, EvalError> {
    let missing: Vec<String> = ground_truth
        .keys()
        .filter(|id| !predictions.contains_key(*id))
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(EvalError::MissingPredictions(missing));
    }
    let mut counts = ConfusionCounts::default();
    for (id, actual) in ground_truth {
        counts.record(predictions[id], *actual);
    }
    Ok(Score {
        counts,
        metrics: counts.metrics(),
    })
}

/// Classifier scores at one point of a session's active time. `classifier`
/// holds the serialized state that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSnapshot {
    pub session_id: String,
    pub strategy: Strategy,
    pub t_active_seconds: u64,
    /// Taken when the condition ended rather than on a 30 s boundary.
    #[serde(default)]
    pub is_final: bool,
    pub counts: ConfusionCounts,
    pub metrics: Metrics,
    #[serde(default)]
    pub classifier: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedComparison {
    pub metric: String,
    pub strategy_a: Strategy,
    pub strategy_b: Strategy,
    /// Mean of a − b over sessions.
    pub estimate: f64,
    pub std_err: f64,
    /// `estimate / std_err`; absent when the differences have no spread.
    pub t: Option<f64>,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dropped: Vec<String>,
}

/// Paired mean difference with standard error `sd / sqrt(n)` (sample sd).
/// Sessions lacking either value are dropped and listed.
pub fn paired_compare(
    metric: &str,
    strategy_a: Strategy,
    strategy_b: Strategy,
    per_session: &BTreeMap<String, (Option<f64>, Option<f64>)>,
) -> Result<PairedComparison, EvalError> {
    let mut diffs = Vec::new();
    let mut dropped = Vec::new();
    for (sid, pair) in per_session {
        match pair {
            (Some(a), Some(b)) => diffs.push(a - b),
            _ => dropped.push(sid.clone()),
        }
    }
    let n = diffs.len();
    if n < 2 {
        return Err(EvalError::TooFewPairs(n));
    }
    let nf = n as f64;
    let estimate = diffs.iter().sum::<f64>() / nf;
    let var = diffs.iter().map(|d| (d - estimate).powi(2)).sum::<f64>() / (nf - 1.0);
    let std_err = (var / nf).sqrt();
    Ok(PairedComparison {
        metric: metric.to_owned(),
        strategy_a,
        strategy_b,
        estimate,
        std_err,
        t: (std_err > 0.0).then(|| estimate / std_err),
        n,
        dropped,
    })
}
