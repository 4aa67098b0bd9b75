use super::{paired_compare, EvalError, MetricsSnapshot, PairedComparison};
use crate::types::Strategy;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::Path;

pub const METRICS: [&str; 4] = ["accuracy", "precision", "recall", "f1"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session_id: String,
    pub snapshots: Vec<MetricsSnapshot>,
}

impl SessionRecord {
    fn series(&self, strategy: Strategy) -> Vec<&MetricsSnapshot> {
        let mut s: Vec<&MetricsSnapshot> = self.snapshots.iter().filter(|s| s.strategy == strategy).collect();
        s.sort_by_key(|s| s.t_active_seconds);
        s
    }

    fn final_value(&self, strategy: Strategy, metric: &str) -> Option<f64> {
        self.series(strategy).last().and_then(|s| s.metrics.get(metric))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub strategy: Strategy,
    pub t_seconds: u64,
    pub metric: String,
    pub mean: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalRow {
    pub strategy: Strategy,
    pub metric: String,
    pub mean: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub sessions: usize,
    pub series: Vec<SeriesPoint>,
    pub finals: Vec<FinalRow>,
    pub paired: Vec<PairedComparison>,
    pub notes: Vec<String>,
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Mean metric curves per strategy, final-score table and paired
/// differences. At each tick a session contributes its latest snapshot at
/// or before that tick.
pub fn report(sessions: &[SessionRecord]) -> Report {
    let mut out = Report {
        sessions: sessions.len(),
        ..Report::default()
    };
    let mut present = Vec::new();
    for strategy in Strategy::ALL {
        let per_session: Vec<Vec<&MetricsSnapshot>> = sessions
            .iter()
            .map(|s| s.series(strategy))
            .filter(|s| !s.is_empty())
            .collect();
        if per_session.is_empty() {
            out.notes.push(format!("no sessions have {strategy} snapshots; omitted"));
            continue;
        }
        present.push(strategy);
        let ticks: BTreeSet<u64> = per_session.iter().flatten().map(|s| s.t_active_seconds).collect();
        for metric in METRICS {
            for &t in &ticks {
                let values: Vec<f64> = per_session
                    .iter()
                    .filter_map(|s| s.iter().rev().find(|x| x.t_active_seconds <= t))
                    .filter_map(|x| x.metrics.get(metric))
                    .collect();
                if !values.is_empty() {
                    out.series.push(SeriesPoint {
                        strategy,
                        t_seconds: t,
                        metric: metric.to_owned(),
                        mean: mean(&values),
                        n: values.len(),
                    });
                }
            }
            let finals: Vec<f64> = per_session
                .iter()
                .filter_map(|s| s.last().and_then(|x| x.metrics.get(metric)))
                .collect();
            out.finals.push(FinalRow {
                strategy,
                metric: metric.to_owned(),
                mean: mean(&finals),
                n: finals.len(),
            });
        }
    }
    for (i, &a) in present.iter().enumerate() {
        for &b in &present[i + 1..] {
            for metric in METRICS {
                let pairs: BTreeMap<String, (Option<f64>, Option<f64>)> = sessions
                    .iter()
                    .map(|s| (s.session_id.clone(), (s.final_value(a, metric), s.final_value(b, metric))))
                    .collect();
                match paired_compare(metric, a, b, &pairs) {
                    Ok(c) => out.paired.push(c),
                    Err(EvalError::TooFewPairs(n)) => {
                        out.notes.push(format!("{a} vs {b} {metric}: only {n} paired session(s)"))
                    }
                    Err(e) => out.notes.push(e.to_string()),
                }
            }
        }
    }
    out
}

/// Writes `report.json` and `series.csv` into `dir`.
pub fn write_report(dir: &Path, report: &Report) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(report)?)?;
    let mut w = csv::Writer::from_path(dir.join("series.csv"))?;
    for p in &report.series {
        w.serialize(p)?;
    }
    w.flush()
}
