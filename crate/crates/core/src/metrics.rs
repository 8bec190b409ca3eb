//! Recall at IoU thresholds and mean IoU, per benchmark.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::parse::PredictionRecord;
use crate::span::temporal_iou;

/// IoU thresholds reported, in table column order.
pub const THRESHOLDS: [f64; 3] = [0.3, 0.5, 0.7];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("cannot compute a metric over an empty list")]
    Empty,
    #[error("threshold {0} is outside (0, 1)")]
    BadThreshold(f64),
    #[error("iou {0} is outside [0, 1]")]
    BadIou(f64),
}

fn check(ious: &[f64]) -> Result<(), MetricsError> {
    if ious.is_empty() {
        return Err(MetricsError::Empty);
    }
    if let Some(&bad) = ious.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        return Err(MetricsError::BadIou(bad));
    }
    Ok(())
}

/// Percentage of IoUs strictly greater than `m`.
pub fn recall_at(ious: &[f64], m: f64) -> Result<f64, MetricsError> {
    if !(m > 0.0 && m < 1.0) {
        return Err(MetricsError::BadThreshold(m));
    }
    check(ious)?;
    let hits = ious.iter().filter(|&&x| x > m).count();
    Ok(100.0 * hits as f64 / ious.len() as f64)
}

/// Mean IoU as a percentage.
pub fn mean_iou(ious: &[f64]) -> Result<f64, MetricsError> {
    check(ious)?;
    Ok(100.0 * ious.iter().sum::<f64>() / ious.len() as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnparsedPolicy {
    /// Unparsable predictions count with IoU 0.
    #[default]
    ScoreZero,
    /// Unparsable predictions are left out of the denominators.
    Exclude,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub r1_03: f64,
    pub r1_05: f64,
    pub r1_07: f64,
    pub miou: f64,
}

impl Scores {
    pub fn from_ious(ious: &[f64]) -> Result<Self, MetricsError> {
        Ok(Self {
            r1_03: recall_at(ious, THRESHOLDS[0])?,
            r1_05: recall_at(ious, THRESHOLDS[1])?,
            r1_07: recall_at(ious, THRESHOLDS[2])?,
            miou: mean_iou(ious)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    /// `None` when nothing was left to score (empty, or all excluded).
    pub scores: Option<Scores>,
    pub n_scored: usize,
    pub n_unparsed: usize,
    /// Annotations in the benchmark with no prediction at all.
    pub n_missing: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub policy: UnparsedPolicy,
    pub per_benchmark: BTreeMap<String, BenchmarkReport>,
    pub n_scored: usize,
    pub n_unparsed: usize,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("prediction on line {line} references unknown annotation '{annotation_id}'")]
    UnknownAnnotation { line: usize, annotation_id: String },
    #[error("duplicate prediction for annotation '{0}'")]
    DuplicatePrediction(String),
    #[error("annotation id '{0}' appears in more than one benchmark")]
    AmbiguousAnnotation(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Scores predictions against each dataset, reporting every dataset as its
/// own benchmark keyed by [`Dataset::name`].
pub fn evaluate(
    datasets: &[Dataset],
    predictions: &[PredictionRecord],
    policy: UnparsedPolicy,
) -> Result<EvalReport, EvalError> {
    let mut owner: HashMap<&str, usize> = HashMap::new();
    for (di, d) in datasets.iter().enumerate() {
        for a in d.annotations() {
            if owner.insert(a.annotation_id.as_str(), di).is_some() {
                return Err(EvalError::AmbiguousAnnotation(a.annotation_id.clone()));
            }
        }
    }

    let mut ious: Vec<Vec<f64>> = vec![Vec::new(); datasets.len()];
    let mut unparsed = vec![0usize; datasets.len()];
    let mut scored = vec![0usize; datasets.len()];
    let mut seen: HashSet<&str> = HashSet::new();
    for p in predictions {
        let Some(&di) = owner.get(p.annotation_id.as_str()) else {
            return Err(EvalError::UnknownAnnotation {
                line: p.line,
                annotation_id: p.annotation_id.clone(),
            });
        };
        if !seen.insert(p.annotation_id.as_str()) {
            return Err(EvalError::DuplicatePrediction(p.annotation_id.clone()));
        }
        let gt = datasets[di]
            .annotation(&p.annotation_id)
            .expect("owner map built from this dataset")
            .span;
        match p.parsed {
            Ok(span) => {
                scored[di] += 1;
                ious[di].push(temporal_iou(&span, &gt));
            }
            Err(_) => {
                unparsed[di] += 1;
                if policy == UnparsedPolicy::ScoreZero {
                    ious[di].push(0.0);
                }
            }
        }
    }

    let mut per_benchmark = BTreeMap::new();
    for (di, d) in datasets.iter().enumerate() {
        let scores = if ious[di].is_empty() {
            None
        } else {
            Some(Scores::from_ious(&ious[di])?)
        };
        per_benchmark.insert(
            d.name().to_string(),
            BenchmarkReport {
                scores,
                n_scored: scored[di],
                n_unparsed: unparsed[di],
                n_missing: d.num_annotations() - scored[di] - unparsed[di],
            },
        );
    }
    Ok(EvalReport {
        policy,
        per_benchmark,
        n_scored: scored.iter().sum(),
        n_unparsed: unparsed.iter().sum(),
    })
}

impl EvalReport {
    /// Plain-text table with columns R1@0.3, R1@0.5, R1@0.7, mIoU.
    pub fn to_table(&self) -> String {
        let width = self
            .per_benchmark
            .keys()
            .map(|k| k.len())
            .max()
            .unwrap_or(0)
            .max("benchmark".len());
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<width$}  {:>7}  {:>7}  {:>7}  {:>7}  {:>7}  {:>8}",
            "benchmark", "R1@0.3", "R1@0.5", "R1@0.7", "mIoU", "scored", "unparsed"
        );
        for (name, b) in &self.per_benchmark {
            let cells = match &b.scores {
                Some(s) => [s.r1_03, s.r1_05, s.r1_07, s.miou].map(|v| format!("{v:.1}")),
                None => std::array::from_fn(|_| "-".to_string()),
            };
            let _ = writeln!(
                out,
                "{:<width$}  {:>7}  {:>7}  {:>7}  {:>7}  {:>7}  {:>8}",
                name, cells[0], cells[1], cells[2], cells[3], b.n_scored, b.n_unparsed
            );
        }
        out
    }
}
