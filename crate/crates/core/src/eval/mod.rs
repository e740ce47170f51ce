//! Evaluation: answer-level classification, span matching, summary metrics,
//! confusion matrices, external scorers and the overall means.

pub mod classification;
pub mod confusion;
pub mod external;
pub mod lexical;
pub mod report;
pub mod spans;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use classification::{classification_scores, ClassScore, ClassificationScores, Presence};
pub use confusion::{confusion_matrix, ConfusionMatrix};
pub use external::{ExternalScorer, FileScorer, HttpScorer, ScoreRequest, ScoreResponse};
pub use lexical::{bleu, meteor, rouge, RougeVariant};
pub use report::{
    evaluate_task_a, evaluate_task_b, render_table, write_report, MetricReport, TaskAReport,
    TaskBReport,
};
pub use spans::{span_match, MatchMode, SpanAveraging, SpanCounts};

/// Task A report columns, in table order.
pub const TASK_A_COLUMNS: [&str; 8] = ["M-F1", "W-F1", "St-P", "St-R", "St-F1", "Pr-P", "Pr-R", "Pr-F1"];
/// Task B report columns, in table order.
pub const TASK_B_COLUMNS: [&str; 8] = ["R-1", "R-2", "R-L", "BLEU", "MET", "BS", "AS", "SC"];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("overall needs 8 sub-metrics, got {0}")]
    MetricCount(usize),
    #[error("sub-metric {0} is missing")]
    MissingMetric(String),
    #[error("sub-metric {name} = {value} is outside [0, 1]")]
    OutOfRange { name: String, value: f64 },
    #[error("gold and prediction units differ: {0}")]
    UniverseMismatch(String),
    #[error("proportional matching needs grounded spans; ungrounded: {0:?}")]
    Ungrounded(Vec<String>),
    #[error("scorer line {line}: {message}")]
    ScorerLine { line: usize, message: String },
    #[error("scorer has no scores for {0}")]
    ScorerMissing(String),
    #[error("scorer: {0}")]
    Scorer(String),
    #[error("no summaries to score")]
    NothingToScore,
    #[error("cannot write report {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn new(precision: f64, recall: f64) -> Prf {
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Prf { precision, recall, f1 }
    }
}

/// `num / den`; an empty denominator scores 1 when the other side is empty too, else 0.
pub(crate) fn ratio(num: f64, den: usize, other_side: usize) -> f64 {
    if den == 0 {
        if other_side == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        num / den as f64
    }
}

/// Arithmetic mean of 8 named sub-metrics, each finite and in [0, 1].
pub fn overall(metrics: &[(&str, Option<f64>)]) -> Result<f64, EvalError> {
    if metrics.len() != 8 {
        return Err(EvalError::MetricCount(metrics.len()));
    }
    let mut sum = 0.0;
    for &(name, value) in metrics {
        let v = value.ok_or_else(|| EvalError::MissingMetric(name.to_string()))?;
        if !v.is_finite() || !(0.0..=1.0).contains(&v) {
            return Err(EvalError::OutOfRange {
                name: name.to_string(),
                value: v,
            });
        }
        sum += v;
    }
    Ok(sum / 8.0)
}

pub fn task_a_overall(m: &[f64; 8]) -> Result<f64, EvalError> {
    let named: Vec<_> = TASK_A_COLUMNS.iter().zip(m).map(|(n, v)| (*n, Some(*v))).collect();
    overall(&named)
}

pub fn task_b_overall(m: &[Option<f64>; 8]) -> Result<f64, EvalError> {
    let named: Vec<_> = TASK_B_COLUMNS.iter().zip(m).map(|(n, v)| (*n, *v)).collect();
    overall(&named)
}
