//! Answer-level multi-label perspective classification.
//!
//! An answer carries a perspective when at least one span of that perspective
//! lies inside it. Each perspective is scored as a binary task over the
//! (thread, answer) units.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::corpus::{Perspective, Thread};
use crate::parsing::LabeledSpan;

/// Perspectives present per (thread id, answer index).
pub type Presence = BTreeMap<(String, usize), BTreeSet<Perspective>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub label: Perspective,
    /// Units where gold has the label.
    pub support: usize,
    pub predicted: usize,
    pub true_positives: usize,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationScores {
    pub per_class: Vec<ClassScore>,
    pub macro_f1: f64,
    pub weighted_f1: f64,
}

pub fn gold_presence(thread: &Thread) -> Presence {
    let mut p: Presence = (0..thread.answers.len())
        .map(|i| ((thread.id.clone(), i), BTreeSet::new()))
        .collect();
    for s in &thread.gold_spans {
        if let Some(set) = p.get_mut(&(thread.id.clone(), s.answer_index)) {
            set.insert(s.label);
        }
    }
    p
}

/// Presence from predicted spans; spans without a location are ignored.
pub fn predicted_presence(thread: &Thread, spans: &[LabeledSpan]) -> Presence {
    let mut p: Presence = (0..thread.answers.len())
        .map(|i| ((thread.id.clone(), i), BTreeSet::new()))
        .collect();
    for s in spans {
        if let Some(loc) = &s.location {
            if let Some(set) = p.get_mut(&(thread.id.clone(), loc.answer_index)) {
                set.insert(s.label);
            }
        }
    }
    p
}

/// Per-class binary F1 with macro and support-weighted means.
///
/// A class absent from both gold and predictions scores F1 = 1. With no gold
/// positives at all the weighted mean is 1 when nothing was predicted, else 0.
pub fn classification_scores(gold: &Presence, pred: &Presence) -> Result<ClassificationScores, EvalError> {
    if let Some(k) = gold.keys().find(|k| !pred.contains_key(*k)) {
        return Err(EvalError::UniverseMismatch(format!("{}#{} missing from predictions", k.0, k.1)));
    }
    if let Some(k) = pred.keys().find(|k| !gold.contains_key(*k)) {
        return Err(EvalError::UniverseMismatch(format!("{}#{} missing from gold", k.0, k.1)));
    }
    let per_class: Vec<ClassScore> = Perspective::ALL
        .iter()
        .map(|&label| {
            let (mut tp, mut support, mut predicted) = (0, 0, 0);
            for (unit, g) in gold {
                let in_gold = g.contains(&label);
                let in_pred = pred[unit].contains(&label);
                support += usize::from(in_gold);
                predicted += usize::from(in_pred);
                tp += usize::from(in_gold && in_pred);
            }
            let f1 = if support + predicted == 0 {
                1.0
            } else {
                2.0 * tp as f64 / (support + predicted) as f64
            };
            ClassScore {
                label,
                support,
                predicted,
                true_positives: tp,
                f1,
            }
        })
        .collect();
    let macro_f1 = per_class.iter().map(|c| c.f1).sum::<f64>() / per_class.len() as f64;
    let total: usize = per_class.iter().map(|c| c.support).sum();
    let weighted_f1 = if total == 0 {
        if per_class.iter().all(|c| c.predicted == 0) {
            1.0
        } else {
            0.0
        }
    } else {
        per_class.iter().map(|c| c.f1 * c.support as f64).sum::<f64>() / total as f64
    };
    Ok(ClassificationScores {
        per_class,
        macro_f1,
        weighted_f1,
    })
}
