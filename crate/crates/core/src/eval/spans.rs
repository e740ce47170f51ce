//! Strict and proportional span matching.
//!
//! Strict: a prediction is a true positive when it consumes an unconsumed gold
//! span with the same label, answer and offsets. Grounded predictions are
//! consumed first in document order; predictions without a location then fall
//! back to normalized-text equality with the same label.
//!
//! Proportional: a prediction earns the fraction of its characters covered by
//! same-label gold spans in the same answer, and a gold span is covered by the
//! fraction of its characters that same-label predictions overlap.

use serde::{Deserialize, Serialize};

use super::{ratio, EvalError, Prf};
use crate::corpus::{GoldSpan, Perspective};
use crate::parsing::{LabeledSpan, SpanLocation};
use crate::text::normalize_text;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMode {
    Strict,
    Proportional,
}

/// How per-thread span counts are pooled into corpus scores.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpanAveraging {
    /// Pool every span of every class.
    #[default]
    Micro,
    /// Score each class separately, then average over classes seen in gold or predictions.
    Macro,
}

impl std::str::FromStr for SpanAveraging {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "micro" => Ok(SpanAveraging::Micro),
            "macro" => Ok(SpanAveraging::Macro),
            other => Err(format!("unknown span averaging {other:?}; expected micro or macro")),
        }
    }
}

/// Additive span statistics; corpus scores are ratios of pooled counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SpanCounts {
    pub gold: usize,
    pub predicted: usize,
    pub strict_tp: usize,
    /// Sum of per-prediction overlap credit.
    pub credit: f64,
    /// Sum of per-gold coverage.
    pub coverage: f64,
}

impl SpanCounts {
    pub fn add(&mut self, other: &SpanCounts) {
        self.gold += other.gold;
        self.predicted += other.predicted;
        self.strict_tp += other.strict_tp;
        self.credit += other.credit;
        self.coverage += other.coverage;
    }

    pub fn strict(&self) -> Prf {
        Prf::new(
            ratio(self.strict_tp as f64, self.predicted, self.gold),
            ratio(self.strict_tp as f64, self.gold, self.predicted),
        )
    }

    pub fn proportional(&self) -> Prf {
        Prf::new(
            ratio(self.credit, self.predicted, self.gold),
            ratio(self.coverage, self.gold, self.predicted),
        )
    }
}

/// Pooled strict and proportional scores under the chosen averaging.
pub fn pooled(per_class: &[SpanCounts; 5], averaging: SpanAveraging) -> (Prf, Prf) {
    match averaging {
        SpanAveraging::Micro => {
            let mut all = SpanCounts::default();
            per_class.iter().for_each(|c| all.add(c));
            (all.strict(), all.proportional())
        }
        SpanAveraging::Macro => {
            let seen: Vec<&SpanCounts> = per_class.iter().filter(|c| c.gold + c.predicted > 0).collect();
            if seen.is_empty() {
                let empty = SpanCounts::default();
                return (empty.strict(), empty.proportional());
            }
            let mean = |f: &dyn Fn(&SpanCounts) -> Prf| {
                let n = seen.len() as f64;
                let (p, r, f1) = seen.iter().fold((0.0, 0.0, 0.0), |acc, c| {
                    let x = f(c);
                    (acc.0 + x.precision, acc.1 + x.recall, acc.2 + x.f1)
                });
                Prf {
                    precision: p / n,
                    recall: r / n,
                    f1: f1 / n,
                }
            };
            (mean(&SpanCounts::strict), mean(&SpanCounts::proportional))
        }
    }
}

fn same_place(g: &GoldSpan, loc: &SpanLocation) -> bool {
    g.answer_index == loc.answer_index && g.start == loc.start && g.end == loc.end
}

/// Strict one-to-one matching; returns `(pred index, gold index)` pairs.
pub fn strict_matches(gold: &[GoldSpan], pred: &[LabeledSpan]) -> Vec<(usize, usize)> {
    let mut gold_order: Vec<usize> = (0..gold.len()).collect();
    gold_order.sort_by_key(|&i| (gold[i].answer_index, gold[i].start, gold[i].end, gold[i].label));
    let mut grounded: Vec<usize> = (0..pred.len()).filter(|&i| pred[i].location.is_some()).collect();
    grounded.sort_by_key(|&i| {
        let l = pred[i].location.as_ref().expect("grounded");
        (l.answer_index, l.start, l.end, i)
    });
    let ungrounded = (0..pred.len()).filter(|&i| pred[i].location.is_none());

    let mut used = vec![false; gold.len()];
    let mut pairs = Vec::new();
    for pi in grounded {
        let loc = pred[pi].location.as_ref().expect("grounded");
        if let Some(&gi) = gold_order
            .iter()
            .find(|&&gi| !used[gi] && gold[gi].label == pred[pi].label && same_place(&gold[gi], loc))
        {
            used[gi] = true;
            pairs.push((pi, gi));
        }
    }
    for pi in ungrounded {
        let text = normalize_text(&pred[pi].text);
        if let Some(&gi) = gold_order
            .iter()
            .find(|&&gi| !used[gi] && gold[gi].label == pred[pi].label && normalize_text(&gold[gi].text) == text)
        {
            used[gi] = true;
            pairs.push((pi, gi));
        }
    }
    pairs
}

/// Characters of `[start, end)` covered by the union of `intervals`.
fn covered(start: usize, end: usize, intervals: &mut [(usize, usize)]) -> usize {
    intervals.sort_unstable();
    let mut total = 0;
    let mut cursor = start;
    for &(s, e) in intervals.iter() {
        let s = s.max(cursor);
        let e = e.min(end);
        if s < e {
            total += e - s;
            cursor = e;
        }
    }
    total
}

fn credit_for(loc: &SpanLocation, label: Perspective, gold: &[GoldSpan]) -> f64 {
    let len = loc.end.saturating_sub(loc.start);
    if len == 0 {
        return 0.0;
    }
    let mut iv: Vec<(usize, usize)> = gold
        .iter()
        .filter(|g| g.label == label && g.answer_index == loc.answer_index)
        .map(|g| (g.start, g.end))
        .collect();
    covered(loc.start, loc.end, &mut iv) as f64 / len as f64
}

fn coverage_for(g: &GoldSpan, pred: &[LabeledSpan]) -> f64 {
    let len = g.end.saturating_sub(g.start);
    if len == 0 {
        return 0.0;
    }
    let mut iv: Vec<(usize, usize)> = pred
        .iter()
        .filter(|p| p.label == g.label)
        .filter_map(|p| p.location.as_ref())
        .filter(|l| l.answer_index == g.answer_index)
        .map(|l| (l.start, l.end))
        .collect();
    covered(g.start, g.end, &mut iv) as f64 / len as f64
}

/// Span counts for one thread.
///
/// Predictions without a location get no proportional overlap, except that a
/// text-fallback strict match earns full credit (and full coverage for the gold
/// span it consumed), so proportional scores never fall below strict ones.
pub fn thread_counts(gold: &[GoldSpan], pred: &[LabeledSpan]) -> SpanCounts {
    let pairs = strict_matches(gold, pred);
    let mut text_matched_pred = vec![false; pred.len()];
    let mut text_matched_gold = vec![false; gold.len()];
    for &(pi, gi) in &pairs {
        if pred[pi].location.is_none() {
            text_matched_pred[pi] = true;
            text_matched_gold[gi] = true;
        }
    }
    let credit = pred
        .iter()
        .enumerate()
        .map(|(i, p)| match &p.location {
            Some(loc) => credit_for(loc, p.label, gold),
            None => f64::from(u8::from(text_matched_pred[i])),
        })
        .sum();
    let coverage = gold
        .iter()
        .enumerate()
        .map(|(i, g)| if text_matched_gold[i] { 1.0 } else { coverage_for(g, pred) })
        .sum();
    SpanCounts {
        gold: gold.len(),
        predicted: pred.len(),
        strict_tp: pairs.len(),
        credit,
        coverage,
    }
}

/// [`thread_counts`] split by perspective (gold label for gold spans, predicted label for predictions).
pub fn class_counts(gold: &[GoldSpan], pred: &[LabeledSpan]) -> [SpanCounts; 5] {
    Perspective::ALL.map(|label| {
        let g: Vec<GoldSpan> = gold.iter().filter(|s| s.label == label).cloned().collect();
        let p: Vec<LabeledSpan> = pred.iter().filter(|s| s.label == label).cloned().collect();
        thread_counts(&g, &p)
    })
}

/// Scores one span set. Proportional mode rejects predictions without a location.
pub fn span_match(gold: &[GoldSpan], pred: &[LabeledSpan], mode: MatchMode) -> Result<Prf, EvalError> {
    match mode {
        MatchMode::Strict => Ok(thread_counts(gold, pred).strict()),
        MatchMode::Proportional => {
            let ungrounded: Vec<String> = pred
                .iter()
                .filter(|p| p.location.is_none())
                .map(|p| p.text.clone())
                .collect();
            if !ungrounded.is_empty() {
                return Err(EvalError::Ungrounded(ungrounded));
            }
            Ok(thread_counts(gold, pred).proportional())
        }
    }
}
