//! Gold-versus-predicted label confusion over overlapping spans.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{GoldSpan, Perspective};
use crate::parsing::LabeledSpan;

/// Rows are gold labels, columns predicted labels, both in perspective order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 5]; 5],
    /// Gold spans per label with no overlapping prediction.
    pub misses: [u64; 5],
}

impl ConfusionMatrix {
    pub fn add(&mut self, other: &ConfusionMatrix) {
        for g in 0..5 {
            for p in 0..5 {
                self.counts[g][p] += other.counts[g][p];
            }
            self.misses[g] += other.misses[g];
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn missed(&self) -> u64 {
        self.misses.iter().sum()
    }

    pub fn get(&self, gold: Perspective, pred: Perspective) -> u64 {
        self.counts[gold.index()][pred.index()]
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("gold\\pred");
        for p in Perspective::ALL {
            let _ = write!(s, ",{p}");
        }
        s.push_str(",MISSED\n");
        for g in Perspective::ALL {
            let _ = write!(s, "{g}");
            for p in Perspective::ALL {
                let _ = write!(s, ",{}", self.get(g, p));
            }
            let _ = writeln!(s, ",{}", self.misses[g.index()]);
        }
        s
    }
}

fn overlap(a: (usize, usize), b: (usize, usize)) -> usize {
    a.1.min(b.1).saturating_sub(a.0.max(b.0))
}

/// Pairs each gold span with the same-answer prediction of largest character
/// overlap (at least one character; the earliest prediction wins ties).
/// Predictions without a location are ignored.
pub fn confusion_matrix(gold: &[GoldSpan], pred: &[LabeledSpan]) -> ConfusionMatrix {
    let mut m = ConfusionMatrix::default();
    for g in gold {
        let best = pred
            .iter()
            .filter_map(|p| {
                let loc = p.location.as_ref()?;
                (loc.answer_index == g.answer_index)
                    .then(|| (overlap((g.start, g.end), (loc.start, loc.end)), p.label))
            })
            .filter(|(o, _)| *o > 0)
            .fold(None::<(usize, Perspective)>, |best, cur| match best {
                Some(b) if b.0 >= cur.0 => Some(b),
                _ => Some(cur),
            });
        match best {
            Some((_, label)) => m.counts[g.label.index()][label.index()] += 1,
            None => m.misses[g.label.index()] += 1,
        }
    }
    m
}
