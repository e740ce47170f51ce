//! Token-classification data preparation: BIO tagging, class weights and a
//! class-weighted cross-entropy.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{GoldSpan, Perspective, Thread};
use crate::text::char_len;

#[derive(Debug, Error, PartialEq)]
pub enum NerError {
    #[error("span [{start}, {end}) lies outside a text of {len} characters")]
    SpanOutOfRange { start: usize, end: usize, len: usize },
    #[error("class {0} has count 0; its weight is undefined")]
    ZeroCount(String),
    #[error("no class counts given")]
    NoClasses,
    #[error("unknown BIO tag {0:?}")]
    UnknownTag(String),
    #[error("invalid BIO sequence at position {0}")]
    InvalidSequence(usize),
    #[error("{0}")]
    Dimension(String),
    #[error("logit row {0} has a non-finite value")]
    NonFinite(usize),
}

/// A token with its character offsets in the source text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSpan {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

/// Runs of alphanumeric characters, and every other non-whitespace character
/// as a token of its own.
pub fn tokenize_with_offsets(text: &str) -> Vec<TokenSpan> {
    let mut out = Vec::new();
    let mut run: Option<(usize, String)> = None;
    for (i, c) in text.chars().enumerate() {
        if c.is_alphanumeric() {
            run.get_or_insert_with(|| (i, String::new())).1.push(c);
            continue;
        }
        if let Some((start, s)) = run.take() {
            out.push(TokenSpan { end: start + char_len(&s), text: s, start });
        }
        if !c.is_whitespace() {
            out.push(TokenSpan {
                text: c.to_string(),
                start: i,
                end: i + 1,
            });
        }
    }
    if let Some((start, s)) = run {
        out.push(TokenSpan { end: start + char_len(&s), text: s, start });
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BioTag {
    Outside,
    Begin(Perspective),
    Inside(Perspective),
}

impl BioTag {
    pub const COUNT: usize = 11;

    /// All tags in class-index order: O, then B/I per perspective.
    pub fn all() -> [BioTag; 11] {
        let mut tags = [BioTag::Outside; 11];
        for (i, p) in Perspective::ALL.into_iter().enumerate() {
            tags[1 + 2 * i] = BioTag::Begin(p);
            tags[2 + 2 * i] = BioTag::Inside(p);
        }
        tags
    }

    pub fn index(self) -> usize {
        match self {
            BioTag::Outside => 0,
            BioTag::Begin(p) => 1 + 2 * p.index(),
            BioTag::Inside(p) => 2 + 2 * p.index(),
        }
    }

    pub fn label(self) -> Option<Perspective> {
        match self {
            BioTag::Outside => None,
            BioTag::Begin(p) | BioTag::Inside(p) => Some(p),
        }
    }
}

impl fmt::Display for BioTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BioTag::Outside => f.write_str("O"),
            BioTag::Begin(p) => write!(f, "B-{p}"),
            BioTag::Inside(p) => write!(f, "I-{p}"),
        }
    }
}

impl FromStr for BioTag {
    type Err = NerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let unknown = || NerError::UnknownTag(s.to_string());
        if s == "O" {
            return Ok(BioTag::Outside);
        }
        let (prefix, label) = s.split_once('-').ok_or_else(unknown)?;
        let p: Perspective = label.parse().map_err(|_| unknown())?;
        match prefix {
            "B" => Ok(BioTag::Begin(p)),
            "I" => Ok(BioTag::Inside(p)),
            _ => Err(unknown()),
        }
    }
}

impl Serialize for BioTag {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BioTag {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Tags tokens lying entirely inside a span; a token straddling a span edge is O.
///
/// Overlaps go to the span with the earliest start, then the longest one; a
/// later span keeps only the tokens not already claimed.
pub fn bio_align(tokens: &[TokenSpan], spans: &[GoldSpan], text_len: usize) -> Result<Vec<BioTag>, NerError> {
    for s in spans {
        if s.start >= s.end || s.end > text_len {
            return Err(NerError::SpanOutOfRange {
                start: s.start,
                end: s.end,
                len: text_len,
            });
        }
    }
    let mut order: Vec<&GoldSpan> = spans.iter().collect();
    order.sort_by_key(|s| (s.start, std::cmp::Reverse(s.end - s.start), s.label));
    let mut tags = vec![BioTag::Outside; tokens.len()];
    let mut claimed = vec![false; tokens.len()];
    for s in order {
        let mut first = true;
        for (i, t) in tokens.iter().enumerate() {
            if claimed[i] || t.start < s.start || t.end > s.end {
                continue;
            }
            claimed[i] = true;
            tags[i] = if first { BioTag::Begin(s.label) } else { BioTag::Inside(s.label) };
            first = false;
        }
    }
    Ok(tags)
}

/// True when every I-tag continues a B- or I-tag of the same perspective.
pub fn is_valid_bio(tags: &[BioTag]) -> bool {
    first_invalid(tags).is_none()
}

fn first_invalid(tags: &[BioTag]) -> Option<usize> {
    let mut prev = BioTag::Outside;
    for (i, &t) in tags.iter().enumerate() {
        if let BioTag::Inside(p) = t {
            if prev.label() != Some(p) {
                return Some(i);
            }
        }
        prev = t;
    }
    None
}

/// Decoded spans as `(start, end, label)` character offsets.
pub fn bio_decode(tokens: &[TokenSpan], tags: &[BioTag]) -> Result<Vec<(usize, usize, Perspective)>, NerError> {
    if tokens.len() != tags.len() {
        return Err(NerError::Dimension(format!(
            "{} tokens but {} tags",
            tokens.len(),
            tags.len()
        )));
    }
    if let Some(i) = first_invalid(tags) {
        return Err(NerError::InvalidSequence(i));
    }
    let mut out: Vec<(usize, usize, Perspective)> = Vec::new();
    for (t, &tag) in tokens.iter().zip(tags) {
        match tag {
            BioTag::Outside => {}
            BioTag::Begin(p) => out.push((t.start, t.end, p)),
            BioTag::Inside(_) => out.last_mut().expect("validated").1 = t.end,
        }
    }
    Ok(out)
}

/// Tokens of one answer with their tags.
pub type TaggedSequence = (Vec<TokenSpan>, Vec<BioTag>);

/// One tagged sequence per answer of a thread.
pub fn thread_sequences(thread: &Thread) -> Result<Vec<TaggedSequence>, NerError> {
    thread
        .answers
        .iter()
        .enumerate()
        .map(|(ai, answer)| {
            let tokens = tokenize_with_offsets(answer);
            let spans: Vec<GoldSpan> = thread
                .gold_spans
                .iter()
                .filter(|s| s.answer_index == ai)
                .cloned()
                .collect();
            let tags = bio_align(&tokens, &spans, char_len(answer))?;
            Ok((tokens, tags))
        })
        .collect()
}

/// CoNLL text: `token<TAB>tag` per line, a blank line after each sequence.
pub fn to_conll(sequences: &[TaggedSequence]) -> String {
    let mut s = String::new();
    for (tokens, tags) in sequences {
        for (t, tag) in tokens.iter().zip(tags) {
            let _ = writeln!(s, "{}\t{tag}", t.text);
        }
        s.push('\n');
    }
    s
}

pub fn tag_counts<'a>(sequences: impl IntoIterator<Item = &'a [BioTag]>) -> BTreeMap<BioTag, u64> {
    let mut m = BTreeMap::new();
    for seq in sequences {
        for &t in seq {
            *m.entry(t).or_insert(0) += 1;
        }
    }
    m
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights<K: Ord> {
    pub weights: BTreeMap<K, f64>,
    pub total: u64,
}

impl ClassWeights<BioTag> {
    /// Weights indexed by tag class; classes without a count get `missing`.
    pub fn dense(&self, missing: f64) -> Vec<f64> {
        BioTag::all()
            .iter()
            .map(|t| self.weights.get(t).copied().unwrap_or(missing))
            .collect()
    }
}

/// w_c = T / n_c with T the total count.
pub fn class_weights<K: Ord + Clone + fmt::Display>(counts: &BTreeMap<K, u64>) -> Result<ClassWeights<K>, NerError> {
    if counts.is_empty() {
        return Err(NerError::NoClasses);
    }
    if let Some((k, _)) = counts.iter().find(|(_, &n)| n == 0) {
        return Err(NerError::ZeroCount(k.to_string()));
    }
    let total: u64 = counts.values().sum();
    let weights = counts
        .iter()
        .map(|(k, &n)| (k.clone(), total as f64 / n as f64))
        .collect();
    Ok(ClassWeights { weights, total })
}

/// Mean over tokens of `w[y] * -log softmax(logits)[y]`.
pub fn weighted_cross_entropy(logits: &[Vec<f64>], labels: &[usize], weights: &[f64]) -> Result<f64, NerError> {
    if logits.is_empty() {
        return Err(NerError::Dimension("no tokens".into()));
    }
    if logits.len() != labels.len() {
        return Err(NerError::Dimension(format!(
            "{} logit rows but {} labels",
            logits.len(),
            labels.len()
        )));
    }
    let mut total = 0.0;
    for (i, (row, &y)) in logits.iter().zip(labels).enumerate() {
        if row.len() != weights.len() {
            return Err(NerError::Dimension(format!(
                "row {i} has {} logits for {} classes",
                row.len(),
                weights.len()
            )));
        }
        if y >= row.len() {
            return Err(NerError::Dimension(format!("label {y} at row {i} is out of range")));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(NerError::NonFinite(i));
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += weights[y] * (lse - row[y]);
    }
    Ok(total / logits.len() as f64)
}
