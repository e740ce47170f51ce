//! ROUGE, BLEU and METEOR on lowercase alphanumeric tokens.
//!
//! Shared edge rules: two empty texts score 1, exactly one empty text scores 0,
//! and identical token sequences score 1 for ROUGE and BLEU.

use std::collections::HashMap;

use rust_stemmers::{Algorithm, Stemmer};
use serde::{Deserialize, Serialize};

pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RougeVariant {
    #[serde(rename = "1")]
    One,
    #[serde(rename = "2")]
    Two,
    #[serde(rename = "L")]
    L,
}

fn edge_case(r: &[String], h: &[String]) -> Option<f64> {
    match (r.is_empty(), h.is_empty()) {
        (true, true) => Some(1.0),
        (true, false) | (false, true) => Some(0.0),
        _ => None,
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Clipped n-gram matches and the hypothesis n-gram total.
fn clipped(r: &[String], h: &[String], n: usize) -> (usize, usize, usize) {
    let rc = ngram_counts(r, n);
    let hc = ngram_counts(h, n);
    let matches = hc
        .iter()
        .map(|(g, &c)| c.min(rc.get(g).copied().unwrap_or(0)))
        .sum();
    (
        matches,
        h.len().saturating_sub(n - 1),
        r.len().saturating_sub(n - 1),
    )
}

fn f1(matches: usize, hyp_total: usize, ref_total: usize) -> f64 {
    if matches == 0 || hyp_total == 0 || ref_total == 0 {
        return 0.0;
    }
    let p = matches as f64 / hyp_total as f64;
    let r = matches as f64 / ref_total as f64;
    2.0 * p * r / (p + r)
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE F1: clipped n-gram overlap for 1 and 2, longest common subsequence for L.
pub fn rouge(reference: &str, hypothesis: &str, variant: RougeVariant) -> f64 {
    let (r, h) = (tokenize(reference), tokenize(hypothesis));
    if let Some(v) = edge_case(&r, &h) {
        return v;
    }
    if r == h {
        return 1.0;
    }
    match variant {
        RougeVariant::One => {
            let (m, ht, rt) = clipped(&r, &h, 1);
            f1(m, ht, rt)
        }
        RougeVariant::Two => {
            let (m, ht, rt) = clipped(&r, &h, 2);
            f1(m, ht, rt)
        }
        RougeVariant::L => f1(lcs_len(&r, &h), h.len(), r.len()),
    }
}

/// Sentence BLEU-4 with uniform weights.
///
/// No unigram match scores 0. A higher order with no matches uses precision
/// 1 / (hypothesis n-grams + 1). The brevity penalty is exp(1 - r/c) for a
/// hypothesis shorter than the reference.
pub fn bleu(reference: &str, hypothesis: &str) -> f64 {
    let (r, h) = (tokenize(reference), tokenize(hypothesis));
    if let Some(v) = edge_case(&r, &h) {
        return v;
    }
    if r == h {
        return 1.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let (m, total, _) = clipped(&r, &h, n);
        if m == 0 && n == 1 {
            return 0.0;
        }
        let p = if m == 0 {
            1.0 / (total as f64 + 1.0)
        } else {
            m as f64 / total as f64
        };
        log_sum += p.ln() / 4.0;
    }
    let (c, rl) = (h.len() as f64, r.len() as f64);
    let bp = if c < rl { (1.0 - rl / c).exp() } else { 1.0 };
    (bp * log_sum.exp()).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeteorParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for MeteorParams {
    fn default() -> Self {
        MeteorParams {
            alpha: 0.9,
            beta: 3.0,
            gamma: 0.5,
        }
    }
}

/// Unigram alignment as `(hyp index, ref index)`: exact matches first, then
/// stem matches; each hypothesis token takes the leftmost free reference token.
pub fn meteor_alignment(r: &[String], h: &[String]) -> Vec<(usize, usize)> {
    let stemmer = Stemmer::create(Algorithm::English);
    let mut ref_used = vec![false; r.len()];
    let mut hyp_used = vec![false; h.len()];
    let mut pairs = Vec::new();
    for (hi, ht) in h.iter().enumerate() {
        if let Some(ri) = (0..r.len()).find(|&ri| !ref_used[ri] && &r[ri] == ht) {
            ref_used[ri] = true;
            hyp_used[hi] = true;
            pairs.push((hi, ri));
        }
    }
    let ref_stems: Vec<String> = r.iter().map(|t| stemmer.stem(t).into_owned()).collect();
    for (hi, ht) in h.iter().enumerate() {
        if hyp_used[hi] {
            continue;
        }
        let stem = stemmer.stem(ht);
        if let Some(ri) = (0..r.len()).find(|&ri| !ref_used[ri] && ref_stems[ri] == stem) {
            ref_used[ri] = true;
            hyp_used[hi] = true;
            pairs.push((hi, ri));
        }
    }
    pairs.sort_unstable();
    pairs
}

/// Number of runs of matches adjacent in both hypothesis and reference.
pub fn chunk_count(alignment: &[(usize, usize)]) -> usize {
    if alignment.is_empty() {
        return 0;
    }
    1 + alignment
        .windows(2)
        .filter(|w| !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1))
        .count()
}

pub fn meteor_with(reference: &str, hypothesis: &str, params: MeteorParams) -> f64 {
    let (r, h) = (tokenize(reference), tokenize(hypothesis));
    if let Some(v) = edge_case(&r, &h) {
        return v;
    }
    let alignment = meteor_alignment(&r, &h);
    let m = alignment.len();
    if m == 0 {
        return 0.0;
    }
    let p = m as f64 / h.len() as f64;
    let rc = m as f64 / r.len() as f64;
    let fmean = p * rc / (params.alpha * p + (1.0 - params.alpha) * rc);
    let penalty = params.gamma * (chunk_count(&alignment) as f64 / m as f64).powf(params.beta);
    (fmean * (1.0 - penalty)).clamp(0.0, 1.0)
}

/// METEOR with alpha 0.9, beta 3, gamma 0.5.
pub fn meteor(reference: &str, hypothesis: &str) -> f64 {
    meteor_with(reference, hypothesis, MeteorParams::default())
}

/// The five lexical scores of one reference/hypothesis pair.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LexicalScores {
    pub rouge1: f64,
    pub rouge2: f64,
    pub rouge_l: f64,
    pub bleu: f64,
    pub meteor: f64,
}

impl LexicalScores {
    pub fn score(reference: &str, hypothesis: &str) -> Self {
        LexicalScores {
            rouge1: rouge(reference, hypothesis, RougeVariant::One),
            rouge2: rouge(reference, hypothesis, RougeVariant::Two),
            rouge_l: rouge(reference, hypothesis, RougeVariant::L),
            bleu: bleu(reference, hypothesis),
            meteor: meteor(reference, hypothesis),
        }
    }
}
