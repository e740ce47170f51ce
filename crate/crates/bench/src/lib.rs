//! Synthetic inputs shared by the benchmarks under `benches/`.

use std::collections::BTreeMap;

use persumm_core::corpus::{GoldSpan, Perspective, Thread};
use persumm_core::exemplar::EmbeddingVector;
use persumm_core::parsing::{serialize_spans, LabeledSpan};

const SENTENCES: [&str; 6] = [
    "Cold damp air makes the joints swell",
    "Try a warm compress before bed",
    "I had the same thing for years and swimming helped",
    "Ibuprofen can irritate the stomach lining",
    "Have you tried physiotherapy",
    "Stress pushes hair follicles into a resting phase",
];

/// A thread with `answers` answers of three sentences each, one gold span per sentence.
pub fn thread(id: usize, answers: usize) -> Thread {
    let mut texts = Vec::new();
    let mut spans = Vec::new();
    for a in 0..answers {
        let mut text = String::new();
        for s in 0..3 {
            let sentence = SENTENCES[(id + a + s) % SENTENCES.len()];
            let start = text.chars().count();
            text.push_str(sentence);
            spans.push(GoldSpan {
                answer_index: a,
                start,
                end: start + sentence.chars().count(),
                text: sentence.to_string(),
                label: Perspective::ALL[(a + s) % 5],
            });
            text.push_str(". ");
        }
        texts.push(text.trim_end().to_string());
    }
    Thread {
        id: format!("b{id:04}"),
        question: "Why do my knees ache when it rains?".into(),
        context: None,
        answers: texts,
        gold_spans: spans,
        gold_summaries: BTreeMap::new(),
    }
}

/// Gold spans rendered in the model output grammar.
pub fn span_output(thread: &Thread) -> String {
    let spans: Vec<LabeledSpan> = thread.gold_spans.iter().map(LabeledSpan::from).collect();
    serialize_spans(&spans)
}

/// `n` points spread over `k` well-separated blobs.
pub fn blobs(n: usize, k: usize, dim: usize) -> BTreeMap<String, EmbeddingVector> {
    (0..n)
        .map(|i| {
            let c = (i % k) as f64;
            let v = (0..dim).map(|d| c * 10.0 + ((i * 31 + d * 7) % 13) as f64 / 13.0).collect();
            (format!("p{i:05}"), EmbeddingVector::new(v).expect("finite"))
        })
        .collect()
}
