use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use persumm_bench::{blobs, span_output, thread};
use persumm_core::eval::lexical::{bleu, meteor, rouge, RougeVariant};
use persumm_core::eval::spans::thread_counts;
use persumm_core::exemplar::kmeans;
use persumm_core::ner::{bio_align, tokenize_with_offsets, weighted_cross_entropy};
use persumm_core::parsing::{parse_spans, LabeledSpan, ParsePolicy};

const REFERENCE: &str = "Some of the causes include cold damp air, stress and poor sleep; \
    it is suggested that a warm compress and regular swimming may help.";
const HYPOTHESIS: &str = "Some causes include damp air and stress; a warm compress and swimming are suggested.";

fn lexical(c: &mut Criterion) {
    let mut g = c.benchmark_group("lexical");
    g.bench_function("rouge-l", |b| b.iter(|| rouge(black_box(REFERENCE), black_box(HYPOTHESIS), RougeVariant::L)));
    g.bench_function("bleu", |b| b.iter(|| bleu(black_box(REFERENCE), black_box(HYPOTHESIS))));
    g.bench_function("meteor", |b| b.iter(|| meteor(black_box(REFERENCE), black_box(HYPOTHESIS))));
    g.finish();
}

fn spans(c: &mut Criterion) {
    let mut g = c.benchmark_group("spans");
    for answers in [2, 8, 32] {
        let t = thread(1, answers);
        let raw = span_output(&t);
        let pred: Vec<LabeledSpan> = t.gold_spans.iter().map(LabeledSpan::from).collect();
        g.bench_with_input(BenchmarkId::new("parse", answers), &raw, |b, raw| {
            b.iter(|| parse_spans(black_box(raw), &t, ParsePolicy::Lenient))
        });
        g.bench_with_input(BenchmarkId::new("match", answers), &pred, |b, pred| {
            b.iter(|| thread_counts(black_box(&t.gold_spans), black_box(pred)))
        });
    }
    g.finish();
}

fn ner(c: &mut Criterion) {
    let t = thread(3, 4);
    let tokens = tokenize_with_offsets(&t.answers[0]);
    let len = t.answers[0].chars().count();
    let spans: Vec<_> = t.gold_spans.iter().filter(|s| s.answer_index == 0).cloned().collect();
    c.bench_function("ner/bio-align", |b| b.iter(|| bio_align(black_box(&tokens), black_box(&spans), len)));
    let logits: Vec<Vec<f64>> = (0..512).map(|i| (0..11).map(|c| ((i * c) % 7) as f64 - 3.0).collect()).collect();
    let labels: Vec<usize> = (0..512).map(|i| i % 11).collect();
    let weights = vec![1.5; 11];
    c.bench_function("ner/weighted-ce-512", |b| {
        b.iter(|| weighted_cross_entropy(black_box(&logits), black_box(&labels), &weights))
    });
}

fn clustering(c: &mut Criterion) {
    let mut g = c.benchmark_group("kmeans");
    g.sample_size(20);
    for n in [500, 2236] {
        let points = blobs(n, 3, 32);
        g.bench_with_input(BenchmarkId::from_parameter(n), &points, |b, p| b.iter(|| kmeans(p, 3, 0, 100)));
    }
    g.finish();
}

criterion_group!(benches, lexical, spans, ner, clustering);
criterion_main!(benches);
