use std::collections::BTreeMap;

use proptest::prelude::*;

use persumm_core::corpus::{GoldSpan, Perspective, Thread};
use persumm_core::eval::lexical::{bleu, meteor, rouge, RougeVariant};
use persumm_core::eval::spans::thread_counts;
use persumm_core::eval::{overall, task_a_overall};
use persumm_core::exemplar::{cosine_similarity, kmeans, EmbeddingVector};
use persumm_core::ner::{bio_align, bio_decode, is_valid_bio, tokenize_with_offsets};
use persumm_core::parsing::{
    parse_spans, parse_summaries, serialize_spans, serialize_summaries, LabeledSpan, ParsePolicy, SpanLocation,
};

fn perspective() -> impl Strategy<Value = Perspective> {
    (0usize..5).prop_map(|i| Perspective::ALL[i])
}

fn thread(answers: Vec<String>) -> Thread {
    Thread {
        id: "p".into(),
        question: "q?".into(),
        context: None,
        answers,
        gold_spans: vec![],
        gold_summaries: BTreeMap::new(),
    }
}

fn span_in(len: usize) -> impl Strategy<Value = (usize, usize)> {
    (0..len).prop_flat_map(move |s| (Just(s), s + 1..=len))
}

fn gold_span() -> impl Strategy<Value = GoldSpan> {
    (0usize..2, span_in(12), perspective()).prop_map(|(a, (start, end), label)| GoldSpan {
        answer_index: a,
        start,
        end,
        text: format!("g{a}-{start}-{end}"),
        label,
    })
}

fn pred_span() -> impl Strategy<Value = LabeledSpan> {
    (0usize..2, span_in(12), perspective()).prop_map(|(a, (start, end), label)| LabeledSpan {
        text: format!("g{a}-{start}-{end}"),
        label,
        location: Some(SpanLocation {
            answer_index: a,
            start,
            end,
        }),
    })
}

fn words() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(vec!["pain", "rest", "the", "cold", "knee", "water", "sleep"]), 0..12)
        .prop_map(|w| w.join(" "))
}

proptest! {
    #[test]
    fn span_parser_never_panics(raw in "\\PC*", policy in prop::sample::select(vec![ParsePolicy::Strict, ParsePolicy::Lenient])) {
        let t = thread(vec!["Cold air hurts.".into()]);
        let parsed = parse_spans(&raw, &t, policy);
        for s in parsed.spans {
            if let Some(loc) = s.location {
                prop_assert!(loc.start < loc.end);
            }
        }
        let _ = parse_summaries(&raw);
    }

    #[test]
    fn serialized_spans_round_trip(labels in prop::collection::vec(perspective(), 1..6)) {
        let answers = vec!["Cold damp air makes it worse. Try a warm bath tonight.".to_string()];
        let texts = ["Cold damp air makes it worse", "Try a warm bath tonight", "warm bath"];
        let t = thread(answers);
        let spans: Vec<LabeledSpan> = labels
            .iter()
            .enumerate()
            .map(|(i, &label)| LabeledSpan { text: texts[i % 3].into(), label, location: None })
            .collect();
        let parsed = parse_spans(&serialize_spans(&spans), &t, ParsePolicy::Strict);
        let back: Vec<(String, Perspective)> = parsed.spans.iter().map(|s| (s.text.clone(), s.label)).collect();
        let want: Vec<(String, Perspective)> = spans.iter().map(|s| (s.text.clone(), s.label)).collect();
        prop_assert_eq!(back, want);
        prop_assert!(parsed.spans.iter().all(|s| s.location.is_some()));
    }

    #[test]
    fn summaries_round_trip(picks in prop::collection::btree_map(perspective(), "[a-z ]{1,30}", 0..5)) {
        let summaries: BTreeMap<Perspective, String> = picks
            .into_iter()
            .map(|(k, v)| (k, format!("x{}", v.trim_end())))
            .collect();
        prop_assert_eq!(parse_summaries(&serialize_summaries(&summaries)).summaries, summaries);
    }

    #[test]
    fn proportional_dominates_strict(
        gold in prop::collection::vec(gold_span(), 0..5),
        pred in prop::collection::vec(pred_span(), 0..5),
    ) {
        let c = thread_counts(&gold, &pred);
        let (s, p) = (c.strict(), c.proportional());
        prop_assert!(p.precision + 1e-12 >= s.precision);
        prop_assert!(p.recall + 1e-12 >= s.recall);
        for v in [s.precision, s.recall, s.f1, p.precision, p.recall, p.f1] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn kmeans_inertia_never_increases(
        points in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 4..30),
        k in 1usize..4,
        seed in any::<u64>(),
    ) {
        let vectors: BTreeMap<String, EmbeddingVector> = points
            .into_iter()
            .enumerate()
            .map(|(i, v)| (format!("p{i:02}"), EmbeddingVector::new(v).unwrap()))
            .collect();
        let c = kmeans(&vectors, k, seed, 50).unwrap();
        for w in c.inertia_trace.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9, "{:?}", c.inertia_trace);
        }
        prop_assert_eq!(c.assignment.len(), vectors.len());
    }

    #[test]
    fn cosine_symmetric_and_scale_free(
        a in prop::collection::vec(0.1f64..5.0, 4),
        b in prop::collection::vec(-5.0f64..5.0, 4),
        scale in 0.01f64..100.0,
    ) {
        let (va, vb) = (EmbeddingVector::new(a.clone()).unwrap(), EmbeddingVector::new(b).unwrap());
        let ab = cosine_similarity(&va, &vb).unwrap();
        prop_assert!((ab - cosine_similarity(&vb, &va).unwrap()).abs() < 1e-12);
        let scaled = EmbeddingVector::new(a.iter().map(|x| x * scale).collect()).unwrap();
        prop_assert!((ab - cosine_similarity(&scaled, &vb).unwrap()).abs() < 1e-9);
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&ab));
    }

    #[test]
    fn overall_is_bounded_mean(m in prop::array::uniform8(0.0f64..=1.0)) {
        let o = task_a_overall(&m).unwrap();
        prop_assert!((0.0..=1.0).contains(&o));
        let named: Vec<(&str, Option<f64>)> = m.iter().map(|v| ("x", Some(*v))).collect();
        prop_assert!((overall(&named).unwrap() - m.iter().sum::<f64>() / 8.0).abs() < 1e-12);
    }

    #[test]
    fn lexical_scores_in_unit_interval(r in words(), h in words()) {
        for v in [
            rouge(&r, &h, RougeVariant::One),
            rouge(&r, &h, RougeVariant::Two),
            rouge(&r, &h, RougeVariant::L),
            bleu(&r, &h),
            meteor(&r, &h),
        ] {
            prop_assert!((0.0..=1.0).contains(&v), "{v} for {r:?} / {h:?}");
        }
    }

    #[test]
    fn bio_alignment_is_valid(
        spans in prop::collection::vec((span_in(40), perspective()), 0..6),
    ) {
        let text = "Cold air, damp rooms and stress make knees ache.";
        let len = text.chars().count();
        let gold: Vec<GoldSpan> = spans
            .into_iter()
            .map(|((s, e), label)| GoldSpan { answer_index: 0, start: s, end: e.min(len), text: String::new(), label })
            .filter(|g| g.start < g.end)
            .collect();
        let tokens = tokenize_with_offsets(text);
        let tags = bio_align(&tokens, &gold, len).unwrap();
        prop_assert!(is_valid_bio(&tags));
        prop_assert!(bio_decode(&tokens, &tags).is_ok());
    }
}
