//! Model-output parsing for labeled spans and per-perspective summaries,
//! and the canonical serializers that emit the same grammars.
//!
//! Span grammar, one item per line:
//!
//! ```text
//! span: "<extracted text>", label: "<PERSPECTIVE>"
//! ```
//!
//! Summary grammar, one item per line:
//!
//! ```text
//! <PERSPECTIVE> Summary: "<summary>"
//! ```
//!
//! The parsers never fail: anything they cannot read becomes a warning.

use std::collections::BTreeMap;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::{GoldSpan, Perspective, Thread};
use crate::text::{char_len, find_chars};

/// Where a span sits inside a thread: answer index plus `[start, end)` scalar offsets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SpanLocation {
    pub answer_index: usize,
    pub start: usize,
    pub end: usize,
}

/// A labeled span extracted from model output. `location` is `None` when the
/// text could not be grounded in any answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSpan {
    pub text: String,
    pub label: Perspective,
    #[serde(flatten, default, skip_serializing_if = "Option::is_none")]
    pub location: Option<SpanLocation>,
}

impl From<&GoldSpan> for LabeledSpan {
    fn from(g: &GoldSpan) -> Self {
        LabeledSpan {
            text: g.text.clone(),
            label: g.label,
            location: Some(SpanLocation {
                answer_index: g.answer_index,
                start: g.start,
                end: g.end,
            }),
        }
    }
}

/// At most one summary per perspective, iterated in the fixed perspective order.
pub type PerspectiveSummaries = BTreeMap<Perspective, String>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParsePolicy {
    Strict,
    #[default]
    Lenient,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedSpans {
    pub spans: Vec<LabeledSpan>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedSummaries {
    pub summaries: PerspectiveSummaries,
    pub warnings: Vec<String>,
}

static STRICT_SPAN: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r#"^\s*span:\s*"(.*)",\s*label:\s*"([^"]*)"\s*$"#).unwrap()
});

// Tolerates bullets, numbering, bold markers, key case and a trailing comma.
static LENIENT_SPAN: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r#"(?i)^\s*(?:[-*•>]+\s*|\d+[.)]\s*)?(?:\*\*)?\s*span\s*(?:\*\*)?\s*:\s*"(.*)"\s*,?\s*(?:\*\*)?\s*label\s*(?:\*\*)?\s*:\s*"?([A-Za-z_ ]+?)"?\s*[,.;]?\s*$"#,
    )
    .unwrap()
});

// Lines that look like they meant to be span lines.
static SPAN_ATTEMPT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"(?i)\bspan\s*:.*\blabel\s*:"#).unwrap());

fn straighten_quotes(s: &str) -> String {
    s.chars()
        .map(|c| match c {
            '\u{201C}' | '\u{201D}' | '\u{201E}' | '\u{201F}' | '\u{00AB}' | '\u{00BB}' => '"',
            _ => c,
        })
        .collect()
}

/// Grounds `text` to its first occurrence across the thread's answers, in answer order.
pub fn ground(text: &str, thread: &Thread) -> Option<SpanLocation> {
    thread.answers.iter().enumerate().find_map(|(ai, answer)| {
        find_chars(answer, text).map(|start| SpanLocation {
            answer_index: ai,
            start,
            end: start + char_len(text),
        })
    })
}

#[derive(Deserialize)]
struct JsonSpan {
    #[serde(alias = "text", alias = "Span")]
    span: String,
    #[serde(alias = "Label", alias = "perspective")]
    label: String,
}

fn json_candidates(raw: &str) -> Option<Vec<(String, String)>> {
    let start = raw.find('[')?;
    let end = raw.rfind(']')?;
    if end <= start {
        return None;
    }
    let items: Vec<JsonSpan> = serde_json::from_str(&raw[start..=end]).ok()?;
    Some(items.into_iter().map(|s| (s.span, s.label)).collect())
}

/// Extracts labeled spans from a completion and grounds them in the thread.
pub fn parse_spans(raw: &str, thread: &Thread, policy: ParsePolicy) -> ParsedSpans {
    let mut out = ParsedSpans::default();
    let mut candidates: Vec<(usize, String, String)> = Vec::new();

    for (lineno, line) in raw.lines().enumerate() {
        let caps = match policy {
            ParsePolicy::Strict => STRICT_SPAN.captures(line).map(|c| (c[1].to_string(), c[2].to_string())),
            ParsePolicy::Lenient => {
                let line = straighten_quotes(line);
                LENIENT_SPAN
                    .captures(&line)
                    .map(|c| (c[1].to_string(), c[2].to_string()))
            }
        };
        match caps {
            Some((text, label)) => candidates.push((lineno + 1, text, label)),
            None if SPAN_ATTEMPT.is_match(line) => out
                .warnings
                .push(format!("line {}: unreadable span line skipped", lineno + 1)),
            None => {}
        }
    }

    if candidates.is_empty() && policy == ParsePolicy::Lenient {
        if let Some(items) = json_candidates(&straighten_quotes(raw)) {
            candidates.extend(items.into_iter().map(|(t, l)| (0, t, l)));
        }
    }

    for (lineno, text, label_raw) in candidates {
        let Some(label) = Perspective::parse_loose(&label_raw) else {
            out.warnings.push(format!(
                "line {lineno}: unknown label {:?}; skipped",
                label_raw.trim()
            ));
            continue;
        };
        let text = match policy {
            ParsePolicy::Strict => text,
            ParsePolicy::Lenient => text.trim().to_string(),
        };
        if text.trim().is_empty() {
            out.warnings.push(format!("line {lineno}: empty span text; skipped"));
            continue;
        }
        let location = ground(&text, thread);
        if location.is_none() {
            match policy {
                ParsePolicy::Strict => {
                    out.warnings.push(format!(
                        "line {lineno}: span {text:?} not found in any answer; dropped"
                    ));
                    continue;
                }
                ParsePolicy::Lenient => out.warnings.push(format!(
                    "line {lineno}: span {text:?} not found in any answer; kept without offsets"
                )),
            }
        }
        out.spans.push(LabeledSpan { text, label, location });
    }

    if out.spans.is_empty() {
        out.warnings.push("no parseable span lines".into());
    }
    out
}

static INLINE_SUMMARY: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r#"(?i)^\s*(?:[-*•>]+\s*|\d+[.)]\s*|#+\s*)?(?:\*\*)?\s*([A-Za-z_]+)\s+summary\s*(?:\*\*)?\s*:\s*(?:\*\*)?\s*(.*?)\s*$"#)
        .unwrap()
});

static HEADING: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r#"^\s*(?:[-*•>]+\s*|\d+[.)]\s*|#+\s*)?(?:\*\*)?\s*([A-Za-z_]+)\s*(?:\*\*)?\s*:?\s*(?:\*\*)?\s*$"#)
        .unwrap()
});

static BARE_SUMMARY: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r#"(?i)^\s*(?:[-*•>]+\s*)?(?:\*\*)?\s*summary\s*(?:\*\*)?\s*:\s*(?:\*\*)?\s*(.*?)\s*$"#).unwrap()
});

/// Removes one pair of surrounding straight quotes.
fn unquote(s: &str) -> &str {
    let s = s.trim();
    if s.len() >= 2 && s.starts_with('"') && s.ends_with('"') {
        &s[1..s.len() - 1]
    } else {
        s
    }
}

/// Reads `<LABEL> Summary: <text>` lines, and `Summary: "<text>"` lines that
/// follow a bare label heading.
pub fn parse_summaries(raw: &str) -> ParsedSummaries {
    let mut out = ParsedSummaries::default();
    let mut heading: Option<Perspective> = None;

    let insert = |out: &mut ParsedSummaries, label: Perspective, text: &str, lineno: usize| {
        let text = unquote(text);
        if text.trim().is_empty() {
            out.warnings
                .push(format!("line {lineno}: empty {label} summary skipped"));
            return;
        }
        if out.summaries.contains_key(&label) {
            out.warnings.push(format!(
                "line {lineno}: duplicate {label} summary; keeping the first"
            ));
            return;
        }
        out.summaries.insert(label, text.to_string());
    };

    for (i, line) in raw.lines().enumerate() {
        let lineno = i + 1;
        let line = straighten_quotes(line);
        if let Some(c) = INLINE_SUMMARY.captures(&line) {
            match Perspective::parse_loose(&c[1]) {
                Some(label) => {
                    insert(&mut out, label, &c[2], lineno);
                    heading = None;
                }
                None => out.warnings.push(format!(
                    "line {lineno}: unknown label {:?}; skipped",
                    &c[1]
                )),
            }
            continue;
        }
        if let Some(c) = BARE_SUMMARY.captures(&line) {
            match heading.take() {
                Some(label) => insert(&mut out, label, &c[1], lineno),
                None => out
                    .warnings
                    .push(format!("line {lineno}: summary without a perspective heading")),
            }
            continue;
        }
        if let Some(c) = HEADING.captures(&line) {
            if let Some(label) = Perspective::parse_loose(&c[1]) {
                heading = Some(label);
            }
        }
    }

    if out.summaries.is_empty() {
        out.warnings.push("no recognizable summaries".into());
    }
    out
}

/// One `span: "...", label: "..."` line per span, in input order.
pub fn serialize_spans(spans: &[LabeledSpan]) -> String {
    spans
        .iter()
        .map(|s| format!("span: \"{}\", label: \"{}\"\n", s.text, s.label))
        .collect()
}

/// One `<LABEL> Summary: "..."` line per perspective, in the fixed perspective order.
pub fn serialize_summaries(summaries: &PerspectiveSummaries) -> String {
    summaries
        .iter()
        .map(|(label, text)| format!("{label} Summary: \"{text}\"\n"))
        .collect()
}
