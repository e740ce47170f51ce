//! Corpus ingestion, validation and splitting.
//!
//! The canonical file is UTF-8 JSON, either a top-level array or JSON-Lines,
//! with one thread per record:
//!
//! ```json
//! {"id": "t1", "question": "...", "context": null, "answers": ["..."],
//!  "spans": [{"answer_index": 0, "start": 0, "end": 9, "text": "...", "label": "CAUSE"}],
//!  "summaries": {"CAUSE": "..."}}
//! ```
//!
//! Span offsets may be omitted; they are then resolved by first-occurrence
//! search inside the named answer.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::text::{char_len, char_slice, find_all_chars};

/// One of the five closed perspective categories.
///
/// Declaration order is the fixed serialization order used throughout the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Perspective {
    Experience,
    Information,
    Cause,
    Suggestion,
    Question,
}

impl Perspective {
    pub const ALL: [Perspective; 5] = [
        Perspective::Experience,
        Perspective::Information,
        Perspective::Cause,
        Perspective::Suggestion,
        Perspective::Question,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Perspective::Experience => "EXPERIENCE",
            Perspective::Information => "INFORMATION",
            Perspective::Cause => "CAUSE",
            Perspective::Suggestion => "SUGGESTION",
            Perspective::Question => "QUESTION",
        }
    }

    /// Position in [`Perspective::ALL`].
    pub fn index(self) -> usize {
        self as usize
    }

    /// Case-insensitive lookup used when reading model output.
    pub fn parse_loose(s: &str) -> Option<Perspective> {
        let s = s.trim();
        Perspective::ALL
            .into_iter()
            .find(|p| p.as_str().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for Perspective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown perspective label {0:?}")]
pub struct UnknownPerspective(pub String);

impl FromStr for Perspective {
    type Err = UnknownPerspective;

    /// Strict: only the exact uppercase label is accepted.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Perspective::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| UnknownPerspective(s.to_string()))
    }
}

/// An annotated span inside one answer. Offsets are `[start, end)` in scalar values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldSpan {
    pub answer_index: usize,
    pub start: usize,
    pub end: usize,
    pub text: String,
    pub label: Perspective,
}

/// One community question-answering thread with its gold annotations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Thread {
    pub id: String,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
    pub answers: Vec<String>,
    #[serde(rename = "spans", default)]
    pub gold_spans: Vec<GoldSpan>,
    #[serde(rename = "summaries", default)]
    pub gold_summaries: BTreeMap<Perspective, String>,
}

impl Thread {
    /// Checks every structural invariant of a thread.
    pub fn validate(&self) -> Result<(), CorpusError> {
        let invalid = |reason: String| CorpusError::Validation {
            thread_id: self.id.clone(),
            reason,
        };
        if self.answers.is_empty() {
            return Err(invalid("thread has no answers".into()));
        }
        for (i, span) in self.gold_spans.iter().enumerate() {
            let answer = self.answers.get(span.answer_index).ok_or_else(|| {
                invalid(format!(
                    "span {i} names answer {} but the thread has {}",
                    span.answer_index,
                    self.answers.len()
                ))
            })?;
            if span.start >= span.end || span.end > char_len(answer) {
                return Err(invalid(format!(
                    "span {i} offsets [{}, {}) are outside answer {} (length {})",
                    span.start,
                    span.end,
                    span.answer_index,
                    char_len(answer)
                )));
            }
            if char_slice(answer, span.start, span.end) != Some(span.text.as_str()) {
                return Err(invalid(format!(
                    "span {i} text {:?} does not match answer {} at [{}, {})",
                    span.text, span.answer_index, span.start, span.end
                )));
            }
        }
        for label in self.gold_summaries.keys() {
            if !self.gold_spans.iter().any(|s| s.label == *label) {
                return Err(invalid(format!("summary for {label} has no {label} span")));
            }
        }
        Ok(())
    }

    /// Perspectives that occur among the gold spans.
    pub fn gold_perspectives(&self) -> BTreeSet<Perspective> {
        self.gold_spans.iter().map(|s| s.label).collect()
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read corpus {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("record {index}: malformed field `{field}`: {message}")]
    Malformed {
        index: usize,
        field: String,
        message: String,
    },
    #[error("thread {thread_id}: span text {text:?} not found in answer {answer_index}")]
    SpanNotFound {
        thread_id: String,
        answer_index: usize,
        text: String,
    },
    #[error("thread {thread_id}: {reason}")]
    Validation { thread_id: String, reason: String },
    #[error("unknown corpus schema {0:?} (expected \"canonical\" or \"adapter:<name>\")")]
    UnknownSchema(String),
    #[error("split counts {train}+{valid}+{test} do not sum to corpus size {total}")]
    SplitMismatch {
        train: usize,
        valid: usize,
        test: usize,
        total: usize,
    },
    #[error("tail of {requested} requested from a partition of {available}")]
    TailTooLong { requested: usize, available: usize },
    #[error("duplicate thread id {0}")]
    DuplicateId(String),
}

/// Threads loaded from disk plus non-fatal notes raised while loading.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub threads: Vec<Thread>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schema {
    Canonical,
    /// The shared-task release format (`labelled_answer_spans` / `labelled_summaries`).
    SharedTask,
}

impl FromStr for Schema {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "canonical" => Ok(Schema::Canonical),
            "adapter:peranssumm" | "adapter:puma" => Ok(Schema::SharedTask),
            other => Err(CorpusError::UnknownSchema(other.to_string())),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpan {
    answer_index: usize,
    #[serde(default)]
    start: Option<usize>,
    #[serde(default)]
    end: Option<usize>,
    text: String,
    label: Perspective,
}

#[derive(Debug, Deserialize)]
struct RawThread {
    id: String,
    question: String,
    #[serde(default)]
    context: Option<String>,
    answers: Vec<String>,
    #[serde(default)]
    spans: Vec<RawSpan>,
    #[serde(default)]
    summaries: BTreeMap<Perspective, String>,
}

/// Reads and validates a corpus file in the given schema (`"canonical"` or `"adapter:<name>"`).
pub fn load_corpus(path: impl AsRef<Path>, schema: &str) -> Result<Corpus, CorpusError> {
    let schema: Schema = schema.parse()?;
    let path = path.as_ref();
    let raw = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_corpus(&raw, schema)
}

/// Parses corpus text already in memory.
pub fn parse_corpus(raw: &str, schema: Schema) -> Result<Corpus, CorpusError> {
    let records = split_records(raw)?;
    let mut corpus = Corpus::default();
    let mut ids = BTreeSet::new();
    for (index, value) in records.into_iter().enumerate() {
        let thread = match schema {
            Schema::Canonical => canonical_record(index, value, &mut corpus.warnings)?,
            Schema::SharedTask => shared_task_record(index, value, &mut corpus.warnings)?,
        };
        thread.validate()?;
        if !ids.insert(thread.id.clone()) {
            return Err(CorpusError::DuplicateId(thread.id));
        }
        corpus.threads.push(thread);
    }
    Ok(corpus)
}

fn split_records(raw: &str) -> Result<Vec<Value>, CorpusError> {
    let trimmed = raw.trim_start();
    if trimmed.starts_with('[') {
        let values: Vec<Value> =
            serde_json::from_str(trimmed).map_err(|e| CorpusError::Malformed {
                index: 0,
                field: "<array>".into(),
                message: e.to_string(),
            })?;
        return Ok(values);
    }
    serde_json::Deserializer::from_str(raw)
        .into_iter::<Value>()
        .enumerate()
        .map(|(index, v)| {
            v.map_err(|e| CorpusError::Malformed {
                index,
                field: "<record>".into(),
                message: e.to_string(),
            })
        })
        .collect()
}

fn canonical_record(
    index: usize,
    value: Value,
    warnings: &mut Vec<String>,
) -> Result<Thread, CorpusError> {
    let raw: RawThread =
        serde_path_to_error::deserialize(value).map_err(|e| CorpusError::Malformed {
            index,
            field: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
    let mut gold_spans = Vec::with_capacity(raw.spans.len());
    for (i, span) in raw.spans.into_iter().enumerate() {
        let answer = raw
            .answers
            .get(span.answer_index)
            .ok_or_else(|| CorpusError::Malformed {
                index,
                field: format!("spans[{i}].answer_index"),
                message: format!("answer {} does not exist", span.answer_index),
            })?;
        let (start, end) = match (span.start, span.end) {
            (Some(s), Some(e)) => (s, e),
            (None, None) => {
                let hits = find_all_chars(answer, &span.text);
                let Some(&first) = hits.first() else {
                    return Err(CorpusError::SpanNotFound {
                        thread_id: raw.id.clone(),
                        answer_index: span.answer_index,
                        text: span.text,
                    });
                };
                if hits.len() > 1 {
                    warnings.push(format!(
                        "thread {}: span {:?} occurs {} times in answer {}; using the first",
                        raw.id,
                        span.text,
                        hits.len(),
                        span.answer_index
                    ));
                }
                (first, first + char_len(&span.text))
            }
            _ => {
                return Err(CorpusError::Malformed {
                    index,
                    field: format!("spans[{i}]"),
                    message: "start and end must be given together".into(),
                })
            }
        };
        gold_spans.push(GoldSpan {
            answer_index: span.answer_index,
            start,
            end,
            text: span.text,
            label: span.label,
        });
    }
    Ok(Thread {
        id: raw.id,
        question: raw.question,
        context: raw.context.filter(|c| !c.trim().is_empty()),
        answers: raw.answers,
        gold_spans,
        gold_summaries: raw.summaries,
    })
}

#[derive(Debug, Deserialize)]
struct SharedTaskSpan {
    txt: String,
}

#[derive(Debug, Deserialize)]
struct SharedTaskRecord {
    #[serde(alias = "id")]
    uri: String,
    question: String,
    #[serde(default)]
    context: Option<String>,
    answers: Vec<String>,
    #[serde(default)]
    labelled_answer_spans: BTreeMap<String, Vec<SharedTaskSpan>>,
    #[serde(default)]
    labelled_summaries: BTreeMap<String, String>,
}

/// The release format stores span offsets against the concatenated answers,
/// so spans are re-grounded by text search over the individual answers.
fn shared_task_record(
    index: usize,
    value: Value,
    warnings: &mut Vec<String>,
) -> Result<Thread, CorpusError> {
    let raw: SharedTaskRecord =
        serde_path_to_error::deserialize(value).map_err(|e| CorpusError::Malformed {
            index,
            field: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
    let mut gold_spans = Vec::new();
    for (label_key, spans) in &raw.labelled_answer_spans {
        let label = Perspective::parse_loose(label_key).ok_or_else(|| CorpusError::Malformed {
            index,
            field: format!("labelled_answer_spans.{label_key}"),
            message: format!("unknown perspective label {label_key:?}"),
        })?;
        for span in spans {
            let text = span.txt.as_str();
            let located = raw
                .answers
                .iter()
                .enumerate()
                .find_map(|(ai, a)| find_all_chars(a, text).first().map(|&s| (ai, s)));
            let Some((answer_index, start)) = located else {
                return Err(CorpusError::SpanNotFound {
                    thread_id: raw.uri.clone(),
                    answer_index: 0,
                    text: span.txt.clone(),
                });
            };
            gold_spans.push(GoldSpan {
                answer_index,
                start,
                end: start + char_len(text),
                text: span.txt.clone(),
                label,
            });
        }
    }
    gold_spans.sort_by_key(|s| (s.answer_index, s.start, s.end, s.label));
    let mut gold_summaries = BTreeMap::new();
    for (key, text) in raw.labelled_summaries {
        let label_part = key.trim_end_matches("_SUMMARY").trim_end_matches("_summary");
        let label = Perspective::parse_loose(label_part).ok_or_else(|| CorpusError::Malformed {
            index,
            field: format!("labelled_summaries.{key}"),
            message: format!("unknown perspective label {label_part:?}"),
        })?;
        if text.trim().is_empty() {
            continue;
        }
        if !gold_spans.iter().any(|s| s.label == label) {
            warnings.push(format!(
                "thread {}: dropping {label} summary with no {label} span",
                raw.uri
            ));
            continue;
        }
        gold_summaries.insert(label, text);
    }
    Ok(Thread {
        id: raw.uri,
        question: raw.question,
        context: raw.context.filter(|c| !c.trim().is_empty()),
        answers: raw.answers,
        gold_spans,
        gold_summaries,
    })
}

/// Serializes threads as canonical JSON-Lines.
pub fn to_jsonl(threads: &[Thread]) -> String {
    let mut out = String::new();
    for t in threads {
        out.push_str(&serde_json::to_string(t).expect("thread serializes"));
        out.push('\n');
    }
    out
}

pub fn write_corpus(path: impl AsRef<Path>, threads: &[Thread]) -> Result<(), CorpusError> {
    let path = path.as_ref();
    fs::write(path, to_jsonl(threads)).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Partition sizes for train / valid / test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

impl SplitSpec {
    /// Official shared-task split sizes.
    pub const OFFICIAL: SplitSpec = SplitSpec {
        train: 2236,
        valid: 959,
        test: 50,
    };

    pub fn total(&self) -> usize {
        self.train + self.valid + self.test
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Split<'a> {
    pub train: &'a [Thread],
    pub valid: &'a [Thread],
    pub test: &'a [Thread],
}

/// Contiguous, order-preserving partition.
pub fn split_corpus(threads: &[Thread], spec: SplitSpec) -> Result<Split<'_>, CorpusError> {
    if spec.total() != threads.len() {
        return Err(CorpusError::SplitMismatch {
            train: spec.train,
            valid: spec.valid,
            test: spec.test,
            total: threads.len(),
        });
    }
    let (train, rest) = threads.split_at(spec.train);
    let (valid, test) = rest.split_at(spec.valid);
    Ok(Split { train, valid, test })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    Train,
    Valid,
    Test,
}

/// Picks one partition, optionally restricted to its last `tail` threads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSelector {
    pub part: Part,
    #[serde(default)]
    pub tail: Option<usize>,
}

impl<'a> Split<'a> {
    pub fn part(&self, part: Part) -> &'a [Thread] {
        match part {
            Part::Train => self.train,
            Part::Valid => self.valid,
            Part::Test => self.test,
        }
    }

    pub fn select(&self, selector: SplitSelector) -> Result<&'a [Thread], CorpusError> {
        let part = self.part(selector.part);
        match selector.tail {
            None => Ok(part),
            Some(n) if n > part.len() => Err(CorpusError::TailTooLong {
                requested: n,
                available: part.len(),
            }),
            Some(n) => Ok(&part[part.len() - n..]),
        }
    }
}
