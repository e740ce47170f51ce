//! Prompt construction for span extraction (Task A) and perspective
//! summarization (Task B).
//!
//! Templates are plain text with named placeholders. Each placeholder expands
//! to a complete section including its heading, or to nothing:
//!
//! | placeholder  | expands to                                      |
//! |--------------|-------------------------------------------------|
//! | `{examples}` | numbered worked examples, empty for zero-shot   |
//! | `{question}` | `Question:` section                             |
//! | `{context}`  | `Context:` section, empty when there is none    |
//! | `{answers}`  | `Answers:` section with numbered answers        |
//! | `{spans}`    | `Spans:` section grouped by perspective         |

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Perspective, Thread};
use crate::parsing::{serialize_spans, serialize_summaries, LabeledSpan, PerspectiveSummaries};

pub const DEFAULT_SYSTEM_PROMPT: &str = "You are a helpful assistant.";
pub const MAX_EXEMPLARS: usize = 5;

const TASK_A_V1: &str = include_str!("../templates/task_a_v1.txt");
const TASK_B_V1: &str = include_str!("../templates/task_b_v1.txt");
pub const VERIFY_PROMPT: &str = include_str!("../templates/verify_v1.txt");
pub const HALLUCINATION_PROMPT: &str = include_str!("../templates/hallucination_v1.txt");
pub const AGGREGATE_PROMPT: &str = include_str!("../templates/aggregate_v1.txt");

/// The five perspective definitions every Task A prompt carries verbatim.
pub const PERSPECTIVE_DEFINITIONS: [(Perspective, &str); 5] = [
    (Perspective::Information, "Knowledge about diseases, disorders, and health-related facts."),
    (Perspective::Cause, "Reasons responsible for the occurrence of a medical condition."),
    (Perspective::Suggestion, "Advice or recommendations to assist in making informed decisions."),
    (Perspective::Experience, "Individual experiences or anecdotes related to healthcare."),
    (Perspective::Question, "Inquiries for deeper understanding."),
];

/// Per-perspective summary openers every Task B prompt carries verbatim.
pub const SUMMARY_OPENERS: [(Perspective, &str); 5] = [
    (Perspective::Information, "For information purposes, [summary]..."),
    (Perspective::Cause, "Some of the causes include [summary]..."),
    (Perspective::Suggestion, "It is suggested that [summary]..."),
    (Perspective::Experience, "In user\u{2019}s experience, [summary]..."),
    (Perspective::Question, "It is inquired whether [summary]..."),
];

pub const SPAN_OUTPUT_GRAMMAR: &str = r#"span: "<extracted text>", label: "<perspective>""#;
pub const SUMMARY_OUTPUT_GRAMMAR: &str = r#"Summary: "<generated summary>""#;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Task {
    #[serde(rename = "A")]
    SpanExtraction,
    #[serde(rename = "B")]
    Summarization,
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Task::SpanExtraction => "A",
            Task::Summarization => "B",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptMessages {
    pub system: String,
    pub user: String,
}

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("{0} exemplars given; at most {MAX_EXEMPLARS} are supported")]
    TooManyExemplars(usize),
    #[error("unknown template {0:?}")]
    UnknownTemplate(String),
    #[error("template {id:?} is for task {template}, not task {requested}")]
    WrongTask {
        id: String,
        template: Task,
        requested: Task,
    },
    #[error("template {id:?} lacks the required placeholder {placeholder}")]
    MissingPlaceholder { id: String, placeholder: &'static str },
    #[error("no spans to summarize for thread {0}")]
    NoSpans(String),
    #[error("exemplar {thread_id} has no gold target for task {task}")]
    EmptyExemplar { thread_id: String, task: Task },
    #[error("exemplar {thread_id} carries a target for task {target}, not task {requested}")]
    ExemplarTaskMismatch {
        thread_id: String,
        target: Task,
        requested: Task,
    },
    #[error("cannot read template {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// A named prompt template for one task.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub id: String,
    pub task: Task,
    pub body: String,
}

impl Template {
    /// Built-in templates: `task-a/v1` and `task-b/v1`.
    pub fn builtin(id: &str) -> Result<Template, PromptError> {
        let (task, body) = match id {
            "task-a/v1" => (Task::SpanExtraction, TASK_A_V1),
            "task-b/v1" => (Task::Summarization, TASK_B_V1),
            other => return Err(PromptError::UnknownTemplate(other.to_string())),
        };
        Ok(Template {
            id: id.to_string(),
            task,
            body: body.to_string(),
        })
    }

    pub fn default_for(task: Task) -> Template {
        match task {
            Task::SpanExtraction => Template::builtin("task-a/v1"),
            Task::Summarization => Template::builtin("task-b/v1"),
        }
        .expect("built-in template")
    }

    /// Loads a template from disk after checking its required placeholder.
    pub fn from_file(path: impl AsRef<Path>, task: Task) -> Result<Template, PromptError> {
        let path = path.as_ref();
        let body = std::fs::read_to_string(path).map_err(|source| PromptError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let t = Template {
            id: path.display().to_string(),
            task,
            body,
        };
        let required = match task {
            Task::SpanExtraction => "{answers}",
            Task::Summarization => "{spans}",
        };
        if !t.body.contains(required) {
            return Err(PromptError::MissingPlaceholder {
                id: t.id,
                placeholder: required,
            });
        }
        Ok(t)
    }
}

/// What an exemplar teaches: gold spans for Task A or gold summaries for Task B.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExemplarTarget {
    Spans(Vec<LabeledSpan>),
    Summaries(PerspectiveSummaries),
}

impl ExemplarTarget {
    pub fn task(&self) -> Task {
        match self {
            ExemplarTarget::Spans(_) => Task::SpanExtraction,
            ExemplarTarget::Summaries(_) => Task::Summarization,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Exemplar {
    pub thread: Thread,
    pub target: ExemplarTarget,
}

impl Exemplar {
    /// Builds an exemplar from a thread's full gold annotations.
    pub fn from_gold(thread: &Thread, task: Task) -> Result<Exemplar, PromptError> {
        let target = match task {
            Task::SpanExtraction => {
                ExemplarTarget::Spans(thread.gold_spans.iter().map(LabeledSpan::from).collect())
            }
            Task::Summarization => ExemplarTarget::Summaries(thread.gold_summaries.clone()),
        };
        let ex = Exemplar {
            thread: thread.clone(),
            target,
        };
        ex.check(task)?;
        Ok(ex)
    }

    fn check(&self, task: Task) -> Result<(), PromptError> {
        if self.target.task() != task {
            return Err(PromptError::ExemplarTaskMismatch {
                thread_id: self.thread.id.clone(),
                target: self.target.task(),
                requested: task,
            });
        }
        let empty = match &self.target {
            ExemplarTarget::Spans(s) => s.is_empty(),
            ExemplarTarget::Summaries(s) => s.is_empty(),
        };
        // Task B exemplars also need input spans to show.
        let no_inputs = task == Task::Summarization && self.thread.gold_spans.is_empty();
        if empty || no_inputs {
            return Err(PromptError::EmptyExemplar {
                thread_id: self.thread.id.clone(),
                task,
            });
        }
        Ok(())
    }
}

fn question_section(thread: &Thread) -> String {
    format!("Question:\n{}\n\n", thread.question.trim())
}

fn context_section(thread: &Thread) -> String {
    match thread.context.as_deref().map(str::trim) {
        Some(c) if !c.is_empty() => format!("Context:\n{c}\n\n"),
        _ => String::new(),
    }
}

fn answers_section(thread: &Thread) -> String {
    let mut s = String::from("Answers:\n");
    for (i, a) in thread.answers.iter().enumerate() {
        let _ = writeln!(s, "Answer {}: {}", i + 1, a.trim());
    }
    s.push('\n');
    s
}

fn spans_section(spans: &[LabeledSpan]) -> String {
    let mut grouped: BTreeMap<Perspective, Vec<&str>> = BTreeMap::new();
    for span in spans {
        grouped.entry(span.label).or_default().push(&span.text);
    }
    let mut s = String::from("Spans:\n");
    for (label, texts) in grouped {
        let _ = writeln!(s, "{label}:");
        for t in texts {
            let _ = writeln!(s, "- \"{t}\"");
        }
    }
    s.push('\n');
    s
}

/// Renders an exemplar as its inputs followed by its gold output in the
/// grammar the model is asked to produce.
pub fn render_exemplar(ex: &Exemplar, task: Task) -> Result<String, PromptError> {
    ex.check(task)?;
    let t = &ex.thread;
    let mut out = question_section(t);
    out.push_str(&context_section(t));
    match &ex.target {
        ExemplarTarget::Spans(spans) => {
            out.push_str(&answers_section(t));
            out.push_str("Output:\n");
            out.push_str(&serialize_spans(spans));
        }
        ExemplarTarget::Summaries(summaries) => {
            let inputs: Vec<LabeledSpan> = t.gold_spans.iter().map(LabeledSpan::from).collect();
            out.push_str(&spans_section(&inputs));
            out.push_str("Output:\n");
            out.push_str(&serialize_summaries(summaries));
        }
    }
    Ok(out)
}

fn examples_section(exemplars: &[Exemplar], task: Task) -> Result<String, PromptError> {
    if exemplars.len() > MAX_EXEMPLARS {
        return Err(PromptError::TooManyExemplars(exemplars.len()));
    }
    if exemplars.is_empty() {
        return Ok(String::new());
    }
    let mut s = String::new();
    for (i, ex) in exemplars.iter().enumerate() {
        let _ = write!(s, "### Example {}\n{}\n", i + 1, render_exemplar(ex, task)?);
    }
    s.push_str("### Your turn\n");
    Ok(s)
}

fn check_template(template: &Template, task: Task) -> Result<(), PromptError> {
    if template.task != task {
        return Err(PromptError::WrongTask {
            id: template.id.clone(),
            template: template.task,
            requested: task,
        });
    }
    Ok(())
}

fn fill(body: &str, slots: &[(&str, &str)]) -> String {
    slots
        .iter()
        .fold(body.to_string(), |acc, (name, value)| acc.replace(name, value))
}

pub fn build_task_a_prompt(
    thread: &Thread,
    exemplars: &[Exemplar],
    template: &Template,
) -> Result<PromptMessages, PromptError> {
    check_template(template, Task::SpanExtraction)?;
    let examples = examples_section(exemplars, Task::SpanExtraction)?;
    let user = fill(
        &template.body,
        &[
            ("{examples}", &examples),
            ("{question}", &question_section(thread)),
            ("{context}", &context_section(thread)),
            ("{answers}", &answers_section(thread)),
        ],
    );
    Ok(PromptMessages {
        system: DEFAULT_SYSTEM_PROMPT.to_string(),
        user,
    })
}

pub fn build_task_b_prompt(
    thread: &Thread,
    spans: &[LabeledSpan],
    exemplars: &[Exemplar],
    template: &Template,
) -> Result<PromptMessages, PromptError> {
    check_template(template, Task::Summarization)?;
    if spans.is_empty() {
        return Err(PromptError::NoSpans(thread.id.clone()));
    }
    let examples = examples_section(exemplars, Task::Summarization)?;
    let user = fill(
        &template.body,
        &[
            ("{examples}", &examples),
            ("{question}", &question_section(thread)),
            ("{context}", &context_section(thread)),
            ("{spans}", &spans_section(spans)),
        ],
    );
    Ok(PromptMessages {
        system: DEFAULT_SYSTEM_PROMPT.to_string(),
        user,
    })
}
