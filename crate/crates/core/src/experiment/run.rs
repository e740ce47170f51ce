use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};

use super::config::{EmbeddingSource, RunConfig, RunTask, Setting};
use super::RunError;
use crate::corpus::{load_corpus, split_corpus, SplitSpec, Thread};
use crate::embedding::{EmbeddingProvider, FileEmbeddings, HashEmbedder, HttpEmbedder};
use crate::exemplar::{kmeans, manual_exemplars, select_exemplars};
use crate::gateway::{AgentSpec, ChatBackend, Gateway, HttpBackend, MockBackend, MockScript};
use crate::moa::{run_pipeline_with_prompt, MoaConfig, MoaError, MoaTrace};
use crate::parsing::{parse_spans, parse_summaries, LabeledSpan, PerspectiveSummaries};
use crate::prompting::{build_task_a_prompt, build_task_b_prompt, Exemplar, PromptMessages, Task, Template};

pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const TRACES_FILE: &str = "traces.jsonl";
pub const FAILURES_FILE: &str = "failures.jsonl";
pub const CALLS_FILE: &str = "calls.jsonl";
pub const MANIFEST_FILE: &str = "run.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub thread_id: String,
    pub task: Task,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spans: Option<Vec<LabeledSpan>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summaries: Option<PerspectiveSummaries>,
    #[serde(default)]
    pub raw: String,
    #[serde(default)]
    pub exemplars: Vec<String>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TraceBody {
    Single {
        agent: String,
        prompt: PromptMessages,
        output: String,
    },
    Moa {
        trace: MoaTrace,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub thread_id: String,
    pub task: Task,
    #[serde(flatten)]
    pub body: TraceBody,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub thread_id: String,
    pub task: Task,
    pub error: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<MoaTrace>,
}

/// Written once per run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: RunConfig,
    pub official_split: SplitSpec,
    pub eval_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub eval_threads: usize,
    pub completed: usize,
    pub skipped: usize,
    pub failed: usize,
}

/// Mock script when one is given (the override wins), HTTP endpoints otherwise.
pub fn backend_for(config: &RunConfig, mock_override: Option<&Path>) -> Result<Arc<dyn ChatBackend>, RunError> {
    match mock_override.or(config.mock.as_deref()) {
        Some(path) => {
            let script = MockScript::from_file(path).map_err(|e| RunError::Io {
                path: path.display().to_string(),
                source: e,
            })?;
            Ok(Arc::new(MockBackend::new(script)?))
        }
        None => Ok(Arc::new(
            HttpBackend::new(Duration::from_secs(config.timeout_secs)).map_err(|e| RunError::Config(e.to_string()))?,
        )),
    }
}

pub fn resolve_template(spec: Option<&str>, task: Task) -> Result<Template, RunError> {
    let t = match spec {
        None => Template::default_for(task),
        Some(s) if s.ends_with(".txt") => Template::from_file(s, task)?,
        Some(id) => Template::builtin(id)?,
    };
    if t.task != task {
        return Err(RunError::Config(format!("template {} is not a task {task} template", t.id)));
    }
    Ok(t)
}

/// Text embedded for exemplar retrieval.
pub fn retrieval_text(thread: &Thread) -> String {
    match &thread.context {
        Some(c) if !c.trim().is_empty() => format!("{}\n{}", thread.question, c),
        _ => thread.question.clone(),
    }
}

fn provider(source: &EmbeddingSource) -> Result<Box<dyn EmbeddingProvider>, RunError> {
    Ok(match source {
        EmbeddingSource::Hash { dim } => Box::new(HashEmbedder { dim: *dim }),
        EmbeddingSource::File { path } => Box::new(FileEmbeddings::load(path)?),
        EmbeddingSource::Http { url } => Box::new(HttpEmbedder::new(url.clone())),
    })
}

/// Exemplar ids for every evaluated thread, drawn from the train pool only.
pub async fn plan_exemplars(
    config: &RunConfig,
    pool: &[Thread],
    targets: &[Thread],
) -> Result<HashMap<String, Vec<String>>, RunError> {
    let mut plan = HashMap::new();
    match config.setting {
        Setting::ZeroShot | Setting::Moa => {}
        Setting::FewShotManual => {
            let ids = manual_exemplars(&config.curated, config.shots)?;
            for id in &ids {
                if !pool.iter().any(|t| &t.id == id) {
                    return Err(RunError::Config(format!("curated exemplar {id} is not in the train split")));
                }
            }
            for t in targets {
                plan.insert(t.id.clone(), ids.clone());
            }
        }
        Setting::FewShotCluster => {
            let embedder = provider(&config.embeddings)?;
            let pool_items: Vec<(String, String)> = pool.iter().map(|t| (t.id.clone(), retrieval_text(t))).collect();
            let pool_vecs = embedder.embed(&pool_items).await?;
            let clustering = kmeans(&pool_vecs, config.clusters(), config.seed, config.kmeans_iters)?;
            let query_items: Vec<(String, String)> =
                targets.iter().map(|t| (t.id.clone(), retrieval_text(t))).collect();
            let queries = embedder.embed(&query_items).await?;
            for t in targets {
                let q = queries
                    .get(&t.id)
                    .ok_or_else(|| RunError::Config(format!("no embedding for {}", t.id)))?;
                let ids = select_exemplars(&clustering, q, config.shots, &pool_vecs)?;
                plan.insert(t.id.clone(), ids);
            }
        }
    }
    Ok(plan)
}

enum Runner {
    Single(AgentSpec),
    Moa(Box<MoaConfig>),
}

struct Context {
    gateway: Gateway,
    config: RunConfig,
    runner_a: Option<Runner>,
    runner_b: Option<Runner>,
    template_a: Template,
    template_b: Template,
    pool: HashMap<String, Thread>,
}

#[derive(Default)]
struct Outcome {
    predictions: Vec<PredictionRecord>,
    traces: Vec<TraceRecord>,
    failures: Vec<FailureRecord>,
}

impl Context {
    fn runner(&self, task: Task) -> &Runner {
        match task {
            Task::SpanExtraction => self.runner_a.as_ref(),
            Task::Summarization => self.runner_b.as_ref(),
        }
        .expect("runner for an included task")
    }

    fn exemplars(&self, ids: &[String], task: Task) -> Result<Vec<Exemplar>, RunError> {
        ids.iter()
            .map(|id| {
                let t = self.pool.get(id).ok_or_else(|| RunError::Config(format!("exemplar {id} not in pool")))?;
                Ok(Exemplar::from_gold(t, task)?)
            })
            .collect()
    }

    async fn call(&self, thread: &Thread, task: Task, prompt: PromptMessages) -> Result<(String, TraceRecord), FailureRecord> {
        let fail = |error: String, trace: Option<MoaTrace>| FailureRecord {
            thread_id: thread.id.clone(),
            task,
            error,
            trace,
        };
        let (text, body) = match self.runner(task) {
            Runner::Single(agent) => {
                let resp = self
                    .gateway
                    .complete(agent, &prompt)
                    .await
                    .map_err(|e| fail(e.to_string(), None))?;
                let body = TraceBody::Single {
                    agent: agent.name.clone(),
                    prompt,
                    output: resp.text.clone(),
                };
                (resp.text, body)
            }
            Runner::Moa(cfg) => {
                let (text, trace) = run_pipeline_with_prompt(&self.gateway, cfg, &prompt)
                    .await
                    .map_err(|e: MoaError| {
                        let partial = e.trace().cloned();
                        fail(e.to_string(), partial)
                    })?;
                (text, TraceBody::Moa { trace })
            }
        };
        Ok((
            text,
            TraceRecord {
                thread_id: thread.id.clone(),
                task,
                body,
            },
        ))
    }

    async fn task_a(&self, thread: &Thread, ids: &[String]) -> Result<(PredictionRecord, TraceRecord), FailureRecord> {
        let task = Task::SpanExtraction;
        let fail = |error: String| FailureRecord {
            thread_id: thread.id.clone(),
            task,
            error,
            trace: None,
        };
        let exemplars = self.exemplars(ids, task).map_err(|e| fail(e.to_string()))?;
        let prompt = build_task_a_prompt(thread, &exemplars, &self.template_a).map_err(|e| fail(e.to_string()))?;
        let (raw, trace) = self.call(thread, task, prompt).await?;
        let parsed = parse_spans(&raw, thread, self.config.parse_policy);
        Ok((
            PredictionRecord {
                thread_id: thread.id.clone(),
                task,
                spans: Some(parsed.spans),
                summaries: None,
                raw,
                exemplars: ids.to_vec(),
                warnings: parsed.warnings,
            },
            trace,
        ))
    }

    async fn task_b(
        &self,
        thread: &Thread,
        spans: &[LabeledSpan],
        ids: &[String],
    ) -> Result<(PredictionRecord, TraceRecord), FailureRecord> {
        let task = Task::Summarization;
        let fail = |error: String| FailureRecord {
            thread_id: thread.id.clone(),
            task,
            error,
            trace: None,
        };
        let exemplars = self.exemplars(ids, task).map_err(|e| fail(e.to_string()))?;
        let prompt =
            build_task_b_prompt(thread, spans, &exemplars, &self.template_b).map_err(|e| fail(e.to_string()))?;
        let (raw, trace) = self.call(thread, task, prompt).await?;
        let parsed = parse_summaries(&raw);
        Ok((
            PredictionRecord {
                thread_id: thread.id.clone(),
                task,
                spans: None,
                summaries: Some(parsed.summaries),
                raw,
                exemplars: ids.to_vec(),
                warnings: parsed.warnings,
            },
            trace,
        ))
    }

    async fn process(&self, thread: &Thread, ids: &[String], done: &BTreeMap<(String, Task), PredictionRecord>) -> Outcome {
        let mut out = Outcome::default();
        let run_task = self.config.task;
        let key = |task| (thread.id.clone(), task);
        let mut a_spans: Option<Vec<LabeledSpan>> = done
            .get(&key(Task::SpanExtraction))
            .and_then(|r| r.spans.clone());

        if run_task.includes(Task::SpanExtraction) && !done.contains_key(&key(Task::SpanExtraction)) {
            match self.task_a(thread, ids).await {
                Ok((p, t)) => {
                    a_spans = p.spans.clone();
                    out.predictions.push(p);
                    out.traces.push(t);
                }
                Err(f) => out.failures.push(f),
            }
        }
        if run_task.includes(Task::Summarization) && !done.contains_key(&key(Task::Summarization)) {
            let spans = match run_task {
                RunTask::AThenB => a_spans,
                _ => Some(thread.gold_spans.iter().map(LabeledSpan::from).collect()),
            };
            match spans {
                None => out.failures.push(FailureRecord {
                    thread_id: thread.id.clone(),
                    task: Task::Summarization,
                    error: "no task A prediction to summarize".into(),
                    trace: None,
                }),
                Some(spans) => match self.task_b(thread, &spans, ids).await {
                    Ok((p, t)) => {
                        out.predictions.push(p);
                        out.traces.push(t);
                    }
                    Err(f) => out.failures.push(f),
                },
            }
        }
        out
    }
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, RunError> {
    let raw = std::fs::read_to_string(path).map_err(|source| RunError::Io {
        path: path.display().to_string(),
        source,
    })?;
    raw.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| RunError::Malformed {
                path: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn load_predictions(path: impl AsRef<Path>) -> Result<Vec<PredictionRecord>, RunError> {
    read_jsonl(path.as_ref())
}

pub fn load_traces(path: impl AsRef<Path>) -> Result<Vec<TraceRecord>, RunError> {
    read_jsonl(path.as_ref())
}

pub fn load_failures(path: impl AsRef<Path>) -> Result<Vec<FailureRecord>, RunError> {
    read_jsonl(path.as_ref())
}

fn append(path: &Path) -> Result<File, RunError> {
    OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|source| RunError::Io {
            path: path.display().to_string(),
            source,
        })
}

fn write_line<T: Serialize>(file: &mut File, path: &Path, value: &T) -> Result<(), RunError> {
    let line = serde_json::to_string(value).expect("record serializes");
    writeln!(file, "{line}").map_err(|source| RunError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Threads a run evaluates, after the optional limit.
pub fn eval_threads(config: &RunConfig, threads: &[Thread], limit: Option<usize>) -> Result<Vec<Thread>, RunError> {
    let selected: &[Thread] = match config.split {
        Some(spec) => split_corpus(threads, spec)?.select(config.eval)?,
        None => threads,
    };
    let n = limit.unwrap_or(selected.len()).min(selected.len());
    Ok(selected[..n].to_vec())
}

/// Runs the configured setting over the evaluation threads.
///
/// Records already in the run directory's predictions file are skipped, so an
/// interrupted run resumes where it stopped. Per-thread failures are written
/// to the failures file and do not stop the run.
pub async fn run(config: &RunConfig, backend: Arc<dyn ChatBackend>, limit: Option<usize>) -> Result<RunSummary, RunError> {
    config.validate()?;
    let corpus = load_corpus(&config.corpus, &config.schema)?;
    let targets = eval_threads(config, &corpus.threads, limit)?;
    let pool: Vec<Thread> = match config.split {
        Some(spec) => split_corpus(&corpus.threads, spec)?.train.to_vec(),
        None => Vec::new(),
    };
    let plan = plan_exemplars(config, &pool, &targets).await?;

    let dir = &config.output_dir;
    std::fs::create_dir_all(dir).map_err(|source| RunError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let manifest = RunManifest {
        config: config.clone(),
        official_split: SplitSpec::OFFICIAL,
        eval_ids: targets.iter().map(|t| t.id.clone()).collect(),
    };
    let manifest_path = dir.join(MANIFEST_FILE);
    std::fs::write(&manifest_path, serde_json::to_string_pretty(&manifest).expect("manifest serializes"))
        .map_err(|source| RunError::Io {
            path: manifest_path.display().to_string(),
            source,
        })?;

    let pred_path = dir.join(PREDICTIONS_FILE);
    let done: BTreeMap<(String, Task), PredictionRecord> = if pred_path.exists() {
        load_predictions(&pred_path)?
            .into_iter()
            .map(|r| ((r.thread_id.clone(), r.task), r))
            .collect()
    } else {
        BTreeMap::new()
    };

    let runner = |task: Task, src: &Option<super::config::MoaSource>| -> Result<Option<Runner>, RunError> {
        if !config.task.includes(task) {
            return Ok(None);
        }
        Ok(Some(match config.setting {
            Setting::Moa => Runner::Moa(Box::new(
                src.as_ref().expect("validated").resolve()?,
            )),
            _ => Runner::Single(config.agent.clone().expect("validated")),
        }))
    };
    let ctx = Context {
        gateway: Gateway::new(backend)
            .with_retry(config.retry)
            .with_concurrency_cap(config.concurrency_cap)
            .with_trace_file(dir.join(CALLS_FILE))?,
        runner_a: runner(Task::SpanExtraction, &config.moa_a)?,
        runner_b: runner(Task::Summarization, &config.moa_b)?,
        template_a: resolve_template(config.template_a.as_deref(), Task::SpanExtraction)?,
        template_b: resolve_template(config.template_b.as_deref(), Task::Summarization)?,
        pool: pool.into_iter().map(|t| (t.id.clone(), t)).collect(),
        config: config.clone(),
    };

    let (trace_path, fail_path) = (dir.join(TRACES_FILE), dir.join(FAILURES_FILE));
    let mut pred_file = append(&pred_path)?;
    let mut trace_file = append(&trace_path)?;
    let mut fail_file = append(&fail_path)?;

    let tasks_per_thread = [Task::SpanExtraction, Task::Summarization]
        .iter()
        .filter(|t| config.task.includes(**t))
        .count();
    let mut summary = RunSummary {
        output_dir: dir.clone(),
        eval_threads: targets.len(),
        completed: 0,
        skipped: 0,
        failed: 0,
    };
    let empty: &Vec<String> = &Vec::new();
    let ctx = &ctx;
    let done = &done;
    let plan = &plan;
    let mut outcomes = stream::iter(targets.iter())
        .map(|t| async move { ctx.process(t, plan.get(&t.id).unwrap_or(empty), done).await })
        .buffered(config.workers);
    let mut processed = 0;
    while let Some(out) = outcomes.next().await {
        processed += 1;
        summary.completed += out.predictions.len();
        summary.failed += out.failures.len();
        for p in &out.predictions {
            write_line(&mut pred_file, &pred_path, p)?;
        }
        for t in &out.traces {
            write_line(&mut trace_file, &trace_path, t)?;
        }
        for f in &out.failures {
            write_line(&mut fail_file, &fail_path, f)?;
        }
    }
    summary.skipped = processed * tasks_per_thread - summary.completed - summary.failed;
    Ok(summary)
}
