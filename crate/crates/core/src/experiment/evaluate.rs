use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use super::run::{load_predictions, PredictionRecord, RunManifest, MANIFEST_FILE};
use super::RunError;
use crate::corpus::{load_corpus, Thread};
use crate::eval::{evaluate_task_a, evaluate_task_b, write_report, ExternalScorer, MetricReport, SpanAveraging};
use crate::parsing::{LabeledSpan, PerspectiveSummaries};
use crate::prompting::Task;

/// Scores prediction records against gold threads.
///
/// `expected` lists thread ids that should have predictions; ids without one
/// are scored as empty predictions and reported as warnings.
pub async fn evaluate_predictions(
    gold: &[Thread],
    predictions: &[PredictionRecord],
    expected: Option<&[String]>,
    scorer: Option<&dyn ExternalScorer>,
    averaging: SpanAveraging,
) -> Result<MetricReport, RunError> {
    let by_id: BTreeMap<&str, &Thread> = gold.iter().map(|t| (t.id.as_str(), t)).collect();
    let orphans: BTreeSet<String> = predictions
        .iter()
        .filter(|p| !by_id.contains_key(p.thread_id.as_str()))
        .map(|p| p.thread_id.clone())
        .collect();
    if !orphans.is_empty() {
        return Err(RunError::Orphans(orphans.into_iter().collect()));
    }

    let mut report = MetricReport::default();
    for task in [Task::SpanExtraction, Task::Summarization] {
        let mut records: BTreeMap<&str, &PredictionRecord> = BTreeMap::new();
        for p in predictions.iter().filter(|p| p.task == task) {
            records.insert(&p.thread_id, p);
        }
        if records.is_empty() {
            continue;
        }
        let mut ids: Vec<&str> = records.keys().copied().collect();
        if let Some(expected) = expected {
            for id in expected {
                if !records.contains_key(id.as_str()) && by_id.contains_key(id.as_str()) {
                    report.warnings.push(format!("task {task}: no prediction for {id}, scored as empty"));
                    ids.push(id);
                }
            }
        }
        match task {
            Task::SpanExtraction => {
                let spans: Vec<Vec<LabeledSpan>> = ids
                    .iter()
                    .map(|id| records.get(id).and_then(|r| r.spans.clone()).unwrap_or_default())
                    .collect();
                let items: Vec<(&Thread, &[LabeledSpan])> =
                    ids.iter().zip(&spans).map(|(id, s)| (by_id[id], s.as_slice())).collect();
                let (a, instances) = evaluate_task_a(&items, averaging)?;
                report.task_a = Some(a);
                report.span_instances = instances;
            }
            Task::Summarization => {
                let sums: Vec<PerspectiveSummaries> = ids
                    .iter()
                    .map(|id| records.get(id).and_then(|r| r.summaries.clone()).unwrap_or_default())
                    .collect();
                let items: Vec<(&Thread, &PerspectiveSummaries)> =
                    ids.iter().zip(&sums).map(|(id, s)| (by_id[id], s)).collect();
                let (b, instances) = evaluate_task_b(&items, scorer).await?;
                report.task_b = Some(b);
                report.summary_instances = instances;
            }
        }
    }
    if report.task_a.is_none() && report.task_b.is_none() {
        return Err(RunError::Eval(crate::eval::EvalError::NothingToScore));
    }
    Ok(report)
}

/// Reads the run manifest next to a predictions file, if there is one.
pub fn sibling_manifest(predictions: &Path) -> Result<Option<RunManifest>, RunError> {
    let path = predictions.with_file_name(MANIFEST_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let raw = std::fs::read_to_string(&path).map_err(|source| RunError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&raw).map(Some).map_err(|e| RunError::Malformed {
        path: path.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    })
}

/// Loads predictions and gold, scores them and writes the report into `out_dir`.
pub async fn evaluate_files(
    predictions: &Path,
    gold: &Path,
    schema: &str,
    scorer: Option<&dyn ExternalScorer>,
    averaging: SpanAveraging,
    out_dir: &Path,
) -> Result<MetricReport, RunError> {
    let preds = load_predictions(predictions)?;
    let corpus = load_corpus(gold, schema)?;
    let manifest = sibling_manifest(predictions)?;
    let mut report = evaluate_predictions(
        &corpus.threads,
        &preds,
        manifest.as_ref().map(|m| m.eval_ids.as_slice()),
        scorer,
        averaging,
    )
    .await?;
    report.warnings.extend(corpus.warnings);
    write_report(out_dir, &report)?;
    Ok(report)
}
