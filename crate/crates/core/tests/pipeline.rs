use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use persumm_core::corpus::load_corpus;
use persumm_core::eval::SpanAveraging;
use persumm_core::experiment::{
    backend_for, evaluate_files, evaluate_predictions, load_failures, load_predictions, load_traces, run,
    sweep_layers, CellStatus, RunConfig, RunError, SweepGrid, TraceBody, CALLS_FILE, FAILURES_FILE,
    PREDICTIONS_FILE, TRACES_FILE,
};
use persumm_core::moa::LayerRole;
use persumm_core::Task;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

const AGENT: &str = r#"
[agent]
name = "llama"
endpoint = "http://localhost:8001/v1/chat/completions"
model_id = "LLaMA-3.3-70B-Instruct"
"#;

fn config(dir: &Path, setting: &str, extra: &str) -> RunConfig {
    let f = fixtures();
    let body = format!(
        r#"corpus = "{corpus}"
{task}
setting = "{setting}"
output_dir = "{out}"
mock = "{mock}"
workers = 3
seed = 7
{extra}

[split]
train = 5
valid = 5
test = 0

[retry]
base_delay = 0
factor = 2.0
max_attempts = 3
max_delay = 0
{AGENT}"#,
        corpus = f.join("corpus.jsonl").display(),
        task = if extra.contains("task =") { "" } else { "task = \"A-then-B\"" },
        out = dir.join("out").display(),
        mock = f.join("mock_oracle.json").display(),
    );
    let path = dir.join("run.toml");
    std::fs::write(&path, body).unwrap();
    RunConfig::from_file(&path).unwrap()
}

async fn run_mock(cfg: &RunConfig, limit: Option<usize>) -> persumm_core::experiment::RunSummary {
    run(cfg, backend_for(cfg, None).unwrap(), limit).await.unwrap()
}

fn single_prompts(dir: &Path, task: Task) -> Vec<(String, String)> {
    load_traces(dir.join(TRACES_FILE))
        .unwrap()
        .into_iter()
        .filter(|t| t.task == task)
        .map(|t| match t.body {
            TraceBody::Single { prompt, .. } => (t.thread_id, prompt.user),
            other => panic!("{other:?}"),
        })
        .collect()
}

#[tokio::test]
async fn zero_shot_oracle_scores_perfectly() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "zero-shot", "");
    let s = run_mock(&cfg, None).await;
    assert_eq!((s.eval_threads, s.completed, s.failed, s.skipped), (5, 10, 0, 0));
    for f in [PREDICTIONS_FILE, TRACES_FILE, FAILURES_FILE, CALLS_FILE, "run.json"] {
        assert!(cfg.output_dir.join(f).exists(), "{f}");
    }
    let preds = load_predictions(cfg.output_dir.join(PREDICTIONS_FILE)).unwrap();
    let ids: BTreeSet<_> = preds.iter().map(|p| p.thread_id.as_str()).collect();
    assert_eq!(ids, ["t06", "t07", "t08", "t09", "t10"].into_iter().collect());

    let report = evaluate_files(
        &cfg.output_dir.join(PREDICTIONS_FILE),
        &cfg.corpus,
        "canonical",
        None,
        SpanAveraging::Micro,
        &tmp.path().join("eval"),
    )
    .await
    .unwrap();
    let a = report.task_a.unwrap();
    assert!((a.overall - 1.0).abs() < 1e-12, "{:?}", a.values());
    let b = report.task_b.unwrap();
    for v in [b.rouge1, b.rouge2, b.rouge_l, b.bleu] {
        assert!((v - 1.0).abs() < 1e-9, "{v}");
    }
    assert!(b.overall.is_none());
    assert!(tmp.path().join("eval/report.txt").exists());
}

#[tokio::test]
async fn task_b_prompts_carry_task_a_spans() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "zero-shot", "");
    run_mock(&cfg, None).await;
    let preds = load_predictions(cfg.output_dir.join(PREDICTIONS_FILE)).unwrap();
    let b_prompts = single_prompts(&cfg.output_dir, Task::Summarization);
    assert_eq!(b_prompts.len(), 5);
    for (id, user) in b_prompts {
        let a = preds
            .iter()
            .find(|p| p.thread_id == id && p.task == Task::SpanExtraction)
            .unwrap();
        for span in a.spans.as_ref().unwrap() {
            assert!(user.contains(&format!("\"{}\"", span.text)), "{id}: {}", span.text);
        }
    }
}

#[tokio::test]
async fn cluster_exemplars_come_from_train_only() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "few-shot-cluster", "shots = 3");
    run_mock(&cfg, None).await;
    let train: BTreeSet<String> = ["t01", "t02", "t03", "t04", "t05"].iter().map(|s| s.to_string()).collect();
    let corpus = load_corpus(&cfg.corpus, "canonical").unwrap();
    let preds = load_predictions(cfg.output_dir.join(PREDICTIONS_FILE)).unwrap();
    for p in &preds {
        assert_eq!(p.exemplars.len(), 3);
        assert!(p.exemplars.iter().all(|e| train.contains(e)), "{:?}", p.exemplars);
    }
    for (id, user) in single_prompts(&cfg.output_dir, Task::SpanExtraction) {
        assert!(user.contains("### Example 3\n") && !user.contains("### Example 4"));
        let rec = preds.iter().find(|p| p.thread_id == id && p.task == Task::SpanExtraction).unwrap();
        for ex in &rec.exemplars {
            let t = corpus.threads.iter().find(|t| &t.id == ex).unwrap();
            assert!(user.contains(&t.question));
        }
    }

    let tmp2 = tempfile::tempdir().unwrap();
    let cfg2 = config(tmp2.path(), "few-shot-cluster", "shots = 3");
    run_mock(&cfg2, None).await;
    let mut a = preds;
    let mut b = load_predictions(cfg2.output_dir.join(PREDICTIONS_FILE)).unwrap();
    a.sort_by(|x, y| (&x.thread_id, x.task).cmp(&(&y.thread_id, y.task)));
    b.sort_by(|x, y| (&x.thread_id, x.task).cmp(&(&y.thread_id, y.task)));
    assert_eq!(a, b);
}

#[tokio::test]
async fn manual_exemplars_must_be_in_train() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "few-shot-manual", r#"shots = 2
curated = ["t02", "t04"]"#);
    run_mock(&cfg, None).await;
    let preds = load_predictions(cfg.output_dir.join(PREDICTIONS_FILE)).unwrap();
    assert!(preds.iter().all(|p| p.exemplars == ["t02", "t04"]));

    let bad = config(tmp.path(), "few-shot-manual", r#"shots = 2
curated = ["t02", "t09"]"#);
    let e = run(&bad, backend_for(&bad, None).unwrap(), None).await.unwrap_err();
    assert!(e.to_string().contains("t09"), "{e}");
}

#[tokio::test]
async fn rerun_resumes_without_duplicates() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "zero-shot", "");
    let first = run_mock(&cfg, Some(2)).await;
    assert_eq!((first.eval_threads, first.completed), (2, 4));
    let second = run_mock(&cfg, None).await;
    assert_eq!((second.completed, second.skipped), (6, 4));
    let preds = load_predictions(cfg.output_dir.join(PREDICTIONS_FILE)).unwrap();
    let keys: BTreeSet<_> = preds.iter().map(|p| (p.thread_id.clone(), p.task)).collect();
    assert_eq!((preds.len(), keys.len()), (10, 10));
    let third = run_mock(&cfg, None).await;
    assert_eq!((third.completed, third.skipped), (0, 10));
}

#[tokio::test]
async fn failing_thread_is_recorded_and_run_continues() {
    let tmp = tempfile::tempdir().unwrap();
    let oracle = std::fs::read_to_string(fixtures().join("mock_oracle.json")).unwrap();
    let mut script: serde_json::Value = serde_json::from_str(&oracle).unwrap();
    script["rules"].as_array_mut().unwrap().insert(
        0,
        serde_json::json!({"contains": "Why does my eye keep twitching?", "reply": {"fail": {"status": 503}}}),
    );
    let mock = tmp.path().join("mock.json");
    std::fs::write(&mock, script.to_string()).unwrap();
    let cfg = config(tmp.path(), "zero-shot", "");
    let s = run(&cfg, backend_for(&cfg, Some(&mock)).unwrap(), None).await.unwrap();
    assert_eq!((s.completed, s.failed), (8, 2));
    let failures = load_failures(cfg.output_dir.join(FAILURES_FILE)).unwrap();
    assert!(failures.iter().all(|f| f.thread_id == "t10"));
    assert_eq!(failures.len(), 2);
}

#[tokio::test]
async fn moa_run_records_full_traces() {
    let tmp = tempfile::tempdir().unwrap();
    let moa = fixtures().join("moa");
    let extra = format!(
        "moa_a = \"{}\"\nmoa_b = \"{}\"",
        moa.join("best1_a.toml").display(),
        moa.join("best1_b.toml").display()
    );
    let cfg = config(tmp.path(), "moa", &extra);
    let s = run_mock(&cfg, Some(3)).await;
    assert_eq!((s.completed, s.failed), (6, 0));
    let traces = load_traces(cfg.output_dir.join(TRACES_FILE)).unwrap();
    assert_eq!(traces.len(), 6);
    for t in traces {
        let TraceBody::Moa { trace } = t.body else { panic!("single trace in moa run") };
        let shape: Vec<_> = trace.layers.iter().map(|l| (l.role, l.calls.len())).collect();
        assert_eq!(shape, [(LayerRole::Propose, 4), (LayerRole::Verify, 1)]);
        assert!(trace.final_output.is_some());
    }
    let report = evaluate_files(
        &cfg.output_dir.join(PREDICTIONS_FILE),
        &cfg.corpus,
        "canonical",
        None,
        SpanAveraging::Micro,
        &cfg.output_dir,
    )
    .await
    .unwrap();
    assert!((report.task_a.unwrap().overall - 1.0).abs() < 1e-12);
}

#[tokio::test]
async fn evaluation_flags_orphans_and_missing_threads() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "zero-shot", "");
    run_mock(&cfg, Some(3)).await;
    let corpus = load_corpus(&cfg.corpus, "canonical").unwrap();
    let mut preds = load_predictions(cfg.output_dir.join(PREDICTIONS_FILE)).unwrap();

    let expected: Vec<String> = ["t06", "t07", "t08", "t09"].iter().map(|s| s.to_string()).collect();
    let r = evaluate_predictions(&corpus.threads, &preds, Some(&expected), None, SpanAveraging::Micro)
        .await
        .unwrap();
    assert_eq!(r.task_a.as_ref().unwrap().threads, 4);
    assert!(r.warnings.iter().any(|w| w.contains("t09")));
    assert!(r.task_a.unwrap().overall < 1.0);

    preds[0].thread_id = "nope".into();
    match evaluate_predictions(&corpus.threads, &preds, None, None, SpanAveraging::Micro).await {
        Err(RunError::Orphans(ids)) => assert_eq!(ids, ["nope"]),
        other => panic!("{other:?}"),
    }
}

#[tokio::test]
async fn sweep_runs_every_cell() {
    let tmp = tempfile::tempdir().unwrap();
    let moa = fixtures().join("moa");
    let cfg = config(
        tmp.path(),
        "moa",
        &format!("task = \"A\"\nmoa_a = \"{}\"", moa.join("best1_a.toml").display()),
    );
    let out = tmp.path().join("sweep");
    let backend = backend_for(&cfg, None).unwrap();
    let r = sweep_layers(&cfg, &SweepGrid::default(), backend.clone(), &out, Some(2), None)
        .await
        .unwrap();
    assert_eq!(r.cells.len(), 6);
    for c in &r.cells {
        assert_eq!(c.status, CellStatus::Ok, "{c:?}");
        assert!(c.dir.join("report.json").exists());
        assert!((c.overall.unwrap() - 1.0).abs() < 1e-12);
    }
    let chart = std::fs::read_to_string(out.join("chart.csv")).unwrap();
    assert_eq!(chart.lines().count(), 7);
    assert!(chart.lines().skip(1).all(|l| l.ends_with(",0.3377,0.4938")));

    let grid = SweepGrid {
        layers: vec![2, 4],
        ..SweepGrid::default()
    };
    let r = sweep_layers(&cfg, &grid, backend, &tmp.path().join("sweep2"), Some(1), None)
        .await
        .unwrap();
    let statuses: Vec<_> = r.cells.iter().map(|c| c.status).collect();
    assert_eq!(statuses, [CellStatus::Ok, CellStatus::Ok, CellStatus::Failed, CellStatus::Failed]);
}
