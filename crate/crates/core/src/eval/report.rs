//! Corpus-level reports for both tasks, rendered as JSON and as text tables.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::classification::{classification_scores, gold_presence, predicted_presence, ClassScore, Presence};
use super::confusion::{confusion_matrix, ConfusionMatrix};
use super::external::{ExternalScorer, NeuralScores, ScoreRequest};
use super::lexical::LexicalScores;
use super::spans::{class_counts, pooled, thread_counts, SpanAveraging, SpanCounts};
use super::{task_a_overall, task_b_overall, EvalError, Prf, TASK_A_COLUMNS, TASK_B_COLUMNS};
use crate::corpus::{Perspective, Thread};
use crate::parsing::{LabeledSpan, PerspectiveSummaries};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskAReport {
    pub macro_f1: f64,
    pub weighted_f1: f64,
    pub strict: Prf,
    pub proportional: Prf,
    pub overall: f64,
    pub span_averaging: SpanAveraging,
    pub per_class: Vec<ClassScore>,
    pub confusion: ConfusionMatrix,
    pub threads: usize,
}

impl TaskAReport {
    /// Sub-metrics in column order.
    pub fn values(&self) -> [f64; 8] {
        [
            self.macro_f1,
            self.weighted_f1,
            self.strict.precision,
            self.strict.recall,
            self.strict.f1,
            self.proportional.precision,
            self.proportional.recall,
            self.proportional.f1,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskBReport {
    pub rouge1: f64,
    pub rouge2: f64,
    pub rouge_l: f64,
    pub bleu: f64,
    pub meteor: f64,
    pub bertscore: Option<f64>,
    pub alignscore: Option<f64>,
    pub summac: Option<f64>,
    /// Present only when all eight sub-metrics are.
    pub overall: Option<f64>,
    pub threads: usize,
}

impl TaskBReport {
    pub fn values(&self) -> [Option<f64>; 8] {
        [
            Some(self.rouge1),
            Some(self.rouge2),
            Some(self.rouge_l),
            Some(self.bleu),
            Some(self.meteor),
            self.bertscore,
            self.alignscore,
            self.summac,
        ]
    }

    pub fn present(&self) -> usize {
        self.values().iter().filter(|v| v.is_some()).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanInstance {
    pub thread_id: String,
    pub gold_spans: usize,
    pub predicted_spans: usize,
    pub strict: Prf,
    pub proportional: Prf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryInstance {
    pub thread_id: String,
    pub perspective: Perspective,
    pub in_gold: bool,
    pub in_prediction: bool,
    pub lexical: LexicalScores,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub neural: Option<NeuralScores>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_a: Option<TaskAReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_b: Option<TaskBReport>,
    #[serde(default)]
    pub span_instances: Vec<SpanInstance>,
    #[serde(default)]
    pub summary_instances: Vec<SummaryInstance>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Task A over `(gold thread, predicted spans)` pairs.
///
/// Classification pools all (thread, answer) units; span counts are pooled
/// over threads under `averaging`.
pub fn evaluate_task_a(
    items: &[(&Thread, &[LabeledSpan])],
    averaging: SpanAveraging,
) -> Result<(TaskAReport, Vec<SpanInstance>), EvalError> {
    let mut gold = Presence::new();
    let mut pred = Presence::new();
    let mut per_class = [SpanCounts::default(); 5];
    let mut confusion = ConfusionMatrix::default();
    let mut instances = Vec::with_capacity(items.len());
    for (thread, spans) in items {
        gold.extend(gold_presence(thread));
        pred.extend(predicted_presence(thread, spans));
        for (acc, c) in per_class.iter_mut().zip(class_counts(&thread.gold_spans, spans)) {
            acc.add(&c);
        }
        confusion.add(&confusion_matrix(&thread.gold_spans, spans));
        let c = thread_counts(&thread.gold_spans, spans);
        instances.push(SpanInstance {
            thread_id: thread.id.clone(),
            gold_spans: c.gold,
            predicted_spans: c.predicted,
            strict: c.strict(),
            proportional: c.proportional(),
        });
    }
    let cls = classification_scores(&gold, &pred)?;
    let (strict, proportional) = pooled(&per_class, averaging);
    let mut report = TaskAReport {
        macro_f1: cls.macro_f1,
        weighted_f1: cls.weighted_f1,
        strict,
        proportional,
        overall: 0.0,
        span_averaging: averaging,
        per_class: cls.per_class,
        confusion,
        threads: items.len(),
    };
    report.overall = task_a_overall(&report.values())?;
    Ok((report, instances))
}

/// Source text handed to external scorers: the thread's answers.
pub fn scorer_source(thread: &Thread) -> String {
    thread.answers.join("\n\n")
}

/// Task B over `(gold thread, predicted summaries)` pairs.
///
/// Each thread averages over perspectives present in gold or prediction, a
/// perspective missing on one side scoring 0; threads are then averaged.
pub async fn evaluate_task_b(
    items: &[(&Thread, &PerspectiveSummaries)],
    scorer: Option<&dyn ExternalScorer>,
) -> Result<(TaskBReport, Vec<SummaryInstance>), EvalError> {
    let mut instances = Vec::new();
    let mut requests = Vec::new();
    for (thread, pred) in items {
        let labels: BTreeSet<Perspective> = thread.gold_summaries.keys().chain(pred.keys()).copied().collect();
        for label in labels {
            let (reference, hypothesis) = (thread.gold_summaries.get(&label), pred.get(&label));
            let lexical = match (reference, hypothesis) {
                (Some(r), Some(h)) => {
                    requests.push(ScoreRequest {
                        id: format!("{}::{label}", thread.id),
                        source: scorer_source(thread),
                        reference: r.clone(),
                        hypothesis: h.clone(),
                    });
                    LexicalScores::score(r, h)
                }
                _ => LexicalScores::default(),
            };
            instances.push(SummaryInstance {
                thread_id: thread.id.clone(),
                perspective: label,
                in_gold: reference.is_some(),
                in_prediction: hypothesis.is_some(),
                lexical,
                neural: None,
            });
        }
    }
    if let Some(scorer) = scorer {
        let scores = scorer.score(&requests).await?;
        let zero = NeuralScores {
            bertscore: 0.0,
            alignscore: 0.0,
            summac: 0.0,
        };
        for inst in &mut instances {
            let id = format!("{}::{}", inst.thread_id, inst.perspective);
            inst.neural = Some(if inst.in_gold && inst.in_prediction {
                *scores.get(&id).ok_or(EvalError::ScorerMissing(id))?
            } else {
                zero
            });
        }
    }

    let mut sums = [0.0f64; 8];
    let mut threads = 0usize;
    let mut i = 0;
    while i < instances.len() {
        let j = instances[i..]
            .iter()
            .position(|x| x.thread_id != instances[i].thread_id)
            .map_or(instances.len(), |p| i + p);
        let group = &instances[i..j];
        let n = group.len() as f64;
        for inst in group {
            let l = inst.lexical;
            let nn = inst.neural.unwrap_or(NeuralScores {
                bertscore: 0.0,
                alignscore: 0.0,
                summac: 0.0,
            });
            for (s, v) in sums
                .iter_mut()
                .zip([l.rouge1, l.rouge2, l.rouge_l, l.bleu, l.meteor, nn.bertscore, nn.alignscore, nn.summac])
            {
                *s += v / n;
            }
        }
        threads += 1;
        i = j;
    }
    if threads == 0 {
        return Err(EvalError::NothingToScore);
    }
    let m = sums.map(|s| s / threads as f64);
    let neural = scorer.is_some();
    let mut report = TaskBReport {
        rouge1: m[0],
        rouge2: m[1],
        rouge_l: m[2],
        bleu: m[3],
        meteor: m[4],
        bertscore: neural.then_some(m[5]),
        alignscore: neural.then_some(m[6]),
        summac: neural.then_some(m[7]),
        overall: None,
        threads,
    };
    if neural {
        report.overall = Some(task_b_overall(&report.values())?);
    }
    Ok((report, instances))
}

const CELL: usize = 8;

fn header(columns: &[&str]) -> String {
    let mut s = String::new();
    for c in columns.iter().chain(["Overall"].iter()) {
        let _ = write!(s, "{c:>CELL$} ");
    }
    s.trim_end().to_string()
}

pub fn task_a_header() -> String {
    header(&TASK_A_COLUMNS)
}

pub fn task_b_header() -> String {
    header(&TASK_B_COLUMNS)
}

/// Text tables with four decimals, columns in the published order.
pub fn render_table(report: &MetricReport) -> String {
    let mut out = String::new();
    if let Some(a) = &report.task_a {
        let _ = writeln!(out, "Task A ({} threads, {:?} span averaging)", a.threads, a.span_averaging);
        let _ = writeln!(out, "{}", task_a_header());
        let mut row = String::new();
        for v in a.values().iter().chain([a.overall].iter()) {
            let _ = write!(row, "{v:>CELL$.4} ");
        }
        let _ = writeln!(out, "{}", row.trim_end());
    }
    if let Some(b) = &report.task_b {
        if !out.is_empty() {
            out.push('\n');
        }
        let _ = writeln!(out, "Task B ({} threads)", b.threads);
        let _ = writeln!(out, "{}", task_b_header());
        let mut row = String::new();
        for v in b.values() {
            match v {
                Some(v) => {
                    let _ = write!(row, "{v:>CELL$.4} ");
                }
                None => {
                    let _ = write!(row, "{:>CELL$} ", "-");
                }
            }
        }
        match b.overall {
            Some(o) => {
                let _ = write!(row, "{o:>CELL$.4}");
            }
            None => {
                let _ = write!(row, "partial ({}/8)", b.present());
            }
        }
        let _ = writeln!(out, "{}", row.trim_end());
    }
    for w in &report.warnings {
        let _ = writeln!(out, "warning: {w}");
    }
    out
}

/// Writes `report.json`, `report.txt` and, for task A, `confusion.csv`.
pub fn write_report(dir: impl AsRef<Path>, report: &MetricReport) -> Result<(), EvalError> {
    let dir = dir.as_ref();
    let write = |name: &str, body: String| {
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(|source| EvalError::Io {
            path: path.display().to_string(),
            source,
        })
    };
    std::fs::create_dir_all(dir).map_err(|source| EvalError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    write("report.json", serde_json::to_string_pretty(report).expect("report serializes") + "\n")?;
    write("report.txt", render_table(report))?;
    if let Some(a) = &report.task_a {
        write("confusion.csv", a.confusion.to_csv())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::GoldSpan;
    use crate::eval::external::FileScorer;
    use std::collections::BTreeMap;
    use Perspective::*;

    fn thread(id: &str) -> Thread {
        let answers = vec!["Cold weather makes it worse.".to_string(), "Try a warm bath.".to_string()];
        let mut summaries = BTreeMap::new();
        summaries.insert(Cause, "Cold weather is a cause.".to_string());
        summaries.insert(Suggestion, "It is suggested to try a warm bath.".to_string());
        Thread {
            id: id.into(),
            question: "Why does my back hurt?".into(),
            context: None,
            answers,
            gold_spans: vec![
                GoldSpan {
                    answer_index: 0,
                    start: 0,
                    end: 12,
                    text: "Cold weather".into(),
                    label: Cause,
                },
                GoldSpan {
                    answer_index: 1,
                    start: 0,
                    end: 15,
                    text: "Try a warm bath".into(),
                    label: Suggestion,
                },
            ],
            gold_summaries: summaries,
        }
    }

    #[test]
    fn gold_predictions_score_one() {
        let ts = [thread("a"), thread("b")];
        let preds: Vec<Vec<LabeledSpan>> = ts.iter().map(|t| t.gold_spans.iter().map(LabeledSpan::from).collect()).collect();
        let items: Vec<(&Thread, &[LabeledSpan])> = ts.iter().zip(&preds).map(|(t, p)| (t, p.as_slice())).collect();
        let (r, inst) = evaluate_task_a(&items, SpanAveraging::Micro).unwrap();
        assert_eq!(r.overall, 1.0);
        assert_eq!(inst.len(), 2);
        assert_eq!(r.confusion.get(Cause, Cause), 2);
    }

    #[test]
    fn empty_predictions_score_zero_spans() {
        let ts = [thread("a")];
        let items: Vec<(&Thread, &[LabeledSpan])> = vec![(&ts[0], &[])];
        let (r, _) = evaluate_task_a(&items, SpanAveraging::Micro).unwrap();
        assert_eq!((r.strict.precision, r.strict.recall), (0.0, 0.0));
        assert_eq!((r.proportional.precision, r.proportional.recall), (0.0, 0.0));
    }

    #[tokio::test]
    async fn task_b_partial_without_scorer() {
        let t = thread("a");
        let items = vec![(&t, &t.gold_summaries)];
        let (r, inst) = evaluate_task_b(&items, None).await.unwrap();
        assert_eq!((r.rouge1, r.bleu), (1.0, 1.0));
        assert_eq!(r.overall, None);
        assert_eq!(r.present(), 5);
        assert_eq!(inst.len(), 2);
        let rep = MetricReport {
            task_b: Some(r),
            ..MetricReport::default()
        };
        assert!(render_table(&rep).contains("partial (5/8)"));
    }

    #[tokio::test]
    async fn task_b_missing_side_scores_zero() {
        let t = thread("a");
        let mut pred = PerspectiveSummaries::new();
        pred.insert(Cause, "Cold weather is a cause.".into());
        pred.insert(Question, "Is it chronic?".into());
        let (r, inst) = evaluate_task_b(&[(&t, &pred)], None).await.unwrap();
        assert_eq!(inst.len(), 3);
        assert!((r.rouge1 - 1.0 / 3.0).abs() < 1e-12);
    }

    #[tokio::test]
    async fn task_b_with_scorer_file() {
        let t = thread("a");
        let raw = "{\"id\":\"a::CAUSE\",\"bertscore\":0.9,\"alignscore\":0.5,\"summac\":0.3}\n{\"id\":\"a::SUGGESTION\",\"bertscore\":0.7,\"alignscore\":0.5,\"summac\":0.1}\n";
        let scorer = FileScorer {
            scores: super::super::external::parse_responses(raw).unwrap(),
        };
        let (r, _) = evaluate_task_b(&[(&t, &t.gold_summaries)], Some(&scorer)).await.unwrap();
        assert!((r.bertscore.unwrap() - 0.8).abs() < 1e-12);
        assert!((r.summac.unwrap() - 0.2).abs() < 1e-12);
        let expected = (4.0 + r.meteor + 0.8 + 0.5 + 0.2) / 8.0;
        assert!((r.overall.unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn table_header_order() {
        assert_eq!(
            task_a_header().split_whitespace().collect::<Vec<_>>(),
            vec!["M-F1", "W-F1", "St-P", "St-R", "St-F1", "Pr-P", "Pr-R", "Pr-F1", "Overall"]
        );
        assert_eq!(
            task_b_header().split_whitespace().collect::<Vec<_>>(),
            vec!["R-1", "R-2", "R-L", "BLEU", "MET", "BS", "AS", "SC", "Overall"]
        );
    }

    #[test]
    fn writes_files() {
        let ts = [thread("a")];
        let preds: Vec<LabeledSpan> = ts[0].gold_spans.iter().map(LabeledSpan::from).collect();
        let (a, span_instances) = evaluate_task_a(&[(&ts[0], preds.as_slice())], SpanAveraging::Macro).unwrap();
        let rep = MetricReport {
            task_a: Some(a),
            span_instances,
            ..MetricReport::default()
        };
        let dir = tempfile::tempdir().unwrap();
        write_report(dir.path(), &rep).unwrap();
        let back: MetricReport =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
        assert_eq!(back, rep);
        assert!(dir.path().join("confusion.csv").exists());
        let txt = std::fs::read_to_string(dir.path().join("report.txt")).unwrap();
        assert!(txt.contains("1.0000"));
    }
}
