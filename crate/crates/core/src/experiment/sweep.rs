use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::config::{MoaSource, RunConfig, Setting};
use super::evaluate::evaluate_predictions;
use super::run::{load_predictions, run, PREDICTIONS_FILE};
use super::RunError;
use crate::corpus::load_corpus;
use crate::eval::{write_report, ExternalScorer, SpanAveraging};
use crate::gateway::ChatBackend;
use crate::moa::{LayerRole, LayerSpec, MoaConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProposerMix {
    /// Every layer agent runs the aggregator's model.
    Single,
    /// Layer agents as given in the base config.
    Multi,
}

impl std::fmt::Display for ProposerMix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ProposerMix::Single => "single",
            ProposerMix::Multi => "multi",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub layers: Vec<usize>,
    pub mixes: Vec<ProposerMix>,
    /// Reference lines drawn on the chart, `(name, overall)`.
    pub baselines: Vec<(String, f64)>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid {
            layers: vec![1, 2, 3],
            mixes: vec![ProposerMix::Single, ProposerMix::Multi],
            baselines: vec![
                ("llama-zero-shot".into(), 0.3377),
                ("gpt-4o-zero-shot".into(), 0.4938),
            ],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Ok,
    /// Finished, but some threads failed or an overall could not be computed.
    Partial,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub layers: usize,
    pub mix: ProposerMix,
    pub status: CellStatus,
    pub dir: PathBuf,
    /// Mean of the available task overalls.
    pub overall: Option<f64>,
    pub task_a_overall: Option<f64>,
    pub task_b_overall: Option<f64>,
    pub failed_threads: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub grid: SweepGrid,
    pub cells: Vec<SweepCell>,
}

/// MoA config for one sweep cell.
///
/// Layers come from `base` up to `layers`; missing refinement layers get one
/// agent running the aggregator model with the role's default prompt. Under
/// [`ProposerMix::Single`] each layer keeps its agent count and temperatures
/// but every agent runs the aggregator's model.
pub fn derive_cell(base: &MoaConfig, layers: usize, mix: ProposerMix) -> Result<MoaConfig, RunError> {
    if layers == 0 || layers > LayerRole::ORDER.len() {
        return Err(RunError::Config(format!("layer count must be 1..=3, got {layers}")));
    }
    let agg = &base.aggregator;
    let mut out = base.clone();
    out.layers = (0..layers)
        .map(|i| {
            base.layers.get(i).cloned().unwrap_or_else(|| {
                let mut a = agg.clone();
                a.name = format!("{}-l{}", agg.name, i + 1);
                LayerSpec {
                    role: LayerRole::ORDER[i],
                    agents: vec![a],
                    role_prompt: None,
                }
            })
        })
        .collect();
    if mix == ProposerMix::Single {
        for (i, layer) in out.layers.iter_mut().enumerate() {
            for (j, agent) in layer.agents.iter_mut().enumerate() {
                let mut a = agg.clone();
                a.name = format!("{}-l{}-{}", agg.name, i + 1, j + 1);
                a.temperature = agent.temperature;
                *agent = a;
            }
        }
    }
    out.validate().map_err(|e| RunError::Config(e.to_string()))?;
    Ok(out)
}

fn cell_config(base: &RunConfig, layers: usize, mix: ProposerMix, dir: &Path) -> Result<RunConfig, RunError> {
    let mut cfg = base.clone();
    cfg.setting = Setting::Moa;
    cfg.output_dir = dir.to_path_buf();
    for s in [&mut cfg.moa_a, &mut cfg.moa_b].into_iter().flatten() {
        *s = MoaSource::Inline(Box::new(derive_cell(&s.resolve()?, layers, mix)?));
    }
    cfg.validate()?;
    Ok(cfg)
}

async fn run_cell(
    cfg: &RunConfig,
    backend: Arc<dyn ChatBackend>,
    limit: Option<usize>,
    scorer: Option<&dyn ExternalScorer>,
    averaging: SpanAveraging,
) -> Result<(Option<f64>, Option<f64>, usize), RunError> {
    let summary = run(cfg, backend, limit).await?;
    let preds = load_predictions(cfg.output_dir.join(PREDICTIONS_FILE))?;
    let gold = load_corpus(&cfg.corpus, &cfg.schema)?;
    let report = evaluate_predictions(&gold.threads, &preds, None, scorer, averaging).await?;
    write_report(&cfg.output_dir, &report)?;
    Ok((
        report.task_a.map(|a| a.overall),
        report.task_b.and_then(|b| b.overall),
        summary.failed,
    ))
}

/// Runs every (layers, mix) cell of `grid` under `out`, one directory per cell.
///
/// `base` must use the MoA setting. A failing cell is recorded and the
/// remaining cells still run. Writes `chart.csv` and `sweep.json` into `out`.
pub async fn sweep_layers(
    base: &RunConfig,
    grid: &SweepGrid,
    backend: Arc<dyn ChatBackend>,
    out: &Path,
    limit: Option<usize>,
    scorer: Option<&dyn ExternalScorer>,
) -> Result<SweepResult, RunError> {
    if base.setting != Setting::Moa {
        return Err(RunError::Config("sweep needs a run config with setting moa".into()));
    }
    let mut cells = Vec::new();
    for &layers in &grid.layers {
        for &mix in &grid.mixes {
            let dir = out.join(format!("cell-{layers}-{mix}"));
            let result = match cell_config(base, layers, mix, &dir) {
                Ok(cfg) => run_cell(&cfg, backend.clone(), limit, scorer, SpanAveraging::default()).await,
                Err(e) => Err(e),
            };
            cells.push(match result {
                Ok((a, b, failed)) => {
                    let have: Vec<f64> = [a, b].into_iter().flatten().collect();
                    let tasks = [base.moa_a.is_some(), base.moa_b.is_some()].iter().filter(|x| **x).count();
                    let overall = (!have.is_empty()).then(|| have.iter().sum::<f64>() / have.len() as f64);
                    let complete = failed == 0 && have.len() == tasks;
                    SweepCell {
                        layers,
                        mix,
                        status: if complete { CellStatus::Ok } else { CellStatus::Partial },
                        dir,
                        overall,
                        task_a_overall: a,
                        task_b_overall: b,
                        failed_threads: failed,
                        error: None,
                    }
                }
                Err(e) => SweepCell {
                    layers,
                    mix,
                    status: CellStatus::Failed,
                    dir,
                    overall: None,
                    task_a_overall: None,
                    task_b_overall: None,
                    failed_threads: 0,
                    error: Some(e.to_string()),
                },
            });
        }
    }
    let result = SweepResult {
        grid: grid.clone(),
        cells,
    };
    let io = |path: PathBuf| move |source| RunError::Io {
        path: path.display().to_string(),
        source,
    };
    std::fs::create_dir_all(out).map_err(io(out.to_path_buf()))?;
    let chart = out.join("chart.csv");
    std::fs::write(&chart, chart_csv(&result)).map_err(io(chart.clone()))?;
    let json = out.join("sweep.json");
    std::fs::write(&json, serde_json::to_string_pretty(&result).expect("sweep serializes")).map_err(io(json.clone()))?;
    Ok(result)
}

/// One row per cell, baseline values repeated on every row for plotting.
pub fn chart_csv(result: &SweepResult) -> String {
    let mut s = String::from("layers,mix,status,overall");
    for (name, _) in &result.grid.baselines {
        let _ = write!(s, ",{name}");
    }
    s.push('\n');
    for c in &result.cells {
        let status = match c.status {
            CellStatus::Ok => "ok",
            CellStatus::Partial => "partial",
            CellStatus::Failed => "failed",
        };
        let overall = c.overall.map(|o| format!("{o:.4}")).unwrap_or_default();
        let _ = write!(s, "{},{},{},{}", c.layers, c.mix, status, overall);
        for (_, v) in &result.grid.baselines {
            let _ = write!(s, ",{v:.4}");
        }
        s.push('\n');
    }
    s
}
