use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use persumm_core::corpus::load_corpus;
use persumm_core::eval::external::scorer_from_arg;
use persumm_core::eval::{render_table, ExternalScorer, SpanAveraging};
use persumm_core::experiment::{
    backend_for, evaluate_files, retrieval_text, run, sweep_layers, MoaSource, RunConfig, Setting, SweepGrid,
};
use persumm_core::moa::MoaConfig;
use persumm_core::ner::{class_weights, tag_counts, thread_sequences, to_conll};
use persumm_core::Task;

/// Exit status when the run finished but some threads failed.
const EXIT_PARTIAL: u8 = 2;

#[derive(Parser)]
#[command(name = "persumm", version, about = "Perspective-aware answer summarization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a configured setting over the evaluation threads.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Mock script replacing the HTTP endpoints.
        #[arg(long)]
        mock: Option<PathBuf>,
        /// Only the first N evaluation threads.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Score a predictions file against a gold corpus.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long, default_value = "canonical")]
        schema: String,
        /// Neural scorer: an http(s) URL or a precomputed scores file.
        #[arg(long)]
        scorer: Option<String>,
        /// Report directory; defaults to the predictions file's directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "micro")]
        span_averaging: SpanAveraging,
    },
    /// Run the layer-count by proposer-mix grid.
    SweepLayers {
        /// MoA config the cells are derived from.
        #[arg(long)]
        base: PathBuf,
        /// Run config supplying corpus, split and runtime settings.
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        mock: Option<PathBuf>,
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long)]
        scorer: Option<String>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        layers: Vec<usize>,
    },
    /// Write BIO-tagged token sequences (CoNLL) and class weights.
    BioExport {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "canonical")]
        schema: String,
        #[arg(long)]
        out: PathBuf,
        /// Class weights JSON; defaults to `<out>.weights.json`.
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Write `{id, text}` lines for the embedding sidecar.
    ExportTexts {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "canonical")]
        schema: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn scorer(arg: Option<&str>) -> Result<Option<Box<dyn ExternalScorer>>> {
    arg.map(|a| scorer_from_arg(a).with_context(|| format!("loading scorer {a}")))
        .transpose()
}

async fn cmd_run(config: &Path, mock: Option<&Path>, limit: Option<usize>) -> Result<ExitCode> {
    let cfg = RunConfig::from_file(config)?;
    let backend = backend_for(&cfg, mock)?;
    let s = run(&cfg, backend, limit).await?;
    println!(
        "{} threads: {} completed, {} skipped, {} failed -> {}",
        s.eval_threads,
        s.completed,
        s.skipped,
        s.failed,
        s.output_dir.display()
    );
    Ok(if s.failed > 0 { ExitCode::from(EXIT_PARTIAL) } else { ExitCode::SUCCESS })
}

async fn cmd_sweep(
    base: &Path,
    run_config: &Path,
    out: &Path,
    mock: Option<&Path>,
    limit: Option<usize>,
    scorer_arg: Option<&str>,
    layers: Vec<usize>,
) -> Result<ExitCode> {
    let mut cfg = RunConfig::from_file(run_config)?;
    let moa = MoaConfig::from_file(base)?;
    let slot = match moa.task {
        Task::SpanExtraction => &mut cfg.moa_a,
        Task::Summarization => &mut cfg.moa_b,
    };
    *slot = Some(MoaSource::Inline(Box::new(moa)));
    cfg.setting = Setting::Moa;
    cfg.validate()?;
    if layers.is_empty() {
        bail!("--layers must not be empty");
    }
    let grid = SweepGrid { layers, ..SweepGrid::default() };
    let scorer = scorer(scorer_arg)?;
    let result = sweep_layers(&cfg, &grid, backend_for(&cfg, mock)?, out, limit, scorer.as_deref()).await?;
    for c in &result.cells {
        let overall = c.overall.map_or("-".to_string(), |o| format!("{o:.4}"));
        println!("{} layers {:>6}: {:?} overall {overall}", c.layers, c.mix.to_string(), c.status);
    }
    let bad = result.cells.iter().any(|c| c.status != persumm_core::experiment::CellStatus::Ok);
    Ok(if bad { ExitCode::from(EXIT_PARTIAL) } else { ExitCode::SUCCESS })
}

fn cmd_bio_export(corpus: &Path, schema: &str, out: &Path, weights: Option<PathBuf>) -> Result<()> {
    let corpus = load_corpus(corpus, schema)?;
    let mut sequences = Vec::new();
    for t in &corpus.threads {
        sequences.extend(thread_sequences(t).with_context(|| format!("thread {}", t.id))?);
    }
    std::fs::write(out, to_conll(&sequences)).with_context(|| format!("writing {}", out.display()))?;
    let counts = tag_counts(sequences.iter().map(|(_, tags)| tags.as_slice()));
    let w = class_weights(&counts)?;
    let weights = weights.unwrap_or_else(|| PathBuf::from(format!("{}.weights.json", out.display())));
    std::fs::write(&weights, serde_json::to_string_pretty(&w)?)?;
    println!("{} sequences -> {}, weights -> {}", sequences.len(), out.display(), weights.display());
    Ok(())
}

fn cmd_export_texts(corpus: &Path, schema: &str, out: &Path) -> Result<()> {
    let corpus = load_corpus(corpus, schema)?;
    let mut body = String::new();
    for t in &corpus.threads {
        body.push_str(&serde_json::json!({"id": t.id, "text": retrieval_text(t)}).to_string());
        body.push('\n');
    }
    std::fs::write(out, body).with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}

#[tokio::main]
async fn main() -> Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, mock, limit } => cmd_run(&config, mock.as_deref(), limit).await,
        Command::Evaluate { pred, gold, schema, scorer: scorer_arg, out, span_averaging } => {
            let out = out.unwrap_or_else(|| pred.parent().map(Path::to_path_buf).unwrap_or_default());
            let scorer = scorer(scorer_arg.as_deref())?;
            let report = evaluate_files(&pred, &gold, &schema, scorer.as_deref(), span_averaging, &out).await?;
            print!("{}", render_table(&report));
            Ok(ExitCode::SUCCESS)
        }
        Command::SweepLayers { base, run, out, mock, limit, scorer, layers } => {
            cmd_sweep(&base, &run, &out, mock.as_deref(), limit, scorer.as_deref(), layers).await
        }
        Command::BioExport { corpus, schema, out, weights } => {
            cmd_bio_export(&corpus, &schema, &out, weights).map(|_| ExitCode::SUCCESS)
        }
        Command::ExportTexts { corpus, schema, out } => {
            cmd_export_texts(&corpus, &schema, &out).map(|_| ExitCode::SUCCESS)
        }
    }
}
