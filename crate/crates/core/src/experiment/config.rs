use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::Url;

use crate::corpus::{Part, SplitSelector, SplitSpec};
use crate::gateway::{AgentSpec, RetryPolicy, DEFAULT_CONCURRENCY_CAP};
use crate::moa::MoaConfig;
use crate::parsing::ParsePolicy;
use crate::prompting::{Task, MAX_EXEMPLARS};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Load { path: String, message: String },
    #[error("invalid run config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RunTask {
    A,
    B,
    #[serde(rename = "A-then-B")]
    AThenB,
}

impl RunTask {
    pub fn includes(self, task: Task) -> bool {
        matches!(
            (self, task),
            (RunTask::A | RunTask::AThenB, Task::SpanExtraction) | (RunTask::B | RunTask::AThenB, Task::Summarization)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Setting {
    ZeroShot,
    FewShotManual,
    FewShotCluster,
    Moa,
}

/// A MoA config given inline or as a path to a JSON/TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MoaSource {
    Path(PathBuf),
    Inline(Box<MoaConfig>),
}

impl MoaSource {
    pub fn resolve(&self) -> Result<MoaConfig, ConfigError> {
        match self {
            MoaSource::Inline(c) => {
                c.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
                Ok((**c).clone())
            }
            MoaSource::Path(p) => MoaConfig::from_file(p).map_err(|e| ConfigError::Invalid(e.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EmbeddingSource {
    /// Deterministic token-hash vectors.
    Hash {
        #[serde(default = "default_hash_dim")]
        dim: usize,
    },
    File { path: PathBuf },
    Http { url: Url },
}

fn default_hash_dim() -> usize {
    64
}

impl Default for EmbeddingSource {
    fn default() -> Self {
        EmbeddingSource::Hash { dim: default_hash_dim() }
    }
}

fn default_schema() -> String {
    "canonical".into()
}
fn default_eval() -> SplitSelector {
    SplitSelector {
        part: Part::Valid,
        tail: None,
    }
}
fn default_shots() -> usize {
    crate::exemplar::DEFAULT_SHOTS
}
fn default_iters() -> usize {
    100
}
fn default_workers() -> usize {
    4
}
fn default_cap() -> usize {
    DEFAULT_CONCURRENCY_CAP
}
fn default_timeout() -> u64 {
    120
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub corpus: PathBuf,
    #[serde(default = "default_schema")]
    pub schema: String,
    /// Train/valid/test sizes; without it the whole corpus is evaluated and
    /// there is no exemplar pool.
    #[serde(default)]
    pub split: Option<SplitSpec>,
    #[serde(default = "default_eval")]
    pub eval: SplitSelector,
    pub task: RunTask,
    pub setting: Setting,
    #[serde(default)]
    pub agent: Option<AgentSpec>,
    #[serde(default)]
    pub moa_a: Option<MoaSource>,
    #[serde(default)]
    pub moa_b: Option<MoaSource>,
    #[serde(default = "default_shots")]
    pub shots: usize,
    /// k for k-means; defaults to `shots`.
    #[serde(default)]
    pub clusters: Option<usize>,
    #[serde(default = "default_iters")]
    pub kmeans_iters: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub curated: Vec<String>,
    #[serde(default)]
    pub embeddings: EmbeddingSource,
    /// Built-in template id or template file, per task.
    #[serde(default)]
    pub template_a: Option<String>,
    #[serde(default)]
    pub template_b: Option<String>,
    pub output_dir: PathBuf,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_cap")]
    pub concurrency_cap: usize,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default)]
    pub parse_policy: ParsePolicy,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    /// Scripted mock backend instead of HTTP endpoints.
    #[serde(default)]
    pub mock: Option<PathBuf>,
}

fn rebase(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    /// Reads a TOML or JSON config; relative paths resolve against its directory.
    pub fn from_file(path: impl AsRef<Path>) -> Result<RunConfig, ConfigError> {
        let path = path.as_ref();
        let load = |message: String| ConfigError::Load {
            path: path.display().to_string(),
            message,
        };
        let raw = std::fs::read_to_string(path).map_err(|e| load(e.to_string()))?;
        let mut cfg: RunConfig = if path.extension().is_some_and(|e| e == "json") {
            let de = &mut serde_json::Deserializer::from_str(&raw);
            serde_path_to_error::deserialize(de).map_err(|e| load(e.to_string()))?
        } else {
            toml::from_str(&raw).map_err(|e| load(e.to_string()))?
        };
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.rebase_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn rebase_paths(&mut self, base: &Path) {
        rebase(base, &mut self.corpus);
        rebase(base, &mut self.output_dir);
        if let Some(m) = &mut self.mock {
            rebase(base, m);
        }
        for src in [&mut self.moa_a, &mut self.moa_b].into_iter().flatten() {
            if let MoaSource::Path(p) = src {
                rebase(base, p);
            }
        }
        if let EmbeddingSource::File { path } = &mut self.embeddings {
            rebase(base, path);
        }
        for t in [&mut self.template_a, &mut self.template_b].into_iter().flatten() {
            if !t.ends_with(".txt") {
                continue;
            }
            let mut p = PathBuf::from(&*t);
            rebase(base, &mut p);
            *t = p.display().to_string();
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        if self.concurrency_cap == 0 {
            return bad("concurrency_cap must be at least 1".into());
        }
        match self.setting {
            Setting::FewShotManual | Setting::FewShotCluster => {
                if self.shots == 0 || self.shots > MAX_EXEMPLARS {
                    return bad(format!("shots must be 1..={MAX_EXEMPLARS}, got {}", self.shots));
                }
                if self.split.is_none() {
                    return bad("few-shot settings need a split with a train part".into());
                }
                if self.setting == Setting::FewShotManual && self.curated.len() < self.shots {
                    return bad(format!(
                        "few-shot-manual needs {} curated ids, got {}",
                        self.shots,
                        self.curated.len()
                    ));
                }
                if let Some(k) = self.clusters {
                    if k < self.shots {
                        return bad(format!("clusters ({k}) must be at least shots ({})", self.shots));
                    }
                }
            }
            _ => {}
        }
        if self.setting == Setting::Moa {
            for (task, src) in [(Task::SpanExtraction, &self.moa_a), (Task::Summarization, &self.moa_b)] {
                if !self.task.includes(task) {
                    continue;
                }
                let Some(src) = src else {
                    return bad(format!("setting moa needs a MoA config for task {task}"));
                };
                let moa = src.resolve()?;
                if moa.task != task {
                    return bad(format!("MoA config for task {task} declares task {}", moa.task));
                }
            }
        } else {
            match &self.agent {
                None => return bad("single-agent settings need an agent".into()),
                Some(a) => a.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?,
            }
        }
        Ok(())
    }

    pub fn clusters(&self) -> usize {
        self.clusters.unwrap_or(self.shots)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
corpus = "corpus.jsonl"
task = "A-then-B"
setting = "zero-shot"
output_dir = "out"

[agent]
name = "llama"
endpoint = "http://localhost:8000/v1/chat/completions"
model_id = "llama-3.3-70b-instruct"
"#;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn toml_defaults_and_paths() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig::from_file(write(dir.path(), "run.toml", BASE)).unwrap();
        assert_eq!(cfg.task, RunTask::AThenB);
        assert_eq!(cfg.shots, 3);
        assert_eq!(cfg.clusters(), 3);
        assert_eq!(cfg.eval.part, Part::Valid);
        assert_eq!(cfg.corpus, dir.path().join("corpus.jsonl"));
        assert_eq!(cfg.embeddings, EmbeddingSource::Hash { dim: 64 });
        assert_eq!(cfg.parse_policy, ParsePolicy::Lenient);
    }

    #[test]
    fn setting_specific_fields() {
        let dir = tempfile::tempdir().unwrap();
        let manual = BASE.replace("zero-shot", "few-shot-manual");
        let e = RunConfig::from_file(write(dir.path(), "a.toml", &manual)).unwrap_err();
        assert!(e.to_string().contains("split"), "{e}");
        let with_split = manual.replace(
            "output_dir = \"out\"",
            "output_dir = \"out\"\ncurated = [\"t1\"]\n[split]\ntrain = 3\nvalid = 2\ntest = 0",
        );
        let e = RunConfig::from_file(write(dir.path(), "b.toml", &with_split)).unwrap_err();
        assert!(e.to_string().contains("curated"), "{e}");
        let moa = BASE.replace("zero-shot", "moa");
        let e = RunConfig::from_file(write(dir.path(), "c.toml", &moa)).unwrap_err();
        assert!(e.to_string().contains("MoA config for task A"), "{e}");
        let no_agent = "corpus = \"c\"\ntask = \"A\"\nsetting = \"zero-shot\"\noutput_dir = \"o\"\n";
        assert!(RunConfig::from_file(write(dir.path(), "d.toml", no_agent)).is_err());
    }

    #[test]
    fn json_errors_name_the_field() {
        let dir = tempfile::tempdir().unwrap();
        let raw = r#"{"corpus":"c","task":"A","setting":"zero-shot","output_dir":"o","shots":"three"}"#;
        let e = RunConfig::from_file(write(dir.path(), "r.json", raw)).unwrap_err();
        assert!(e.to_string().contains("shots"), "{e}");
    }
}
