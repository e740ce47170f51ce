//! Embedding sources for exemplar selection.
//!
//! The core never runs a neural encoder. Vectors come from a JSON-Lines file
//! (`{"id": "...", "vector": [...]}` per line), from the HTTP embedding
//! sidecar (`POST {"texts": [...]}` returning `{"vectors": [[...]]}`), or from
//! [`HashEmbedder`], a deterministic stand-in used by tests and offline runs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use async_trait::async_trait;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::exemplar::{EmbeddingVector, SelectionError};

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("cannot read embeddings {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("embedding file line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("embedding file line {line}: dimension {found}, expected {expected}")]
    DimMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("duplicate embedding id {0}")]
    DuplicateId(String),
    #[error("no embedding for id {0}")]
    Missing(String),
    #[error("embedding service: {0}")]
    Service(String),
    #[error(transparent)]
    Vector(#[from] SelectionError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub id: String,
    pub vector: Vec<f64>,
}

#[async_trait]
pub trait EmbeddingProvider: Send + Sync {
    /// Embeds `(id, text)` pairs; the result is keyed by id.
    async fn embed(
        &self,
        items: &[(String, String)],
    ) -> Result<BTreeMap<String, EmbeddingVector>, EmbeddingError>;
}

/// Deterministic bag-of-tokens embedder: every lowercase token maps to a
/// pseudo-random unit vector seeded by its SHA-256 digest, and a text is the
/// normalized sum of its token vectors.
#[derive(Debug, Clone, Copy)]
pub struct HashEmbedder {
    pub dim: usize,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        HashEmbedder { dim: 64 }
    }
}

impl HashEmbedder {
    fn token_vector(&self, token: &str) -> Vec<f64> {
        let digest = Sha256::digest(token.as_bytes());
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        let mut rng = ChaCha8Rng::from_seed(seed);
        let v: Vec<f64> = (0..self.dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        v.into_iter().map(|x| x / norm).collect()
    }

    pub fn embed_text(&self, text: &str) -> EmbeddingVector {
        let tokens: Vec<String> = text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(str::to_lowercase)
            .collect();
        let mut sum = vec![0.0; self.dim.max(1)];
        if tokens.is_empty() {
            sum = self.token_vector(text);
        }
        for t in &tokens {
            for (s, x) in sum.iter_mut().zip(self.token_vector(t)) {
                *s += x;
            }
        }
        let norm = sum.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            sum.iter_mut().for_each(|x| *x /= norm);
        } else {
            // opposite token vectors cancelled exactly; fall back to the whole text
            sum = self.token_vector(&tokens.join(" "));
        }
        EmbeddingVector::new(sum).expect("finite hash embedding")
    }
}

#[async_trait]
impl EmbeddingProvider for HashEmbedder {
    async fn embed(
        &self,
        items: &[(String, String)],
    ) -> Result<BTreeMap<String, EmbeddingVector>, EmbeddingError> {
        let mut out = BTreeMap::new();
        for (id, text) in items {
            if out.insert(id.clone(), self.embed_text(text)).is_some() {
                return Err(EmbeddingError::DuplicateId(id.clone()));
            }
        }
        Ok(out)
    }
}

/// Precomputed vectors loaded from a JSON-Lines embedding file.
#[derive(Debug, Clone, Default)]
pub struct FileEmbeddings {
    pub vectors: BTreeMap<String, EmbeddingVector>,
}

impl FileEmbeddings {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, EmbeddingError> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|source| EmbeddingError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&raw)
    }

    pub fn parse(raw: &str) -> Result<Self, EmbeddingError> {
        let mut vectors = BTreeMap::new();
        let mut dim = None;
        for (i, line) in raw.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let line_no = i + 1;
            let rec: EmbeddingRecord =
                serde_json::from_str(line).map_err(|e| EmbeddingError::Malformed {
                    line: line_no,
                    message: e.to_string(),
                })?;
            let v = EmbeddingVector::new(rec.vector).map_err(|e| EmbeddingError::Malformed {
                line: line_no,
                message: e.to_string(),
            })?;
            let expected = *dim.get_or_insert(v.dim());
            if v.dim() != expected {
                return Err(EmbeddingError::DimMismatch {
                    line: line_no,
                    expected,
                    found: v.dim(),
                });
            }
            if vectors.insert(rec.id.clone(), v).is_some() {
                return Err(EmbeddingError::DuplicateId(rec.id));
            }
        }
        Ok(FileEmbeddings { vectors })
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (id, v) in &self.vectors {
            let rec = EmbeddingRecord {
                id: id.clone(),
                vector: v.values().to_vec(),
            };
            let _ = writeln!(out, "{}", serde_json::to_string(&rec).expect("record serializes"));
        }
        out
    }
}

#[async_trait]
impl EmbeddingProvider for FileEmbeddings {
    async fn embed(
        &self,
        items: &[(String, String)],
    ) -> Result<BTreeMap<String, EmbeddingVector>, EmbeddingError> {
        items
            .iter()
            .map(|(id, _)| {
                self.vectors
                    .get(id)
                    .cloned()
                    .map(|v| (id.clone(), v))
                    .ok_or_else(|| EmbeddingError::Missing(id.clone()))
            })
            .collect()
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: Vec<&'a str>,
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

/// Client for the HTTP embedding sidecar.
#[derive(Debug, Clone)]
pub struct HttpEmbedder {
    pub url: url::Url,
    client: reqwest::Client,
}

impl HttpEmbedder {
    pub fn new(url: url::Url) -> Self {
        HttpEmbedder {
            url,
            client: reqwest::Client::new(),
        }
    }
}

#[async_trait]
impl EmbeddingProvider for HttpEmbedder {
    async fn embed(
        &self,
        items: &[(String, String)],
    ) -> Result<BTreeMap<String, EmbeddingVector>, EmbeddingError> {
        if items.is_empty() {
            return Ok(BTreeMap::new());
        }
        let body = EmbedRequest {
            texts: items.iter().map(|(_, t)| t.as_str()).collect(),
        };
        let resp = self
            .client
            .post(self.url.clone())
            .json(&body)
            .send()
            .await
            .map_err(|e| EmbeddingError::Service(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let text = resp.text().await.unwrap_or_default();
            return Err(EmbeddingError::Service(format!("HTTP {status}: {text}")));
        }
        let parsed: EmbedResponse = resp
            .json()
            .await
            .map_err(|e| EmbeddingError::Service(e.to_string()))?;
        if parsed.vectors.len() != items.len() {
            return Err(EmbeddingError::Service(format!(
                "{} vectors returned for {} texts",
                parsed.vectors.len(),
                items.len()
            )));
        }
        let mut out = BTreeMap::new();
        let mut dim = None;
        for ((id, _), values) in items.iter().zip(parsed.vectors) {
            let v = EmbeddingVector::new(values)?;
            let expected = *dim.get_or_insert(v.dim());
            if v.dim() != expected {
                return Err(EmbeddingError::Service(format!(
                    "vector for {id} has dimension {}, expected {expected}",
                    v.dim()
                )));
            }
            if out.insert(id.clone(), v).is_some() {
                return Err(EmbeddingError::DuplicateId(id.clone()));
            }
        }
        Ok(out)
    }
}
