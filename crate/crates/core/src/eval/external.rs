//! External summary scorers (BERTScore, AlignScore, SummaC).
//!
//! Requests are JSON Lines `{"id", "source", "reference", "hypothesis"}`;
//! responses are JSON Lines `{"id", "bertscore", "alignscore", "summac"}`.
//! A scorer is either a precomputed response file or an HTTP endpoint that
//! accepts the request lines as the POST body and answers with response lines.

use std::collections::BTreeMap;
use std::path::Path;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::EvalError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub id: String,
    pub source: String,
    pub reference: String,
    pub hypothesis: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeuralScores {
    pub bertscore: f64,
    pub alignscore: f64,
    pub summac: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub id: String,
    #[serde(flatten)]
    pub scores: NeuralScores,
}

#[async_trait]
pub trait ExternalScorer: Send + Sync {
    /// Scores for every request id.
    async fn score(&self, requests: &[ScoreRequest]) -> Result<BTreeMap<String, NeuralScores>, EvalError>;
}

pub fn parse_responses(raw: &str) -> Result<BTreeMap<String, NeuralScores>, EvalError> {
    let mut out = BTreeMap::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let line_err = |message: String| EvalError::ScorerLine { line: i + 1, message };
        let r: ScoreResponse = serde_json::from_str(line).map_err(|e| line_err(e.to_string()))?;
        for (name, v) in [
            ("bertscore", r.scores.bertscore),
            ("alignscore", r.scores.alignscore),
            ("summac", r.scores.summac),
        ] {
            if !v.is_finite() {
                return Err(line_err(format!("{name} is not finite")));
            }
        }
        if out.insert(r.id.clone(), r.scores).is_some() {
            return Err(line_err(format!("duplicate id {}", r.id)));
        }
    }
    Ok(out)
}

fn pick(
    all: &BTreeMap<String, NeuralScores>,
    requests: &[ScoreRequest],
) -> Result<BTreeMap<String, NeuralScores>, EvalError> {
    requests
        .iter()
        .map(|r| {
            all.get(&r.id)
                .map(|s| (r.id.clone(), *s))
                .ok_or_else(|| EvalError::ScorerMissing(r.id.clone()))
        })
        .collect()
}

pub fn requests_to_jsonl(requests: &[ScoreRequest]) -> String {
    requests
        .iter()
        .map(|r| serde_json::to_string(r).expect("request serializes") + "\n")
        .collect()
}

/// Precomputed scores keyed by request id.
#[derive(Debug, Clone, Default)]
pub struct FileScorer {
    pub scores: BTreeMap<String, NeuralScores>,
}

impl FileScorer {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, EvalError> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|e| EvalError::Scorer(format!("{}: {e}", path.display())))?;
        Ok(FileScorer {
            scores: parse_responses(&raw)?,
        })
    }
}

#[async_trait]
impl ExternalScorer for FileScorer {
    async fn score(&self, requests: &[ScoreRequest]) -> Result<BTreeMap<String, NeuralScores>, EvalError> {
        pick(&self.scores, requests)
    }
}

#[derive(Debug, Clone)]
pub struct HttpScorer {
    pub url: url::Url,
    client: reqwest::Client,
}

impl HttpScorer {
    pub fn new(url: url::Url) -> Self {
        HttpScorer {
            url,
            client: reqwest::Client::new(),
        }
    }
}

#[async_trait]
impl ExternalScorer for HttpScorer {
    async fn score(&self, requests: &[ScoreRequest]) -> Result<BTreeMap<String, NeuralScores>, EvalError> {
        if requests.is_empty() {
            return Ok(BTreeMap::new());
        }
        let resp = self
            .client
            .post(self.url.clone())
            .header(reqwest::header::CONTENT_TYPE, "application/x-ndjson")
            .body(requests_to_jsonl(requests))
            .send()
            .await
            .map_err(|e| EvalError::Scorer(e.to_string()))?;
        let status = resp.status();
        let body = resp.text().await.map_err(|e| EvalError::Scorer(e.to_string()))?;
        if !status.is_success() {
            return Err(EvalError::Scorer(format!("HTTP {status}: {body}")));
        }
        pick(&parse_responses(&body)?, requests)
    }
}

/// A URL with an http(s) scheme selects [`HttpScorer`]; anything else is a file path.
pub fn scorer_from_arg(arg: &str) -> Result<Box<dyn ExternalScorer>, EvalError> {
    match url::Url::parse(arg) {
        Ok(u) if u.scheme() == "http" || u.scheme() == "https" => Ok(Box::new(HttpScorer::new(u))),
        _ => Ok(Box::new(FileScorer::load(arg)?)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(id: &str) -> ScoreRequest {
        ScoreRequest {
            id: id.into(),
            source: "s".into(),
            reference: "r".into(),
            hypothesis: "h".into(),
        }
    }

    #[tokio::test]
    async fn file_scores_pass_through() {
        let raw = "{\"id\":\"a\",\"bertscore\":0.9116,\"alignscore\":0.4615,\"summac\":0.3031}\n";
        let f = FileScorer {
            scores: parse_responses(raw).unwrap(),
        };
        let out = f.score(&[req("a")]).await.unwrap();
        assert_eq!(out["a"].summac, 0.3031);
        assert!(matches!(f.score(&[req("b")]).await, Err(EvalError::ScorerMissing(id)) if id == "b"));
    }

    #[test]
    fn missing_key_names_line() {
        let raw = "{\"id\":\"a\",\"bertscore\":0.9,\"alignscore\":0.4,\"summac\":0.3}\n{\"id\":\"b\",\"bertscore\":0.9,\"alignscore\":0.4}\n";
        match parse_responses(raw) {
            Err(EvalError::ScorerLine { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("summac"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn request_lines() {
        let s = requests_to_jsonl(&[req("a"), req("b")]);
        assert_eq!(s.lines().count(), 2);
        let back: ScoreRequest = serde_json::from_str(s.lines().next().unwrap()).unwrap();
        assert_eq!(back, req("a"));
    }
}
