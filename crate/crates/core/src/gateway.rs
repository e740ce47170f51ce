//! Chat-completion gateway.
//!
//! [`Gateway::complete`] sends one system + user exchange to an agent through a
//! [`ChatBackend`], retrying transient failures (transport errors, 5xx, 429)
//! with capped exponential backoff and full jitter. Two backends ship here: an
//! HTTP client speaking the common chat-completions JSON shape, and a scripted
//! [`MockBackend`] for offline, bit-reproducible runs.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write as _};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use async_trait::async_trait;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use tokio::sync::Semaphore;
use url::Url;

use crate::prompting::PromptMessages;

pub const DEFAULT_CONCURRENCY_CAP: usize = 4;
pub const DEFAULT_MAX_TOKENS: u32 = 2048;
/// Temperatures for the four single-model variants used by temperature ensembles.
pub const TEMPERATURE_VARIANTS: [f64; 4] = [0.3, 0.5, 0.7, 0.9];

fn default_max_tokens() -> u32 {
    DEFAULT_MAX_TOKENS
}

/// One callable agent: a model behind an endpoint with its sampling settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub name: String,
    pub endpoint: Url,
    pub model_id: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system_override: Option<String>,
    /// Name of the environment variable holding the bearer token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_ref: Option<String>,
}

impl AgentSpec {
    pub fn new(name: impl Into<String>, endpoint: Url, model_id: impl Into<String>) -> Self {
        AgentSpec {
            name: name.into(),
            endpoint,
            model_id: model_id.into(),
            temperature: 0.0,
            max_tokens: DEFAULT_MAX_TOKENS,
            system_override: None,
            auth_ref: None,
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let bad = |reason: &str| GatewayError::InvalidAgent {
            agent: self.name.clone(),
            reason: reason.to_string(),
        };
        if self.name.trim().is_empty() {
            return Err(bad("empty name"));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(bad("temperature must be finite and non-negative"));
        }
        if self.max_tokens == 0 {
            return Err(bad("max_tokens must be positive"));
        }
        Ok(())
    }
}

/// `count` copies of one model at the given temperatures, named `<prefix>-t<temp>`.
pub fn temperature_variants(base: &AgentSpec, temperatures: &[f64]) -> Vec<AgentSpec> {
    temperatures
        .iter()
        .map(|&t| AgentSpec {
            name: format!("{}-t{t}", base.name),
            temperature: t,
            ..base.clone()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub text: String,
    pub agent: String,
    pub latency_ms: f64,
    pub attempt: u32,
}

/// A single failed backend call.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("HTTP {status}: {message}")]
    Status { status: u16, message: String },
    #[error("no scripted response for fingerprint {0}")]
    Unscripted(String),
    #[error("configuration: {0}")]
    Config(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Transport(_) => true,
            BackendError::Status { status, .. } => *status == 429 || *status >= 500,
            BackendError::Unscripted(_) | BackendError::Config(_) => false,
        }
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("agent {agent}: {reason}")]
    InvalidAgent { agent: String, reason: String },
    #[error("agent {0}: prompt is empty")]
    EmptyPrompt(String),
    #[error("agent {agent}: gave up after {} attempts: {}", attempts.len(), attempts.join("; "))]
    Exhausted { agent: String, attempts: Vec<String> },
    #[error("agent {agent}: attempt {attempt} failed without retry: {error}")]
    Rejected {
        agent: String,
        attempt: u32,
        error: BackendError,
    },
    #[error("agent {agent}: empty completion on attempt {attempt}")]
    EmptyCompletion { agent: String, attempt: u32 },
    #[error("mock script is empty")]
    EmptyScript,
    #[error("cannot open trace log {path}: {source}")]
    TraceIo {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[async_trait]
pub trait ChatBackend: Send + Sync {
    async fn send(&self, agent: &AgentSpec, prompt: &PromptMessages) -> Result<String, BackendError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    #[serde(with = "millis")]
    pub base_delay: Duration,
    pub factor: f64,
    pub max_attempts: u32,
    #[serde(with = "millis")]
    pub max_delay: Duration,
}

mod millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_millis)
    }
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            base_delay: Duration::from_secs(1),
            factor: 2.0,
            max_attempts: 5,
            max_delay: Duration::from_secs(60),
        }
    }
}

impl RetryPolicy {
    /// Same attempt budget, no waiting. For mock-backed runs.
    pub fn immediate() -> Self {
        RetryPolicy {
            base_delay: Duration::ZERO,
            max_delay: Duration::ZERO,
            ..RetryPolicy::default()
        }
    }

    /// Upper bound of the jittered wait after failed attempt `attempt` (1-based).
    pub fn backoff_ceiling(&self, attempt: u32) -> Duration {
        let exp = self.factor.powi(attempt.saturating_sub(1) as i32);
        let secs = (self.base_delay.as_secs_f64() * exp).min(self.max_delay.as_secs_f64());
        Duration::from_secs_f64(secs.max(0.0))
    }
}

#[derive(Serialize)]
struct TraceRecord<'a> {
    agent: &'a str,
    model: &'a str,
    fingerprint: String,
    attempt: u32,
    ok: bool,
    latency_ms: f64,
    system: &'a str,
    user: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    response: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

/// Retrying, concurrency-capped front end over a [`ChatBackend`].
pub struct Gateway {
    backend: Arc<dyn ChatBackend>,
    retry: RetryPolicy,
    cap: usize,
    limits: Mutex<HashMap<String, Arc<Semaphore>>>,
    trace: Option<Mutex<BufWriter<File>>>,
}

impl Gateway {
    pub fn new(backend: Arc<dyn ChatBackend>) -> Self {
        Gateway {
            backend,
            retry: RetryPolicy::default(),
            cap: DEFAULT_CONCURRENCY_CAP,
            limits: Mutex::new(HashMap::new()),
            trace: None,
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// Maximum in-flight requests per endpoint.
    pub fn with_concurrency_cap(mut self, cap: usize) -> Self {
        self.cap = cap.max(1);
        self
    }

    /// Appends one JSON line per attempt to `path`.
    pub fn with_trace_file(mut self, path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let path = path.as_ref();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|source| GatewayError::TraceIo {
                path: path.display().to_string(),
                source,
            })?;
        self.trace = Some(Mutex::new(BufWriter::new(file)));
        Ok(self)
    }

    fn limiter(&self, endpoint: &Url) -> Arc<Semaphore> {
        let mut limits = self.limits.lock().expect("limiter map poisoned");
        limits
            .entry(endpoint.as_str().to_string())
            .or_insert_with(|| Arc::new(Semaphore::new(self.cap)))
            .clone()
    }

    fn log(&self, record: TraceRecord<'_>) {
        if let Some(trace) = &self.trace {
            let mut w = trace.lock().expect("trace writer poisoned");
            if let Ok(line) = serde_json::to_string(&record) {
                let _ = writeln!(w, "{line}");
                let _ = w.flush();
            }
        }
    }

    pub async fn complete(
        &self,
        agent: &AgentSpec,
        prompt: &PromptMessages,
    ) -> Result<ModelResponse, GatewayError> {
        agent.validate()?;
        if prompt.user.trim().is_empty() {
            return Err(GatewayError::EmptyPrompt(agent.name.clone()));
        }
        let effective;
        let prompt = match &agent.system_override {
            Some(system) => {
                effective = PromptMessages {
                    system: system.clone(),
                    user: prompt.user.clone(),
                };
                &effective
            }
            None => prompt,
        };
        let limiter = self.limiter(&agent.endpoint);
        let fingerprint = fingerprint(&agent.name, prompt);
        let mut failures = Vec::new();

        for attempt in 1..=self.retry.max_attempts.max(1) {
            let started = Instant::now();
            let result = {
                let _permit = limiter.acquire().await.expect("semaphore never closed");
                self.backend.send(agent, prompt).await
            };
            let latency_ms = started.elapsed().as_secs_f64() * 1e3;
            self.log(TraceRecord {
                agent: &agent.name,
                model: &agent.model_id,
                fingerprint: fingerprint.clone(),
                attempt,
                ok: result.is_ok(),
                latency_ms,
                system: &prompt.system,
                user: &prompt.user,
                response: result.as_deref().ok(),
                error: result.as_ref().err().map(ToString::to_string),
            });
            match result {
                Ok(text) if text.trim().is_empty() => {
                    return Err(GatewayError::EmptyCompletion {
                        agent: agent.name.clone(),
                        attempt,
                    })
                }
                Ok(text) => {
                    return Ok(ModelResponse {
                        text,
                        agent: agent.name.clone(),
                        latency_ms,
                        attempt,
                    })
                }
                Err(error) if !error.is_retryable() => {
                    return Err(GatewayError::Rejected {
                        agent: agent.name.clone(),
                        attempt,
                        error,
                    })
                }
                Err(error) => {
                    failures.push(format!("attempt {attempt}: {error}"));
                    if attempt < self.retry.max_attempts {
                        let ceiling = self.retry.backoff_ceiling(attempt);
                        if !ceiling.is_zero() {
                            let wait = rand::rng().random_range(0.0..=ceiling.as_secs_f64());
                            tokio::time::sleep(Duration::from_secs_f64(wait)).await;
                        }
                    }
                }
            }
        }
        Err(GatewayError::Exhausted {
            agent: agent.name.clone(),
            attempts: failures,
        })
    }
}

/// Stable request identity: SHA-256 over agent name and both prompt messages.
pub fn fingerprint(agent_name: &str, prompt: &PromptMessages) -> String {
    let mut h = Sha256::new();
    h.update(agent_name.as_bytes());
    h.update([0]);
    h.update(prompt.system.as_bytes());
    h.update([0]);
    h.update(prompt.user.as_bytes());
    hex::encode(h.finalize())
}

/// Scripted failure behaviour for one request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailPlan {
    /// Number of failing attempts before `then` is served; `None` fails forever.
    #[serde(default)]
    pub times: Option<u32>,
    #[serde(default = "default_fail_status")]
    pub status: u16,
    #[serde(default)]
    pub then: Option<String>,
}

fn default_fail_status() -> u16 {
    503
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MockReply {
    Text(String),
    /// Returns the user prompt after the line holding the last occurrence of the marker.
    EchoAfterLast { echo_after_last: String },
    Fail { fail: FailPlan },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockRule {
    #[serde(default)]
    pub agent: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    /// Substring the user prompt must contain.
    #[serde(default)]
    pub contains: Option<String>,
    pub reply: MockReply,
}

impl MockRule {
    fn matches(&self, agent: &AgentSpec, prompt: &PromptMessages) -> bool {
        self.agent.as_ref().is_none_or(|a| *a == agent.name)
            && self.model.as_ref().is_none_or(|m| *m == agent.model_id)
            && self.contains.as_ref().is_none_or(|c| prompt.user.contains(c.as_str()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MockFallback {
    /// Reply with the last 40 characters of the user prompt.
    Echo,
}

/// Mock backend script. Lookup order: exact fingerprint, then rules in order,
/// then the fallback.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub responses: HashMap<String, MockReply>,
    #[serde(default)]
    pub rules: Vec<MockRule>,
    #[serde(default)]
    pub fallback: Option<MockFallback>,
}

impl MockScript {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, std::io::Error> {
        let raw = std::fs::read_to_string(path)?;
        serde_json::from_str(&raw).map_err(std::io::Error::other)
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty() && self.rules.is_empty() && self.fallback.is_none()
    }
}

pub const ECHO_CHARS: usize = 40;

fn echo_tail(user: &str) -> String {
    let n = user.chars().count();
    user.chars().skip(n.saturating_sub(ECHO_CHARS)).collect()
}

fn echo_after_last(user: &str, marker: &str) -> String {
    match user.rfind(marker) {
        Some(pos) => {
            let rest = &user[pos..];
            let body = rest.find('\n').map_or("", |nl| &rest[nl + 1..]);
            body.trim().to_string()
        }
        None => String::new(),
    }
}

/// Deterministic scripted backend.
#[derive(Debug)]
pub struct MockBackend {
    script: MockScript,
    attempts: Mutex<HashMap<String, u32>>,
}

impl MockBackend {
    pub fn new(script: MockScript) -> Result<Self, GatewayError> {
        if script.is_empty() {
            return Err(GatewayError::EmptyScript);
        }
        Ok(MockBackend {
            script,
            attempts: Mutex::new(HashMap::new()),
        })
    }

    fn reply_for(&self, agent: &AgentSpec, prompt: &PromptMessages, fp: &str) -> Option<MockReply> {
        if let Some(r) = self.script.responses.get(fp) {
            return Some(r.clone());
        }
        if let Some(rule) = self.script.rules.iter().find(|r| r.matches(agent, prompt)) {
            return Some(rule.reply.clone());
        }
        self.script
            .fallback
            .map(|MockFallback::Echo| MockReply::Text(echo_tail(&prompt.user)))
    }
}

#[async_trait]
impl ChatBackend for MockBackend {
    async fn send(&self, agent: &AgentSpec, prompt: &PromptMessages) -> Result<String, BackendError> {
        let fp = fingerprint(&agent.name, prompt);
        let reply = self
            .reply_for(agent, prompt, &fp)
            .ok_or_else(|| BackendError::Unscripted(fp.clone()))?;
        match reply {
            MockReply::Text(t) => Ok(t),
            MockReply::EchoAfterLast { echo_after_last: marker } => {
                Ok(echo_after_last(&prompt.user, &marker))
            }
            MockReply::Fail { fail } => {
                let seen = {
                    let mut attempts = self.attempts.lock().expect("attempt map poisoned");
                    let n = attempts.entry(fp).or_insert(0);
                    *n += 1;
                    *n
                };
                match (fail.times, fail.then) {
                    (Some(times), Some(text)) if seen > times => Ok(text),
                    _ => Err(BackendError::Status {
                        status: fail.status,
                        message: format!("scripted failure #{seen}"),
                    }),
                }
            }
        }
    }
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 2],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct ChatChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatChoiceMessage,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

/// Chat-completions client. `AgentSpec::endpoint` is the full completions URL.
/// System overrides are applied by the [`Gateway`] before the call.
#[derive(Debug, Clone)]
pub struct HttpBackend {
    client: reqwest::Client,
}

impl HttpBackend {
    pub fn new(timeout: Duration) -> Result<Self, BackendError> {
        let client = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(HttpBackend { client })
    }
}

#[async_trait]
impl ChatBackend for HttpBackend {
    async fn send(&self, agent: &AgentSpec, prompt: &PromptMessages) -> Result<String, BackendError> {
        let body = ChatRequest {
            model: &agent.model_id,
            messages: [
                ChatMessage { role: "system", content: &prompt.system },
                ChatMessage { role: "user", content: &prompt.user },
            ],
            temperature: agent.temperature,
            max_tokens: agent.max_tokens,
        };
        let mut req = self.client.post(agent.endpoint.clone()).json(&body);
        if let Some(var) = &agent.auth_ref {
            let token = std::env::var(var).map_err(|_| {
                BackendError::Config(format!("environment variable {var} is not set"))
            })?;
            req = req.bearer_auth(token);
        }
        let resp = req
            .send()
            .await
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let message = resp.text().await.unwrap_or_default();
            return Err(BackendError::Status {
                status: status.as_u16(),
                message,
            });
        }
        let parsed: ChatResponse = resp
            .json()
            .await
            .map_err(|e| BackendError::Transport(format!("bad response body: {e}")))?;
        Ok(parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .unwrap_or_default())
    }
}
