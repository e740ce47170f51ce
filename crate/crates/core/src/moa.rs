//! Mixture-of-Agents pipeline.
//!
//! Layer 1 proposes, an optional second layer verifies, an optional third
//! layer strips hallucinations, and a single aggregator fuses the last
//! layer's outputs. Intermediate outputs are passed along as plain text; only
//! the aggregator's completion is parsed downstream.

use std::fmt::Write as _;
use std::path::Path;

use futures::future::join_all;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Thread;
use crate::gateway::{AgentSpec, Gateway, GatewayError};
use crate::parsing::LabeledSpan;
use crate::prompting::{
    build_task_a_prompt, build_task_b_prompt, Exemplar, PromptError, PromptMessages, Task,
    Template, AGGREGATE_PROMPT, HALLUCINATION_PROMPT, VERIFY_PROMPT,
};

/// Heading placed before each upstream output inside a layer or aggregator prompt.
pub const RESPONSE_HEADING: &str = "### Response ";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LayerRole {
    Propose,
    Verify,
    HallucinationCheck,
}

impl LayerRole {
    /// Required role sequence; a config uses a non-empty prefix of it.
    pub const ORDER: [LayerRole; 3] = [
        LayerRole::Propose,
        LayerRole::Verify,
        LayerRole::HallucinationCheck,
    ];

    pub fn default_prompt(self) -> &'static str {
        match self {
            LayerRole::Propose => "",
            LayerRole::Verify => VERIFY_PROMPT,
            LayerRole::HallucinationCheck => HALLUCINATION_PROMPT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub role: LayerRole,
    pub agents: Vec<AgentSpec>,
    /// Defaults to the shipped prompt for the role.
    #[serde(default)]
    pub role_prompt: Option<String>,
}

impl LayerSpec {
    pub fn role_prompt(&self) -> &str {
        self.role_prompt
            .as_deref()
            .unwrap_or_else(|| self.role.default_prompt())
            .trim()
    }
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoaConfig {
    pub task: Task,
    pub layers: Vec<LayerSpec>,
    pub aggregator: AgentSpec,
    #[serde(default)]
    pub aggregator_prompt: Option<String>,
    /// Whether refinement layers also see the original task prompt.
    #[serde(default = "yes")]
    pub include_source: bool,
    /// Keep going when some agents in a layer fail, as long as one succeeds.
    #[serde(default)]
    pub skip_failed_agents: bool,
}

#[derive(Debug, Error)]
pub enum MoaError {
    #[error("invalid MoA config: {0}")]
    Config(String),
    #[error("cannot read MoA config {path}: {message}")]
    Load { path: String, message: String },
    #[error("{role:?} layer needs upstream outputs")]
    MissingUpstream { role: LayerRole },
    #[error("PROPOSE layer takes no upstream outputs")]
    UnexpectedUpstream,
    #[error("aggregator needs at least one final-layer output")]
    NoOutputs,
    #[error("layer {layer} ({role:?}) failed: {source}")]
    Layer {
        layer: usize,
        role: LayerRole,
        #[source]
        source: GatewayError,
        trace: Box<MoaTrace>,
    },
    #[error("aggregator failed: {source}")]
    Aggregator {
        #[source]
        source: GatewayError,
        trace: Box<MoaTrace>,
    },
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

impl MoaError {
    /// Partial trace recorded before the failure, when there is one.
    pub fn trace(&self) -> Option<&MoaTrace> {
        match self {
            MoaError::Layer { trace, .. } | MoaError::Aggregator { trace, .. } => Some(trace),
            _ => None,
        }
    }
}

impl MoaConfig {
    pub fn aggregator_prompt(&self) -> &str {
        self.aggregator_prompt.as_deref().unwrap_or(AGGREGATE_PROMPT).trim()
    }

    pub fn validate(&self) -> Result<(), MoaError> {
        if self.layers.is_empty() || self.layers.len() > 3 {
            return Err(MoaError::Config(format!(
                "{} layers given; 1 to 3 are supported",
                self.layers.len()
            )));
        }
        for (i, (layer, expected)) in self.layers.iter().zip(LayerRole::ORDER).enumerate() {
            if layer.role != expected {
                return Err(MoaError::Config(format!(
                    "layer {} has role {:?}; expected {:?} (roles must run PROPOSE, VERIFY, HALLUCINATION_CHECK)",
                    i + 1,
                    layer.role,
                    expected
                )));
            }
            if layer.agents.is_empty() {
                return Err(MoaError::Config(format!("layer {} has no agents", i + 1)));
            }
            for a in &layer.agents {
                a.validate().map_err(|e| MoaError::Config(e.to_string()))?;
            }
        }
        self.aggregator
            .validate()
            .map_err(|e| MoaError::Config(e.to_string()))
    }

    /// Reads a JSON or TOML config (chosen by file extension) and validates it.
    pub fn from_file(path: impl AsRef<Path>) -> Result<MoaConfig, MoaError> {
        let path = path.as_ref();
        let load_err = |message: String| MoaError::Load {
            path: path.display().to_string(),
            message,
        };
        let raw = std::fs::read_to_string(path).map_err(|e| load_err(e.to_string()))?;
        let cfg: MoaConfig = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&raw).map_err(|e| load_err(e.to_string()))?
        } else {
            serde_json::from_str(&raw).map_err(|e| load_err(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One agent call inside the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentCall {
    pub agent: String,
    pub model_id: String,
    pub prompt: PromptMessages,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default)]
    pub attempt: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerTrace {
    pub role: LayerRole,
    pub calls: Vec<AgentCall>,
}

impl LayerTrace {
    pub fn outputs(&self) -> Vec<&str> {
        self.calls.iter().filter_map(|c| c.output.as_deref()).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MoaTrace {
    pub layers: Vec<LayerTrace>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aggregator: Option<AgentCall>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_output: Option<String>,
}

/// Upstream outputs embedded verbatim under numbered headings.
pub fn responses_block(upstream: &[&str]) -> String {
    let mut s = String::new();
    for (i, text) in upstream.iter().enumerate() {
        if i > 0 {
            s.push_str("\n\n");
        }
        let _ = write!(s, "{RESPONSE_HEADING}{}\n{text}", i + 1);
    }
    s
}

fn layered_prompt(
    instruction: &str,
    base: &PromptMessages,
    upstream: &[&str],
    include_source: bool,
) -> PromptMessages {
    let mut user = String::new();
    if !instruction.is_empty() {
        user.push_str(instruction);
        user.push_str("\n\n");
    }
    if include_source || upstream.is_empty() {
        if !upstream.is_empty() {
            user.push_str("## Task\n");
        }
        user.push_str(base.user.trim_end());
    }
    if !upstream.is_empty() {
        if !user.is_empty() {
            user.push_str("\n\n");
        }
        user.push_str("## Responses\n");
        user.push_str(&responses_block(upstream));
    }
    PromptMessages {
        system: base.system.clone(),
        user,
    }
}

async fn call(gateway: &Gateway, agent: &AgentSpec, prompt: PromptMessages) -> (AgentCall, Option<GatewayError>) {
    match gateway.complete(agent, &prompt).await {
        Ok(resp) => (
            AgentCall {
                agent: agent.name.clone(),
                model_id: agent.model_id.clone(),
                prompt,
                output: Some(resp.text),
                error: None,
                attempt: resp.attempt,
            },
            None,
        ),
        Err(e) => (
            AgentCall {
                agent: agent.name.clone(),
                model_id: agent.model_id.clone(),
                prompt,
                output: None,
                error: Some(e.to_string()),
                attempt: 0,
            },
            Some(e),
        ),
    }
}

/// Runs every agent of one layer concurrently; results keep agent order.
///
/// On failure the returned error is the first agent error, and the layer trace
/// (successful and failed calls) is handed back alongside it.
pub async fn run_layer(
    gateway: &Gateway,
    layer: &LayerSpec,
    base_prompt: &PromptMessages,
    upstream: &[&str],
    include_source: bool,
    skip_failed: bool,
) -> Result<LayerTrace, (LayerTrace, MoaError)> {
    let empty = LayerTrace {
        role: layer.role,
        calls: Vec::new(),
    };
    match (layer.role, upstream.is_empty()) {
        (LayerRole::Propose, false) => return Err((empty, MoaError::UnexpectedUpstream)),
        (role @ (LayerRole::Verify | LayerRole::HallucinationCheck), true) => {
            return Err((empty, MoaError::MissingUpstream { role }))
        }
        _ => {}
    }
    let prompt = layered_prompt(layer.role_prompt(), base_prompt, upstream, include_source);
    let results = join_all(
        layer
            .agents
            .iter()
            .map(|agent| call(gateway, agent, prompt.clone())),
    )
    .await;

    let mut trace = LayerTrace {
        role: layer.role,
        calls: Vec::with_capacity(results.len()),
    };
    let mut first_error = None;
    for (c, err) in results {
        if first_error.is_none() {
            first_error = err;
        }
        trace.calls.push(c);
    }
    match first_error {
        None => Ok(trace),
        Some(_) if skip_failed && !trace.outputs().is_empty() => Ok(trace),
        Some(source) => Err((
            trace,
            MoaError::Layer {
                layer: 0,
                role: layer.role,
                source,
                trace: Box::default(),
            },
        )),
    }
}

/// Builds the aggregator prompt: aggregator instruction, base task, then every
/// final-layer output verbatim.
pub fn aggregator_prompt(config: &MoaConfig, final_outputs: &[&str], base: &PromptMessages) -> PromptMessages {
    layered_prompt(config.aggregator_prompt(), base, final_outputs, true)
}

pub async fn aggregate(
    gateway: &Gateway,
    config: &MoaConfig,
    final_outputs: &[&str],
    base_prompt: &PromptMessages,
) -> Result<AgentCall, MoaError> {
    if final_outputs.is_empty() {
        return Err(MoaError::NoOutputs);
    }
    let prompt = aggregator_prompt(config, final_outputs, base_prompt);
    match call(gateway, &config.aggregator, prompt).await {
        (c, None) => Ok(c),
        (c, Some(source)) => Err(MoaError::Aggregator {
            source,
            trace: Box::new(MoaTrace {
                aggregator: Some(c),
                ..MoaTrace::default()
            }),
        }),
    }
}

/// The task instance a pipeline runs on.
#[derive(Debug, Clone)]
pub enum TaskInput<'a> {
    Spans {
        thread: &'a Thread,
        exemplars: &'a [Exemplar],
        template: &'a Template,
    },
    Summaries {
        thread: &'a Thread,
        spans: &'a [LabeledSpan],
        exemplars: &'a [Exemplar],
        template: &'a Template,
    },
}

impl TaskInput<'_> {
    pub fn task(&self) -> Task {
        match self {
            TaskInput::Spans { .. } => Task::SpanExtraction,
            TaskInput::Summaries { .. } => Task::Summarization,
        }
    }

    pub fn base_prompt(&self) -> Result<PromptMessages, PromptError> {
        match self {
            TaskInput::Spans { thread, exemplars, template } => {
                build_task_a_prompt(thread, exemplars, template)
            }
            TaskInput::Summaries { thread, spans, exemplars, template } => {
                build_task_b_prompt(thread, spans, exemplars, template)
            }
        }
    }
}

/// Runs the layers in order, then the aggregator. Returns the final text and
/// the full trace; errors carry the partial trace.
pub async fn run_pipeline(
    gateway: &Gateway,
    config: &MoaConfig,
    input: &TaskInput<'_>,
) -> Result<(String, MoaTrace), MoaError> {
    config.validate()?;
    if input.task() != config.task {
        return Err(MoaError::Config(format!(
            "config is for task {}, input is task {}",
            config.task,
            input.task()
        )));
    }
    let base = input.base_prompt()?;
    run_pipeline_with_prompt(gateway, config, &base).await
}

pub async fn run_pipeline_with_prompt(
    gateway: &Gateway,
    config: &MoaConfig,
    base: &PromptMessages,
) -> Result<(String, MoaTrace), MoaError> {
    let mut trace = MoaTrace::default();
    let mut upstream: Vec<String> = Vec::new();
    for (i, layer) in config.layers.iter().enumerate() {
        let refs: Vec<&str> = upstream.iter().map(String::as_str).collect();
        match run_layer(gateway, layer, base, &refs, config.include_source, config.skip_failed_agents).await {
            Ok(lt) => {
                upstream = lt.outputs().into_iter().map(str::to_string).collect();
                trace.layers.push(lt);
            }
            Err((lt, err)) => {
                trace.layers.push(lt);
                return Err(match err {
                    MoaError::Layer { role, source, .. } => MoaError::Layer {
                        layer: i + 1,
                        role,
                        source,
                        trace: Box::new(trace),
                    },
                    other => other,
                });
            }
        }
    }
    let refs: Vec<&str> = upstream.iter().map(String::as_str).collect();
    match aggregate(gateway, config, &refs, base).await {
        Ok(c) => {
            let text = c.output.clone().unwrap_or_default();
            trace.aggregator = Some(c);
            trace.final_output = Some(text.clone());
            Ok((text, trace))
        }
        Err(MoaError::Aggregator { source, trace: partial }) => {
            trace.aggregator = partial.aggregator;
            Err(MoaError::Aggregator {
                source,
                trace: Box::new(trace),
            })
        }
        Err(other) => Err(other),
    }
}
