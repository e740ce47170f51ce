//! Perspective-aware answer summarization for community health threads.
//!
//! Span extraction and classification (task A), per-perspective summaries
//! (task B), prompting, exemplar selection, a Mixture-of-Agents orchestrator,
//! output parsing and evaluation.

pub mod corpus;
pub mod embedding;
pub mod experiment;
pub mod eval;
pub mod exemplar;
pub mod gateway;
pub mod moa;
pub mod ner;
pub mod parsing;
pub mod prompting;
pub mod text;

pub use corpus::{GoldSpan, Perspective, Thread};
pub use exemplar::EmbeddingVector;
pub use gateway::{AgentSpec, Gateway};
pub use parsing::{LabeledSpan, PerspectiveSummaries};
pub use prompting::{PromptMessages, Task};
