//! Personality-styled data-to-text generation: meaning representations,
//! few-shot prompting, candidate generation, scoring and reranking.

pub mod backend;
pub mod experiment;
pub mod linearizer;
pub mod metrics;
pub mod mr;
pub mod prompts;
pub mod ranking;
pub mod sidecar;
pub mod style;
pub mod text;
