//! Retrieval-augmented Monte Carlo Tree Search for multimodal reasoning,
//! with step-level reward modelling and an evaluation harness.

pub mod config;
pub mod harness;
pub mod index;
pub mod mcts;
pub mod prm;
pub mod retrieval;
pub mod types;

pub use config::{EngineConfig, UcbVariant};
pub use types::{MultimodalQuery, ReasoningPath, ReasoningStep};
