//! The generator contract: produce the next reasoning step (or a full
//! completion) for a query, a prefix, and an optional insight.

use thiserror::Error;

use crate::retrieval::Insight;
use crate::types::{derive_seed, extend_path, MultimodalQuery, ReasoningPath, ReasoningStep, TypeError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeneratorError {
    #[error("endpoint unreachable: {0}")]
    EndpointUnreachable(String),
    #[error("malformed reply: {0}")]
    MalformedReply(String),
    #[error("rate limited after {0} attempts")]
    RateLimited(usize),
    #[error("no task registered for query `{0}`")]
    UnknownQuery(String),
    #[error("generator failure: {0}")]
    Failure(String),
    #[error(transparent)]
    Step(#[from] TypeError),
}

/// A policy that writes reasoning steps. Implementations must be
/// deterministic given their inputs and `seed`.
pub trait GeneratorBackend: Send + Sync {
    fn generate_step(
        &self,
        query: &MultimodalQuery,
        path: &ReasoningPath,
        insight: Option<&Insight>,
        temperature: f64,
        seed: u64,
    ) -> Result<ReasoningStep, GeneratorError>;

    /// Roll `path` forward until it is terminal or holds `max_depth` steps.
    /// The insight conditions the first generated step only; the step at
    /// depth `d` is drawn with seed `derive_seed(seed, [d])`.
    fn generate_completion(
        &self,
        query: &MultimodalQuery,
        path: &ReasoningPath,
        insight: Option<&Insight>,
        temperature: f64,
        seed: u64,
        max_depth: usize,
    ) -> Result<ReasoningPath, GeneratorError> {
        let mut current = path.clone();
        let mut insight = insight;
        while !current.is_terminal() && current.len() < max_depth {
            let step_seed = derive_seed(seed, &[current.len() as u64]);
            let step = self.generate_step(query, &current, insight, temperature, step_seed)?;
            current = extend_path(&current, step)?;
            insight = None;
        }
        Ok(current)
    }
}
