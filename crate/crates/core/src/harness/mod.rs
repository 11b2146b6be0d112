//! Experiment harness: generator backends, the synthetic environment,
//! guided inference, metrics, and the annotation and benchmark runners.

use thiserror::Error;

pub mod bench;
pub mod generator;
pub mod inference;
pub mod metrics;
pub mod remote;
pub mod synthetic;

pub use bench::{annotate_all, run_benchmark, AnnotationOutput, BenchEnv, ExperimentReport, Method};
pub use generator::{GeneratorBackend, GeneratorError};
pub use inference::{active_sample, infer, InferContext, InferenceTrace};
pub use metrics::{metric_diversity, metric_pqc, MetricError};
pub use remote::{RemoteConfig, RemoteGenerator};
pub use synthetic::{gen_synthetic_suite, MockGenerator, OracleScorer, SuiteSpec, SyntheticStepSpace, SyntheticSuite, SyntheticTask, TaskBook};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error(transparent)]
    Prm(#[from] crate::prm::PrmError),
    #[error(transparent)]
    Retrieval(#[from] crate::retrieval::RetrievalError),
    #[error(transparent)]
    Mcts(#[from] crate::mcts::MctsError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Path(#[from] crate::types::TypeError),
    #[error("empty suite")]
    EmptySuite,
    #[error("worker pool: {0}")]
    Pool(String),
}
