//! Benchmark and annotation runners.
//!
//! Work is spread over a worker pool one query at a time; results are
//! collected back in input order, and every random choice is seeded from
//! the config seed and the query id, so outputs do not depend on the worker
//! count.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::generator::GeneratorBackend;
use super::inference::{active_sample, infer, InferContext};
use super::metrics::{metric_diversity, metric_pqc};
use super::HarnessError;
use crate::config::EngineConfig;
use crate::mcts::{extract_pairs, extract_point_labels, run_annotation, to_jsonl, NodeRecord, PreferencePair, SearchContext, StepAnnotation};
use crate::prm::{beam_sample, candidate_seed, orm_select, self_consistency, PathScorer, StepScorer};
use crate::retrieval::Retriever;
use crate::types::{derive_seed, normalize_answer, stable_hash, MultimodalQuery, ReasoningPath};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ZeroShot,
    SelfConsistency,
    Orm,
    ArMcts,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::ZeroShot, Method::SelfConsistency, Method::Orm, Method::ArMcts];

    pub fn name(self) -> &'static str {
        match self {
            Method::ZeroShot => "zero_shot",
            Method::SelfConsistency => "self_consistency",
            Method::Orm => "orm",
            Method::ArMcts => "ar_mcts",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown method `{s}`"))
    }
}

/// Per-query seed shared by every method.
pub fn task_seed(base: u64, query_id: &str) -> u64 {
    derive_seed(base, &[stable_hash(query_id)])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub question_id: String,
    pub method: Method,
    pub n_samples: usize,
    pub correct: bool,
    pub final_answer: Option<String>,
    pub candidate_answers: Vec<Option<String>>,
    pub candidate_correct: Vec<bool>,
    /// Mean pairwise distance of the candidates (n >= 2 only).
    pub diversity: Option<f64>,
    /// Selection rounds used by guided inference.
    pub rounds: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodAggregate {
    pub questions: usize,
    pub accuracy: f64,
    pub pqc: f64,
    pub diversity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub seed: u64,
    pub config: EngineConfig,
    pub methods: Vec<Method>,
    pub records: Vec<QuestionRecord>,
    pub aggregates: BTreeMap<String, MethodAggregate>,
}

impl ExperimentReport {
    pub fn records_jsonl(&self) -> String {
        to_jsonl(&self.records)
    }

    pub fn aggregate_json(&self) -> String {
        #[derive(Serialize)]
        struct Summary<'a> {
            seed: u64,
            config: &'a EngineConfig,
            methods: &'a [Method],
            aggregates: &'a BTreeMap<String, MethodAggregate>,
        }
        let mut s = serde_json::to_string_pretty(&Summary {
            seed: self.seed,
            config: &self.config,
            methods: &self.methods,
            aggregates: &self.aggregates,
        })
        .expect("summary serializes");
        s.push('\n');
        s
    }

    pub fn aggregate(&self, method: Method) -> Option<&MethodAggregate> {
        self.aggregates.get(method.name())
    }
}

/// Aggregate metrics per method from the records alone.
pub fn aggregate_records(records: &[QuestionRecord]) -> Result<BTreeMap<String, MethodAggregate>, HarnessError> {
    let mut by_method: BTreeMap<Method, Vec<&QuestionRecord>> = BTreeMap::new();
    for r in records {
        by_method.entry(r.method).or_default().push(r);
    }
    let mut out = BTreeMap::new();
    for (m, rs) in by_method {
        let n = rs.len();
        let accuracy = rs.iter().filter(|r| r.correct).count() as f64 / n as f64;
        let sets: Vec<&[bool]> = rs.iter().map(|r| r.candidate_correct.as_slice()).collect();
        let pqc = metric_pqc(&sets)?;
        let divs: Vec<f64> = rs.iter().filter_map(|r| r.diversity).collect();
        let diversity = (!divs.is_empty()).then(|| divs.iter().sum::<f64>() / divs.len() as f64);
        out.insert(
            m.name().to_string(),
            MethodAggregate {
                questions: n,
                accuracy,
                pqc,
                diversity,
            },
        );
    }
    Ok(out)
}

/// Shared machinery for the runners.
#[derive(Clone, Copy)]
pub struct BenchEnv<'a> {
    pub retriever: &'a Retriever,
    pub generator: &'a dyn GeneratorBackend,
    pub prm: &'a dyn StepScorer,
    pub orm: &'a dyn PathScorer,
    pub config: &'a EngineConfig,
}

fn gold(query: &MultimodalQuery) -> Option<String> {
    query.answer_key.as_deref().map(normalize_answer)
}

fn candidate_fields(paths: &[ReasoningPath], gold: &Option<String>) -> (Vec<Option<String>>, Vec<bool>) {
    let answers: Vec<Option<String>> = paths.iter().map(|p| p.final_answer().map(str::to_string)).collect();
    let flags = answers.iter().map(|a| a.is_some() && a == gold).collect();
    (answers, flags)
}

fn diversity_of(paths: &[ReasoningPath], env: &BenchEnv<'_>) -> Result<Option<f64>, HarnessError> {
    if paths.len() < 2 {
        return Ok(None);
    }
    Ok(Some(metric_diversity(paths, env.retriever.provider.as_ref())?))
}

fn run_query(query: &MultimodalQuery, methods: &[Method], env: &BenchEnv<'_>) -> Result<Vec<QuestionRecord>, HarnessError> {
    let cfg = env.config;
    let seed = task_seed(cfg.seed, &query.id);
    let first = candidate_seed(seed, 0);
    let gold = gold(query);
    let n = cfg.n_samples;
    let needs_beam = methods.iter().any(|m| matches!(m, Method::SelfConsistency | Method::Orm));
    let beam = if needs_beam {
        beam_sample(env.generator, query, n, cfg.temperature, seed, cfg.max_depth)?
    } else {
        Vec::new()
    };
    let record = |method, n_samples, final_answer: Option<String>, paths: &[ReasoningPath], rounds| {
        let (candidate_answers, candidate_correct) = candidate_fields(paths, &gold);
        Ok::<_, HarnessError>(QuestionRecord {
            question_id: query.id.clone(),
            method,
            n_samples,
            correct: final_answer.is_some() && final_answer == gold,
            final_answer,
            candidate_answers,
            candidate_correct,
            diversity: diversity_of(paths, env)?,
            rounds,
        })
    };

    let mut out = Vec::with_capacity(methods.len());
    for &m in methods {
        let rec = match m {
            Method::ZeroShot => {
                let path = env.generator.generate_completion(
                    query,
                    &ReasoningPath::empty(),
                    None,
                    cfg.temperature,
                    first,
                    cfg.max_depth,
                )?;
                let ans = path.final_answer().map(str::to_string);
                record(m, 1, ans, std::slice::from_ref(&path), None)?
            }
            Method::SelfConsistency => {
                let answers: Vec<&str> = beam.iter().filter_map(ReasoningPath::final_answer).collect();
                let ans = if answers.is_empty() {
                    None
                } else {
                    Some(self_consistency(&answers)?)
                };
                record(m, n, ans, &beam, None)?
            }
            Method::Orm => {
                let terminal: Vec<ReasoningPath> = beam.iter().filter(|p| p.is_terminal()).cloned().collect();
                let ans = if terminal.is_empty() {
                    None
                } else {
                    orm_select(&terminal, env.orm, query)?.final_answer().map(str::to_string)
                };
                record(m, n, ans, &beam, None)?
            }
            Method::ArMcts => {
                let insights = env.retriever.insights_for(query, cfg)?;
                let ctx = InferContext {
                    insights: &insights,
                    provider: env.retriever.provider.as_ref(),
                    generator: env.generator,
                    scorer: env.prm,
                    config: cfg,
                };
                let trace = infer(query, &ctx, first)?;
                let candidates = active_sample(
                    query,
                    &insights,
                    env.retriever.provider.as_ref(),
                    env.generator,
                    cfg,
                    n,
                    seed,
                )?;
                let ans = trace.path.final_answer().map(str::to_string);
                record(m, n, ans, &candidates, Some(trace.num_rounds()))?
            }
        };
        out.push(rec);
    }
    Ok(out)
}

fn pool(workers: usize) -> Result<rayon::ThreadPool, HarnessError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| HarnessError::Pool(e.to_string()))
}

/// Run every method on every query. Records come back in query order, then
/// method order.
pub fn run_benchmark(
    queries: &[MultimodalQuery],
    methods: &[Method],
    env: &BenchEnv<'_>,
    workers: usize,
) -> Result<ExperimentReport, HarnessError> {
    if queries.is_empty() {
        return Err(HarnessError::EmptySuite);
    }
    let per_query = pool(workers)?.install(|| {
        queries
            .par_iter()
            .map(|q| run_query(q, methods, env))
            .collect::<Result<Vec<_>, HarnessError>>()
    })?;
    let records: Vec<QuestionRecord> = per_query.into_iter().flatten().collect();
    let aggregates = aggregate_records(&records)?;
    Ok(ExperimentReport {
        seed: env.config.seed,
        config: env.config.clone(),
        methods: methods.to_vec(),
        records,
        aggregates,
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnnotationOutput {
    pub nodes: Vec<NodeRecord>,
    pub pairs: Vec<PreferencePair>,
    pub labels: Vec<StepAnnotation>,
}

impl AnnotationOutput {
    pub fn tree_jsonl(&self) -> String {
        to_jsonl(&self.nodes)
    }
    pub fn pairs_jsonl(&self) -> String {
        to_jsonl(&self.pairs)
    }
    pub fn labels_jsonl(&self) -> String {
        to_jsonl(&self.labels)
    }
}

/// Build one search tree per query and collect trees, preference pairs and
/// point labels in query order.
pub fn annotate_all(
    queries: &[MultimodalQuery],
    retriever: &Retriever,
    generator: &dyn GeneratorBackend,
    config: &EngineConfig,
    workers: usize,
) -> Result<AnnotationOutput, HarnessError> {
    if queries.is_empty() {
        return Err(HarnessError::EmptySuite);
    }
    let parts = pool(workers)?.install(|| {
        queries
            .par_iter()
            .map(|q| {
                let insights = retriever.insights_for(q, config)?;
                let ctx = SearchContext {
                    query: q,
                    insights: &insights,
                    provider: retriever.provider.as_ref(),
                    generator,
                    config,
                };
                let tree = run_annotation(&ctx, config.rounds, task_seed(config.seed, &q.id))?;
                Ok((tree.records(), extract_pairs(&tree, config), extract_point_labels(&tree, config)))
            })
            .collect::<Result<Vec<_>, HarnessError>>()
    })?;
    let mut out = AnnotationOutput::default();
    for (nodes, pairs, labels) in parts {
        out.nodes.extend(nodes);
        out.pairs.extend(pairs);
        out.labels.extend(labels);
    }
    Ok(out)
}
