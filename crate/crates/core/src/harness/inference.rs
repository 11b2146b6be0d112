//! PRM-guided inference and retrieval-augmented candidate sampling.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::generator::GeneratorBackend;
use super::HarnessError;
use crate::config::EngineConfig;
use crate::index::EmbeddingProvider;
use crate::prm::{candidate_seed, prm_score, StepScorer};
use crate::retrieval::{active_retrieve, Insight, InsightSet};
use crate::types::{derive_seed, extend_path, MultimodalQuery, ReasoningPath};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub insight_id: Option<String>,
    /// New step texts joined by spaces.
    pub text: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub forced_completion: bool,
    pub candidates: Vec<CandidateRecord>,
    pub selected: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceTrace {
    pub query_id: String,
    pub path: ReasoningPath,
    pub rounds: Vec<RoundRecord>,
}

impl InferenceTrace {
    pub fn num_rounds(&self) -> usize {
        self.rounds.len()
    }
}

/// The pieces `infer` needs besides the query.
#[derive(Clone, Copy)]
pub struct InferContext<'a> {
    pub insights: &'a InsightSet,
    pub provider: &'a dyn EmbeddingProvider,
    pub generator: &'a dyn GeneratorBackend,
    pub scorer: &'a dyn StepScorer,
    pub config: &'a EngineConfig,
}

/// Step-by-step decoding guided by step scores.
///
/// Every round offers the top-B actively retrieved insights plus one
/// insight-free continuation, scores each candidate, and keeps the best
/// (ties go to the insight-free candidate, then to the lower index). All
/// candidates of a round share one seed. In round `early_stop_round` each
/// candidate is completed to a final answer instead of a single step and is
/// scored by its weakest new step.
pub fn infer(
    query: &MultimodalQuery,
    ctx: &InferContext<'_>,
    seed: u64,
) -> Result<InferenceTrace, HarnessError> {
    let cfg = ctx.config;
    let mut path = ReasoningPath::empty();
    let mut rounds = Vec::new();
    while !path.is_terminal() && path.len() < cfg.max_depth {
        let round = rounds.len() + 1;
        let forced = round == cfg.early_stop_round;
        let retrieved = active_retrieve(ctx.insights, query, &path, ctx.provider, cfg.beam_b)?;
        // insight-free candidate first so that ties resolve to it
        let mut options: Vec<Option<&Insight>> = vec![None];
        options.extend(retrieved.iter().map(Some));
        let step_seed = derive_seed(seed, &[path.len() as u64]);

        let scored = options
            .par_iter()
            .map(|ins| {
                let next = if forced {
                    ctx.generator
                        .generate_completion(query, &path, *ins, cfg.temperature, seed, cfg.max_depth)?
                } else {
                    let step = ctx.generator.generate_step(query, &path, *ins, cfg.temperature, step_seed)?;
                    extend_path(&path, step)?
                };
                let mut score = f64::INFINITY;
                let mut prefix = path.clone();
                for step in &next.steps()[path.len()..] {
                    let s = prm_score(ctx.scorer, query, &prefix, step, cfg.prm_hard_labels)?;
                    score = score.min(s.value);
                    prefix = extend_path(&prefix, step.clone())?;
                }
                Ok((next, score))
            })
            .collect::<Result<Vec<_>, HarnessError>>()?;

        let mut best = 0;
        for (i, (_, s)) in scored.iter().enumerate() {
            if *s > scored[best].1 {
                best = i;
            }
        }
        // report candidates insight-first, insight-free last
        let order: Vec<usize> = (1..scored.len()).chain([0]).collect();
        let candidates = order
            .iter()
            .map(|&i| CandidateRecord {
                insight_id: options[i].map(|x| x.entry.id.clone()),
                text: scored[i].0.steps()[path.len()..]
                    .iter()
                    .map(|s| s.text())
                    .collect::<Vec<_>>()
                    .join(" "),
                score: scored[i].1,
            })
            .collect();
        let selected = order.iter().position(|&i| i == best).expect("present");
        path = scored.into_iter().nth(best).expect("present").0;
        rounds.push(RoundRecord {
            round,
            forced_completion: forced,
            candidates,
            selected,
        });
    }
    Ok(InferenceTrace {
        query_id: query.id.clone(),
        path,
        rounds,
    })
}

/// `n` full trajectories expanded with retrieval. Candidate `j` is written,
/// at every step, with the insight ranked `j mod (B + 1)` by active
/// retrieval, where rank `B` (or a rank past the retrieved list) means no
/// insight. Candidate seeds follow `candidate_seed`, so sets are nested in
/// `n`.
pub fn active_sample(
    query: &MultimodalQuery,
    insights: &InsightSet,
    provider: &dyn EmbeddingProvider,
    generator: &dyn GeneratorBackend,
    cfg: &EngineConfig,
    n: usize,
    seed: u64,
) -> Result<Vec<ReasoningPath>, HarnessError> {
    (0..n)
        .into_par_iter()
        .map(|j| {
            let rank = j % (cfg.beam_b + 1);
            let cseed = candidate_seed(seed, j);
            let mut path = ReasoningPath::empty();
            while !path.is_terminal() && path.len() < cfg.max_depth {
                let retrieved = active_retrieve(insights, query, &path, provider, cfg.beam_b)?;
                let step = generator.generate_step(
                    query,
                    &path,
                    retrieved.get(rank),
                    cfg.temperature,
                    derive_seed(cseed, &[path.len() as u64]),
                )?;
                path = extend_path(&path, step)?;
            }
            Ok(path)
        })
        .collect()
}
