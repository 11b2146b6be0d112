//! Process reward model at desk scale: a linear-softmax policy over a finite
//! step vocabulary, the step-level preference loss (stage 1), the point-wise
//! cross-entropy loss (stage 2), the curriculum trainer, step scoring, and
//! the sampling baselines (self-consistency, outcome-scorer selection, beam
//! sampling).

use std::collections::HashMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harness::generator::{GeneratorBackend, GeneratorError};
use crate::index::hash_embed_text;
use crate::mcts::{PreferencePair, StepAnnotation};
use crate::types::{
    derive_seed, normalize_answer, stable_hash, MultimodalQuery, ReasoningPath, ReasoningStep,
};

pub const SCORE_CLAMP: f64 = 1e-12;
const CHUNK: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PrmError {
    #[error("step `{0}` is not in the step vocabulary")]
    UnknownStep(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("empty answer set")]
    EmptyAnswerSet,
    #[error("path {0} is not terminal")]
    NonTerminalPath(usize),
    #[error("empty path set")]
    EmptyPathSet,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("no task registered for query `{0}`")]
    UnknownQuery(String),
    #[error(transparent)]
    Generator(#[from] GeneratorError),
}

/// Maps (query, prefix) to a feature vector and steps to vocabulary slots.
pub trait StepSpace: Send + Sync {
    fn name(&self) -> &str;
    fn feature_dim(&self) -> usize;
    fn vocab_size(&self) -> usize;
    fn features(&self, query: &MultimodalQuery, prefix: &ReasoningPath) -> Result<Vec<f64>, PrmError>;
    fn step_index(
        &self,
        query: &MultimodalQuery,
        prefix: &ReasoningPath,
        step: &ReasoningStep,
    ) -> Result<usize, PrmError>;
}

/// Hashed features of the query plus prefix text (and a bias), with step
/// texts hashed into `buckets` vocabulary slots.
#[derive(Debug, Clone)]
pub struct HashStepSpace {
    dim: usize,
    buckets: usize,
}

impl HashStepSpace {
    pub fn new(dim: usize, buckets: usize) -> Self {
        assert!(dim >= 1 && buckets >= 1);
        Self { dim, buckets }
    }
}

impl StepSpace for HashStepSpace {
    fn name(&self) -> &str {
        "hash"
    }
    fn feature_dim(&self) -> usize {
        self.dim + 1
    }
    fn vocab_size(&self) -> usize {
        self.buckets
    }
    fn features(&self, query: &MultimodalQuery, prefix: &ReasoningPath) -> Result<Vec<f64>, PrmError> {
        let mut f = hash_embed_text(&prefix.compose_query_text(&query.text), self.dim)
            .values()
            .to_vec();
        f.push(1.0);
        Ok(f)
    }
    fn step_index(&self, _: &MultimodalQuery, _: &ReasoningPath, step: &ReasoningStep) -> Result<usize, PrmError> {
        Ok((stable_hash(step.text()) % self.buckets as u64) as usize)
    }
}

/// Linear-softmax policy: logits = Wᵀ φ(query, prefix), W stored row-major
/// as feature_dim × vocab. Column `y` doubles as the scalar scoring head for
/// step `y`.
#[derive(Clone)]
pub struct ParametricPolicy {
    weights: Vec<f64>,
    space: Arc<dyn StepSpace>,
}

impl std::fmt::Debug for ParametricPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ParametricPolicy")
            .field("space", &self.space.name())
            .field("feature_dim", &self.feature_dim())
            .field("vocab", &self.vocab_size())
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRecord {
    pub space: String,
    pub feature_dim: usize,
    pub vocab: usize,
    pub weights: Vec<f64>,
}

impl ParametricPolicy {
    pub fn zeros(space: Arc<dyn StepSpace>) -> Self {
        let n = space.feature_dim() * space.vocab_size();
        Self {
            weights: vec![0.0; n],
            space,
        }
    }

    pub fn with_weights(space: Arc<dyn StepSpace>, weights: Vec<f64>) -> Result<Self, PrmError> {
        let n = space.feature_dim() * space.vocab_size();
        if weights.len() != n {
            return Err(PrmError::ShapeMismatch(format!("expected {n} weights, got {}", weights.len())));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(PrmError::NonFiniteGradient);
        }
        Ok(Self { weights, space })
    }

    pub fn feature_dim(&self) -> usize {
        self.space.feature_dim()
    }

    pub fn vocab_size(&self) -> usize {
        self.space.vocab_size()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn space(&self) -> &Arc<dyn StepSpace> {
        &self.space
    }

    pub fn weight(&self, f: usize, v: usize) -> f64 {
        self.weights[f * self.vocab_size() + v]
    }

    pub fn weight_mut(&mut self, f: usize, v: usize) -> &mut f64 {
        let vocab = self.vocab_size();
        &mut self.weights[f * vocab + v]
    }

    pub fn to_record(&self) -> PolicyRecord {
        PolicyRecord {
            space: self.space.name().to_string(),
            feature_dim: self.feature_dim(),
            vocab: self.vocab_size(),
            weights: self.weights.clone(),
        }
    }

    pub fn from_record(record: PolicyRecord, space: Arc<dyn StepSpace>) -> Result<Self, PrmError> {
        if record.space != space.name()
            || record.feature_dim != space.feature_dim()
            || record.vocab != space.vocab_size()
        {
            return Err(PrmError::ShapeMismatch(format!(
                "record is {}:{}x{}, space is {}:{}x{}",
                record.space,
                record.feature_dim,
                record.vocab,
                space.name(),
                space.feature_dim(),
                space.vocab_size()
            )));
        }
        Self::with_weights(space, record.weights)
    }

    fn same_shape(&self, other: &Self) -> Result<(), PrmError> {
        if self.space.name() != other.space.name()
            || self.feature_dim() != other.feature_dim()
            || self.vocab_size() != other.vocab_size()
        {
            return Err(PrmError::ShapeMismatch("policies differ in space".into()));
        }
        Ok(())
    }

    fn logits(&self, phi: &[f64]) -> Vec<f64> {
        let vocab = self.vocab_size();
        let mut out = vec![0.0; vocab];
        for (f, &x) in phi.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let row = &self.weights[f * vocab..(f + 1) * vocab];
            for (o, w) in out.iter_mut().zip(row) {
                *o += x * w;
            }
        }
        out
    }

    /// Full log-softmax over the vocabulary.
    pub fn log_probs(&self, phi: &[f64]) -> Vec<f64> {
        let z = self.logits(phi);
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        z.into_iter().map(|v| v - lse).collect()
    }

    fn head(&self, phi: &[f64], idx: usize) -> f64 {
        let vocab = self.vocab_size();
        phi.iter().enumerate().map(|(f, x)| x * self.weights[f * vocab + idx]).sum()
    }

    fn encode(
        &self,
        query: &MultimodalQuery,
        prefix: &ReasoningPath,
        step: &ReasoningStep,
    ) -> Result<(Vec<f64>, usize), PrmError> {
        let phi = self.space.features(query, prefix)?;
        if phi.len() != self.feature_dim() {
            return Err(PrmError::ShapeMismatch(format!(
                "featurizer produced {} values for dim {}",
                phi.len(),
                self.feature_dim()
            )));
        }
        let idx = self.space.step_index(query, prefix, step)?;
        if idx >= self.vocab_size() {
            return Err(PrmError::UnknownStep(step.text().to_string()));
        }
        Ok((phi, idx))
    }

    /// Sigmoid of the scalar head for `step`, clamped away from 0 and 1.
    pub fn raw_score(
        &self,
        query: &MultimodalQuery,
        prefix: &ReasoningPath,
        step: &ReasoningStep,
    ) -> Result<f64, PrmError> {
        let (phi, idx) = self.encode(query, prefix, step)?;
        Ok(clamp_prob(sigmoid(self.head(&phi, idx))))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + e^x) without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(SCORE_CLAMP, 1.0 - SCORE_CLAMP)
}

/// log π(step | query, prefix).
pub fn policy_logprob(
    policy: &ParametricPolicy,
    query: &MultimodalQuery,
    prefix: &ReasoningPath,
    step: &ReasoningStep,
) -> Result<f64, PrmError> {
    let (phi, idx) = policy.encode(query, prefix, step)?;
    Ok(policy.log_probs(&phi)[idx])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpoConfig {
    pub beta: f64,
    pub learning_rate: f64,
    pub epochs: usize,
}

impl Default for DpoConfig {
    fn default() -> Self {
        Self {
            beta: 0.3,
            learning_rate: 1.0,
            epochs: 30,
        }
    }
}

impl DpoConfig {
    pub fn validate(&self) -> Result<(), PrmError> {
        if !(self.beta > 0.0) || !(self.learning_rate >= 0.0) || self.epochs == 0 {
            return Err(PrmError::InvalidConfig(
                "beta > 0, learning_rate >= 0 and epochs >= 1 required".into(),
            ));
        }
        Ok(())
    }
}

/// Resolves a pair's query by id.
pub type QueryLookup<'a> = dyn Fn(&str) -> Option<&'a MultimodalQuery> + Sync + 'a;

struct EncodedPair {
    phi: Vec<f64>,
    pos: usize,
    neg: usize,
}

fn encode_pairs(
    policy: &ParametricPolicy,
    pairs: &[PreferencePair],
    lookup: &QueryLookup<'_>,
) -> Result<Vec<EncodedPair>, PrmError> {
    pairs
        .iter()
        .map(|p| {
            let q = lookup(&p.query_id).ok_or_else(|| PrmError::UnknownQuery(p.query_id.clone()))?;
            let (phi, pos) = policy.encode(q, &p.prefix, &p.preferred)?;
            let neg = policy.space.step_index(q, &p.prefix, &p.dispreferred)?;
            if neg >= policy.vocab_size() {
                return Err(PrmError::UnknownStep(p.dispreferred.text().to_string()));
            }
            Ok(EncodedPair { phi, pos, neg })
        })
        .collect()
}

fn pair_margin(theta: &ParametricPolicy, reference: &ParametricPolicy, e: &EncodedPair, beta: f64) -> f64 {
    let lt = theta.log_probs(&e.phi);
    let lr = reference.log_probs(&e.phi);
    beta * ((lt[e.pos] - lr[e.pos]) - (lt[e.neg] - lr[e.neg]))
}

fn sdpo_eval(
    theta: &ParametricPolicy,
    reference: &ParametricPolicy,
    enc: &[EncodedPair],
    beta: f64,
    want_grad: bool,
) -> (f64, Vec<f64>) {
    let vocab = theta.vocab_size();
    let fdim = theta.feature_dim();
    let partials: Vec<(f64, Vec<f64>)> = enc
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut loss = 0.0;
            let mut grad = if want_grad { vec![0.0; fdim * vocab] } else { Vec::new() };
            for e in chunk {
                let m = pair_margin(theta, reference, e, beta);
                loss += softplus(-m);
                if !want_grad {
                    continue;
                }
                // d/dW of -ln σ(m) = -σ(-m) β (∂lθ(y+) - ∂lθ(y-)); the
                // softmax terms cancel between y+ and y-.
                let coef = -sigmoid(-m) * beta;
                for (f, &x) in e.phi.iter().enumerate() {
                    if x == 0.0 {
                        continue;
                    }
                    grad[f * vocab + e.pos] += coef * x;
                    grad[f * vocab + e.neg] -= coef * x;
                }
            }
            (loss, grad)
        })
        .collect();
    let n = enc.len() as f64;
    let mut loss = 0.0;
    let mut grad = if want_grad { vec![0.0; fdim * vocab] } else { Vec::new() };
    for (l, g) in partials {
        loss += l;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    grad.iter_mut().for_each(|g| *g /= n);
    (loss / n, grad)
}

/// Mean over pairs of -ln σ(β[(lθ⁺ - lref⁺) - (lθ⁻ - lref⁻)]).
pub fn sdpo_loss(
    theta: &ParametricPolicy,
    reference: &ParametricPolicy,
    pairs: &[PreferencePair],
    beta: f64,
    lookup: &QueryLookup<'_>,
) -> Result<f64, PrmError> {
    if pairs.is_empty() {
        return Err(PrmError::EmptyBatch);
    }
    theta.same_shape(reference)?;
    let enc = encode_pairs(theta, pairs, lookup)?;
    Ok(sdpo_eval(theta, reference, &enc, beta, false).0)
}

/// Analytic gradient of `sdpo_loss` with respect to θ's weights.
pub fn sdpo_grad(
    theta: &ParametricPolicy,
    reference: &ParametricPolicy,
    pairs: &[PreferencePair],
    beta: f64,
    lookup: &QueryLookup<'_>,
) -> Result<Vec<f64>, PrmError> {
    if pairs.is_empty() {
        return Err(PrmError::EmptyBatch);
    }
    theta.same_shape(reference)?;
    let enc = encode_pairs(theta, pairs, lookup)?;
    Ok(sdpo_eval(theta, reference, &enc, beta, true).1)
}

/// Gradient step with backtracking: the step is halved (at most 20 times)
/// until the batch loss does not increase; if none qualifies θ is returned
/// unchanged.
fn descend<L>(policy: &ParametricPolicy, grad: &[f64], lr: f64, loss0: f64, loss_at: L) -> ParametricPolicy
where
    L: Fn(&ParametricPolicy) -> f64,
{
    let mut lr = lr;
    for _ in 0..=20 {
        let mut cand = policy.clone();
        for (w, g) in cand.weights.iter_mut().zip(grad) {
            *w -= lr * g;
        }
        let l = loss_at(&cand);
        if l.is_finite() && l <= loss0 {
            return cand;
        }
        lr *= 0.5;
    }
    policy.clone()
}

pub fn sdpo_step(
    theta: &ParametricPolicy,
    reference: &ParametricPolicy,
    pairs: &[PreferencePair],
    config: &DpoConfig,
    lookup: &QueryLookup<'_>,
) -> Result<ParametricPolicy, PrmError> {
    if pairs.is_empty() {
        return Err(PrmError::EmptyBatch);
    }
    config.validate()?;
    theta.same_shape(reference)?;
    let enc = encode_pairs(theta, pairs, lookup)?;
    let (loss0, grad) = sdpo_eval(theta, reference, &enc, config.beta, true);
    if !loss0.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(PrmError::NonFiniteGradient);
    }
    Ok(descend(theta, &grad, config.learning_rate, loss0, |cand| {
        sdpo_eval(cand, reference, &enc, config.beta, false).0
    }))
}

struct EncodedPoint {
    phi: Vec<f64>,
    idx: usize,
    label: f64,
}

fn encode_points(
    scorer: &ParametricPolicy,
    anns: &[StepAnnotation],
    lookup: &QueryLookup<'_>,
) -> Result<Vec<EncodedPoint>, PrmError> {
    anns.iter()
        .map(|a| {
            let q = lookup(&a.query_id).ok_or_else(|| PrmError::UnknownQuery(a.query_id.clone()))?;
            let (phi, idx) = scorer.encode(q, &a.prefix, &a.step)?;
            Ok(EncodedPoint {
                phi,
                idx,
                label: f64::from(a.label),
            })
        })
        .collect()
}

/// Negated log-likelihood of the labels under clamped scores, summed.
pub fn cross_entropy(scores: &[f64], labels: &[f64]) -> f64 {
    scores
        .iter()
        .zip(labels)
        .map(|(&r, &y)| {
            let r = clamp_prob(r);
            -(y * r.ln() + (1.0 - y) * (1.0 - r).ln())
        })
        .sum()
}

fn pft_eval(scorer: &ParametricPolicy, enc: &[EncodedPoint], want_grad: bool) -> (f64, Vec<f64>) {
    let vocab = scorer.vocab_size();
    let fdim = scorer.feature_dim();
    let partials: Vec<(f64, Vec<f64>)> = enc
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut loss = 0.0;
            let mut grad = if want_grad { vec![0.0; fdim * vocab] } else { Vec::new() };
            for e in chunk {
                let r = sigmoid(scorer.head(&e.phi, e.idx));
                loss += cross_entropy(&[r], &[e.label]);
                if want_grad {
                    let d = r - e.label;
                    for (f, &x) in e.phi.iter().enumerate() {
                        grad[f * vocab + e.idx] += d * x;
                    }
                }
            }
            (loss, grad)
        })
        .collect();
    let mut loss = 0.0;
    let mut grad = if want_grad { vec![0.0; fdim * vocab] } else { Vec::new() };
    for (l, g) in partials {
        loss += l;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    (loss, grad)
}

/// -Σ [y ln r + (1 - y) ln(1 - r)] with r = σ(W[:, step] · φ).
pub fn pft_loss(
    scorer: &ParametricPolicy,
    annotations: &[StepAnnotation],
    lookup: &QueryLookup<'_>,
) -> Result<f64, PrmError> {
    if annotations.is_empty() {
        return Err(PrmError::EmptyBatch);
    }
    let enc = encode_points(scorer, annotations, lookup)?;
    Ok(pft_eval(scorer, &enc, false).0)
}

/// Gradient of `pft_loss` (the summed loss).
pub fn pft_grad(
    scorer: &ParametricPolicy,
    annotations: &[StepAnnotation],
    lookup: &QueryLookup<'_>,
) -> Result<Vec<f64>, PrmError> {
    if annotations.is_empty() {
        return Err(PrmError::EmptyBatch);
    }
    let enc = encode_points(scorer, annotations, lookup)?;
    Ok(pft_eval(scorer, &enc, true).1)
}

/// One descent step on the batch-mean cross-entropy.
pub fn pft_step(
    scorer: &ParametricPolicy,
    annotations: &[StepAnnotation],
    learning_rate: f64,
    lookup: &QueryLookup<'_>,
) -> Result<ParametricPolicy, PrmError> {
    if annotations.is_empty() {
        return Err(PrmError::EmptyBatch);
    }
    let enc = encode_points(scorer, annotations, lookup)?;
    let (loss0, mut grad) = pft_eval(scorer, &enc, true);
    if !loss0.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(PrmError::NonFiniteGradient);
    }
    let n = enc.len() as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    Ok(descend(scorer, &grad, learning_rate, loss0, |cand| pft_eval(cand, &enc, false).0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurriculumConfig {
    pub dpo: DpoConfig,
    pub pft_learning_rate: f64,
    pub pft_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        Self {
            dpo: DpoConfig::default(),
            pft_learning_rate: 1.0,
            pft_epochs: 30,
            batch_size: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub step: usize,
    pub stage: u8,
    pub loss: f64,
}

pub fn log_to_csv(rows: &[TrainLogRow]) -> String {
    let mut out = String::from("step,stage,loss\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.step, r.stage, r.loss));
    }
    out
}

fn shuffled_batches(len: usize, batch: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.chunks(batch.max(1)).map(<[usize]>::to_vec).collect()
}

/// Stage 2 alone: point-wise training starting from `init`.
pub fn train_pft(
    init: ParametricPolicy,
    annotations: &[StepAnnotation],
    config: &CurriculumConfig,
    lookup: &QueryLookup<'_>,
    log: &mut Vec<TrainLogRow>,
) -> Result<ParametricPolicy, PrmError> {
    if annotations.is_empty() {
        return Err(PrmError::EmptyBatch);
    }
    let mut scorer = init;
    for epoch in 0..config.pft_epochs {
        for batch in shuffled_batches(annotations.len(), config.batch_size, derive_seed(config.seed, &[2, epoch as u64])) {
            let items: Vec<StepAnnotation> = batch.iter().map(|&i| annotations[i].clone()).collect();
            scorer = pft_step(&scorer, &items, config.pft_learning_rate, lookup)?;
            let loss = pft_loss(&scorer, &items, lookup)? / items.len() as f64;
            log.push(TrainLogRow {
                step: log.len(),
                stage: 2,
                loss,
            });
        }
    }
    Ok(scorer)
}

/// Stage 1 (preference alignment from zero weights against a frozen copy)
/// followed by stage 2 (point-wise cross-entropy from the stage-1 result).
pub fn train_curriculum(
    space: Arc<dyn StepSpace>,
    pairs: &[PreferencePair],
    annotations: &[StepAnnotation],
    config: &CurriculumConfig,
    lookup: &QueryLookup<'_>,
) -> Result<(ParametricPolicy, Vec<TrainLogRow>), PrmError> {
    if pairs.is_empty() || annotations.is_empty() {
        return Err(PrmError::EmptyBatch);
    }
    config.dpo.validate()?;
    let reference = ParametricPolicy::zeros(space);
    let mut theta = reference.clone();
    let mut log = Vec::new();
    for epoch in 0..config.dpo.epochs {
        for batch in shuffled_batches(pairs.len(), config.batch_size, derive_seed(config.seed, &[1, epoch as u64])) {
            let items: Vec<PreferencePair> = batch.iter().map(|&i| pairs[i].clone()).collect();
            theta = sdpo_step(&theta, &reference, &items, &config.dpo, lookup)?;
            let loss = sdpo_loss(&theta, &reference, &items, config.dpo.beta, lookup)?;
            log.push(TrainLogRow {
                step: log.len(),
                stage: 1,
                loss,
            });
        }
    }
    let scorer = train_pft(theta, annotations, config, lookup, &mut log)?;
    Ok((scorer, log))
}

/// A step-level value in (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct PrmScore {
    pub value: f64,
}

impl PrmScore {
    pub fn new(value: f64) -> Self {
        Self {
            value: clamp_prob(value),
        }
    }
}

/// Scores a candidate next step given its prefix.
pub trait StepScorer: Send + Sync {
    fn score_step(
        &self,
        query: &MultimodalQuery,
        prefix: &ReasoningPath,
        step: &ReasoningStep,
    ) -> Result<f64, PrmError>;
}

/// Scores a complete trajectory.
pub trait PathScorer: Send + Sync {
    fn score_path(&self, query: &MultimodalQuery, path: &ReasoningPath) -> Result<f64, PrmError>;
}

impl StepScorer for ParametricPolicy {
    fn score_step(
        &self,
        query: &MultimodalQuery,
        prefix: &ReasoningPath,
        step: &ReasoningStep,
    ) -> Result<f64, PrmError> {
        self.raw_score(query, prefix, step)
    }
}

impl PathScorer for ParametricPolicy {
    fn score_path(&self, query: &MultimodalQuery, path: &ReasoningPath) -> Result<f64, PrmError> {
        let last = path.last_step().ok_or(PrmError::EmptyPathSet)?;
        self.raw_score(query, &path.parent_prefix(), last)
    }
}

/// Outcome oracle: 1 when the path's answer matches the answer key.
#[derive(Debug, Clone, Copy, Default)]
pub struct AnswerKeyOrm;

impl PathScorer for AnswerKeyOrm {
    fn score_path(&self, query: &MultimodalQuery, path: &ReasoningPath) -> Result<f64, PrmError> {
        let gold = query.answer_key.as_deref().map(normalize_answer);
        let hit = matches!((path.final_answer(), gold), (Some(a), Some(g)) if a == g);
        Ok(if hit { 1.0 - 1e-6 } else { 1e-6 })
    }
}

/// Soft score, or in hard mode the 0.5 threshold pushed to the clamp bounds.
pub fn prm_score(
    scorer: &dyn StepScorer,
    query: &MultimodalQuery,
    prefix: &ReasoningPath,
    step: &ReasoningStep,
    hard: bool,
) -> Result<PrmScore, PrmError> {
    let r = scorer.score_step(query, prefix, step)?;
    Ok(PrmScore::new(if hard {
        if r > 0.5 {
            1.0
        } else {
            0.0
        }
    } else {
        r
    }))
}

/// Majority vote over normalized answers; ties go to the earliest answer.
pub fn self_consistency<S: AsRef<str>>(answers: &[S]) -> Result<String, PrmError> {
    if answers.is_empty() {
        return Err(PrmError::EmptyAnswerSet);
    }
    let mut counts: HashMap<String, (usize, usize)> = HashMap::new();
    for (i, a) in answers.iter().enumerate() {
        counts.entry(normalize_answer(a.as_ref())).or_insert((0, i)).0 += 1;
    }
    let (best, _) = counts
        .into_iter()
        .max_by(|(_, (ca, fa)), (_, (cb, fb))| ca.cmp(cb).then(fb.cmp(fa)))
        .expect("non-empty");
    Ok(best)
}

/// Highest-scoring terminal path; ties go to the first.
pub fn orm_select(
    paths: &[ReasoningPath],
    orm: &dyn PathScorer,
    query: &MultimodalQuery,
) -> Result<ReasoningPath, PrmError> {
    if paths.is_empty() {
        return Err(PrmError::EmptyPathSet);
    }
    if let Some(i) = paths.iter().position(|p| !p.is_terminal()) {
        return Err(PrmError::NonTerminalPath(i));
    }
    let mut best = (f64::NEG_INFINITY, 0);
    for (i, p) in paths.iter().enumerate() {
        let s = orm.score_path(query, p)?;
        if s > best.0 {
            best = (s, i);
        }
    }
    Ok(paths[best.1].clone())
}

/// Seed of the `j`-th sampled candidate for a task.
pub fn candidate_seed(seed: u64, j: usize) -> u64 {
    derive_seed(seed, &[j as u64])
}

/// `n` full trajectories sampled without retrieval context. Candidate `j`
/// uses `candidate_seed(seed, j)`, so sets for growing `n` are nested.
pub fn beam_sample(
    generator: &dyn GeneratorBackend,
    query: &MultimodalQuery,
    n: usize,
    temperature: f64,
    seed: u64,
    max_depth: usize,
) -> Result<Vec<ReasoningPath>, PrmError> {
    if !(temperature > 0.0) {
        return Err(PrmError::InvalidConfig("temperature must be positive".into()));
    }
    (0..n)
        .into_par_iter()
        .map(|j| {
            generator
                .generate_completion(query, &ReasoningPath::empty(), None, temperature, candidate_seed(seed, j), max_depth)
                .map_err(PrmError::from)
        })
        .collect()
}
