//! Synthetic knowledge-gated reasoning environment.
//!
//! Each task needs a chain of steps. Step `k` succeeds with probability
//! `p_hi` when the generator is handed the task's `k`-th knowledge card and
//! `p_lo` otherwise. Cards are written so that the hash embedder, given the
//! query plus a correct prefix of length `k`, ranks card `k` first: card `k`
//! carries the cue words of steps `0..=k`, and a correct step `k` emits the
//! cue of step `k + 1`.

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::generator::{GeneratorBackend, GeneratorError};
use crate::config::EngineConfig;
use crate::index::{CorpusEntry, HashEmbedder};
use crate::prm::{PathScorer, PrmError, StepScorer, StepSpace};
use crate::retrieval::{active_retrieve, Insight, Retriever, RetrievalError};
use crate::types::{
    derive_seed, normalize_answer, stable_hash, MultimodalQuery, ReasoningPath, ReasoningStep,
    TERMINAL_MARKER,
};

const CONCEPTS: &[&str] = &[
    "angle", "area", "circle", "ratio", "slope", "volume", "parity", "prime", "vector", "matrix",
    "graph", "series", "chord", "radius", "tangent", "median", "integer", "fraction", "triangle",
    "polygon", "symmetry", "probability", "sequence", "function",
];
const SYLLABLES: &[&str] = &[
    "ba", "ke", "lo", "mi", "nu", "pa", "re", "si", "to", "va", "zu", "da", "fe", "gi", "ho",
    "ju", "ka", "le", "mo", "ni", "po", "ru", "sa", "te", "vi", "wo", "xe", "yu", "zo", "ce",
];
const KC_REPEAT: usize = 3;
const NEAR_DISTRACTORS: usize = 2;
const MAX_ATTEMPTS: u64 = 64;
const MAX_FIX_ROUNDS: usize = 16;

pub const DEFAULT_PHRASE: &str = "we reason";
const CONTENT_SEP: &str = ", ";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SuiteError {
    #[error("invalid suite spec: {0}")]
    InvalidSpec(String),
    #[error("could not construct task {0} within the attempt budget")]
    Construction(usize),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTask {
    pub query: MultimodalQuery,
    /// Card id needed at each step.
    pub required_cards: Vec<String>,
    pub p_hi: f64,
    pub p_lo: f64,
    /// Content of the correct step at each depth.
    pub correct_steps: Vec<String>,
    /// Wrong-step contents per depth, one per variant.
    pub wrong_steps: Vec<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepKind {
    Correct,
    Wrong(usize),
}

impl SyntheticTask {
    pub fn depth(&self) -> usize {
        self.required_cards.len()
    }

    pub fn answer(&self) -> &str {
        self.query.answer_key.as_deref().unwrap_or("")
    }

    /// Classify a step emitted at depth `k` by its content.
    pub fn classify(&self, k: usize, text: &str) -> Option<StepKind> {
        let content = text.split_once(CONTENT_SEP).map_or(text, |(_, c)| c);
        if k >= self.depth() {
            return None;
        }
        if self.correct_steps[k] == content {
            return Some(StepKind::Correct);
        }
        self.wrong_steps[k]
            .iter()
            .position(|w| w == content)
            .map(StepKind::Wrong)
    }

    /// Whether every step of `path` is the correct one.
    pub fn path_is_correct(&self, path: &ReasoningPath) -> bool {
        path.steps()
            .iter()
            .enumerate()
            .all(|(k, s)| self.classify(k, s.text()) == Some(StepKind::Correct))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteSpec {
    pub count: usize,
    pub depth_min: usize,
    pub depth_max: usize,
    pub p_hi: f64,
    pub p_lo: f64,
    pub wrong_variants: usize,
    pub global_distractors: usize,
    pub image_fraction: f64,
    pub seed: u64,
}

impl Default for SuiteSpec {
    fn default() -> Self {
        Self {
            count: 10,
            depth_min: 2,
            depth_max: 4,
            p_hi: 0.9,
            p_lo: 0.3,
            wrong_variants: 3,
            global_distractors: 50,
            image_fraction: 0.5,
            seed: 0,
        }
    }
}

impl SuiteSpec {
    fn validate(&self, cfg: &EngineConfig) -> Result<(), SuiteError> {
        let bad = |m: &str| Err(SuiteError::InvalidSpec(m.into()));
        if self.count == 0 {
            return bad("count must be positive");
        }
        if self.depth_min == 0 || self.depth_min > self.depth_max {
            return bad("need 1 <= depth_min <= depth_max");
        }
        if self.depth_max > cfg.max_depth {
            return bad("depth_max exceeds max_depth");
        }
        // p_lo == p_hi is allowed: it is the no-gate control.
        if !(0.0 <= self.p_lo && self.p_lo <= self.p_hi && self.p_hi <= 1.0) {
            return bad("need 0 <= p_lo <= p_hi <= 1");
        }
        if self.wrong_variants == 0 {
            return bad("wrong_variants must be positive");
        }
        if !(0.0..=1.0).contains(&self.image_fraction) {
            return bad("image_fraction must lie in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSuite {
    pub spec: SuiteSpec,
    pub tasks: Vec<SyntheticTask>,
    pub corpus: Vec<CorpusEntry>,
}

impl SyntheticSuite {
    pub fn book(&self) -> TaskBook {
        TaskBook::new(self.tasks.clone())
    }

    pub fn max_depth(&self) -> usize {
        self.tasks.iter().map(SyntheticTask::depth).max().unwrap_or(0)
    }
}

struct Words<'a> {
    rng: ChaCha8Rng,
    used: &'a mut HashSet<String>,
}

impl Words<'_> {
    fn fresh(&mut self) -> String {
        loop {
            let w: String = (0..3)
                .map(|_| *SYLLABLES.choose(&mut self.rng).expect("non-empty"))
                .collect();
            if self.used.insert(w.clone()) {
                return w;
            }
        }
    }

    fn fresh_n(&mut self, n: usize) -> Vec<String> {
        (0..n).map(|_| self.fresh()).collect()
    }
}

/// Phrase that opens a step written with `insight_id` in hand at depth `k`.
pub fn insight_phrase(insight_id: &str, k: usize) -> String {
    let mut words = Vec::with_capacity(3);
    for i in 0..3u64 {
        let mut h = derive_seed(stable_hash(insight_id), &[k as u64, i]);
        let mut w = String::new();
        for _ in 0..3 {
            w.push_str(SYLLABLES[(h % SYLLABLES.len() as u64) as usize]);
            h /= SYLLABLES.len() as u64;
        }
        words.push(w);
    }
    format!("using {}", words.join(" "))
}

fn step_text(phrase: &str, content: &str) -> String {
    format!("{phrase}{CONTENT_SEP}{content}")
}

fn final_content(answer: &str) -> String {
    format!("the answer is {answer} {TERMINAL_MARKER}")
}

fn build_task(
    idx: usize,
    spec: &SuiteSpec,
    rng: &mut ChaCha8Rng,
    used: &mut HashSet<String>,
) -> (SyntheticTask, Vec<CorpusEntry>) {
    let depth = rng.gen_range(spec.depth_min..=spec.depth_max);
    let mut words = Words {
        rng: ChaCha8Rng::seed_from_u64(rng.gen()),
        used,
    };
    let topic = words.fresh_n(4);
    let cues: Vec<Vec<String>> = (0..depth).map(|_| words.fresh_n(2)).collect();
    let mut kc: Vec<&str> = CONCEPTS.choose_multiple(rng, 2).copied().collect();
    kc.sort_unstable();
    let answer = rng.gen_range(100..1000u32).to_string();
    let mut wrong_answers: Vec<String> = Vec::new();
    while wrong_answers.len() < spec.wrong_variants {
        let w = rng.gen_range(100..1000u32).to_string();
        if w != answer && !wrong_answers.contains(&w) {
            wrong_answers.push(w);
        }
    }
    let image = (rng.gen::<f64>() < spec.image_fraction)
        .then(|| format!("fig/{}-{}-{}.png", kc[0], kc[1], topic[0]));

    let id = format!("task{idx:04}");
    let pair = |c: &[String]| c.join(" ");
    let query_text = format!(
        "{} {} {} {}",
        topic.join(" "),
        kc.join(" "),
        pair(&cues[0]),
        pair(&cues[0])
    );
    let mut query = MultimodalQuery::new(id.clone(), query_text)
        .expect("non-empty")
        .with_kc_labels(kc.iter().copied())
        .with_answer(answer.clone());
    if let Some(img) = &image {
        query = query.with_image(img.clone());
    }

    let kc_block = vec![kc.join(" "); KC_REPEAT].join(" ");
    let mut entries = Vec::new();
    let mut required = Vec::new();
    for k in 0..depth {
        let cue_block: Vec<String> = cues[..=k].iter().map(|c| pair(c)).collect();
        let card_id = format!("{id}-card{k}");
        entries.push(CorpusEntry {
            id: card_id.clone(),
            text: format!("{} {} {} solved", topic.join(" "), kc_block, cue_block.join(" ")),
            image_ref: image.clone(),
            source: "card".into(),
            kc_labels: kc.iter().map(|s| s.to_string()).collect(),
        });
        required.push(card_id);
    }
    for n in 0..NEAR_DISTRACTORS {
        entries.push(CorpusEntry {
            id: format!("{id}-near{n}"),
            text: format!("{} {} {} solved", topic.join(" "), kc_block, words.fresh_n(2).join(" ")),
            image_ref: None,
            source: "near".into(),
            kc_labels: kc.iter().map(|s| s.to_string()).collect(),
        });
    }

    let mut correct_steps = Vec::with_capacity(depth);
    let mut wrong_steps = Vec::with_capacity(depth);
    for k in 0..depth {
        if k + 1 < depth {
            let c = pair(&cues[k + 1]);
            correct_steps.push(format!("derive {c} {c}"));
            wrong_steps.push(
                (0..spec.wrong_variants)
                    .map(|_| {
                        let w = words.fresh_n(2).join(" ");
                        format!("derive {w} {w}")
                    })
                    .collect(),
            );
        } else {
            correct_steps.push(final_content(&answer));
            wrong_steps.push(wrong_answers.iter().map(|a| final_content(a)).collect());
        }
    }
    let task = SyntheticTask {
        query,
        required_cards: required,
        p_hi: spec.p_hi,
        p_lo: spec.p_lo,
        correct_steps,
        wrong_steps,
    };
    (task, entries)
}

fn global_distractors(spec: &SuiteSpec, used: &mut HashSet<String>) -> Vec<CorpusEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[0xD1]));
    let mut words = Words {
        rng: ChaCha8Rng::seed_from_u64(rng.gen()),
        used,
    };
    (0..spec.global_distractors)
        .map(|i| {
            let concept = CONCEPTS[i % CONCEPTS.len()];
            CorpusEntry {
                id: format!("noise{i:04}"),
                text: format!("{} {concept} solved", words.fresh_n(8).join(" ")),
                image_ref: None,
                source: "noise".into(),
                kc_labels: vec![concept.to_string()],
            }
        })
        .collect()
}

/// Check that retrieval finds every card and active retrieval ranks the
/// needed card first after every correct prefix. Prefix steps are written
/// either with the card's phrase or the default phrase; all combinations
/// are checked.
pub fn verify_task(task: &SyntheticTask, retriever: &Retriever, cfg: &EngineConfig) -> Result<bool, RetrievalError> {
    let insights = retriever.insights_for(&task.query, cfg)?;
    let ids: HashSet<&str> = insights.ids().into_iter().collect();
    if !task.required_cards.iter().all(|c| ids.contains(c.as_str())) {
        return Ok(false);
    }
    for k in 0..task.depth() {
        for mask in 0..(1u32 << k) {
            let steps = (0..k).map(|j| {
                let phrase = if mask >> j & 1 == 1 {
                    insight_phrase(&task.required_cards[j], j)
                } else {
                    DEFAULT_PHRASE.to_string()
                };
                ReasoningStep::new(step_text(&phrase, &task.correct_steps[j])).expect("valid step")
            });
            let prefix = ReasoningPath::from_steps(steps).expect("non-terminal prefix");
            let top = active_retrieve(&insights, &task.query, &prefix, retriever.provider.as_ref(), 1)?;
            if top.first().map(|i| i.entry.id.as_str()) != Some(task.required_cards[k].as_str()) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Build `spec.count` tasks with their cards and distractors. Tasks that
/// fail `verify_task` against the full corpus are regenerated.
pub fn gen_synthetic_suite(spec: &SuiteSpec, cfg: &EngineConfig) -> Result<SyntheticSuite, SuiteError> {
    spec.validate(cfg)?;
    let provider = Arc::new(HashEmbedder::new(cfg.embed_dim));
    let mut attempts = vec![0u64; spec.count];
    let make = |i: usize, attempt: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[i as u64, attempt]));
        let mut used = HashSet::new();
        build_task(i, spec, &mut rng, &mut used)
    };
    let mut built: Vec<(SyntheticTask, Vec<CorpusEntry>)> = (0..spec.count).map(|i| make(i, 0)).collect();
    let mut noise_used = HashSet::new();
    let noise = global_distractors(spec, &mut noise_used);

    for _ in 0..MAX_FIX_ROUNDS {
        let corpus: Vec<CorpusEntry> = built
            .iter()
            .flat_map(|(_, e)| e.iter().cloned())
            .chain(noise.iter().cloned())
            .collect();
        let retriever = Retriever::build(corpus.clone(), provider.clone())?;
        let mut failed = Vec::new();
        for (i, (task, _)) in built.iter().enumerate() {
            if !verify_task(task, &retriever, cfg)? {
                failed.push(i);
            }
        }
        if failed.is_empty() {
            let tasks = built.into_iter().map(|(t, _)| t).collect();
            return Ok(SyntheticSuite {
                spec: spec.clone(),
                tasks,
                corpus,
            });
        }
        for i in failed {
            attempts[i] += 1;
            if attempts[i] >= MAX_ATTEMPTS {
                return Err(SuiteError::Construction(i));
            }
            built[i] = make(i, attempts[i]);
        }
    }
    Err(SuiteError::Construction(0))
}

/// Tasks indexed by query id, shared by the mock generator, the step space
/// and the oracle scorer.
#[derive(Debug, Clone)]
pub struct TaskBook(Arc<BTreeMap<String, SyntheticTask>>);

impl TaskBook {
    pub fn new(tasks: Vec<SyntheticTask>) -> Self {
        Self(Arc::new(tasks.into_iter().map(|t| (t.query.id.clone(), t)).collect()))
    }

    pub fn get(&self, query_id: &str) -> Option<&SyntheticTask> {
        self.0.get(query_id)
    }

    pub fn tasks(&self) -> impl Iterator<Item = &SyntheticTask> {
        self.0.values()
    }

    pub fn max_depth(&self) -> usize {
        self.tasks().map(SyntheticTask::depth).max().unwrap_or(0)
    }

    pub fn wrong_variants(&self) -> usize {
        self.tasks().map(|t| t.wrong_steps.first().map_or(0, Vec::len)).max().unwrap_or(0)
    }
}

/// Seeded mock policy realizing the knowledge gate.
#[derive(Debug, Clone)]
pub struct MockGenerator {
    book: TaskBook,
    greedy: bool,
}

impl MockGenerator {
    pub fn new(book: TaskBook) -> Self {
        Self { book, greedy: false }
    }

    /// Always take the more likely outcome and the first wrong variant.
    pub fn greedy(mut self, greedy: bool) -> Self {
        self.greedy = greedy;
        self
    }

    pub fn book(&self) -> &TaskBook {
        &self.book
    }
}

impl GeneratorBackend for MockGenerator {
    fn generate_step(
        &self,
        query: &MultimodalQuery,
        path: &ReasoningPath,
        insight: Option<&Insight>,
        temperature: f64,
        seed: u64,
    ) -> Result<ReasoningStep, GeneratorError> {
        let task = self
            .book
            .get(&query.id)
            .ok_or_else(|| GeneratorError::UnknownQuery(query.id.clone()))?;
        let k = path.len();
        if k >= task.depth() {
            return Err(GeneratorError::Failure(format!(
                "path of length {k} is already at task depth {}",
                task.depth()
            )));
        }
        let insight_id = insight.map(|i| i.entry.id.as_str());
        let p = if insight_id == Some(task.required_cards[k].as_str()) {
            task.p_hi
        } else {
            task.p_lo
        };
        let u: f64 = ChaCha8Rng::seed_from_u64(seed).gen();
        let mut ok = if self.greedy { p >= 0.5 } else { u < p };
        if k + 1 == task.depth() && !task.path_is_correct(path) {
            ok = false;
        }
        let content = if ok {
            task.correct_steps[k].clone()
        } else {
            let variants = &task.wrong_steps[k];
            let v = if self.greedy {
                0
            } else {
                let t = temperature.max(1e-6);
                let weights: Vec<f64> = (0..variants.len()).map(|v| (-2.0 * v as f64 / t).exp()).collect();
                let dist = WeightedIndex::new(&weights).map_err(|e| GeneratorError::Failure(e.to_string()))?;
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[stable_hash(insight_id.unwrap_or(""))]));
                dist.sample(&mut rng)
            };
            variants[v].clone()
        };
        let phrase = insight_id.map_or_else(|| DEFAULT_PHRASE.to_string(), |id| insight_phrase(id, k));
        Ok(ReasoningStep::new(step_text(&phrase, &content))?.with_insight(insight_id.map(str::to_string)))
    }
}

/// Step vocabulary of the synthetic environment: one slot per (depth,
/// correct or wrong variant). Features are a bias, a flag for any wrong
/// step in the prefix, and a one-hot of the prefix length.
#[derive(Debug, Clone)]
pub struct SyntheticStepSpace {
    book: TaskBook,
    max_depth: usize,
    variants: usize,
}

impl SyntheticStepSpace {
    pub fn new(book: TaskBook, max_depth: usize) -> Self {
        let variants = book.wrong_variants();
        let max_depth = max_depth.max(book.max_depth());
        Self {
            book,
            max_depth,
            variants,
        }
    }

    fn task(&self, query: &MultimodalQuery) -> Result<&SyntheticTask, PrmError> {
        self.book.get(&query.id).ok_or_else(|| PrmError::UnknownQuery(query.id.clone()))
    }
}

impl StepSpace for SyntheticStepSpace {
    fn name(&self) -> &str {
        "synthetic"
    }
    fn feature_dim(&self) -> usize {
        2 + self.max_depth
    }
    fn vocab_size(&self) -> usize {
        self.max_depth * (self.variants + 1)
    }
    fn features(&self, query: &MultimodalQuery, prefix: &ReasoningPath) -> Result<Vec<f64>, PrmError> {
        let task = self.task(query)?;
        let mut any_wrong = false;
        for (k, s) in prefix.steps().iter().enumerate() {
            match task.classify(k, s.text()) {
                Some(StepKind::Correct) => {}
                Some(StepKind::Wrong(_)) => any_wrong = true,
                None => return Err(PrmError::UnknownStep(s.text().to_string())),
            }
        }
        let mut f = vec![0.0; self.feature_dim()];
        f[0] = 1.0;
        f[1] = f64::from(u8::from(any_wrong));
        if prefix.len() < self.max_depth {
            f[2 + prefix.len()] = 1.0;
        }
        Ok(f)
    }
    fn step_index(&self, query: &MultimodalQuery, prefix: &ReasoningPath, step: &ReasoningStep) -> Result<usize, PrmError> {
        let task = self.task(query)?;
        let k = prefix.len();
        let slot = match task.classify(k, step.text()) {
            Some(StepKind::Correct) => 0,
            Some(StepKind::Wrong(v)) if v < self.variants => 1 + v,
            _ => return Err(PrmError::UnknownStep(step.text().to_string())),
        };
        if k >= self.max_depth {
            return Err(PrmError::UnknownStep(step.text().to_string()));
        }
        Ok(k * (self.variants + 1) + slot)
    }
}

/// Ground-truth scorer: near 1 for a correct step after a correct prefix,
/// near 0 otherwise; paths are scored by their final answer.
#[derive(Debug, Clone)]
pub struct OracleScorer {
    book: TaskBook,
}

pub const ORACLE_HI: f64 = 1.0 - 1e-6;
pub const ORACLE_LO: f64 = 1e-6;

impl OracleScorer {
    pub fn new(book: TaskBook) -> Self {
        Self { book }
    }
}

impl StepScorer for OracleScorer {
    fn score_step(&self, query: &MultimodalQuery, prefix: &ReasoningPath, step: &ReasoningStep) -> Result<f64, PrmError> {
        let task = self
            .book
            .get(&query.id)
            .ok_or_else(|| PrmError::UnknownQuery(query.id.clone()))?;
        let ok = task.path_is_correct(prefix) && task.classify(prefix.len(), step.text()) == Some(StepKind::Correct);
        Ok(if ok { ORACLE_HI } else { ORACLE_LO })
    }
}

impl PathScorer for OracleScorer {
    fn score_path(&self, query: &MultimodalQuery, path: &ReasoningPath) -> Result<f64, PrmError> {
        let task = self
            .book
            .get(&query.id)
            .ok_or_else(|| PrmError::UnknownQuery(query.id.clone()))?;
        let hit = path.final_answer() == Some(normalize_answer(task.answer()).as_str());
        Ok(if hit { ORACLE_HI } else { ORACLE_LO })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::kc_filter;

    fn suite(count: usize, dmin: usize, dmax: usize, seed: u64) -> SyntheticSuite {
        let spec = SuiteSpec {
            count,
            depth_min: dmin,
            depth_max: dmax,
            seed,
            ..SuiteSpec::default()
        };
        gen_synthetic_suite(&spec, &EngineConfig::default()).unwrap()
    }

    #[test]
    fn suite_is_deterministic() {
        assert_eq!(suite(10, 2, 4, 7), suite(10, 2, 4, 7));
        assert_ne!(suite(10, 2, 4, 7).tasks, suite(10, 2, 4, 8).tasks);
    }

    #[test]
    fn fixed_depth_range() {
        assert!(suite(10, 2, 2, 3).tasks.iter().all(|t| t.depth() == 2));
    }

    #[test]
    fn cards_pass_concept_filter() {
        let s = suite(20, 2, 6, 11);
        let provider = HashEmbedder::new(EngineConfig::default().embed_dim);
        for task in &s.tasks {
            let cards: Vec<CorpusEntry> = s
                .corpus
                .iter()
                .filter(|e| task.required_cards.contains(&e.id))
                .cloned()
                .collect();
            let kept = kc_filter(&cards, &task.query, &provider, 0.5, 0.5, true).unwrap();
            assert_eq!(kept.len(), task.depth(), "{}", task.query.id);
        }
    }

    fn empty() -> ReasoningPath {
        ReasoningPath::empty()
    }

    fn card(task: &SyntheticTask, k: usize) -> Insight {
        Insight {
            entry: CorpusEntry {
                id: task.required_cards[k].clone(),
                text: String::new(),
                image_ref: None,
                source: "card".into(),
                kc_labels: vec![],
            },
            sim_query: 1.0,
            sim_kc: 1.0,
            embedding: None,
        }
    }

    #[test]
    fn gate_extremes() {
        let mut spec = SuiteSpec {
            count: 3,
            p_hi: 1.0,
            p_lo: 0.0,
            ..SuiteSpec::default()
        };
        spec.depth_min = 3;
        spec.depth_max = 3;
        let s = gen_synthetic_suite(&spec, &EngineConfig::default()).unwrap();
        let gen = MockGenerator::new(s.book());
        for task in &s.tasks {
            for seed in 0..50 {
                let with = gen.generate_step(&task.query, &empty(), Some(&card(task, 0)), 0.7, seed).unwrap();
                assert_eq!(task.classify(0, with.text()), Some(StepKind::Correct));
                let without = gen.generate_step(&task.query, &empty(), None, 0.7, seed).unwrap();
                assert!(matches!(task.classify(0, without.text()), Some(StepKind::Wrong(_))));
            }
        }
    }

    #[test]
    fn gate_rate_matches_probability() {
        let s = suite(1, 3, 3, 5);
        let task = &s.tasks[0];
        let gen = MockGenerator::new(s.book());
        let hits = (0..1000)
            .filter(|&seed| {
                let st = gen.generate_step(&task.query, &empty(), Some(&card(task, 0)), 0.7, seed).unwrap();
                task.classify(0, st.text()) == Some(StepKind::Correct)
            })
            .count();
        let rate = hits as f64 / 1000.0;
        assert!((rate - 0.9).abs() < 0.03, "{rate}");
    }

    #[test]
    fn wrong_prefix_forces_wrong_answer() {
        let s = suite(1, 2, 2, 9);
        let task = &s.tasks[0];
        let gen = MockGenerator::new(s.book());
        let bad = ReasoningStep::new(step_text(DEFAULT_PHRASE, &task.wrong_steps[0][0])).unwrap();
        let prefix = ReasoningPath::from_steps([bad]).unwrap();
        for seed in 0..50 {
            let st = gen.generate_step(&task.query, &prefix, Some(&card(task, 1)), 0.7, seed).unwrap();
            assert!(st.is_terminal());
            assert_ne!(st.final_answer().as_deref(), Some(task.answer()));
        }
    }

    #[test]
    fn step_space_indexes_every_generated_step() {
        let s = suite(5, 2, 4, 13);
        let book = s.book();
        let gen = MockGenerator::new(book.clone());
        let space = SyntheticStepSpace::new(book.clone(), 8);
        let oracle = OracleScorer::new(book);
        for task in &s.tasks {
            for seed in 0..20 {
                let path = gen
                    .generate_completion(&task.query, &empty(), None, 0.7, seed, 8)
                    .unwrap();
                assert!(path.is_terminal());
                for k in 0..path.len() {
                    let prefix = ReasoningPath::from_steps(path.steps()[..k].iter().cloned()).unwrap();
                    let idx = space.step_index(&task.query, &prefix, &path.steps()[k]).unwrap();
                    assert!(idx < space.vocab_size());
                    assert_eq!(space.features(&task.query, &prefix).unwrap().len(), space.feature_dim());
                }
                let correct = path.final_answer() == Some(task.answer());
                assert_eq!(correct, task.path_is_correct(&path));
                let s = oracle.score_path(&task.query, &path).unwrap();
                assert_eq!(s > 0.5, correct);
            }
        }
    }
}
