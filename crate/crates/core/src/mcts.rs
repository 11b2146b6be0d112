//! Retrieval-augmented MCTS over reasoning steps.
//!
//! Each round selects a leaf by UCB, expands it with one child per actively
//! retrieved insight plus one child generated without any insight, estimates
//! every new child's value from `k` rollouts, and backs each value up to the
//! root. The finished tree yields step-level preference pairs and point
//! labels for reward-model training.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{EngineConfig, UcbVariant};
use crate::harness::generator::{GeneratorBackend, GeneratorError};
use crate::index::EmbeddingProvider;
use crate::retrieval::{active_retrieve, InsightSet, RetrievalError};
use crate::types::{
    derive_seed, extend_path, normalize_answer, MultimodalQuery, ReasoningPath, ReasoningStep,
    TypeError,
};

pub type NodeId = usize;

const TAG_EXPAND: u64 = 0x45;
const TAG_ROLLOUT: u64 = 0x52;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MctsError {
    #[error("parent has zero visits but child has {0}")]
    NonPositiveVisits(u64),
    #[error("child visits {child} exceed parent visits {parent}")]
    InconsistentVisits { parent: u64, child: u64 },
    #[error("node {0} is terminal")]
    ExpandTerminal(NodeId),
    #[error("node {0} is already at max depth")]
    DepthExceeded(NodeId),
    #[error("node {0} not found")]
    NodeNotFound(NodeId),
    #[error("value {0} outside [0, 1]")]
    InvalidValue(f64),
    #[error("query `{0}` has no answer key")]
    MissingAnswerKey(String),
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Path(#[from] TypeError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub node_id: NodeId,
    pub state: ReasoningPath,
    pub insight_id: Option<String>,
    pub visits: u64,
    pub q_value: f64,
    pub children: Vec<NodeId>,
    pub parent: Option<NodeId>,
    pub terminal: bool,
    pub depth: usize,
    /// Simulations run at this node itself.
    pub simulations: u64,
}

impl TreeNode {
    fn root() -> Self {
        Self {
            node_id: 0,
            state: ReasoningPath::empty(),
            insight_id: None,
            visits: 0,
            q_value: 0.0,
            children: Vec::new(),
            parent: None,
            terminal: false,
            depth: 0,
            simulations: 0,
        }
    }

    pub fn step(&self) -> Option<&ReasoningStep> {
        self.state.last_step()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchTree {
    nodes: Vec<TreeNode>,
    root: NodeId,
    query: MultimodalQuery,
    rng_seed: u64,
}

impl SearchTree {
    pub fn new(query: MultimodalQuery, rng_seed: u64) -> Self {
        Self {
            nodes: vec![TreeNode::root()],
            root: 0,
            query,
            rng_seed,
        }
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn query(&self) -> &MultimodalQuery {
        &self.query
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> Result<&TreeNode, MctsError> {
        self.nodes.get(id).ok_or(MctsError::NodeNotFound(id))
    }

    pub fn node_mut(&mut self, id: NodeId) -> Result<&mut TreeNode, MctsError> {
        self.nodes.get_mut(id).ok_or(MctsError::NodeNotFound(id))
    }

    /// Attach a child holding `state`. Returns its id.
    pub fn add_child(
        &mut self,
        parent: NodeId,
        state: ReasoningPath,
        insight_id: Option<String>,
    ) -> Result<NodeId, MctsError> {
        let depth = self.node(parent)?.depth + 1;
        let id = self.nodes.len();
        let terminal = state.is_terminal();
        self.nodes.push(TreeNode {
            node_id: id,
            state,
            insight_id,
            visits: 0,
            q_value: 0.0,
            children: Vec::new(),
            parent: Some(parent),
            terminal,
            depth,
            simulations: 0,
        });
        self.nodes[parent].children.push(id);
        Ok(id)
    }

    /// One JSON record per node, in id order.
    pub fn records(&self) -> Vec<NodeRecord> {
        self.nodes
            .iter()
            .map(|n| NodeRecord {
                query_id: self.query.id.clone(),
                node_id: n.node_id,
                parent: n.parent,
                depth: n.depth,
                insight_id: n.insight_id.clone(),
                visits: n.visits,
                q_value: n.q_value,
                terminal: n.terminal,
                step_text: n.step().map(|s| s.text().to_string()),
            })
            .collect()
    }

    pub fn to_jsonl(&self) -> String {
        to_jsonl(&self.records())
    }
}

/// Serialized form of one tree node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub query_id: String,
    pub node_id: NodeId,
    pub parent: Option<NodeId>,
    pub depth: usize,
    pub insight_id: Option<String>,
    pub visits: u64,
    pub q_value: f64,
    pub terminal: bool,
    pub step_text: Option<String>,
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("records serialize"));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueEstimate {
    pub value: f64,
    pub num_rollouts: usize,
    pub num_correct: usize,
}

impl ValueEstimate {
    pub fn new(num_correct: usize, num_rollouts: usize) -> Self {
        assert!(num_rollouts > 0 && num_correct <= num_rollouts);
        Self {
            value: num_correct as f64 / num_rollouts as f64,
            num_rollouts,
            num_correct,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub query_id: String,
    pub prefix: ReasoningPath,
    pub preferred: ReasoningStep,
    pub dispreferred: ReasoningStep,
    pub v_pos: f64,
    pub v_neg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepAnnotation {
    pub query_id: String,
    pub prefix: ReasoningPath,
    pub step: ReasoningStep,
    pub label: u8,
    pub value: f64,
}

/// Everything a search needs besides the tree itself.
#[derive(Clone, Copy)]
pub struct SearchContext<'a> {
    pub query: &'a MultimodalQuery,
    pub insights: &'a InsightSet,
    pub provider: &'a dyn EmbeddingProvider,
    pub generator: &'a dyn GeneratorBackend,
    pub config: &'a EngineConfig,
}

/// UCB of `child` under a parent visited `parent_visits` times. Unvisited
/// children score +inf.
pub fn ucb_score(
    child: &TreeNode,
    parent_visits: u64,
    c: f64,
    variant: UcbVariant,
) -> Result<f64, MctsError> {
    let n = child.visits;
    if n == 0 {
        return Ok(f64::INFINITY);
    }
    if parent_visits == 0 {
        return Err(MctsError::NonPositiveVisits(n));
    }
    if parent_visits < n {
        return Err(MctsError::InconsistentVisits {
            parent: parent_visits,
            child: n,
        });
    }
    let (big_n, n) = (parent_visits as f64, n as f64);
    let explore = match variant {
        UcbVariant::LogRatio => (2.0 * (big_n / n).ln()).sqrt(),
        UcbVariant::StandardUct => (2.0 * big_n.ln() / n).sqrt(),
    };
    Ok(child.q_value + c * explore)
}

/// Walk from the root by UCB argmax (ties to the smaller id) until reaching
/// a childless or terminal node. Returns the visited ids, root first.
pub fn select_leaf(tree: &SearchTree, cfg: &EngineConfig) -> Result<Vec<NodeId>, MctsError> {
    let mut path = vec![tree.root];
    let mut current = tree.node(tree.root)?;
    while !current.terminal && !current.children.is_empty() {
        let mut best: Option<(f64, NodeId)> = None;
        for &cid in &current.children {
            let child = tree.node(cid)?;
            let score = ucb_score(child, current.visits, cfg.c_explore, cfg.ucb_variant)?;
            best = match best {
                Some((s, id)) if s > score || (s == score && id < cid) => Some((s, id)),
                _ => Some((score, cid)),
            };
        }
        let (_, next) = best.expect("non-empty children");
        path.push(next);
        current = tree.node(next)?;
    }
    Ok(path)
}

/// Expand `leaf` with one child per retrieved insight (top-B by active
/// retrieval) and one child without insight, in that order.
///
/// All branches share one seed so that they differ only through the
/// insight they are conditioned on.
pub fn expand(
    tree: &mut SearchTree,
    leaf: NodeId,
    ctx: &SearchContext<'_>,
) -> Result<Vec<NodeId>, MctsError> {
    let node = tree.node(leaf)?;
    if node.terminal {
        return Err(MctsError::ExpandTerminal(leaf));
    }
    if node.depth >= ctx.config.max_depth {
        return Err(MctsError::DepthExceeded(leaf));
    }
    let state = node.state.clone();
    let retrieved = active_retrieve(
        ctx.insights,
        ctx.query,
        &state,
        ctx.provider,
        ctx.config.beam_b,
    )?;
    let seed = derive_seed(tree.rng_seed, &[TAG_EXPAND, leaf as u64]);
    let mut branches: Vec<Option<&crate::retrieval::Insight>> = retrieved.iter().map(Some).collect();
    branches.push(None);

    let children = branches
        .par_iter()
        .map(|ins| {
            let step = ctx
                .generator
                .generate_step(ctx.query, &state, *ins, ctx.config.temperature, seed)?
                .with_insight(ins.map(|i| i.entry.id.clone()));
            let child_state = extend_path(&state, step)?;
            Ok((child_state, ins.map(|i| i.entry.id.clone())))
        })
        .collect::<Result<Vec<_>, MctsError>>()?;

    children
        .into_iter()
        .map(|(s, ins)| tree.add_child(leaf, s, ins))
        .collect()
}

fn answer_matches(path: &ReasoningPath, gold: &str) -> bool {
    path.final_answer().is_some_and(|a| a == gold)
}

/// Estimate a node's value as the fraction of `k` rollouts that reach the
/// reference answer. Each rollout step is conditioned on the top actively
/// retrieved insight for the rollout's current prefix. Terminal nodes are
/// scored by their own answer.
pub fn simulate(
    tree: &mut SearchTree,
    node_id: NodeId,
    ctx: &SearchContext<'_>,
) -> Result<ValueEstimate, MctsError> {
    let gold = ctx
        .query
        .answer_key
        .as_deref()
        .map(normalize_answer)
        .ok_or_else(|| MctsError::MissingAnswerKey(ctx.query.id.clone()))?;
    let node = tree.node(node_id)?;
    let estimate = if node.terminal {
        ValueEstimate::new(usize::from(answer_matches(&node.state, &gold)), 1)
    } else {
        let state = node.state.clone();
        let k = ctx.config.k_rollouts;
        let hits = (0..k)
            .into_par_iter()
            .map(|r| {
                let seed = derive_seed(tree.rng_seed, &[TAG_ROLLOUT, node_id as u64, r as u64]);
                let path = rollout(&state, seed, ctx)?;
                Ok(answer_matches(&path, &gold))
            })
            .collect::<Result<Vec<bool>, MctsError>>()?;
        ValueEstimate::new(hits.iter().filter(|&&h| h).count(), k)
    };
    tree.node_mut(node_id)?.simulations += 1;
    Ok(estimate)
}

fn rollout(start: &ReasoningPath, seed: u64, ctx: &SearchContext<'_>) -> Result<ReasoningPath, MctsError> {
    let mut path = start.clone();
    while !path.is_terminal() && path.len() < ctx.config.max_depth {
        let top = active_retrieve(ctx.insights, ctx.query, &path, ctx.provider, 1)?;
        let step_seed = derive_seed(seed, &[path.len() as u64]);
        let step = ctx.generator.generate_step(
            ctx.query,
            &path,
            top.first(),
            ctx.config.temperature,
            step_seed,
        )?;
        path = extend_path(&path, step)?;
    }
    Ok(path)
}

/// N <- N + 1, then Q <- Q + (v - Q) / N, for the node and every ancestor.
pub fn backprop(tree: &mut SearchTree, node_id: NodeId, v: f64) -> Result<(), MctsError> {
    if !(0.0..=1.0).contains(&v) {
        return Err(MctsError::InvalidValue(v));
    }
    let mut cursor = Some(node_id);
    tree.node(node_id)?;
    while let Some(id) = cursor {
        let node = tree.node_mut(id)?;
        node.visits += 1;
        node.q_value += (v - node.q_value) / node.visits as f64;
        cursor = node.parent;
    }
    Ok(())
}

/// One select/expand/simulate/backprop iteration.
pub fn run_round(tree: &mut SearchTree, ctx: &SearchContext<'_>) -> Result<(), MctsError> {
    let path = select_leaf(tree, ctx.config)?;
    let leaf = *path.last().expect("selection starts at the root");
    let node = tree.node(leaf)?;
    if node.terminal || node.depth >= ctx.config.max_depth {
        let v = simulate(tree, leaf, ctx)?;
        return backprop(tree, leaf, v.value);
    }
    for child in expand(tree, leaf, ctx)? {
        let v = simulate(tree, child, ctx)?;
        backprop(tree, child, v.value)?;
    }
    Ok(())
}

/// Build an annotation tree for `ctx.query` in `rounds` iterations.
pub fn run_annotation(
    ctx: &SearchContext<'_>,
    rounds: usize,
    seed: u64,
) -> Result<SearchTree, MctsError> {
    if ctx.query.answer_key.is_none() {
        return Err(MctsError::MissingAnswerKey(ctx.query.id.clone()));
    }
    let mut tree = SearchTree::new(ctx.query.clone(), seed);
    for _ in 0..rounds {
        run_round(&mut tree, ctx)?;
    }
    Ok(tree)
}

fn rank_by_q(tree: &SearchTree, ids: &mut [NodeId]) {
    ids.sort_by(|&a, &b| {
        tree.nodes[b]
            .q_value
            .total_cmp(&tree.nodes[a].q_value)
            .then(a.cmp(&b))
    });
}

/// Per parent: children with Q above the threshold are positives, visited
/// children with Q = 0 are negatives; both ranked by Q then id and zipped.
pub fn extract_pairs(tree: &SearchTree, cfg: &EngineConfig) -> Vec<PreferencePair> {
    let mut pairs = Vec::new();
    for parent in &tree.nodes {
        let mut pos: Vec<NodeId> = Vec::new();
        let mut neg: Vec<NodeId> = Vec::new();
        for &c in &parent.children {
            let n = &tree.nodes[c];
            if n.q_value > cfg.pos_value_threshold {
                pos.push(c);
            } else if n.q_value == 0.0 && n.visits >= 1 {
                neg.push(c);
            }
        }
        rank_by_q(tree, &mut pos);
        rank_by_q(tree, &mut neg);
        for (&p, &n) in pos.iter().zip(&neg) {
            let (p, n) = (&tree.nodes[p], &tree.nodes[n]);
            pairs.push(PreferencePair {
                query_id: tree.query.id.clone(),
                prefix: parent.state.clone(),
                preferred: p.step().expect("child has a step").clone(),
                dispreferred: n.step().expect("child has a step").clone(),
                v_pos: p.q_value,
                v_neg: n.q_value,
            });
        }
    }
    pairs
}

/// Label 1 for Q above threshold, 0 for Q = 0; ambiguous nodes are skipped.
pub fn extract_point_labels(tree: &SearchTree, cfg: &EngineConfig) -> Vec<StepAnnotation> {
    tree.nodes
        .iter()
        .filter(|n| n.parent.is_some() && n.visits >= 1)
        .filter_map(|n| {
            let label = if n.q_value > cfg.pos_value_threshold {
                1
            } else if n.q_value == 0.0 {
                0
            } else {
                return None;
            };
            Some(StepAnnotation {
                query_id: tree.query.id.clone(),
                prefix: n.state.parent_prefix(),
                step: n.step().expect("non-root node has a step").clone(),
                label,
                value: n.q_value,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node_with(visits: u64, q: f64) -> TreeNode {
        TreeNode {
            visits,
            q_value: q,
            ..TreeNode::root()
        }
    }

    fn step(s: &str) -> ReasoningStep {
        ReasoningStep::new(s).unwrap()
    }

    fn query() -> MultimodalQuery {
        MultimodalQuery::new("q", "text").unwrap().with_answer("7")
    }

    fn child_state(text: &str) -> ReasoningPath {
        extend_path(&ReasoningPath::empty(), step(text)).unwrap()
    }

    #[test]
    fn ucb_literal_substitution() {
        let s = ucb_score(&node_with(2, 0.5), 10, 1.0, UcbVariant::LogRatio).unwrap();
        assert!((s - 2.2941).abs() < 1e-4, "{s}");
        let s = ucb_score(&node_with(2, 0.5), 10, 1.0, UcbVariant::StandardUct).unwrap();
        assert!((s - (0.5 + (2.0 * 10f64.ln() / 2.0).sqrt())).abs() < 1e-12);
    }

    #[test]
    fn ucb_edge_cases() {
        assert_eq!(
            ucb_score(&node_with(0, 0.3), 5, 1.0, UcbVariant::LogRatio).unwrap(),
            f64::INFINITY
        );
        for (n, big_n) in [(1, 1), (3, 9), (7, 100)] {
            for v in [UcbVariant::LogRatio, UcbVariant::StandardUct] {
                assert_eq!(ucb_score(&node_with(n, 0.25), big_n, 0.0, v).unwrap(), 0.25);
            }
        }
        assert_eq!(
            ucb_score(&node_with(2, 0.0), 0, 1.0, UcbVariant::LogRatio).unwrap_err(),
            MctsError::NonPositiveVisits(2)
        );
    }

    #[test]
    fn select_on_bare_root() {
        let tree = SearchTree::new(query(), 0);
        assert_eq!(select_leaf(&tree, &EngineConfig::default()).unwrap(), vec![0]);
    }

    #[test]
    fn select_tie_goes_to_lower_id() {
        let mut tree = SearchTree::new(query(), 0);
        let a = tree.add_child(0, child_state("a"), None).unwrap();
        let b = tree.add_child(0, child_state("b"), None).unwrap();
        for id in [a, b] {
            backprop(&mut tree, id, 0.5).unwrap();
        }
        assert_eq!(select_leaf(&tree, &EngineConfig::default()).unwrap(), vec![0, a]);
    }

    #[test]
    fn select_stops_at_terminal() {
        let mut tree = SearchTree::new(query(), 0);
        let t = tree.add_child(0, child_state("answer is 7 <END>"), None).unwrap();
        assert!(tree.node(t).unwrap().terminal);
        backprop(&mut tree, t, 1.0).unwrap();
        assert_eq!(select_leaf(&tree, &EngineConfig::default()).unwrap(), vec![0, t]);
    }

    #[test]
    fn backprop_incremental_mean() {
        let mut tree = SearchTree::new(query(), 0);
        let c = tree.add_child(0, child_state("a"), None).unwrap();
        backprop(&mut tree, c, 1.0).unwrap();
        let n = tree.node(c).unwrap();
        assert_eq!((n.visits, n.q_value), (1, 1.0));

        let mut tree = SearchTree::new(query(), 0);
        let c = tree.add_child(0, child_state("a"), None).unwrap();
        backprop(&mut tree, c, 0.5).unwrap();
        backprop(&mut tree, c, 1.0).unwrap();
        let n = tree.node(c).unwrap();
        assert_eq!((n.visits, n.q_value), (2, 0.75));
        assert_eq!(tree.node(0).unwrap().visits, 2);
    }

    #[test]
    fn backprop_errors() {
        let mut tree = SearchTree::new(query(), 0);
        assert_eq!(backprop(&mut tree, 9, 0.5).unwrap_err(), MctsError::NodeNotFound(9));
        assert_eq!(backprop(&mut tree, 0, 1.5).unwrap_err(), MctsError::InvalidValue(1.5));
    }

    fn tree_with_sibling_values(values: &[f64]) -> (SearchTree, Vec<NodeId>) {
        let mut tree = SearchTree::new(query(), 0);
        let ids: Vec<_> = values
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let id = tree.add_child(0, child_state(&format!("s{i}")), None).unwrap();
                backprop(&mut tree, id, v).unwrap();
                id
            })
            .collect();
        (tree, ids)
    }

    #[test]
    fn pair_extraction_rules() {
        let cfg = EngineConfig::default();
        let (t, _) = tree_with_sibling_values(&[0.9, 0.0]);
        assert_eq!(extract_pairs(&t, &cfg).len(), 1);

        let (t, _) = tree_with_sibling_values(&[0.5]);
        assert!(extract_pairs(&t, &cfg).is_empty());

        let (t, ids) = tree_with_sibling_values(&[0.9, 1.0, 0.0]);
        let pairs = extract_pairs(&t, &cfg);
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].preferred, *t.node(ids[1]).unwrap().step().unwrap());
        assert_eq!(pairs[0].v_pos, 1.0);
        assert_eq!(pairs[0].v_neg, 0.0);
        assert!(pairs[0].prefix.is_empty());
    }

    #[test]
    fn point_label_rules() {
        let cfg = EngineConfig::default();
        let (mut t, ids) = tree_with_sibling_values(&[0.9, 0.0, 0.4]);
        backprop(&mut t, ids[1], 0.0).unwrap();
        let labels = extract_point_labels(&t, &cfg);
        assert_eq!(labels.len(), 2);
        assert_eq!(labels[0].label, 1);
        assert_eq!(labels[1].label, 0);
        assert!(labels.iter().all(|l| l.step.text() != "s2"));
        // unvisited nodes are not labelled
        t.add_child(0, child_state("fresh"), None).unwrap();
        assert_eq!(extract_point_labels(&t, &cfg).len(), 2);
    }

    #[test]
    fn value_estimate_is_exact_fraction() {
        let v = ValueEstimate::new(5, 8);
        assert_eq!(v.value, 0.625);
    }
}
