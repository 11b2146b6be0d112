use proptest::prelude::*;

use ragmcts::config::UcbVariant;
use ragmcts::harness::metrics::{metric_diversity, metric_pqc};
use ragmcts::index::{EmbeddingProvider, HashEmbedder};
use ragmcts::mcts::{backprop, ucb_score, SearchTree};
use ragmcts::prm::{cross_entropy, orm_select, self_consistency, PathScorer, PrmError};
use ragmcts::types::{extend_path, normalize_answer, stable_hash, MultimodalQuery, ReasoningPath, ReasoningStep};

fn query() -> MultimodalQuery {
    MultimodalQuery::new("q", "question").unwrap()
}

/// Distinct pseudo-random score per path text.
struct TextHashOrm;

impl PathScorer for TextHashOrm {
    fn score_path(&self, _: &MultimodalQuery, path: &ReasoningPath) -> Result<f64, PrmError> {
        Ok((stable_hash(&path.joined_text()) % 1_000_003) as f64 / 1_000_003.0)
    }
}

fn terminal(i: usize, ans: &str) -> ReasoningPath {
    ReasoningPath::from_steps([
        ReasoningStep::new(format!("step {i}")).unwrap(),
        ReasoningStep::new(format!("the answer is {ans} <END>")).unwrap(),
    ])
    .unwrap()
}

fn text_path(words: &[u8]) -> ReasoningPath {
    let text = words.iter().map(|w| format!("w{w}")).collect::<Vec<_>>().join(" ");
    ReasoningPath::from_steps([ReasoningStep::new(text).unwrap()]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn q_tracks_the_running_mean(values in prop::collection::vec(0.0f64..=1.0, 1..40), depth in 0usize..4) {
        let mut tree = SearchTree::new(query(), 0);
        let mut leaf = 0;
        for d in 0..depth {
            let state = extend_path(&tree.node(leaf).unwrap().state, ReasoningStep::new(format!("s{d}")).unwrap()).unwrap();
            leaf = tree.add_child(leaf, state, None).unwrap();
        }
        for &v in &values {
            backprop(&mut tree, leaf, v).unwrap();
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        for node in tree.nodes() {
            prop_assert_eq!(node.visits as usize, values.len());
            prop_assert!((node.q_value - mean).abs() <= 1e-12);
            prop_assert!((0.0..=1.0).contains(&node.q_value));
        }
    }

    #[test]
    fn unvisited_children_win_and_visited_are_finite(q in 0.0f64..=1.0, n in 1u64..50, extra in 0u64..50, c in 0.0f64..3.0) {
        let mut tree = SearchTree::new(query(), 0);
        let state = ReasoningPath::from_steps([ReasoningStep::new("a").unwrap()]).unwrap();
        let id = tree.add_child(0, state, None).unwrap();
        for variant in [UcbVariant::LogRatio, UcbVariant::StandardUct] {
            prop_assert_eq!(ucb_score(tree.node(id).unwrap(), n, c, variant).unwrap(), f64::INFINITY);
        }
        let child = tree.node_mut(id).unwrap();
        child.visits = n;
        child.q_value = q;
        for variant in [UcbVariant::LogRatio, UcbVariant::StandardUct] {
            let s = ucb_score(tree.node(id).unwrap(), n + extra, c, variant).unwrap();
            prop_assert!(s.is_finite() && s >= q - 1e-12);
        }
    }

    #[test]
    fn majority_answer_is_a_member(answers in prop::collection::vec("[0-9]{1,2}", 1..20)) {
        let best = self_consistency(&answers).unwrap();
        let normalized: Vec<String> = answers.iter().map(|a| normalize_answer(a)).collect();
        prop_assert!(normalized.contains(&best));
        let count = |x: &String| normalized.iter().filter(|a| *a == x).count();
        prop_assert!(normalized.iter().all(|a| count(a) <= count(&best)));
    }

    #[test]
    fn outcome_selection_ignores_order(n in 1usize..12, seed in any::<u64>()) {
        let paths: Vec<ReasoningPath> = (0..n).map(|i| terminal(i, &i.to_string())).collect();
        let best = orm_select(&paths, &TextHashOrm, &query()).unwrap();
        let mut shuffled = paths.clone();
        let len = shuffled.len();
        for i in 0..len {
            shuffled.swap(i, (seed.rotate_left(i as u32) as usize) % len);
        }
        prop_assert_eq!(orm_select(&shuffled, &TextHashOrm, &query()).unwrap(), best);
    }

    #[test]
    fn coverage_is_monotone_in_prefix_size(sets in prop::collection::vec(prop::collection::vec(any::<bool>(), 8), 1..30)) {
        let mut prev = 0.0;
        for n in 1..=8 {
            let prefixes: Vec<&[bool]> = sets.iter().map(|s| &s[..n]).collect();
            let p = metric_pqc(&prefixes).unwrap();
            prop_assert!((0.0..=1.0).contains(&p));
            prop_assert!(p >= prev);
            prev = p;
        }
    }

    #[test]
    fn cross_entropy_is_non_negative(pairs in prop::collection::vec((0.0f64..=1.0, any::<bool>()), 1..20)) {
        let scores: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let labels: Vec<f64> = pairs.iter().map(|p| f64::from(u8::from(p.1))).collect();
        let l = cross_entropy(&scores, &labels);
        prop_assert!(l.is_finite() && l >= 0.0);
    }

    /// Appending a copy of path `i` keeps the mean pairwise distance at or
    /// below its old value exactly when path `i` is, on average, no farther
    /// from the set (its copy included) than that old value.
    #[test]
    fn duplicate_insertion_characterization(
        texts in prop::collection::vec(prop::collection::vec(0u8..12, 1..6), 2..7),
        pick in any::<prop::sample::Index>(),
    ) {
        let emb = HashEmbedder::new(64);
        let paths: Vec<ReasoningPath> = texts.iter().map(|t| text_path(t)).collect();
        let i = pick.index(paths.len());
        let before = metric_diversity(&paths, &emb).unwrap();
        let mut grown = paths.clone();
        grown.push(paths[i].clone());
        let after = metric_diversity(&grown, &emb).unwrap();

        let e: Vec<_> = paths.iter().map(|p| emb.embed_text(&p.joined_text()).unwrap()).collect();
        let dist_sum: f64 = (0..paths.len()).filter(|&j| j != i).map(|j| 1.0 - e[i].cosine(&e[j]).unwrap()).sum();
        let own_mean = dist_sum / paths.len() as f64;
        prop_assert!((0.0..=2.0 + 1e-12).contains(&after));
        if own_mean < before - 1e-9 {
            prop_assert!(after < before + 1e-12);
        } else if own_mean > before + 1e-9 {
            prop_assert!(after > before - 1e-12);
        }
    }
}
