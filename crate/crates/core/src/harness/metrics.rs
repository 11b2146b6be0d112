//! Sampling-space accuracy and candidate diversity.

use thiserror::Error;

use crate::index::{EmbeddingProvider, IndexError};
use crate::types::ReasoningPath;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("no records")]
    EmptyRecordSet,
    #[error("need at least two paths, got {0}")]
    TooFewPaths(usize),
    #[error(transparent)]
    Index(#[from] IndexError),
}

/// Fraction of questions whose candidate set holds at least one correct
/// answer.
pub fn metric_pqc<S: AsRef<[bool]>>(candidate_sets: &[S]) -> Result<f64, MetricError> {
    if candidate_sets.is_empty() {
        return Err(MetricError::EmptyRecordSet);
    }
    let hits = candidate_sets
        .iter()
        .filter(|s| s.as_ref().iter().any(|&c| c))
        .count();
    Ok(hits as f64 / candidate_sets.len() as f64)
}

/// Mean pairwise cosine distance between text embeddings of whole paths.
pub fn metric_diversity(paths: &[ReasoningPath], provider: &dyn EmbeddingProvider) -> Result<f64, MetricError> {
    if paths.len() < 2 {
        return Err(MetricError::TooFewPaths(paths.len()));
    }
    let embs = paths
        .iter()
        .map(|p| provider.embed_text(&p.joined_text()))
        .collect::<Result<Vec<_>, _>>()?;
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..embs.len() {
        for j in i + 1..embs.len() {
            total += 1.0 - embs[i].cosine(&embs[j])?;
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::{Embedding, HashEmbedder};
    use crate::types::ReasoningStep;

    fn path(texts: &[&str]) -> ReasoningPath {
        ReasoningPath::from_steps(texts.iter().map(|t| ReasoningStep::new(*t).unwrap())).unwrap()
    }

    #[test]
    fn pqc_formula() {
        assert_eq!(metric_pqc(&[vec![false, true], vec![false]]).unwrap(), 0.5);
        assert_eq!(metric_pqc(&[vec![true], vec![true, false]]).unwrap(), 1.0);
        assert_eq!(metric_pqc::<Vec<bool>>(&[]), Err(MetricError::EmptyRecordSet));
    }

    #[test]
    fn diversity_cases() {
        let h = HashEmbedder::new(256);
        let same = vec![path(&["alpha beta"]), path(&["alpha beta"])];
        assert!(metric_diversity(&same, &h).unwrap().abs() < 1e-12);
        let disjoint = vec![path(&["alpha beta gamma"]), path(&["delta epsilon zeta"])];
        assert!(metric_diversity(&disjoint, &h).unwrap() > 0.8);
        assert_eq!(metric_diversity(&same[..1], &h), Err(MetricError::TooFewPaths(1)));
    }

    /// "x" and "y" embed to orthogonal axes.
    struct Axes;

    impl EmbeddingProvider for Axes {
        fn dim(&self) -> usize {
            2
        }
        fn embed_text(&self, text: &str) -> Result<Embedding, IndexError> {
            Embedding::new(if text == "x" { vec![1.0, 0.0] } else { vec![0.0, 1.0] })
        }
        fn embed_image(&self, r: &str) -> Result<Embedding, IndexError> {
            self.embed_text(r)
        }
    }

    #[test]
    fn duplicating_an_outlier_raises_diversity() {
        let mut paths = vec![path(&["x"]), path(&["x"]), path(&["x"]), path(&["y"])];
        assert!((metric_diversity(&paths, &Axes).unwrap() - 0.5).abs() < 1e-12);
        paths.push(path(&["y"]));
        assert!((metric_diversity(&paths, &Axes).unwrap() - 0.6).abs() < 1e-12);
    }
}
