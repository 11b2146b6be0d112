//! Unified retrieval over the hybrid corpus and per-step active retrieval.
//!
//! A query is answered in two stages. `unified_retrieve` unions the
//! text-to-text route (query text against text-only document vectors) with
//! the cross-modal route (fused query against fused documents), and
//! `kc_filter` keeps the candidates that clear both the query-similarity
//! threshold and the concept-similarity threshold. The survivors form the
//! query's insight set, computed once per query. During search,
//! `active_retrieve` re-ranks that fixed set against the query text
//! extended with the steps generated so far.
//!
//! Ranking inside the index uses raw dot products; thresholds and
//! re-ranking use cosine similarity so they do not depend on vector scale.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::EngineConfig;
use crate::index::{
    build_index, build_text_index, encode_pair, top_k, Corpus, CorpusEntry, Embedding,
    EmbeddingProvider, Hit, IndexError, VectorIndex,
};
use crate::types::{MultimodalQuery, ReasoningPath};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RetrievalError {
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error("query `{0}` has no knowledge-concept labels but concept filtering is enabled")]
    NoKcLabels(String),
    #[error("index refers to unknown corpus id `{0}`")]
    UnknownId(String),
}

/// A retrieved corpus entry with its similarity to the query and to the
/// query's concept labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Insight {
    pub entry: CorpusEntry,
    pub sim_query: f64,
    pub sim_kc: f64,
    /// Fused encoding of the entry, cached for re-ranking.
    #[serde(skip, default)]
    pub embedding: Option<Embedding>,
}

/// Insights for one query, sorted by `sim_query` descending (ties by id).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct InsightSet {
    pub query_id: String,
    pub insights: Vec<Insight>,
}

impl InsightSet {
    pub fn empty(query_id: impl Into<String>) -> Self {
        Self {
            query_id: query_id.into(),
            insights: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.insights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.insights.is_empty()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.insights.iter().map(|i| i.entry.id.as_str()).collect()
    }
}

/// Text route: top-k over text-only document vectors.
pub fn retrieve_text(
    query: &MultimodalQuery,
    text_index: &VectorIndex,
    provider: &dyn EmbeddingProvider,
    k: usize,
) -> Result<Vec<Hit>, RetrievalError> {
    let q = provider.embed_text(&query.text)?;
    Ok(top_k(text_index, &q, k)?)
}

/// Cross-modal route: fused query against the fused (hybrid) index.
pub fn retrieve_cross(
    query: &MultimodalQuery,
    hybrid_index: &VectorIndex,
    provider: &dyn EmbeddingProvider,
    k: usize,
) -> Result<Vec<Hit>, RetrievalError> {
    let q = encode_pair(provider, query.image_ref.as_deref(), &query.text)?;
    Ok(top_k(hybrid_index, &q, k)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub entry: CorpusEntry,
    pub score: f64,
}

fn by_score_then_id(a_score: f64, a_id: &str, b_score: f64, b_id: &str) -> Ordering {
    b_score.total_cmp(&a_score).then_with(|| a_id.cmp(b_id))
}

/// Union of both routes, deduplicated by id keeping the higher route score.
pub fn unified_retrieve(
    query: &MultimodalQuery,
    text_index: &VectorIndex,
    hybrid_index: &VectorIndex,
    provider: &dyn EmbeddingProvider,
    corpus: &Corpus,
    k: usize,
) -> Result<Vec<Candidate>, RetrievalError> {
    let text_hits = retrieve_text(query, text_index, provider, k)?;
    let cross_hits = retrieve_cross(query, hybrid_index, provider, k)?;
    let mut best: HashMap<String, f64> = HashMap::new();
    for hit in text_hits.into_iter().chain(cross_hits) {
        best.entry(hit.id)
            .and_modify(|s| *s = s.max(hit.score))
            .or_insert(hit.score);
    }
    let mut out = best
        .into_iter()
        .map(|(id, score)| {
            let entry = corpus.get(&id).cloned().ok_or(RetrievalError::UnknownId(id))?;
            Ok(Candidate { entry, score })
        })
        .collect::<Result<Vec<_>, RetrievalError>>()?;
    out.sort_by(|a, b| by_score_then_id(a.score, &a.entry.id, b.score, &b.entry.id));
    Ok(out)
}

/// Per-candidate outcome of concept filtering, kept or not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Screened {
    pub query_id: String,
    pub entry_id: String,
    pub sim_query: f64,
    pub sim_kc: f64,
    pub kept: bool,
}

/// Score every candidate against the query and its concept labels.
/// `use_kc = false` skips the concept check (sim_kc is then reported as 0).
pub fn kc_screen(
    candidates: &[CorpusEntry],
    query: &MultimodalQuery,
    provider: &dyn EmbeddingProvider,
    t_r: f64,
    t_kc: f64,
    use_kc: bool,
) -> Result<Vec<(Insight, bool)>, RetrievalError> {
    if use_kc && query.kc_labels.is_empty() && !candidates.is_empty() {
        return Err(RetrievalError::NoKcLabels(query.id.clone()));
    }
    let q = encode_pair(provider, query.image_ref.as_deref(), &query.text)?;
    let kc = if use_kc {
        Some(provider.embed_text(&query.kc_labels.join(" "))?)
    } else {
        None
    };
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(candidates.len());
    for entry in candidates {
        if !seen.insert(entry.id.as_str()) {
            continue;
        }
        let e = encode_pair(provider, entry.image_ref.as_deref(), &entry.text)?;
        let sim_query = e.cosine(&q)?;
        let sim_kc = match &kc {
            Some(kc) => e.cosine(kc)?,
            None => 0.0,
        };
        let kept = sim_query >= t_r && (kc.is_none() || sim_kc >= t_kc);
        out.push((
            Insight {
                entry: entry.clone(),
                sim_query,
                sim_kc,
                embedding: Some(e),
            },
            kept,
        ));
    }
    Ok(out)
}

/// Keep candidates passing both thresholds, sorted by query similarity.
pub fn kc_filter(
    candidates: &[CorpusEntry],
    query: &MultimodalQuery,
    provider: &dyn EmbeddingProvider,
    t_r: f64,
    t_kc: f64,
    use_kc: bool,
) -> Result<InsightSet, RetrievalError> {
    let mut insights: Vec<Insight> = kc_screen(candidates, query, provider, t_r, t_kc, use_kc)?
        .into_iter()
        .filter_map(|(i, kept)| kept.then_some(i))
        .collect();
    insights.sort_by(|a, b| by_score_then_id(a.sim_query, &a.entry.id, b.sim_query, &b.entry.id));
    Ok(InsightSet {
        query_id: query.id.clone(),
        insights,
    })
}

/// Re-rank the query's insights against `query.text + path steps` and return
/// the best `b`. Ties keep the insight set's own order.
pub fn active_retrieve(
    insights: &InsightSet,
    query: &MultimodalQuery,
    path: &ReasoningPath,
    provider: &dyn EmbeddingProvider,
    b: usize,
) -> Result<Vec<Insight>, RetrievalError> {
    if b == 0 || insights.is_empty() {
        return Ok(Vec::new());
    }
    let step_query = encode_pair(
        provider,
        query.image_ref.as_deref(),
        &path.compose_query_text(&query.text),
    )?;
    let mut scored = Vec::with_capacity(insights.len());
    for (pos, ins) in insights.insights.iter().enumerate() {
        let sim = match &ins.embedding {
            Some(e) => e.cosine(&step_query)?,
            None => encode_pair(provider, ins.entry.image_ref.as_deref(), &ins.entry.text)?
                .cosine(&step_query)?,
        };
        scored.push((sim, pos));
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    Ok(scored
        .into_iter()
        .take(b)
        .map(|(_, pos)| insights.insights[pos].clone())
        .collect())
}

/// A corpus with both route indexes built over it.
#[derive(Clone)]
pub struct Retriever {
    pub corpus: Corpus,
    pub text_index: VectorIndex,
    pub hybrid_index: VectorIndex,
    pub provider: Arc<dyn EmbeddingProvider>,
}

impl Retriever {
    pub fn build(
        entries: Vec<CorpusEntry>,
        provider: Arc<dyn EmbeddingProvider>,
    ) -> Result<Self, RetrievalError> {
        let corpus = Corpus::new(entries)?;
        let text_index = build_text_index(corpus.entries(), provider.as_ref())?;
        let hybrid_index = build_index(corpus.entries(), provider.as_ref())?;
        Ok(Self {
            corpus,
            text_index,
            hybrid_index,
            provider,
        })
    }

    pub fn candidates(&self, query: &MultimodalQuery, k: usize) -> Result<Vec<Candidate>, RetrievalError> {
        unified_retrieve(
            query,
            &self.text_index,
            &self.hybrid_index,
            self.provider.as_ref(),
            &self.corpus,
            k,
        )
    }

    /// Unified retrieval followed by concept filtering, per the config.
    pub fn insights_for(
        &self,
        query: &MultimodalQuery,
        cfg: &EngineConfig,
    ) -> Result<InsightSet, RetrievalError> {
        let entries: Vec<CorpusEntry> = self
            .candidates(query, cfg.top_k_retrieve)?
            .into_iter()
            .map(|c| c.entry)
            .collect();
        let use_kc = cfg.kc_filter && !query.kc_labels.is_empty();
        kc_filter(&entries, query, self.provider.as_ref(), cfg.t_r, cfg.t_kc, use_kc)
    }

    /// Full screening report (kept and dropped) for one query.
    pub fn screen(
        &self,
        query: &MultimodalQuery,
        cfg: &EngineConfig,
    ) -> Result<Vec<Screened>, RetrievalError> {
        let entries: Vec<CorpusEntry> = self
            .candidates(query, cfg.top_k_retrieve)?
            .into_iter()
            .map(|c| c.entry)
            .collect();
        let use_kc = cfg.kc_filter && !query.kc_labels.is_empty();
        Ok(kc_screen(&entries, query, self.provider.as_ref(), cfg.t_r, cfg.t_kc, use_kc)?
            .into_iter()
            .map(|(i, kept)| Screened {
                query_id: query.id.clone(),
                entry_id: i.entry.id,
                sim_query: i.sim_query,
                sim_kc: i.sim_kc,
                kept,
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::HashEmbedder;
    use crate::types::{extend_path, ReasoningStep};

    fn entry(id: &str, text: &str) -> CorpusEntry {
        CorpusEntry {
            id: id.into(),
            text: text.into(),
            image_ref: None,
            source: "test".into(),
            kc_labels: vec![],
        }
    }

    fn query(text: &str) -> MultimodalQuery {
        MultimodalQuery::new("q1", text).unwrap()
    }

    fn retriever(entries: Vec<CorpusEntry>) -> Retriever {
        Retriever::build(entries, Arc::new(HashEmbedder::new(256))).unwrap()
    }

    #[test]
    fn text_route_finds_verbatim_entry() {
        let q = query("find the area of the shaded triangle");
        let r = retriever(vec![
            entry("a", "stock market prices rose today"),
            entry("b", "find the area of the shaded triangle"),
            entry("c", "triangle inequality basics"),
        ]);
        let hits = retrieve_text(&q, &r.text_index, r.provider.as_ref(), 3).unwrap();
        assert_eq!(hits[0].id, "b");
        assert!(retrieve_text(&q, &r.text_index, r.provider.as_ref(), 0).unwrap().is_empty());
        let empty = retriever(vec![]);
        assert!(retrieve_text(&q, &empty.text_index, empty.provider.as_ref(), 3).unwrap().is_empty());
    }

    #[test]
    fn cross_route_without_image_matches_text_embedding() {
        let q = query("circle radius chord");
        let r = retriever(vec![
            entry("a", "circle radius"),
            entry("b", "chord length"),
            entry("c", "unrelated"),
        ]);
        let cross = retrieve_cross(&q, &r.hybrid_index, r.provider.as_ref(), 10).unwrap();
        let direct = top_k(&r.hybrid_index, &r.provider.embed_text(&q.text).unwrap(), 10).unwrap();
        assert_eq!(cross, direct);
        assert_eq!(cross.len(), 3);
    }

    #[test]
    fn union_dedups_identical_routes() {
        let q = query("alpha beta");
        let r = retriever(vec![entry("a", "alpha"), entry("b", "beta"), entry("c", "gamma")]);
        // no images: both routes see identical vectors, union collapses to k
        let u = r.candidates(&q, 2).unwrap();
        assert_eq!(u.len(), 2);
    }

    #[test]
    fn union_of_disjoint_routes_has_two_k() {
        let p = HashEmbedder::new(64);
        let e = |v: &str| p.embed_text(v).unwrap();
        let corpus = Corpus::new(vec![entry("t1", "x"), entry("t2", "y"), entry("h1", "z"), entry("h2", "w")]).unwrap();
        let q = query("x y");
        let text_index =
            VectorIndex::from_parts(64, vec![("t1".into(), e("x")), ("t2".into(), e("y"))]).unwrap();
        let hybrid_index =
            VectorIndex::from_parts(64, vec![("h1".into(), e("x y")), ("h2".into(), e("x"))]).unwrap();
        let u = unified_retrieve(&q, &text_index, &hybrid_index, &p, &corpus, 2).unwrap();
        assert_eq!(u.len(), 4);
    }

    #[test]
    fn kc_thresholds_apply_to_both_sims() {
        let p = HashEmbedder::new(256);
        let q = query("angles in a triangle sum").with_kc_labels(["triangle angles"]);
        let cands = vec![
            entry("good", "angles in a triangle sum to 180 triangle angles"),
            entry("off", "angles in a triangle sum quadratic roots formula"),
        ];
        let screened = kc_screen(&cands, &q, &p, 0.3, 0.45, true).unwrap();
        for (i, kept) in &screened {
            assert_eq!(*kept, i.sim_query >= 0.3 && i.sim_kc >= 0.45);
        }
        let set = kc_filter(&cands, &q, &p, 0.3, 0.45, true).unwrap();
        assert!(set.ids().contains(&"good"));
        assert!(kc_filter(&[], &q, &p, 0.8, 0.75, true).unwrap().is_empty());
    }

    #[test]
    fn kc_filter_requires_labels_when_enabled() {
        let p = HashEmbedder::new(64);
        let q = query("no labels here");
        let err = kc_filter(&[entry("a", "x")], &q, &p, 0.1, 0.1, true).unwrap_err();
        assert_eq!(err, RetrievalError::NoKcLabels("q1".into()));
        assert!(kc_filter(&[entry("a", "no labels")], &q, &p, 0.1, 0.1, false).is_ok());
    }

    fn set_of(entries: &[(&str, &str)], q: &MultimodalQuery, p: &HashEmbedder) -> InsightSet {
        let es: Vec<_> = entries.iter().map(|(i, t)| entry(i, t)).collect();
        kc_filter(&es, q, p, -1.0, -1.0, false).unwrap()
    }

    #[test]
    fn active_retrieve_clamps_and_is_deterministic() {
        let p = HashEmbedder::new(256);
        let q = query("solve the puzzle");
        let set = set_of(&[("r1", "solve puzzle quickly"), ("r2", "puzzle pieces corner")], &q, &p);
        let path = ReasoningPath::empty();
        let got = active_retrieve(&set, &q, &path, &p, 3).unwrap();
        assert_eq!(got.len(), 2);
        assert!(active_retrieve(&set, &q, &path, &p, 0).unwrap().is_empty());
        assert_eq!(got, active_retrieve(&set, &q, &path, &p, 3).unwrap());
        // empty path ranks exactly as the stored sim_query order
        let ids: Vec<_> = got.iter().map(|i| i.entry.id.clone()).collect();
        assert_eq!(ids, set.ids());
    }

    #[test]
    fn appended_step_promotes_matching_insight() {
        let p = HashEmbedder::new(256);
        let q = query("solve the puzzle");
        let set = set_of(
            &[("r1", "solve the puzzle by counting"), ("r2", "corner pieces edge matching strategy")],
            &q,
            &p,
        );
        let before = active_retrieve(&set, &q, &ReasoningPath::empty(), &p, 2).unwrap();
        assert_eq!(before[0].entry.id, "r1");
        let step = ReasoningStep::new("use corner pieces edge matching strategy corner pieces edge").unwrap();
        let path = extend_path(&ReasoningPath::empty(), step).unwrap();
        let after = active_retrieve(&set, &q, &path, &p, 2).unwrap();
        assert_eq!(after[0].entry.id, "r2");
    }
}
