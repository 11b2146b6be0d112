//! Embedding providers, hybrid-modal fusion, the exact dot-product index,
//! corpus ingestion and n-gram contamination screening.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{derive_seed, stable_hash, MultimodalQuery};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IndexError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("duplicate corpus id `{0}`")]
    DuplicateId(String),
    #[error("embedding failed: {0}")]
    EmbedFailure(String),
    #[error("non-finite embedding value")]
    NonFinite,
    #[error("file not found: {0}")]
    FileNotFound(String),
    #[error("every line was rejected ({0} rejects)")]
    AllLinesRejected(usize),
    #[error("test set is empty")]
    EmptyTestset,
    #[error("io error: {0}")]
    Io(String),
}

/// A dense vector. All entries are finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self, IndexError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(IndexError::NonFinite);
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Embedding) -> Result<f64, IndexError> {
        check_dim(self.dim(), other.dim())?;
        Ok(dot(&self.0, &other.0))
    }

    /// Cosine similarity; zero if either side is the zero vector.
    pub fn cosine(&self, other: &Embedding) -> Result<f64, IndexError> {
        let d = self.dot(other)?;
        let n = self.norm() * other.norm();
        if n == 0.0 {
            return Ok(0.0);
        }
        Ok((d / n).clamp(-1.0, 1.0))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_dim(expected: usize, got: usize) -> Result<(), IndexError> {
    if expected != got {
        return Err(IndexError::DimMismatch { expected, got });
    }
    Ok(())
}

/// Text and image encoder pair sharing one vector space. Implementations
/// must be deterministic for identical inputs.
pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;
    fn embed_text(&self, text: &str) -> Result<Embedding, IndexError>;
    fn embed_image(&self, image_ref: &str) -> Result<Embedding, IndexError>;
}

/// Lowercased alphanumeric tokens; everything else separates tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Signed feature hashing of `text` into `dim` buckets, L2-normalized.
/// Text without tokens maps to the zero vector.
pub fn hash_embed_text(text: &str, dim: usize) -> Embedding {
    assert!(dim >= 2, "hash embedding needs dim >= 2");
    let mut v = vec![0.0; dim];
    for token in tokenize(text) {
        let h = stable_hash(&token);
        let bucket = (h % dim as u64) as usize;
        let sign = if derive_seed(h, &[1]) & 1 == 0 { 1.0 } else { -1.0 };
        v[bucket] += sign;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    Embedding(v)
}

/// Reference provider: feature hashing for text. Image references are
/// embedded by hashing the tokens of the identifier into the same space,
/// which stands in for a joint image/text encoder.
#[derive(Debug, Clone, Copy)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim >= 2, "hash embedding needs dim >= 2");
        Self { dim }
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_text(&self, text: &str) -> Result<Embedding, IndexError> {
        Ok(hash_embed_text(text, self.dim))
    }

    fn embed_image(&self, image_ref: &str) -> Result<Embedding, IndexError> {
        Ok(hash_embed_text(image_ref, self.dim))
    }
}

/// Hybrid encoding: mean of image and text vectors when an image is
/// present, otherwise the text vector unchanged.
pub fn fuse(img: Option<&Embedding>, txt: &Embedding) -> Result<Embedding, IndexError> {
    match img {
        None => Ok(txt.clone()),
        Some(img) => {
            check_dim(txt.dim(), img.dim())?;
            Ok(Embedding(
                img.0.iter().zip(&txt.0).map(|(a, b)| (a + b) / 2.0).collect(),
            ))
        }
    }
}

/// Fused encoding of an (optional image, text) pair through `provider`.
pub fn encode_pair(
    provider: &dyn EmbeddingProvider,
    image_ref: Option<&str>,
    text: &str,
) -> Result<Embedding, IndexError> {
    let txt = provider.embed_text(text)?;
    let img = image_ref.map(|r| provider.embed_image(r)).transpose()?;
    fuse(img.as_ref(), &txt)
}

/// One retrievable sample: question, solution and answer folded into `text`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub image_ref: Option<String>,
    pub source: String,
    #[serde(default)]
    pub kc_labels: Vec<String>,
}

/// Entries with an id lookup. Ids are unique.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    entries: Vec<CorpusEntry>,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(entries: Vec<CorpusEntry>) -> Result<Self, IndexError> {
        let mut by_id = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if by_id.insert(e.id.clone(), i).is_some() {
                return Err(IndexError::DuplicateId(e.id.clone()));
            }
        }
        Ok(Self { entries, by_id })
    }

    pub fn entries(&self) -> &[CorpusEntry] {
        &self.entries
    }

    pub fn get(&self, id: &str) -> Option<&CorpusEntry> {
        self.by_id.get(id).map(|&i| &self.entries[i])
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Exact (exhaustive) dot-product index. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorIndex {
    dim: usize,
    ids: Vec<String>,
    vectors: Vec<Embedding>,
}

/// Scores are parallelized above this many entries.
const PAR_THRESHOLD: usize = 4096;

impl VectorIndex {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ids: Vec::new(),
            vectors: Vec::new(),
        }
    }

    pub fn from_parts(dim: usize, items: Vec<(String, Embedding)>) -> Result<Self, IndexError> {
        let mut index = Self::new(dim);
        let mut seen = HashSet::with_capacity(items.len());
        for (id, v) in items {
            check_dim(dim, v.dim())?;
            if !seen.insert(id.clone()) {
                return Err(IndexError::DuplicateId(id));
            }
            index.ids.push(id);
            index.vectors.push(v);
        }
        Ok(index)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Embedding)> {
        self.ids.iter().map(String::as_str).zip(&self.vectors)
    }

    pub fn vector(&self, id: &str) -> Option<&Embedding> {
        self.ids.iter().position(|i| i == id).map(|p| &self.vectors[p])
    }
}

/// Index every entry under its fused image/text encoding.
pub fn build_index(
    entries: &[CorpusEntry],
    provider: &dyn EmbeddingProvider,
) -> Result<VectorIndex, IndexError> {
    let items = entries
        .iter()
        .map(|e| Ok((e.id.clone(), encode_pair(provider, e.image_ref.as_deref(), &e.text)?)))
        .collect::<Result<Vec<_>, IndexError>>()?;
    VectorIndex::from_parts(provider.dim(), items)
}

/// Index every entry under its text encoding only (the text-to-text route).
pub fn build_text_index(
    entries: &[CorpusEntry],
    provider: &dyn EmbeddingProvider,
) -> Result<VectorIndex, IndexError> {
    let items = entries
        .iter()
        .map(|e| Ok((e.id.clone(), provider.embed_text(&e.text)?)))
        .collect::<Result<Vec<_>, IndexError>>()?;
    VectorIndex::from_parts(provider.dim(), items)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub id: String,
    pub score: f64,
}

/// Heap entry ordered so the *worst* hit is the maximum: lower score is
/// worse, and on equal score the larger id is worse.
struct Worst<'a> {
    score: f64,
    id: &'a str,
}

impl PartialEq for Worst<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Worst<'_> {}
impl PartialOrd for Worst<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Worst<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then_with(|| self.id.cmp(other.id))
    }
}

/// The `k` highest dot-product hits, descending by score, ties by ascending id.
pub fn top_k(index: &VectorIndex, query: &Embedding, k: usize) -> Result<Vec<Hit>, IndexError> {
    check_dim(index.dim, query.dim())?;
    if k == 0 || index.is_empty() {
        return Ok(Vec::new());
    }
    let q = query.values();
    let scores: Vec<f64> = if index.len() >= PAR_THRESHOLD {
        index.vectors.par_iter().map(|v| dot(v.values(), q)).collect()
    } else {
        index.vectors.iter().map(|v| dot(v.values(), q)).collect()
    };
    let mut heap: BinaryHeap<Worst> = BinaryHeap::with_capacity(k + 1);
    for (id, &score) in index.ids.iter().zip(&scores) {
        let cand = Worst { score, id };
        if heap.len() < k {
            heap.push(cand);
        } else if let Some(worst) = heap.peek() {
            if cand < *worst {
                heap.pop();
                heap.push(cand);
            }
        }
    }
    // ascending by "worseness" = best first
    Ok(heap
        .into_sorted_vec()
        .into_iter()
        .map(|w| Hit {
            id: w.id.to_string(),
            score: w.score,
        })
        .collect())
}

/// Split `doc` into consecutive, disjoint runs of `size` characters; the last
/// run may be shorter.
pub fn chunk_text(doc: &str, size: usize) -> Vec<String> {
    assert!(size >= 1, "chunk size must be positive");
    let chars: Vec<char> = doc.chars().collect();
    chars.chunks(size).map(|c| c.iter().collect()).collect()
}

/// Split every entry into `size`-character passages. Multi-passage entries
/// get ids `<id>#<n>`.
pub fn chunk_corpus(entries: &[CorpusEntry], size: usize) -> Vec<CorpusEntry> {
    let mut out = Vec::with_capacity(entries.len());
    for e in entries {
        let chunks = chunk_text(&e.text, size);
        if chunks.len() <= 1 {
            out.push(e.clone());
            continue;
        }
        for (n, text) in chunks.into_iter().enumerate() {
            out.push(CorpusEntry {
                id: format!("{}#{n}", e.id),
                text,
                ..e.clone()
            });
        }
    }
    out
}

fn contamination_tokens(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| {
            t.chars()
                .filter(|c| c.is_alphanumeric())
                .flat_map(char::to_lowercase)
                .collect::<String>()
        })
        .filter(|t| !t.is_empty())
        .collect()
}

/// True iff `a` and `b` share a contiguous run of `n` normalized tokens.
pub fn ngram_contaminated(a: &str, b: &str, n: usize) -> bool {
    assert!(n >= 1, "n-gram size must be positive");
    let ta = contamination_tokens(a);
    let tb = contamination_tokens(b);
    if ta.len() < n || tb.len() < n {
        return false;
    }
    let grams: HashSet<&[String]> = ta.windows(n).collect();
    tb.windows(n).any(|w| grams.contains(w))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceRate {
    pub entries: usize,
    pub contaminated: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContaminationReport {
    pub n: usize,
    pub rate: f64,
    pub contaminated_ids: Vec<String>,
    pub per_source: BTreeMap<String, SourceRate>,
}

/// Fraction of corpus entries sharing an `n`-gram with any test query,
/// overall and per source.
pub fn contamination_rate(
    corpus: &[CorpusEntry],
    testset: &[MultimodalQuery],
    n: usize,
) -> Result<ContaminationReport, IndexError> {
    assert!(n >= 1, "n-gram size must be positive");
    if testset.is_empty() {
        return Err(IndexError::EmptyTestset);
    }
    let test_tokens: Vec<Vec<String>> = testset.iter().map(|q| contamination_tokens(&q.text)).collect();
    let grams: HashSet<&[String]> = test_tokens
        .iter()
        .filter(|t| t.len() >= n)
        .flat_map(|t| t.windows(n))
        .collect();

    let flags: Vec<bool> = corpus
        .par_iter()
        .map(|e| {
            let toks = contamination_tokens(&e.text);
            toks.len() >= n && toks.windows(n).any(|w| grams.contains(w))
        })
        .collect();

    let mut per_source: BTreeMap<String, SourceRate> = BTreeMap::new();
    let mut contaminated_ids = Vec::new();
    for (e, &hit) in corpus.iter().zip(&flags) {
        let s = per_source.entry(e.source.clone()).or_insert(SourceRate {
            entries: 0,
            contaminated: 0,
            rate: 0.0,
        });
        s.entries += 1;
        if hit {
            s.contaminated += 1;
            contaminated_ids.push(e.id.clone());
        }
    }
    for s in per_source.values_mut() {
        s.rate = s.contaminated as f64 / s.entries as f64;
    }
    let rate = if corpus.is_empty() {
        0.0
    } else {
        contaminated_ids.len() as f64 / corpus.len() as f64
    };
    Ok(ContaminationReport {
        n,
        rate,
        contaminated_ids,
        per_source,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reject {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub entries: Vec<CorpusEntry>,
    pub rejects: Vec<Reject>,
}

/// Parse a JSONL corpus. Malformed lines are collected as rejects; the call
/// fails only when no line survives.
pub fn ingest_jsonl(path: &Path) -> Result<Ingested, IndexError> {
    if !path.exists() {
        return Err(IndexError::FileNotFound(path.display().to_string()));
    }
    let text = fs::read_to_string(path).map_err(|e| IndexError::Io(e.to_string()))?;
    ingest_str(&text)
}

pub fn ingest_str(text: &str) -> Result<Ingested, IndexError> {
    let mut entries = Vec::new();
    let mut rejects = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let reject = |reason: String| Reject { line: i + 1, reason };
        match serde_json::from_str::<CorpusEntry>(line) {
            Err(e) => rejects.push(reject(e.to_string())),
            Ok(e) if e.id.is_empty() => rejects.push(reject("empty id".into())),
            Ok(e) if e.text.trim().is_empty() => rejects.push(reject("empty text".into())),
            Ok(e) if !seen.insert(e.id.clone()) => {
                rejects.push(reject(format!("duplicate id `{}`", e.id)))
            }
            Ok(e) => entries.push(e),
        }
    }
    if entries.is_empty() {
        return Err(IndexError::AllLinesRejected(rejects.len()));
    }
    Ok(Ingested { entries, rejects })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn emb(v: &[f64]) -> Embedding {
        Embedding::new(v.to_vec()).unwrap()
    }

    fn entry(id: &str, text: &str) -> CorpusEntry {
        CorpusEntry {
            id: id.into(),
            text: text.into(),
            image_ref: None,
            source: "s".into(),
            kc_labels: vec![],
        }
    }

    #[test]
    fn hash_embed_is_deterministic_and_normalized() {
        let a = hash_embed_text("Triangle angle sum", 64);
        assert_eq!(a, hash_embed_text("triangle, angle SUM", 64));
        assert!((a.norm() - 1.0).abs() < 1e-12);
        assert_eq!(hash_embed_text("", 64).norm(), 0.0);
        assert_eq!(hash_embed_text(" ,. ", 64).norm(), 0.0);
    }

    #[test]
    fn hash_embed_tracks_token_overlap() {
        let q = hash_embed_text("triangle angle sum", 256);
        let near = hash_embed_text("triangle angle theorem", 256);
        let far = hash_embed_text("stock market prices", 256);
        assert!(q.cosine(&near).unwrap() > q.cosine(&far).unwrap());
    }

    #[test]
    fn fuse_cases() {
        assert_eq!(fuse(Some(&emb(&[1.0, 0.0])), &emb(&[0.0, 1.0])).unwrap(), emb(&[0.5, 0.5]));
        assert_eq!(fuse(None, &emb(&[0.3, 0.4])).unwrap(), emb(&[0.3, 0.4]));
        let v = emb(&[0.2, -0.7, 1.5]);
        assert_eq!(fuse(Some(&v), &v).unwrap(), v);
        assert_eq!(
            fuse(Some(&emb(&[1.0])), &emb(&[1.0, 2.0])).unwrap_err(),
            IndexError::DimMismatch { expected: 2, got: 1 }
        );
    }

    #[test]
    fn fuse_is_symmetric_in_value() {
        let a = emb(&[0.1, 0.9]);
        let b = emb(&[-0.4, 0.3]);
        assert_eq!(fuse(Some(&a), &b).unwrap(), fuse(Some(&b), &a).unwrap());
    }

    #[test]
    fn build_index_sizes_and_determinism() {
        let p = HashEmbedder::new(32);
        assert!(build_index(&[], &p).unwrap().is_empty());
        let es = vec![entry("a", "x y"), entry("b", "y z"), entry("c", "z w")];
        let i1 = build_index(&es, &p).unwrap();
        assert_eq!(i1.len(), 3);
        assert_eq!(i1.dim(), 32);
        assert_eq!(i1, build_index(&es, &p).unwrap());
        let dup = vec![entry("a", "x"), entry("a", "y")];
        assert_eq!(build_index(&dup, &p).unwrap_err(), IndexError::DuplicateId("a".into()));
    }

    #[test]
    fn top_k_basics() {
        let idx = VectorIndex::from_parts(
            2,
            vec![("e1".into(), emb(&[1.0, 0.0])), ("e2".into(), emb(&[0.0, 1.0]))],
        )
        .unwrap();
        let hits = top_k(&idx, &emb(&[1.0, 0.0]), 1).unwrap();
        assert_eq!(hits, vec![Hit { id: "e1".into(), score: 1.0 }]);
        assert!(top_k(&idx, &emb(&[1.0, 0.0]), 0).unwrap().is_empty());
        assert_eq!(top_k(&idx, &emb(&[1.0, 1.0]), 5).unwrap().len(), 2);
        assert!(matches!(
            top_k(&idx, &emb(&[1.0]), 1),
            Err(IndexError::DimMismatch { .. })
        ));
    }

    #[test]
    fn top_k_ties_break_by_id() {
        let idx = VectorIndex::from_parts(
            1,
            vec![("b".into(), emb(&[1.0])), ("a".into(), emb(&[1.0])), ("c".into(), emb(&[1.0]))],
        )
        .unwrap();
        let ids: Vec<_> = top_k(&idx, &emb(&[1.0]), 2).unwrap().into_iter().map(|h| h.id).collect();
        assert_eq!(ids, vec!["a", "b"]);
    }

    #[test]
    fn chunking() {
        let doc: String = "x".repeat(600);
        let lens: Vec<_> = chunk_text(&doc, 256).iter().map(|c| c.chars().count()).collect();
        assert_eq!(lens, vec![256, 256, 88]);
        assert_eq!(chunk_text(&"y".repeat(256), 256).len(), 1);
        assert!(chunk_text("", 256).is_empty());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn chunks_concatenate_to_input(doc in "\\PC{0,300}", size in 1usize..40) {
            let chunks = chunk_text(&doc, size);
            prop_assert_eq!(chunks.concat(), doc);
            if let Some((_, init)) = chunks.split_last() {
                for c in init {
                    prop_assert_eq!(c.chars().count(), size);
                }
            }
        }
    }

    #[test]
    fn chunk_corpus_suffixes_ids() {
        let out = chunk_corpus(&[entry("w", &"ab".repeat(5)), entry("s", "tiny")], 4);
        let ids: Vec<_> = out.iter().map(|e| e.id.as_str()).collect();
        assert_eq!(ids, vec!["w#0", "w#1", "w#2", "s"]);
    }

    #[test]
    fn ngram_basic_cases() {
        let twenty: String = (0..20).map(|i| format!("tok{i} ")).collect();
        assert!(ngram_contaminated(&twenty, &twenty, 13));
        assert!(!ngram_contaminated("a b c", "d e f", 1));
        assert!(ngram_contaminated("The cat.", "the CAT", 2));
        let short = "a b c";
        assert!(!ngram_contaminated(short, short, 4));
    }

    #[test]
    fn contamination_rate_cases() {
        let q = |t: &str| MultimodalQuery::new("q", t).unwrap();
        let long: String = (0..15).map(|i| format!("w{i} ")).collect();
        let corpus = vec![entry("a", &long), entry("b", "something entirely different here")];
        let r = contamination_rate(&corpus, &[q("unrelated words only")], 13).unwrap();
        assert_eq!(r.rate, 0.0);
        let r = contamination_rate(&corpus[..1], &[q(&long)], 13).unwrap();
        assert_eq!(r.rate, 1.0);
        assert_eq!(r.per_source["s"].contaminated, 1);
        assert_eq!(contamination_rate(&corpus, &[], 13).unwrap_err(), IndexError::EmptyTestset);
    }

    #[test]
    fn ingest_cases() {
        let good = r#"{"id":"a","text":"t1","image_ref":null,"source":"s","kc_labels":[],"extra":1}
{"id":"b","text":"t2","image_ref":"img.png","source":"s","kc_labels":["x"]}
{"id":"c","text":"t3","source":"s"}"#;
        let r = ingest_str(good).unwrap();
        assert_eq!((r.entries.len(), r.rejects.len()), (3, 0));
        assert_eq!(r.entries[1].image_ref.as_deref(), Some("img.png"));

        let mixed = "{\"id\":\"a\",\"text\":\"t\",\"source\":\"s\"}\nnot json\n{\"id\":\"b\",\"text\":\"u\",\"source\":\"s\"}\n";
        let r = ingest_str(mixed).unwrap();
        assert_eq!((r.entries.len(), r.rejects.len()), (2, 1));
        assert_eq!(r.rejects[0].line, 2);

        assert_eq!(ingest_str("").unwrap_err(), IndexError::AllLinesRejected(0));
        assert!(matches!(
            ingest_jsonl(Path::new("/definitely/missing.jsonl")),
            Err(IndexError::FileNotFound(_))
        ));
    }
}
