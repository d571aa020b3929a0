//! Project-context retrieval: a hashed bag-of-words embedder and an exact
//! cosine index.

use alloc::collections::{BTreeMap, BTreeSet, BinaryHeap};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_DIMENSION: usize = 256;
pub const DEFAULT_TOP_K: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocKind {
    CodeComment,
    DesignDoc,
    SecurityGuideline,
    HistoricalCode,
}

impl DocKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DocKind::CodeComment => "code_comment",
            DocKind::DesignDoc => "design_doc",
            DocKind::SecurityGuideline => "security_guideline",
            DocKind::HistoricalCode => "historical_code",
        }
    }

    /// `.md`/`.txt` files are design docs; everything else is code history.
    pub fn for_path(path: &str) -> Self {
        let lower = path.to_ascii_lowercase();
        if lower.ends_with(".md") || lower.ends_with(".txt") {
            DocKind::DesignDoc
        } else {
            DocKind::HistoricalCode
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [DocKind::CodeComment, DocKind::DesignDoc, DocKind::SecurityGuideline, DocKind::HistoricalCode]
            .into_iter()
            .find(|k| k.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextDoc {
    pub doc_id: String,
    pub source_path: String,
    pub kind: DocKind,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector(pub Vec<f64>);

impl EmbeddingVector {
    pub fn zeros(dimension: usize) -> Self {
        EmbeddingVector(vec![0.0; dimension])
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.0.iter().map(|v| v * v).sum())
    }

    pub fn normalized(mut self) -> Self {
        let norm = self.norm();
        if norm > 0.0 {
            for v in &mut self.0 {
                *v /= norm;
            }
        }
        self
    }
}

/// Cosine similarity; zero when either side is the zero vector.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// Something that maps text to a fixed-dimension vector. Remote embedding
/// services implement this as well as the local hashed embedder.
pub trait Embedder {
    fn dimension(&self) -> usize;
    fn embed(&self, text: &str) -> EmbeddingVector;
}

/// Lowercased alphanumeric runs.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(|t| t.to_lowercase())
}

/// FNV-1a bucket of a token.
pub fn bucket_of(token: &str, dimension: usize) -> usize {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in token.bytes() {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    (hash % dimension as u64) as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashedBagOfWords {
    pub dimension: usize,
}

impl Default for HashedBagOfWords {
    fn default() -> Self {
        HashedBagOfWords { dimension: DEFAULT_DIMENSION }
    }
}

impl Embedder for HashedBagOfWords {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> EmbeddingVector {
        let mut v = EmbeddingVector::zeros(self.dimension);
        for token in tokenize(text) {
            v.0[bucket_of(&token, self.dimension)] += 1.0;
        }
        v.normalized()
    }
}

pub fn embed(text: &str) -> EmbeddingVector {
    HashedBagOfWords::default().embed(text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub doc_id: String,
    pub score: f64,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RetrievalError {
    #[error("duplicate doc ids in batch: {0:?}")]
    DuplicateIds(Vec<String>),
    #[error("document {0} has empty text")]
    EmptyText(String),
    #[error("embedder produced dimension {got}, index uses {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone)]
struct Entry {
    doc: ContextDoc,
    vector: EmbeddingVector,
}

/// Exact-search cosine index. `retrieve` takes `&self` and may run from many
/// readers at once; `ingest` needs `&mut self`.
#[derive(Debug, Clone)]
pub struct Index<E = HashedBagOfWords> {
    embedder: E,
    entries: Vec<Entry>,
    by_id: BTreeMap<String, usize>,
}

impl Default for Index<HashedBagOfWords> {
    fn default() -> Self {
        Index::new(HashedBagOfWords::default())
    }
}

struct Ranked<'a> {
    score: f64,
    doc_id: &'a str,
    slot: usize,
}

// "Greater" means ranks earlier: higher score, then smaller doc id.
impl Ord for Ranked<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.score.total_cmp(&other.score).then_with(|| other.doc_id.cmp(self.doc_id))
    }
}

impl PartialOrd for Ranked<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Ranked<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Ranked<'_> {}

impl<E: Embedder> Index<E> {
    pub fn new(embedder: E) -> Self {
        Index { embedder, entries: Vec::new(), by_id: BTreeMap::new() }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, doc_id: &str) -> Option<(&ContextDoc, &EmbeddingVector)> {
        self.by_id.get(doc_id).map(|&i| (&self.entries[i].doc, &self.entries[i].vector))
    }

    pub fn docs(&self) -> impl Iterator<Item = &ContextDoc> {
        self.entries.iter().map(|e| &e.doc)
    }

    /// Adds `docs`, replacing any already-indexed doc with the same id. The
    /// batch is rejected as a whole on duplicate ids or empty text.
    pub fn ingest(&mut self, docs: Vec<ContextDoc>) -> Result<(), RetrievalError> {
        let mut seen = BTreeSet::new();
        let mut dupes = BTreeSet::new();
        for doc in &docs {
            if !seen.insert(doc.doc_id.as_str()) {
                dupes.insert(doc.doc_id.clone());
            }
        }
        if !dupes.is_empty() {
            return Err(RetrievalError::DuplicateIds(dupes.into_iter().collect()));
        }
        if let Some(doc) = docs.iter().find(|d| d.text.is_empty()) {
            return Err(RetrievalError::EmptyText(doc.doc_id.clone()));
        }
        let expected = self.embedder.dimension();
        let mut vectors = Vec::with_capacity(docs.len());
        for doc in &docs {
            let vector = self.embedder.embed(&doc.text);
            if vector.dimension() != expected {
                return Err(RetrievalError::DimensionMismatch { expected, got: vector.dimension() });
            }
            vectors.push(vector);
        }
        for (doc, vector) in docs.into_iter().zip(vectors) {
            match self.by_id.get(&doc.doc_id) {
                Some(&slot) => self.entries[slot] = Entry { doc, vector },
                None => {
                    self.by_id.insert(doc.doc_id.clone(), self.entries.len());
                    self.entries.push(Entry { doc, vector });
                }
            }
        }
        Ok(())
    }

    /// Top `k` documents by cosine similarity to `query`, best first, ties
    /// by ascending doc id.
    pub fn retrieve(&self, query: &str, k: usize) -> Vec<RetrievalHit> {
        if k == 0 || self.entries.is_empty() {
            return Vec::new();
        }
        let q = self.embedder.embed(query);
        // Min-heap of the best k seen so far.
        let mut heap: BinaryHeap<core::cmp::Reverse<Ranked<'_>>> = BinaryHeap::with_capacity(k + 1);
        for (slot, entry) in self.entries.iter().enumerate() {
            let ranked = Ranked { score: cosine(&q, &entry.vector), doc_id: &entry.doc.doc_id, slot };
            if heap.len() < k {
                heap.push(core::cmp::Reverse(ranked));
            } else if heap.peek().is_some_and(|worst| ranked > worst.0) {
                heap.pop();
                heap.push(core::cmp::Reverse(ranked));
            }
        }
        let mut best: Vec<Ranked<'_>> = heap.into_iter().map(|r| r.0).collect();
        best.sort_by(|a, b| b.cmp(a));
        best.into_iter()
            .map(|r| RetrievalHit {
                doc_id: r.doc_id.into(),
                score: r.score,
                text: self.entries[r.slot].doc.text.clone(),
            })
            .collect()
    }
}
