//! Retrieval pipeline: corpus chunking, pluggable text embedding with a
//! deterministic reference backend, negative-squared-distance similarity,
//! exact top-k search and context aggregation. Generation is an interface
//! only; the bundled backend just echoes its input for pipeline tests.

mod index_file;

pub use index_file::{load_index, save_index};

use serde::Serialize;

/// A contiguous text segment of one corpus document. Ids are dense `1..=N`
/// in document order, then offset order; spans are char offsets into the
/// source document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Chunk {
    pub id: usize,
    pub doc_id: String,
    pub text: String,
    pub span: (usize, usize),
}

/// Dense embedding; all vectors in one index share the same dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Chunks plus their embeddings, aligned by position.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalIndex {
    pub chunks: Vec<Chunk>,
    pub vectors: Vec<EmbeddingVector>,
    pub backend_id: String,
    pub dim: usize,
}

impl RetrievalIndex {
    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }
}

/// Query plus retrieved chunks in canonical order and their aggregation
/// into a single prompt-ready text.
#[derive(Debug, Clone, Serialize)]
pub struct ContextBundle {
    pub query: String,
    pub retrieved: Vec<(Chunk, f64)>,
    pub context_text: String,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RetrievalError {
    #[error("corpus contains no text")]
    EmptyCorpus,
    #[error("retrieval index is empty")]
    EmptyIndex,
    #[error("embedding dimensions differ: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("bad index file: {0}")]
    BadIndexFile(String),
    #[error("i/o error: {0}")]
    Io(String),
}

/// Sliding-window chunking parameters, in characters.
#[derive(Debug, Clone, Copy)]
pub struct ChunkParams {
    pub window_chars: usize,
    pub overlap_chars: usize,
}

impl Default for ChunkParams {
    fn default() -> Self {
        ChunkParams { window_chars: 1200, overlap_chars: 200 }
    }
}

/// Splits each document into windows of `window_chars` advancing by
/// `window - overlap`; the last window may be short but never empty.
/// Offsets and lengths count chars, so multi-byte text stays intact.
pub fn chunk_corpus(
    docs: &[(String, String)],
    params: ChunkParams,
) -> Result<Vec<Chunk>, RetrievalError> {
    if params.window_chars == 0 || params.overlap_chars >= params.window_chars {
        return Err(RetrievalError::InvalidParams(format!(
            "window_chars ({}) must exceed overlap_chars ({})",
            params.window_chars, params.overlap_chars
        )));
    }
    if docs.is_empty() {
        return Err(RetrievalError::EmptyCorpus);
    }
    let stride = params.window_chars - params.overlap_chars;
    let mut chunks = Vec::new();
    for (doc_id, text) in docs {
        let char_count = text.chars().count();
        if char_count == 0 {
            continue;
        }
        // Char-offset -> byte-offset table, with a sentinel for the end.
        let mut byte_of: Vec<usize> = text.char_indices().map(|(b, _)| b).collect();
        byte_of.push(text.len());

        let mut offset = 0usize;
        loop {
            let end = (offset + params.window_chars).min(char_count);
            chunks.push(Chunk {
                id: chunks.len() + 1,
                doc_id: doc_id.clone(),
                text: text[byte_of[offset]..byte_of[end]].to_string(),
                span: (offset, end),
            });
            if offset + params.window_chars >= char_count {
                break;
            }
            offset += stride;
        }
    }
    if chunks.is_empty() {
        return Err(RetrievalError::EmptyCorpus);
    }
    Ok(chunks)
}

/// Text-to-vector backend. The reference implementation is deterministic;
/// external services only promise the dimension contract.
pub trait EmbeddingBackend {
    fn dim(&self) -> usize;
    /// Stable fingerprint stored in indexes to detect backend mismatches.
    fn backend_id(&self) -> String;
    fn embed(&self, text: &str) -> Result<EmbeddingVector, RetrievalError>;
}

/// Reference embedding: tokens hashed into `dim` signed buckets, then
/// L2-normalized. Tokenization lowercases and splits on non-alphanumeric
/// chars. The all-zero vector (no tokens) is legal and skips
/// normalization.
#[derive(Debug, Clone)]
pub struct HashedBagEmbedder {
    pub dim: usize,
}

impl Default for HashedBagEmbedder {
    fn default() -> Self {
        HashedBagEmbedder { dim: 256 }
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl EmbeddingBackend for HashedBagEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn backend_id(&self) -> String {
        format!("hashed-bag-fnv1a-{}", self.dim)
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, RetrievalError> {
        let mut values = vec![0.0; self.dim];
        for token in text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
        {
            let lowered = token.to_lowercase();
            let h = fnv1a64(lowered.as_bytes());
            let bucket = (h % self.dim as u64) as usize;
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            values[bucket] += sign;
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in &mut values {
                *v /= norm;
            }
        }
        Ok(EmbeddingVector { values })
    }
}

/// A backend placeholder for unconfigured external services; every call
/// fails with `BackendUnavailable`.
#[derive(Debug, Clone)]
pub struct UnavailableBackend {
    pub reason: String,
}

impl EmbeddingBackend for UnavailableBackend {
    fn dim(&self) -> usize {
        0
    }

    fn backend_id(&self) -> String {
        "unavailable".into()
    }

    fn embed(&self, _text: &str) -> Result<EmbeddingVector, RetrievalError> {
        Err(RetrievalError::BackendUnavailable(self.reason.clone()))
    }
}

/// Similarity score: negative squared Euclidean distance. Zero iff the
/// vectors are identical, negative otherwise.
pub fn similarity(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64, RetrievalError> {
    if u.dim() != v.dim() {
        return Err(RetrievalError::DimMismatch { left: u.dim(), right: v.dim() });
    }
    let mut sum = 0.0;
    for (a, b) in u.values.iter().zip(v.values.iter()) {
        let d = a - b;
        sum += d * d;
    }
    Ok(-sum)
}

/// Embeds every chunk with `backend` and builds the index.
pub fn build_index(
    chunks: Vec<Chunk>,
    backend: &dyn EmbeddingBackend,
) -> Result<RetrievalIndex, RetrievalError> {
    if chunks.is_empty() {
        return Err(RetrievalError::EmptyCorpus);
    }
    let mut vectors = Vec::with_capacity(chunks.len());
    for chunk in &chunks {
        vectors.push(backend.embed(&chunk.text)?);
    }
    Ok(RetrievalIndex {
        dim: backend.dim(),
        backend_id: backend.backend_id(),
        chunks,
        vectors,
    })
}

fn rank_order(a: &(usize, f64), b: &(usize, f64)) -> std::cmp::Ordering {
    b.1.partial_cmp(&a.1)
        .unwrap_or(std::cmp::Ordering::Equal)
        .then_with(|| a.0.cmp(&b.0))
}

/// The `min(k, N)` chunks most similar to `query_vec`, sorted by
/// descending score with ascending chunk id on ties — exactly what a full
/// linear scan and sort would return, computed with a partial selection.
pub fn top_k(
    query_vec: &EmbeddingVector,
    index: &RetrievalIndex,
    k: usize,
) -> Result<Vec<(Chunk, f64)>, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::InvalidParams("k must be >= 1".into()));
    }
    if index.is_empty() {
        return Err(RetrievalError::EmptyIndex);
    }
    if query_vec.dim() != index.dim {
        return Err(RetrievalError::DimMismatch { left: query_vec.dim(), right: index.dim });
    }
    let mut scored: Vec<(usize, f64)> = Vec::with_capacity(index.len());
    for (pos, v) in index.vectors.iter().enumerate() {
        scored.push((index.chunks[pos].id, similarity(query_vec, v)?));
    }
    let k_eff = k.min(scored.len());
    if k_eff < scored.len() {
        scored.select_nth_unstable_by(k_eff - 1, rank_order);
        scored.truncate(k_eff);
    }
    scored.sort_by(rank_order);
    Ok(scored
        .into_iter()
        .map(|(id, score)| (index.chunks[id - 1].clone(), score))
        .collect())
}

/// Joins the query and the retrieved chunks (re-sorted to canonical order)
/// into one deterministic context text. Each chunk gets a source header.
pub fn aggregate_context(query: &str, retrieved: Vec<(Chunk, f64)>) -> ContextBundle {
    let mut retrieved = retrieved;
    retrieved.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.0.id.cmp(&b.0.id))
    });
    let mut context_text = query.to_string();
    for (chunk, _) in &retrieved {
        context_text.push_str("\n\n");
        context_text.push_str(&format!("[chunk {} @ {}]\n", chunk.id, chunk.doc_id));
        context_text.push_str(&chunk.text);
    }
    ContextBundle { query: query.to_string(), retrieved, context_text }
}

/// Text generation over an aggregated context. Real model backends live
/// outside this crate; the bundled [`EchoGenerator`] exists so the full
/// pipeline can run and be tested offline.
pub trait GenerationBackend {
    fn generate(&self, bundle: &ContextBundle) -> Result<String, RetrievalError>;
}

/// Deterministic stub: echoes the query and the retrieved chunk ids.
#[derive(Debug, Clone, Default)]
pub struct EchoGenerator;

impl GenerationBackend for EchoGenerator {
    fn generate(&self, bundle: &ContextBundle) -> Result<String, RetrievalError> {
        let ids: Vec<String> =
            bundle.retrieved.iter().map(|(c, _)| c.id.to_string()).collect();
        Ok(format!(
            "[echo] query: {} | chunks: [{}] | context: {} chars",
            bundle.query,
            ids.join(","),
            bundle.context_text.chars().count()
        ))
    }
}

impl GenerationBackend for UnavailableBackend {
    fn generate(&self, _bundle: &ContextBundle) -> Result<String, RetrievalError> {
        Err(RetrievalError::BackendUnavailable(self.reason.clone()))
    }
}
