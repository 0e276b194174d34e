//! Text embeddings, cosine similarity and the tag-based workflow/query score.

mod tags;

pub use tags::{generate_tags, parse_tags, structural_tags, TagPrompt};

use std::collections::HashMap;
use std::sync::RwLock;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::genome::WorkflowGenome;
use crate::provider::transport::{RetryPolicy, Sleeper, ThreadSleeper, Transport};

pub const DEFAULT_DIM: usize = 384;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum EmbedError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("embedding provider failed after {attempts} attempt(s): {message}")]
    Provider { attempts: u32, message: String },
}

/// A unit-norm embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    /// Normalize `values`; rejects zero, empty and non-finite input.
    pub fn normalized(values: Vec<f64>) -> Result<Self, EmbedError> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::InvalidInput(
                "embedding must be finite and nonempty".into(),
            ));
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(EmbedError::InvalidInput(
                "zero vector cannot be normalized".into(),
            ));
        }
        Ok(Self(values.into_iter().map(|v| v / norm).collect()))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

pub fn cosine(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64, EmbedError> {
    if u.dim() != v.dim() {
        return Err(EmbedError::InvalidInput(format!(
            "dimension mismatch: {} vs {}",
            u.dim(),
            v.dim()
        )));
    }
    let dot: f64 = u.0.iter().zip(&v.0).map(|(a, b)| a * b).sum();
    Ok(dot.clamp(-1.0, 1.0))
}

/// Sum of cosines between each tag vector of `genome` and `query`.
pub fn similarity_score(
    genome: &WorkflowGenome,
    query: &EmbeddingVector,
) -> Result<f64, EmbedError> {
    let vectors = genome.tag_vectors.as_ref().ok_or_else(|| {
        EmbedError::InvalidState(format!("{} has no tag vectors", genome.workflow_id))
    })?;
    vectors.iter().map(|t| cosine(t, query)).sum()
}

pub trait Embedder: Send + Sync {
    /// Identifies the backend and its settings for caching.
    fn backend_id(&self) -> String;
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError>;
}

impl<E: Embedder + ?Sized> Embedder for &E {
    fn backend_id(&self) -> String {
        (**self).backend_id()
    }
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        (**self).embed(text)
    }
}

impl<E: Embedder + ?Sized> Embedder for Box<E> {
    fn backend_id(&self) -> String {
        (**self).backend_id()
    }
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        (**self).embed(text)
    }
}

fn checked_text(text: &str) -> Result<&str, EmbedError> {
    let t = text.trim();
    if t.is_empty() {
        Err(EmbedError::InvalidInput("text is empty".into()))
    } else {
        Ok(t)
    }
}

/// Offline embedder: signed feature hashing of per-token character
/// trigrams (plus the whole token) with term-frequency weights.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dim: usize,
}

impl HashingEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }

    fn add_feature(&self, acc: &mut [f64], feature: &[u8]) {
        let h = fnv1a(feature);
        let bucket = (h % self.dim as u64) as usize;
        acc[bucket] += if h >> 63 == 0 { 1.0 } else { -1.0 };
    }
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_DIM)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl Embedder for HashingEmbedder {
    fn backend_id(&self) -> String {
        format!("hashing-{}", self.dim)
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let text = checked_text(text)?.to_lowercase();
        let mut acc = vec![0.0; self.dim];
        for token in text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
        {
            let mut word = Vec::with_capacity(token.len() + 2);
            word.extend_from_slice(b"w:");
            word.extend_from_slice(token.as_bytes());
            self.add_feature(&mut acc, &word);

            let padded: Vec<char> = std::iter::once('#')
                .chain(token.chars())
                .chain(std::iter::once('#'))
                .collect();
            for gram in padded.windows(3) {
                let g: String = gram.iter().collect();
                self.add_feature(&mut acc, g.as_bytes());
            }
        }
        EmbeddingVector::normalized(acc).map_err(|_| {
            EmbedError::InvalidInput(format!("text {text:?} has no embeddable tokens"))
        })
    }
}

/// Client for a remote sentence-embedding service:
/// `{model, input: [text]} -> {data: [{embedding: [..]}]}`.
pub struct RemoteEmbedder<T> {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    transport: T,
    retry: RetryPolicy,
    sleeper: Box<dyn Sleeper>,
}

impl<T: Transport> RemoteEmbedder<T> {
    pub fn new(
        endpoint: impl Into<String>,
        model: impl Into<String>,
        api_key: Option<String>,
        transport: T,
    ) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key,
            transport,
            retry: RetryPolicy::default(),
            sleeper: Box::new(ThreadSleeper),
        }
    }

    pub fn with_sleeper(mut self, sleeper: Box<dyn Sleeper>) -> Self {
        self.sleeper = sleeper;
        self
    }
}

impl<T: Transport> Embedder for RemoteEmbedder<T> {
    fn backend_id(&self) -> String {
        format!("remote:{}:{}", self.endpoint, self.model)
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let text = checked_text(text)?;
        let body = json!({"model": self.model, "input": [text]});
        let reply = self
            .retry
            .run(self.sleeper.as_ref(), || {
                self.transport
                    .post_json(&self.endpoint, self.api_key.as_deref(), &body)
            })
            .map_err(|(attempts, e)| EmbedError::Provider {
                attempts,
                message: e.message,
            })?;
        let values: Vec<f64> = reply
            .pointer("/data/0/embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| EmbedError::Provider {
                attempts: 1,
                message: "missing data[0].embedding".into(),
            })?
            .iter()
            .map(|v| {
                v.as_f64().ok_or_else(|| EmbedError::Provider {
                    attempts: 1,
                    message: "non-numeric embedding".into(),
                })
            })
            .collect::<Result<_, _>>()?;
        EmbeddingVector::normalized(values)
    }
}

/// Memoizes another embedder, keyed by (backend id, trimmed text).
pub struct CachedEmbedder<E> {
    inner: E,
    cache: RwLock<HashMap<(String, String), EmbeddingVector>>,
}

impl<E: Embedder> CachedEmbedder<E> {
    pub fn new(inner: E) -> Self {
        Self {
            inner,
            cache: RwLock::new(HashMap::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.cache.read().expect("embedding cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl<E: Embedder> Embedder for CachedEmbedder<E> {
    fn backend_id(&self) -> String {
        self.inner.backend_id()
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let key = (self.inner.backend_id(), checked_text(text)?.to_string());
        if let Some(v) = self
            .cache
            .read()
            .expect("embedding cache poisoned")
            .get(&key)
        {
            return Ok(v.clone());
        }
        let v = self.inner.embed(text)?;
        self.cache
            .write()
            .expect("embedding cache poisoned")
            .insert(key, v.clone());
        Ok(v)
    }
}

/// Embed every tag of `genome` and attach the vectors.
pub fn attach_tag_vectors(
    genome: &mut WorkflowGenome,
    embedder: &dyn Embedder,
) -> Result<(), EmbedError> {
    let vectors = genome
        .tags
        .iter()
        .map(|t| embedder.embed(t))
        .collect::<Result<Vec<_>, _>>()?;
    genome.tag_vectors = Some(vectors);
    Ok(())
}
