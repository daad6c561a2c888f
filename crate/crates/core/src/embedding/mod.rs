//! Text embedding sources: the provider trait, request/vector types, a
//! deterministic mock, an HTTP client for the embedding sidecar, and a
//! persistent vector cache.

mod cache;
mod cached;
mod mock;
mod remote;

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::scalar::Scalar;

pub use cache::{CacheStats, VectorCache};
pub use cached::CachedProvider;
pub use mock::{MockProvider, DEFAULT_MOCK_DIM};
pub use remote::{RemoteConfig, RemoteProvider, DEFAULT_MAX_IN_FLIGHT};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EmbeddingError {
    #[error("provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("span {start}..{end} is not a non-empty range within a {len}-character text")]
    BadSpan { start: usize, end: usize, len: usize },
    #[error("provider returned no output for non-empty input")]
    EmptyModelOutput,
    #[error("provider rejected request ({status}): {message}")]
    Rejected { status: u16, message: String },
    #[error("malformed provider response: {0}")]
    MalformedResponse(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("vector is empty or contains non-finite values")]
    InvalidVector,
    #[error("empty batch")]
    EmptyBatch,
    #[error("request {index} failed: {source}")]
    BatchItem {
        index: usize,
        #[source]
        source: Box<EmbeddingError>,
    },
}

/// Finite, non-empty embedding vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector<T = f64> {
    values: Vec<T>,
}

impl<T: Scalar> EmbeddingVector<T> {
    pub fn new(values: Vec<T>) -> Result<Self, EmbeddingError> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::InvalidVector);
        }
        Ok(EmbeddingVector { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn norm(&self) -> T {
        self.values.iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    pub fn scaled(&self, factor: T) -> Self {
        EmbeddingVector {
            values: self.values.iter().map(|&v| v * factor).collect(),
        }
    }

    /// Converts to another scalar width.
    pub fn cast<U: Scalar>(&self) -> EmbeddingVector<U> {
        EmbeddingVector {
            values: self.values.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }
}

/// How token vectors are pooled into one vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Mean over all tokens of the input.
    #[default]
    WholeInput,
    /// Mean over the tokens intersecting a character span.
    TargetSpan,
}

impl Pooling {
    pub fn as_str(self) -> &'static str {
        match self {
            Pooling::WholeInput => "whole_input",
            Pooling::TargetSpan => "target_span",
        }
    }
}

impl fmt::Display for Pooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Text to embed plus pooling instructions. Spans are half-open ranges of
/// Unicode scalar values (characters), not bytes.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EmbeddingRequest {
    text: String,
    pooling: Pooling,
    span: Option<Range<usize>>,
}

impl EmbeddingRequest {
    pub fn whole(text: impl Into<String>) -> Self {
        EmbeddingRequest {
            text: text.into(),
            pooling: Pooling::WholeInput,
            span: None,
        }
    }

    pub fn span(text: impl Into<String>, span: Range<usize>) -> Result<Self, EmbeddingError> {
        let text = text.into();
        let len = text.chars().count();
        if span.start >= span.end || span.end > len {
            return Err(EmbeddingError::BadSpan {
                start: span.start,
                end: span.end,
                len,
            });
        }
        Ok(EmbeddingRequest {
            text,
            pooling: Pooling::TargetSpan,
            span: Some(span),
        })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn pooling(&self) -> Pooling {
        self.pooling
    }

    pub fn span_range(&self) -> Option<Range<usize>> {
        self.span.clone()
    }
}

/// Cache identity: model plus request.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ProviderKey {
    pub model_id: String,
    pub request: EmbeddingRequest,
}

impl ProviderKey {
    pub fn new(model_id: impl Into<String>, request: EmbeddingRequest) -> Self {
        ProviderKey {
            model_id: model_id.into(),
            request,
        }
    }

    /// Stable 64-bit digest: first eight bytes (little-endian) of SHA-256
    /// over a length-prefixed encoding of every field.
    pub fn digest(&self) -> u64 {
        let mut hasher = Sha256::new();
        let mut field = |bytes: &[u8]| {
            hasher.update((bytes.len() as u64).to_le_bytes());
            hasher.update(bytes);
        };
        field(self.model_id.as_bytes());
        field(self.request.text.as_bytes());
        field(self.request.pooling.as_str().as_bytes());
        match &self.request.span {
            Some(span) => {
                field(&(span.start as u64).to_le_bytes());
                field(&(span.end as u64).to_le_bytes());
            }
            None => field(&[]),
        }
        let out = hasher.finalize();
        u64::from_le_bytes(out[..8].try_into().expect("digest has 32 bytes"))
    }
}

/// Source of text embeddings. Implementations must be deterministic per
/// request (directly or through [`CachedProvider`]) and return one fixed
/// dimension.
pub trait EmbeddingProvider: Send + Sync {
    fn model_id(&self) -> &str;

    fn embed(&self, request: &EmbeddingRequest) -> Result<EmbeddingVector, EmbeddingError>;

    /// Embeds every request, returning one result per request in order.
    fn embed_each(
        &self,
        requests: &[EmbeddingRequest],
    ) -> Vec<Result<EmbeddingVector, EmbeddingError>> {
        requests.iter().map(|r| self.embed(r)).collect()
    }

    /// Embeds a non-empty batch, failing on the first error with its index.
    fn embed_batch(
        &self,
        requests: &[EmbeddingRequest],
    ) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        if requests.is_empty() {
            return Err(EmbeddingError::EmptyBatch);
        }
        self.embed_each(requests)
            .into_iter()
            .enumerate()
            .map(|(index, r)| {
                r.map_err(|e| EmbeddingError::BatchItem {
                    index,
                    source: Box::new(e),
                })
            })
            .collect()
    }
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for &P {
    fn model_id(&self) -> &str {
        (**self).model_id()
    }
    fn embed(&self, request: &EmbeddingRequest) -> Result<EmbeddingVector, EmbeddingError> {
        (**self).embed(request)
    }
    fn embed_each(
        &self,
        requests: &[EmbeddingRequest],
    ) -> Vec<Result<EmbeddingVector, EmbeddingError>> {
        (**self).embed_each(requests)
    }
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for Box<P> {
    fn model_id(&self) -> &str {
        (**self).model_id()
    }
    fn embed(&self, request: &EmbeddingRequest) -> Result<EmbeddingVector, EmbeddingError> {
        (**self).embed(request)
    }
    fn embed_each(
        &self,
        requests: &[EmbeddingRequest],
    ) -> Vec<Result<EmbeddingVector, EmbeddingError>> {
        (**self).embed_each(requests)
    }
}
