//! Compound embeddings built from language-model text embeddings, ranked by
//! cosine similarity against query keys and scored against ground-truth
//! property data with Spearman's ρ.
//!
//! The pieces, bottom-up:
//!
//! - [`formula`]: chemical formula parsing, canonical strings, atomic fractions.
//! - [`embedding`]: the [`EmbeddingProvider`] trait, a deterministic
//!   [`MockProvider`], the HTTP [`RemoteProvider`] and a persistent
//!   [`VectorCache`].
//! - [`compound`]: whole-formula vectors and composition-averaged elemental
//!   vectors `v_C = Σ w_X v_X` with a contextualization prefix.
//! - [`metrics`]: cosine similarity, fractional ranks, Spearman's ρ.
//! - [`dataset`]: CSV ingestion of property tables.
//! - [`harness`]: ranking runs, (term × key) grids and their reports.
//!
//! Vector and ranking math is generic over [`Scalar`] (`f32`/`f64`);
//! providers and the cache work in `f64`, which the aliases below fix.

pub mod compound;
pub mod dataset;
pub mod elements;
pub mod embedding;
pub mod formula;
pub mod harness;
pub mod metrics;
mod scalar;

pub use compound::{
    composition_averaged_vector, element_vector, whole_formula_vector, CompoundError,
    ContextSpec, Strategy,
};
pub use dataset::{ground_truth_ranks, ingest_csv, DedupPolicy, PropertyDataset};
pub use elements::Element;
pub use embedding::{
    CachedProvider, EmbeddingError, EmbeddingProvider, EmbeddingRequest, MockProvider, Pooling,
    ProviderKey, RemoteProvider, VectorCache,
};
pub use formula::{parse_formula, Composition, FormulaError};
pub use harness::{run_grid, run_ranking, ExperimentSpec, GridResult, HarnessError};
pub use metrics::{cosine_similarity, rank_by_score, spearman_rho, Direction, MetricsError};
pub use scalar::Scalar;

/// Embedding vector in the provider's native 64-bit precision.
pub type Vector = embedding::EmbeddingVector<f64>;
/// Single-precision copy of a [`Vector`], via [`EmbeddingVector::cast`].
pub type Vector32 = embedding::EmbeddingVector<f32>;
pub type EmbeddingVector<T = f64> = embedding::EmbeddingVector<T>;
pub type RankTable = metrics::RankTable<f64>;
pub type CompoundVector = compound::CompoundVector<f64>;
