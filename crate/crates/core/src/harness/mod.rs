//! Experiment orchestration: similarity rankings against query keys,
//! Spearman comparison with ground truth, and (context term × query key)
//! grids.

mod report;
mod spec;

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compound::{average_element_vectors, ContextSpec, Strategy};
use crate::dataset::{ground_truth_ranks, PropertyDataset, Subject};
use crate::elements::Element;
use crate::embedding::{EmbeddingProvider, EmbeddingRequest, EmbeddingVector, Pooling};
use crate::metrics::{cosine_similarity, rank_by_score, spearman_rho, Direction, MetricsError, RankTable};

pub use report::{
    emit_grid_reports, read_grid_json, write_grid_csv, write_grid_json, write_heatmap_svg,
    write_parity_csv, write_ranking_csv, ReportFormat,
};
pub use spec::{
    with_empty_first, DatasetSpec, DynProvider, ExperimentSpec, ProviderConfig, ProviderKind,
    DEFAULT_PARITY_BINS,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HarnessError {
    #[error("invalid experiment spec: {0}")]
    SpecInvalid(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{} of {total} subjects could not be embedded (first: {})", failures.len(), failures.first().map(|(s, e)| format!("{s}: {e}")).unwrap_or_default())]
    EmbeddingFailures {
        total: usize,
        failures: Vec<(String, String)>,
    },
    #[error("query key `{key}` could not be embedded: {reason}")]
    QueryKey { key: String, reason: String },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("cannot write output {path}: {reason}")]
    OutputUnwritable { path: String, reason: String },
}

/// Embeds every dataset subject under one context.
///
/// Composition-averaged vectors fetch each distinct (element, context)
/// phrase once for the whole dataset. Any failure aborts with the full list
/// of failed subjects, since a partial ranking would bias ρ.
pub fn embed_subjects<P: EmbeddingProvider + ?Sized>(
    dataset: &PropertyDataset,
    strategy: Strategy,
    context: &ContextSpec,
    pooling: Pooling,
    provider: &P,
) -> Result<Vec<EmbeddingVector>, HarnessError> {
    let total = dataset.len();
    let direct = |requests: Vec<Result<EmbeddingRequest, String>>| {
        let valid: Vec<EmbeddingRequest> = requests.iter().filter_map(|r| r.clone().ok()).collect();
        let mut fetched = if valid.is_empty() {
            Vec::new()
        } else {
            provider.embed_each(&valid)
        }
        .into_iter();
        let mut vectors = Vec::with_capacity(total);
        let mut failures = Vec::new();
        for (record, request) in dataset.records.iter().zip(requests) {
            match request.and_then(|_| fetched.next().expect("one result per request").map_err(|e| e.to_string())) {
                Ok(v) => vectors.push(v),
                Err(e) => failures.push((record.key(), e)),
            }
        }
        if failures.is_empty() {
            Ok(vectors)
        } else {
            Err(HarnessError::EmbeddingFailures { total, failures })
        }
    };

    match strategy {
        Strategy::WholeFormula => direct(
            dataset
                .records
                .iter()
                .map(|r| Ok(EmbeddingRequest::whole(r.key())))
                .collect(),
        ),
        Strategy::Entity => direct(
            dataset
                .records
                .iter()
                .map(|r| context.request(&r.key(), pooling).map_err(|e| e.to_string()))
                .collect(),
        ),
        Strategy::CompositionAveraged => {
            let mut elements = BTreeSet::new();
            for r in &dataset.records {
                match &r.subject {
                    Subject::Compound(c) => elements.extend(c.elements()),
                    Subject::Entity(_) => {
                        return Err(HarnessError::SpecInvalid(
                            "composition averaging needs a compound dataset".into(),
                        ))
                    }
                }
            }
            let elements: Vec<Element> = elements.into_iter().collect();
            let mut element_vectors: HashMap<Element, Result<EmbeddingVector, String>> =
                HashMap::new();
            let mut requests = Vec::new();
            let mut requested = Vec::new();
            for &e in &elements {
                match context.request(e.name(), pooling) {
                    Ok(r) => {
                        requests.push(r);
                        requested.push(e);
                    }
                    Err(err) => {
                        element_vectors.insert(e, Err(err.to_string()));
                    }
                }
            }
            if !requests.is_empty() {
                for (e, outcome) in requested.into_iter().zip(provider.embed_each(&requests)) {
                    element_vectors.insert(e, outcome.map_err(|err| err.to_string()));
                }
            }
            let dim = element_vectors
                .values()
                .filter_map(|v| v.as_ref().ok().map(EmbeddingVector::dim))
                .next();
            let mut vectors = Vec::with_capacity(total);
            let mut failures = Vec::new();
            for r in &dataset.records {
                let c = r.subject.composition().expect("checked above");
                let broken = c.elements().find_map(|e| match &element_vectors[&e] {
                    Err(err) => Some(format!("{}: {err}", e.name())),
                    Ok(v) if Some(v.dim()) != dim => Some(format!(
                        "{}: dimension {} differs from {}",
                        e.name(),
                        v.dim(),
                        dim.unwrap_or(0)
                    )),
                    Ok(_) => None,
                });
                if let Some(err) = broken {
                    failures.push((r.key(), err));
                    continue;
                }
                let v = average_element_vectors(c, |e| {
                    element_vectors[&e].as_ref().expect("checked above")
                })
                .map_err(|err| HarnessError::EmbeddingFailures {
                    total,
                    failures: vec![(r.key(), err.to_string())],
                })?;
                vectors.push(v);
            }
            if failures.is_empty() {
                Ok(vectors)
            } else {
                Err(HarnessError::EmbeddingFailures { total, failures })
            }
        }
    }
}

/// Embeds a query key (whole-input pooling, no context).
pub fn embed_query<P: EmbeddingProvider + ?Sized>(
    key: &str,
    provider: &P,
) -> Result<EmbeddingVector, HarnessError> {
    provider
        .embed(&EmbeddingRequest::whole(key))
        .map_err(|e| HarnessError::QueryKey {
            key: key.to_string(),
            reason: e.to_string(),
        })
}

/// Cosine similarity of every subject vector to the query vector.
pub fn similarity_scores(
    vectors: &[EmbeddingVector],
    query: &EmbeddingVector,
) -> Result<Vec<f64>, MetricsError> {
    vectors
        .iter()
        .map(|v| cosine_similarity(v.values(), query.values()))
        .collect()
}

/// Per-compound (ground-truth rank, similarity rank) pairs with a square
/// 2-D histogram of equal-width bins over the rank range `[1, n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParitySeries {
    pub items: Vec<String>,
    pub truth_ranks: Vec<f64>,
    pub similarity_ranks: Vec<f64>,
    pub bins: usize,
    /// `histogram[truth_bin][similarity_bin]`
    pub histogram: Vec<Vec<usize>>,
}

impl ParitySeries {
    pub fn new(truth: &RankTable, similarity: &RankTable, bins: usize) -> Result<Self, MetricsError> {
        assert!(bins > 0, "at least one bin");
        let n = truth.len();
        let items = truth.items().to_vec();
        let similarity_ranks = items
            .iter()
            .map(|i| {
                similarity
                    .rank_of(i)
                    .ok_or_else(|| MetricsError::ItemSetMismatch(format!("`{i}` missing")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut series = ParitySeries {
            items,
            truth_ranks: truth.ranks().to_vec(),
            similarity_ranks,
            bins,
            histogram: vec![vec![0; bins]; bins],
        };
        for i in 0..n {
            let (a, b) = series.bin_of(i);
            series.histogram[a][b] += 1;
        }
        Ok(series)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    fn axis_bin(&self, rank: f64) -> usize {
        let n = self.items.len();
        if n < 2 {
            return 0;
        }
        let t = (rank - 1.0) / (n as f64 - 1.0);
        ((t * self.bins as f64).floor() as usize).min(self.bins - 1)
    }

    /// (truth bin, similarity bin) of pair `i`.
    pub fn bin_of(&self, i: usize) -> (usize, usize) {
        (
            self.axis_bin(self.truth_ranks[i]),
            self.axis_bin(self.similarity_ranks[i]),
        )
    }

    /// Count of the histogram bin pair `i` falls into.
    pub fn bin_count(&self, i: usize) -> usize {
        let (a, b) = self.bin_of(i);
        self.histogram[a][b]
    }

    pub fn total_count(&self) -> usize {
        self.histogram.iter().flatten().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankingOutcome {
    pub scores: Vec<f64>,
    pub similarity: RankTable,
    pub rho: f64,
    pub parity: ParitySeries,
}

/// Ranks precomputed subject vectors against a query vector and compares
/// with the ground truth.
pub fn rank_vectors(
    truth: &RankTable,
    items: &[String],
    vectors: &[EmbeddingVector],
    query: &EmbeddingVector,
    bins: usize,
) -> Result<RankingOutcome, MetricsError> {
    let scores = similarity_scores(vectors, query)?;
    let similarity = rank_by_score(
        items.iter().cloned().zip(scores.iter().copied()),
        Direction::Descending,
    )?;
    let rho = spearman_rho(truth, &similarity)?;
    let parity = ParitySeries::new(truth, &similarity, bins)?;
    Ok(RankingOutcome {
        scores,
        similarity,
        rho,
        parity,
    })
}

/// One ranking experiment: embed the dataset, rank by similarity to `query_key`,
/// correlate with the ground truth.
pub fn run_ranking<P: EmbeddingProvider + ?Sized>(
    dataset: &PropertyDataset,
    strategy: Strategy,
    context: &ContextSpec,
    pooling: Pooling,
    query_key: &str,
    provider: &P,
    bins: usize,
) -> Result<RankingOutcome, HarnessError> {
    let truth = ground_truth_ranks(dataset)?;
    let vectors = embed_subjects(dataset, strategy, context, pooling, provider)?;
    let query = embed_query(query_key, provider)?;
    let items: Vec<String> = dataset.records.iter().map(|r| r.key()).collect();
    Ok(rank_vectors(&truth, &items, &vectors, &query, bins)?)
}

/// A grid cell: ρ, or the reason it could not be computed.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Rho(f64),
    Error(String),
}

impl Cell {
    pub fn rho(&self) -> Option<f64> {
        match self {
            Cell::Rho(r) => Some(*r),
            Cell::Error(_) => None,
        }
    }
}

impl Serialize for Cell {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Err<'a> {
            error: &'a str,
        }
        match self {
            Cell::Rho(r) => s.serialize_f64(*r),
            Cell::Error(e) => Err { error: e }.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for Cell {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Rho(f64),
            Error { error: String },
        }
        Ok(match Raw::deserialize(d)? {
            Raw::Rho(r) => Cell::Rho(r),
            Raw::Error { error } => Cell::Error(error),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct GridMetadata {
    pub model_id: String,
    pub dataset: String,
    pub strategy: String,
    pub pooling: String,
    pub n_items: usize,
    pub timestamp: String,
    pub spec_hash: String,
    /// Effective configuration the grid was produced with.
    pub config: serde_json::Value,
}

/// ρ for every (context term, query key) pair. Row 0 is the empty term and
/// column 0 the empty key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub terms: Vec<String>,
    pub keys: Vec<String>,
    pub cells: Vec<Vec<Cell>>,
    pub metadata: GridMetadata,
}

impl GridResult {
    pub fn cell(&self, term: &str, key: &str) -> Option<&Cell> {
        let r = self.terms.iter().position(|t| t == term)?;
        let c = self.keys.iter().position(|k| k == key)?;
        Some(&self.cells[r][c])
    }

    pub fn failed_cells(&self) -> usize {
        self.cells
            .iter()
            .flatten()
            .filter(|c| matches!(c, Cell::Error(_)))
            .count()
    }

    /// ρ values with errors as `None`, row-major.
    pub fn rho_matrix(&self) -> Vec<Vec<Option<f64>>> {
        self.cells
            .iter()
            .map(|row| row.iter().map(Cell::rho).collect())
            .collect()
    }
}

/// Embedded inputs of a grid: one vector set per term, one vector per key.
#[derive(Debug, Clone)]
pub struct GridInputs {
    pub items: Vec<String>,
    pub terms: Vec<String>,
    pub keys: Vec<String>,
    pub rows: Vec<Result<Vec<EmbeddingVector>, String>>,
    pub queries: Vec<Result<EmbeddingVector, String>>,
}

impl GridInputs {
    /// Embeds everything a grid needs. Terms and keys get `""` injected first.
    pub fn compute<P: EmbeddingProvider + ?Sized>(
        dataset: &PropertyDataset,
        strategy: Strategy,
        pooling: Pooling,
        terms: &[String],
        keys: &[String],
        provider: &P,
    ) -> GridInputs {
        let terms = with_empty_first(terms);
        let keys = with_empty_first(keys);
        let rows = terms
            .iter()
            .map(|t| {
                embed_subjects(dataset, strategy, &ContextSpec::new(t.clone()), pooling, provider)
                    .map_err(|e| e.to_string())
            })
            .collect();
        let queries = keys
            .iter()
            .map(|k| embed_query(k, provider).map_err(|e| e.to_string()))
            .collect();
        GridInputs {
            items: dataset.records.iter().map(|r| r.key()).collect(),
            terms,
            keys,
            rows,
            queries,
        }
    }

    /// Fills the ρ matrix. Cells are independent: a failure only marks
    /// its own row or column.
    pub fn assemble(&self, truth: &RankTable, metadata: GridMetadata) -> GridResult {
        let cells = self
            .rows
            .iter()
            .map(|row| {
                self.queries
                    .iter()
                    .map(|query| match (row, query) {
                        (Err(e), _) | (_, Err(e)) => Cell::Error(e.clone()),
                        (Ok(vectors), Ok(q)) => {
                            match rank_vectors(truth, &self.items, vectors, q, 1) {
                                Ok(outcome) => Cell::Rho(outcome.rho),
                                Err(e) => Cell::Error(e.to_string()),
                            }
                        }
                    })
                    .collect()
            })
            .collect();
        GridResult {
            terms: self.terms.clone(),
            keys: self.keys.clone(),
            cells,
            metadata,
        }
    }
}

/// Current UTC time in RFC 3339, as stamped into run metadata.
pub fn timestamp_now() -> String {
    chrono::Utc::now().to_rfc3339()
}

/// Runs the full grid described by `spec` on an already-ingested dataset.
pub fn run_grid<P: EmbeddingProvider + ?Sized>(
    spec: &ExperimentSpec,
    dataset: &PropertyDataset,
    provider: &P,
) -> Result<GridResult, HarnessError> {
    spec.validate()?;
    let truth = ground_truth_ranks(dataset)?;
    let inputs = GridInputs::compute(
        dataset,
        spec.strategy,
        spec.pooling,
        &spec.context_terms,
        &spec.query_keys,
        provider,
    );
    let metadata = GridMetadata {
        model_id: provider.model_id().to_string(),
        dataset: dataset.name.clone(),
        strategy: spec.strategy.to_string(),
        pooling: spec.pooling.to_string(),
        n_items: dataset.len(),
        timestamp: timestamp_now(),
        spec_hash: spec.hash(),
        config: serde_json::to_value(spec).expect("spec serializes"),
    };
    Ok(inputs.assemble(&truth, metadata))
}
