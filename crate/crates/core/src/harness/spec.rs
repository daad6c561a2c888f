use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::compound::Strategy;
use crate::dataset::{DedupPolicy, IngestConfig, SubjectKind};
use crate::embedding::{
    CachedProvider, EmbeddingProvider, MockProvider, Pooling, RemoteConfig,
    RemoteProvider, VectorCache, DEFAULT_MAX_IN_FLIGHT, DEFAULT_MOCK_DIM,
};

/// Default number of bins per axis for parity histograms.
pub const DEFAULT_PARITY_BINS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    #[default]
    Mock,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub model: String,
    pub base_url: Option<String>,
    /// Vector dimension of the mock provider.
    pub dim: usize,
    pub cache_path: Option<PathBuf>,
    pub max_in_flight: usize,
    pub timeout_secs: u64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            kind: ProviderKind::Mock,
            model: "mock".into(),
            base_url: None,
            dim: DEFAULT_MOCK_DIM,
            cache_path: None,
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
            timeout_secs: 120,
        }
    }
}

pub type DynProvider = Box<dyn EmbeddingProvider>;

impl ProviderConfig {
    pub fn mock(model: impl Into<String>, dim: usize) -> Self {
        ProviderConfig {
            model: model.into(),
            dim,
            ..ProviderConfig::default()
        }
    }

    pub fn remote(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        ProviderConfig {
            kind: ProviderKind::Remote,
            model: model.into(),
            base_url: Some(base_url.into()),
            ..ProviderConfig::default()
        }
    }

    fn open_cache(&self) -> Result<Arc<VectorCache>, HarnessError> {
        Ok(Arc::new(match &self.cache_path {
            Some(path) => VectorCache::open(path).map_err(|e| HarnessError::Config(e.to_string()))?,
            None => VectorCache::in_memory(),
        }))
    }

    /// The uncached provider described by this config.
    pub fn build_raw(&self) -> Result<DynProvider, HarnessError> {
        Ok(match self.kind {
            ProviderKind::Mock => {
                if self.dim == 0 {
                    return Err(HarnessError::Config("mock dim must be positive".into()));
                }
                Box::new(MockProvider::new(self.model.clone(), self.dim))
            }
            ProviderKind::Remote => {
                let base = self.base_url.clone().ok_or_else(|| {
                    HarnessError::Config("remote provider needs a base_url".into())
                })?;
                let mut cfg = RemoteConfig::new(base, self.model.clone());
                cfg.max_in_flight = self.max_in_flight.max(1);
                cfg.timeout = Duration::from_secs(self.timeout_secs.max(1));
                Box::new(RemoteProvider::new(cfg))
            }
        })
    }

    /// Provider wrapped in the configured cache (in-memory when no path).
    pub fn build(&self) -> Result<CachedProvider<DynProvider>, HarnessError> {
        Ok(CachedProvider::new(self.build_raw()?, self.open_cache()?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub path: PathBuf,
    pub name: Option<String>,
    pub unit: String,
    pub dedup: DedupPolicy,
    pub kind: SubjectKind,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            path: PathBuf::new(),
            name: None,
            unit: String::new(),
            dedup: DedupPolicy::Mean,
            kind: SubjectKind::Compounds,
        }
    }
}

impl DatasetSpec {
    pub fn ingest_config(&self) -> IngestConfig {
        let name = self.name.clone().unwrap_or_else(|| {
            self.path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "dataset".into())
        });
        IngestConfig {
            name,
            unit: self.unit.clone(),
            dedup: self.dedup,
            kind: self.kind,
        }
    }
}

/// Experiment description, read from a JSON spec file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub dataset: DatasetSpec,
    pub strategy: Strategy,
    /// Pooling for element / entity phrases. Query keys always use whole-input pooling.
    pub pooling: Pooling,
    pub context_terms: Vec<String>,
    pub query_keys: Vec<String>,
    pub provider: ProviderConfig,
    pub output_dir: PathBuf,
    pub parity_bins: usize,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            dataset: DatasetSpec::default(),
            strategy: Strategy::CompositionAveraged,
            pooling: Pooling::WholeInput,
            context_terms: Vec::new(),
            query_keys: Vec::new(),
            provider: ProviderConfig::default(),
            output_dir: PathBuf::from("out"),
            parity_bins: DEFAULT_PARITY_BINS,
        }
    }
}

/// `""` first, then the remaining labels in order with duplicates removed.
pub fn with_empty_first(labels: &[String]) -> Vec<String> {
    let mut out = vec![String::new()];
    for l in labels {
        if !out.contains(l) {
            out.push(l.clone());
        }
    }
    out
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|e| HarnessError::SpecInvalid(e.to_string()))
    }

    /// Reads a spec file; a relative dataset path is resolved against the
    /// spec file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::SpecInvalid(format!("{}: {e}", path.display())))?;
        let mut spec = ExperimentSpec::from_json(&text)?;
        if spec.dataset.path.is_relative() {
            if let Some(dir) = path.parent() {
                spec.dataset.path = dir.join(&spec.dataset.path);
            }
        }
        Ok(spec)
    }

    /// Grid rows, `""` first.
    pub fn row_terms(&self) -> Vec<String> {
        with_empty_first(&self.context_terms)
    }

    /// Grid columns, `""` first.
    pub fn column_keys(&self) -> Vec<String> {
        with_empty_first(&self.query_keys)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.parity_bins == 0 {
            return Err(HarnessError::SpecInvalid("parity_bins must be positive".into()));
        }
        if self.strategy == Strategy::WholeFormula && self.context_terms.iter().any(|t| !t.is_empty())
        {
            return Err(HarnessError::SpecInvalid(
                "whole_formula strategy takes no context terms".into(),
            ));
        }
        let subject_kind = match self.strategy {
            Strategy::Entity => SubjectKind::Entities,
            _ => SubjectKind::Compounds,
        };
        if self.dataset.kind != subject_kind {
            return Err(HarnessError::SpecInvalid(format!(
                "strategy {} needs a {:?} dataset",
                self.strategy, subject_kind
            )));
        }
        if self.dataset.path.as_os_str().is_empty() {
            return Err(HarnessError::SpecInvalid("dataset.path is required".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 of the spec's JSON serialization.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("spec serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
