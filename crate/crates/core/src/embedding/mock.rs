use std::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EmbeddingError, EmbeddingProvider, EmbeddingRequest, EmbeddingVector, ProviderKey};

pub const DEFAULT_MOCK_DIM: usize = 64;

/// Deterministic stand-in for a language model.
///
/// Each request seeds a ChaCha8 stream with [`ProviderKey::digest`]; the
/// stream's uniforms go through Box-Muller (using `libm`, so results do not
/// depend on the platform's math library) to give `dim` standard normals,
/// which are then scaled to unit length.
#[derive(Debug)]
pub struct MockProvider {
    model_id: String,
    dim: usize,
    calls: AtomicUsize,
}

impl MockProvider {
    pub fn new(model_id: impl Into<String>, dim: usize) -> Self {
        assert!(dim >= 1, "mock dimension must be positive");
        MockProvider {
            model_id: model_id.into(),
            dim,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of `embed` calls served so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn generate(&self, request: &EmbeddingRequest) -> Vec<f64> {
        let seed = ProviderKey::new(self.model_id.clone(), request.clone()).digest();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = Vec::with_capacity(self.dim + 1);
        while values.len() < self.dim {
            // u1 in (0, 1] keeps the logarithm finite
            let u1 = 1.0 - rng.random::<f64>();
            let u2 = rng.random::<f64>();
            let radius = libm::sqrt(-2.0 * libm::log(u1));
            let angle = 2.0 * std::f64::consts::PI * u2;
            values.push(radius * libm::cos(angle));
            values.push(radius * libm::sin(angle));
        }
        values.truncate(self.dim);
        let mut norm_sq = 0.0;
        for v in &values {
            norm_sq += v * v;
        }
        let norm = libm::sqrt(norm_sq);
        for v in &mut values {
            *v /= norm;
        }
        values
    }
}

impl Default for MockProvider {
    fn default() -> Self {
        MockProvider::new("mock", DEFAULT_MOCK_DIM)
    }
}

impl EmbeddingProvider for MockProvider {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn embed(&self, request: &EmbeddingRequest) -> Result<EmbeddingVector, EmbeddingError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        EmbeddingVector::new(self.generate(request))
    }
}
