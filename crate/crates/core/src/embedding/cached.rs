use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use super::{
    EmbeddingError, EmbeddingProvider, EmbeddingRequest, EmbeddingVector, ProviderKey, VectorCache,
};

/// Wraps a provider with a [`VectorCache`], so every key is fetched from the
/// inner provider at most once, and enforces a single output dimension.
pub struct CachedProvider<P> {
    inner: P,
    cache: Arc<VectorCache>,
    dim: Mutex<Option<usize>>,
}

impl<P: EmbeddingProvider> CachedProvider<P> {
    pub fn new(inner: P, cache: Arc<VectorCache>) -> Self {
        CachedProvider {
            inner,
            cache,
            dim: Mutex::new(None),
        }
    }

    pub fn in_memory(inner: P) -> Self {
        CachedProvider::new(inner, Arc::new(VectorCache::in_memory()))
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }

    pub fn cache(&self) -> &Arc<VectorCache> {
        &self.cache
    }

    /// Dimension seen so far, if any vector has been returned.
    pub fn dim(&self) -> Option<usize> {
        *self.dim.lock().expect("dim lock poisoned")
    }

    fn key(&self, request: &EmbeddingRequest) -> ProviderKey {
        ProviderKey::new(self.inner.model_id(), request.clone())
    }

    fn check_dim(&self, vector: &EmbeddingVector) -> Result<(), EmbeddingError> {
        let mut dim = self.dim.lock().expect("dim lock poisoned");
        match *dim {
            Some(expected) if expected != vector.dim() => Err(EmbeddingError::DimensionMismatch {
                expected,
                actual: vector.dim(),
            }),
            Some(_) => Ok(()),
            None => {
                *dim = Some(vector.dim());
                Ok(())
            }
        }
    }

    fn store(&self, key: &ProviderKey, vector: &EmbeddingVector) -> Result<(), EmbeddingError> {
        self.check_dim(vector)?;
        if let Err(e) = self.cache.put(key, vector) {
            log::warn!("could not persist embedding: {e}");
        }
        Ok(())
    }
}

impl<P: EmbeddingProvider> EmbeddingProvider for CachedProvider<P> {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn embed(&self, request: &EmbeddingRequest) -> Result<EmbeddingVector, EmbeddingError> {
        let key = self.key(request);
        if let Some(hit) = self.cache.get(&key) {
            self.check_dim(&hit)?;
            return Ok(hit);
        }
        let vector = self.inner.embed(request)?;
        self.store(&key, &vector)?;
        Ok(vector)
    }

    fn embed_each(
        &self,
        requests: &[EmbeddingRequest],
    ) -> Vec<Result<EmbeddingVector, EmbeddingError>> {
        let mut results: Vec<Option<Result<EmbeddingVector, EmbeddingError>>> =
            vec![None; requests.len()];
        // distinct missing requests, each with the positions that need it
        let mut pending: Vec<(EmbeddingRequest, Vec<usize>)> = Vec::new();
        let mut pending_index: HashMap<&EmbeddingRequest, usize> = HashMap::new();
        for (i, request) in requests.iter().enumerate() {
            if let Some(&slot) = pending_index.get(request) {
                pending[slot].1.push(i);
                continue;
            }
            match self.cache.get(&self.key(request)) {
                Some(hit) => results[i] = Some(self.check_dim(&hit).map(|_| hit)),
                None => {
                    pending_index.insert(request, pending.len());
                    pending.push((request.clone(), vec![i]));
                }
            }
        }
        if !pending.is_empty() {
            let misses: Vec<EmbeddingRequest> = pending.iter().map(|(r, _)| r.clone()).collect();
            let fetched = self.inner.embed_each(&misses);
            for ((request, positions), outcome) in pending.into_iter().zip(fetched) {
                let outcome = outcome.and_then(|v| {
                    self.store(&self.key(&request), &v)?;
                    Ok(v)
                });
                for i in positions {
                    results[i] = Some(outcome.clone());
                }
            }
        }
        results
            .into_iter()
            .map(|r| r.expect("every request resolved"))
            .collect()
    }
}
