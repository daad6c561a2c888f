//! HTTP/JSON client for the embedding sidecar.
//!
//! `POST {base}/embed` with
//! `{"model", "text", "pooling": "whole_input"|"target_span", "span"?: [start, end]}`
//! answers `{"model", "dim", "values"}` or `{"error"}` with a 4xx/5xx status.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{EmbeddingError, EmbeddingProvider, EmbeddingRequest, EmbeddingVector, Pooling};

pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    pub base_url: String,
    pub model: String,
    pub timeout: Duration,
    pub max_in_flight: usize,
}

impl RemoteConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        RemoteConfig {
            base_url: base_url.into(),
            model: model.into(),
            timeout: Duration::from_secs(120),
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
        }
    }
}

#[derive(Debug, Serialize)]
struct EmbedBody<'a> {
    model: &'a str,
    text: &'a str,
    pooling: Pooling,
    #[serde(skip_serializing_if = "Option::is_none")]
    span: Option<[usize; 2]>,
}

#[derive(Debug, Deserialize)]
struct EmbedReply {
    model: String,
    dim: usize,
    values: Vec<f64>,
}

#[derive(Debug, Deserialize)]
struct ErrorReply {
    error: String,
}

/// Health report from `GET {base}/health`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct Health {
    pub model: Option<String>,
    pub dim: Option<usize>,
    pub status: String,
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
struct Permits {
    available: Mutex<usize>,
    freed: Condvar,
}

impl Permits {
    fn acquire(&self) -> PermitGuard<'_> {
        let mut n = self.available.lock().expect("permit lock poisoned");
        while *n == 0 {
            n = self.freed.wait(n).expect("permit lock poisoned");
        }
        *n -= 1;
        PermitGuard(self)
    }
}

struct PermitGuard<'a>(&'a Permits);

impl Drop for PermitGuard<'_> {
    fn drop(&mut self) {
        *self.0.available.lock().expect("permit lock poisoned") += 1;
        self.0.freed.notify_one();
    }
}

/// Client for a remote embedding sidecar. Not deterministic by itself; wrap
/// it in a [`CachedProvider`](super::CachedProvider) to freeze first answers.
#[derive(Debug)]
pub struct RemoteProvider {
    config: RemoteConfig,
    agent: ureq::Agent,
    permits: Permits,
    calls: AtomicUsize,
}

impl RemoteProvider {
    pub fn new(config: RemoteConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let limit = config.max_in_flight.max(1);
        RemoteProvider {
            config,
            agent,
            permits: Permits {
                available: Mutex::new(limit),
                freed: Condvar::new(),
            },
            calls: AtomicUsize::new(0),
        }
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    /// Requests sent so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{path}", self.config.base_url.trim_end_matches('/'))
    }

    pub fn health(&self) -> Result<Health, EmbeddingError> {
        let mut response = self
            .agent
            .get(&self.url("health"))
            .call()
            .map_err(transport_error)?;
        response
            .body_mut()
            .read_json::<Health>()
            .map_err(|e| EmbeddingError::MalformedResponse(e.to_string()))
    }
}

fn transport_error(err: ureq::Error) -> EmbeddingError {
    EmbeddingError::ProviderUnavailable(err.to_string())
}

impl EmbeddingProvider for RemoteProvider {
    fn model_id(&self) -> &str {
        &self.config.model
    }

    fn embed(&self, request: &EmbeddingRequest) -> Result<EmbeddingVector, EmbeddingError> {
        let body = EmbedBody {
            model: &self.config.model,
            text: request.text(),
            pooling: request.pooling(),
            span: request.span_range().map(|s| [s.start, s.end]),
        };
        let _permit = self.permits.acquire();
        self.calls.fetch_add(1, Ordering::SeqCst);
        let mut response = self
            .agent
            .post(&self.url("embed"))
            .send_json(&body)
            .map_err(transport_error)?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(transport_error)?;
        if status != 200 {
            let message = serde_json::from_str::<ErrorReply>(&text)
                .map(|e| e.error)
                .unwrap_or(text);
            return Err(match status {
                502..=504 => EmbeddingError::ProviderUnavailable(format!("{status}: {message}")),
                _ => EmbeddingError::Rejected { status, message },
            });
        }
        let reply: EmbedReply = serde_json::from_str(&text)
            .map_err(|e| EmbeddingError::MalformedResponse(e.to_string()))?;
        if reply.values.is_empty() {
            return Err(EmbeddingError::EmptyModelOutput);
        }
        if reply.values.len() != reply.dim {
            return Err(EmbeddingError::MalformedResponse(format!(
                "declared dim {} but sent {} values",
                reply.dim,
                reply.values.len()
            )));
        }
        if reply.model != self.config.model {
            log::warn!(
                "sidecar answered for model `{}`, requested `{}`",
                reply.model,
                self.config.model
            );
        }
        EmbeddingVector::new(reply.values)
            .map_err(|_| EmbeddingError::MalformedResponse("non-finite values".into()))
    }

    fn embed_each(
        &self,
        requests: &[EmbeddingRequest],
    ) -> Vec<Result<EmbeddingVector, EmbeddingError>> {
        let workers = self.config.max_in_flight.max(1).min(requests.len());
        if workers <= 1 {
            return requests.iter().map(|r| self.embed(r)).collect();
        }
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<Result<EmbeddingVector, EmbeddingError>>>> =
            requests.iter().map(|_| Mutex::new(None)).collect();
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(request) = requests.get(i) else { break };
                    let outcome = self.embed(request);
                    *slots[i].lock().expect("slot lock poisoned") = Some(outcome);
                });
            }
        });
        slots
            .into_iter()
            .map(|s| {
                s.into_inner()
                    .expect("slot lock poisoned")
                    .expect("every request answered")
            })
            .collect()
    }
}
