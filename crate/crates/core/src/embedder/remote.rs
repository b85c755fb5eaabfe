//! Client for an HTTP embedding service.
//!
//! Wire format: `POST <endpoint>` with `{"model": ..., "input": ...}`,
//! answered by `{"embedding": [f64, ...]}`.

use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::Embedder;
use crate::error::{Error, Result};
use crate::text::normalize_text;
use crate::vector::UnitVector;

#[derive(Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    input: &'a str,
}

#[derive(Deserialize)]
struct EmbedResponse {
    embedding: Vec<f64>,
}

/// A successful remote call together with the number of retries it took.
#[derive(Debug, Clone)]
pub struct RemoteEmbedding {
    pub vector: UnitVector,
    pub retries: u32,
}

#[derive(Debug)]
pub struct RemoteEmbedder {
    endpoint: String,
    model: String,
    dim: usize,
    timeout: Duration,
    max_retries: u32,
    backoff_base: Duration,
}

enum Attempt {
    Retryable(String),
    Fatal(String),
}

impl RemoteEmbedder {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, dim: usize) -> Self {
        RemoteEmbedder {
            endpoint: endpoint.into(),
            model: model.into(),
            dim,
            timeout: Duration::from_secs(5),
            max_retries: 3,
            backoff_base: Duration::from_millis(50),
        }
    }

    pub fn with_timeout_ms(mut self, ms: u64) -> Self {
        self.timeout = Duration::from_millis(ms);
        self
    }

    pub fn with_max_retries(mut self, n: u32) -> Self {
        self.max_retries = n;
        self
    }

    /// First retry waits `base`, each following one doubles it.
    pub fn with_backoff_base(mut self, base: Duration) -> Self {
        self.backoff_base = base;
        self
    }

    pub fn embed_detailed(&self, text: &str) -> Result<RemoteEmbedding> {
        if normalize_text(text).is_empty() {
            return Err(Error::EmptyQuery);
        }
        let agent = ureq::AgentBuilder::new().timeout(self.timeout).build();
        let mut retries = 0;
        loop {
            match self.attempt(&agent, text) {
                Ok(vector) => return Ok(RemoteEmbedding { vector, retries }),
                Err(Attempt::Fatal(msg)) => return Err(Error::EmbeddingBackend(msg)),
                Err(Attempt::Retryable(msg)) => {
                    if retries >= self.max_retries {
                        return Err(Error::EmbeddingBackend(format!(
                            "{msg} (gave up after {retries} retries)"
                        )));
                    }
                    tracing::debug!(retries, %msg, "retrying embedding request");
                    thread::sleep(self.backoff_base * 2u32.saturating_pow(retries));
                    retries += 1;
                }
            }
        }
    }

    fn attempt(&self, agent: &ureq::Agent, text: &str) -> std::result::Result<UnitVector, Attempt> {
        let body = EmbedRequest { model: &self.model, input: text };
        let resp = match agent.post(&self.endpoint).send_json(&body) {
            Ok(resp) => resp,
            Err(ureq::Error::Status(code, _)) if code == 429 || code >= 500 => {
                return Err(Attempt::Retryable(format!("status {code}")));
            }
            Err(ureq::Error::Status(code, _)) => {
                return Err(Attempt::Fatal(format!("status {code}")));
            }
            Err(ureq::Error::Transport(t)) => {
                return Err(Attempt::Retryable(format!("transport: {t}")));
            }
        };
        let parsed: EmbedResponse = resp
            .into_json()
            .map_err(|e| Attempt::Fatal(format!("malformed body: {e}")))?;
        if parsed.embedding.len() != self.dim {
            return Err(Attempt::Fatal(format!(
                "dimension: expected {}, got {}",
                self.dim,
                parsed.embedding.len()
            )));
        }
        UnitVector::normalize(&parsed.embedding)
            .map_err(|e| Attempt::Fatal(format!("degenerate embedding: {e}")))
    }
}

impl Embedder for RemoteEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<UnitVector> {
        self.embed_detailed(text).map(|r| r.vector)
    }
}
