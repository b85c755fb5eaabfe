//! Text-to-vector providers and the embedding memo that lets history turns
//! be embedded once per conversation.

mod remote;
pub(crate) mod token_hash;

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use parking_lot::RwLock;

pub use remote::{RemoteEmbedder, RemoteEmbedding};
pub use token_hash::{token_direction, SplitMix64, TokenHashEmbedder};

use crate::config::{CacheConfig, EmbedderKind};
use crate::error::{Error, Result};
use crate::text::normalize_text;
use crate::turn::Turn;
use crate::vector::UnitVector;

pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;

    fn embed(&self, text: &str) -> Result<UnitVector>;
}

impl<E: Embedder + ?Sized> Embedder for Arc<E> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn embed(&self, text: &str) -> Result<UnitVector> {
        (**self).embed(text)
    }
}

/// Builds the embedder selected by `config`.
pub fn from_config(config: &CacheConfig) -> Result<Arc<dyn Embedder>> {
    Ok(match config.embedder {
        EmbedderKind::TokenHash => {
            Arc::new(TokenHashEmbedder::new(config.d).with_stopwords_dropped(config.drop_stopwords))
        }
        EmbedderKind::Remote => {
            let endpoint = config
                .embedder_endpoint
                .clone()
                .ok_or_else(|| Error::config("embedder_endpoint", "missing"))?;
            Arc::new(
                RemoteEmbedder::new(endpoint, config.embedder_model.clone(), config.d)
                    .with_timeout_ms(config.embedder_timeout_ms)
                    .with_max_retries(config.embedder_max_retries),
            )
        }
    })
}

/// Memo key: the normalized form of a turn's text.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EmbeddingCacheKey(String);

impl EmbeddingCacheKey {
    pub fn new(text: &str) -> Self {
        EmbeddingCacheKey(normalize_text(text))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

/// Concurrent read-mostly memo of computed embeddings.
#[derive(Default, Debug)]
pub struct EmbeddingMemo {
    map: RwLock<HashMap<EmbeddingCacheKey, UnitVector>>,
}

impl EmbeddingMemo {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, key: &EmbeddingCacheKey) -> Option<UnitVector> {
        self.map.read().get(key).cloned()
    }

    pub fn insert(&self, key: EmbeddingCacheKey, v: UnitVector) {
        self.map.write().insert(key, v);
    }

    pub fn len(&self) -> usize {
        self.map.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Embeds `turns` in order, serving memoized keys without calling `embedder`.
pub fn embed_history(
    embedder: &dyn Embedder,
    turns: &[Turn],
    memo: &EmbeddingMemo,
) -> Result<Vec<UnitVector>> {
    turns
        .iter()
        .map(|turn| {
            let key = EmbeddingCacheKey::new(&turn.text);
            if let Some(v) = memo.get(&key) {
                return Ok(v);
            }
            let v = embedder.embed(&turn.text)?;
            memo.insert(key, v.clone());
            Ok(v)
        })
        .collect()
}

/// Wraps an embedder and counts `embed` calls.
#[derive(Debug)]
pub struct CountingEmbedder<E> {
    inner: E,
    calls: AtomicUsize,
}

impl<E> CountingEmbedder<E> {
    pub fn new(inner: E) -> Self {
        CountingEmbedder { inner, calls: AtomicUsize::new(0) }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<E: Embedder> Embedder for CountingEmbedder<E> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn embed(&self, text: &str) -> Result<UnitVector> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.embed(text)
    }
}
