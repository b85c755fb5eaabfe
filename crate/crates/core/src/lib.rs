//! Context-aware semantic cache for multi-turn LLM conversations.
//!
//! A query is first matched against cached query vectors (stage 1, cosine
//! threshold `theta1`), then the surviving candidates are re-ranked by the
//! cosine between attention-pooled conversation representations (stage 2,
//! threshold `theta2`). Hits return the stored response; misses go to the
//! LLM backend and the answer is recorded together with both vectors.

pub mod attention;
pub mod bench;
pub mod config;
pub mod embedder;
pub mod engine;
pub mod error;
pub mod service;
pub mod store;
pub mod text;
pub mod trainer;
pub mod turn;
pub mod vector;
pub mod vindex;

pub use attention::{pool_context, AttentionParams, ContextSequence};
pub use config::{load_config, CacheConfig, ContextStrategy, PoolingMode};
pub use embedder::{Embedder, TokenHashEmbedder};
pub use engine::{Engine, LlmReply, Lookup, MatchDecision, Metrics, MissReason, Outcome, SessionState};
pub use error::{Error, Result};
pub use store::{CacheEntry, Store};
pub use turn::{Role, Turn};
pub use vector::{cosine, normalize, UnitVector};
pub use vindex::{Candidate, EntryId, FlatIndex};
