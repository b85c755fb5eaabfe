//! Chat interception layer: sessions, LLM fallback, stats and the HTTP API.

mod http;
mod llm;

use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

pub use http::{router, serve};
pub use llm::{mock_response, LlmBackend, RemoteLlm};

use crate::engine::{Engine, Metrics, Outcome, SessionState};
use crate::error::{Error, Result};
use crate::text::normalize_text;
use crate::vindex::EntryId;

/// Number of request logs kept for the stats endpoint.
pub const REQUEST_LOG_CAPACITY: usize = 1000;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChatRequest {
    pub session_id: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub response: String,
    pub cache: Outcome,
    pub latency_ms: f64,
    pub matched_entry_id: Option<EntryId>,
    pub stage1_similarity: Option<f64>,
    pub stage2_similarity: Option<f64>,
    /// Whitespace-word count of the reused response.
    pub tokens_saved: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestOutcome {
    Hit,
    Miss,
    Error,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RequestLog {
    pub seq: u64,
    pub path: String,
    pub session_id: String,
    pub outcome: RequestOutcome,
    pub matched_entry_id: Option<EntryId>,
    pub stage1_similarity: Option<f64>,
    pub stage2_similarity: Option<f64>,
    pub latency_ms: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Stats {
    pub metrics: Metrics,
    /// Newest first.
    pub log: Vec<RequestLog>,
}

pub struct ChatService {
    engine: Arc<Engine>,
    llm: LlmBackend,
    sessions: Mutex<HashMap<String, Arc<Mutex<SessionState>>>>,
    log: Mutex<VecDeque<RequestLog>>,
    seq: AtomicU64,
    llm_invocations: AtomicU64,
}

impl ChatService {
    pub fn new(engine: Arc<Engine>, llm: LlmBackend) -> Self {
        ChatService {
            engine,
            llm,
            sessions: Mutex::new(HashMap::new()),
            log: Mutex::new(VecDeque::with_capacity(REQUEST_LOG_CAPACITY)),
            seq: AtomicU64::new(0),
            llm_invocations: AtomicU64::new(0),
        }
    }

    pub fn engine(&self) -> &Arc<Engine> {
        &self.engine
    }

    /// How many times the LLM backend has been called.
    pub fn llm_invocations(&self) -> u64 {
        self.llm_invocations.load(Ordering::SeqCst)
    }

    fn session(&self, id: &str) -> Arc<Mutex<SessionState>> {
        self.sessions
            .lock()
            .entry(id.to_owned())
            .or_insert_with(|| Arc::new(Mutex::new(SessionState::new(id))))
            .clone()
    }

    pub fn handle_chat(&self, req: &ChatRequest) -> Result<ChatResponse> {
        let started = Instant::now();
        if req.session_id.trim().is_empty() {
            return Err(Error::InvalidRequest("session_id must not be empty".into()));
        }
        if normalize_text(&req.message).is_empty() {
            return Err(Error::InvalidRequest("message must not be empty".into()));
        }
        let session = self.session(&req.session_id);
        // requests within one session run in arrival order
        let mut session = session.lock();
        let result = self.engine.process(&mut session, &req.message, |history, query| {
            self.llm_invocations.fetch_add(1, Ordering::SeqCst);
            self.llm.invoke(history, query)
        });
        drop(session);
        let latency_ms = started.elapsed().as_secs_f64() * 1e3;
        let mut entry = RequestLog {
            seq: self.seq.fetch_add(1, Ordering::SeqCst),
            path: "/v1/chat".into(),
            session_id: req.session_id.clone(),
            outcome: RequestOutcome::Error,
            matched_entry_id: None,
            stage1_similarity: None,
            stage2_similarity: None,
            latency_ms,
        };
        let response = result.map(|p| {
            let hit = p.decision.is_hit();
            ChatResponse {
                response: p.response,
                cache: p.decision.outcome,
                latency_ms,
                matched_entry_id: if hit { p.entry_id } else { None },
                stage1_similarity: p.decision.stage1_similarity,
                stage2_similarity: p.decision.stage2_similarity,
                tokens_saved: p.tokens_saved,
            }
        });
        if let Ok(r) = &response {
            entry.outcome = match r.cache {
                Outcome::Hit => RequestOutcome::Hit,
                Outcome::Miss => RequestOutcome::Miss,
            };
            entry.matched_entry_id = r.matched_entry_id;
            entry.stage1_similarity = r.stage1_similarity;
            entry.stage2_similarity = r.stage2_similarity;
        }
        self.push_log(entry);
        response
    }

    fn push_log(&self, entry: RequestLog) {
        let mut log = self.log.lock();
        if log.len() == REQUEST_LOG_CAPACITY {
            log.pop_back();
        }
        log.push_front(entry);
    }

    pub fn handle_stats(&self) -> Stats {
        Stats { metrics: self.engine.snapshot_metrics(), log: self.log.lock().iter().cloned().collect() }
    }

    /// Clears the cache; sessions are kept.
    pub fn flush(&self) -> Result<usize> {
        self.engine.flush()
    }
}
