//! The cache workflow: context collection, two-stage lookup, response
//! determination, cache update, eviction and metrics.

mod metrics;
mod session;

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

pub use metrics::{Histogram, Metrics, LATENCY_BUCKETS_MS};
pub use session::SessionState;

use crate::attention::{pool_context, AttentionParams, ContextSequence};
use crate::config::{CacheConfig, ContextStrategy};
use crate::embedder::{embed_history, Embedder, EmbeddingCacheKey};
use crate::error::{Error, Result};
use crate::store::{CacheEntry, Store};
use crate::turn::{word_count, Role, Turn};
use crate::vector::{cosine, UnitVector};
use crate::vindex::{EntryId, FlatIndex};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Hit,
    Miss,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissReason {
    /// Nothing is cached at all.
    EmptyCache,
    NoStage1Candidates,
    BelowTheta2,
}

/// Result of the two-stage lookup. On a miss with candidates, the
/// similarities describe the best rejected candidate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchDecision {
    pub outcome: Outcome,
    pub matched_entry_id: Option<EntryId>,
    pub stage1_similarity: Option<f64>,
    pub stage2_similarity: Option<f64>,
    pub miss_reason: Option<MissReason>,
}

impl MatchDecision {
    fn miss(reason: MissReason) -> Self {
        MatchDecision {
            outcome: Outcome::Miss,
            matched_entry_id: None,
            stage1_similarity: None,
            stage2_similarity: None,
            miss_reason: Some(reason),
        }
    }

    pub fn is_hit(&self) -> bool {
        self.outcome == Outcome::Hit
    }
}

/// A lookup's decision plus the vectors needed to record a miss.
#[derive(Clone, Debug)]
pub struct Lookup {
    pub decision: MatchDecision,
    pub v_q: UnitVector,
    pub g_current: UnitVector,
}

/// What the LLM backend returned for a miss.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LlmReply {
    pub text: String,
    pub token_count: usize,
}

/// Outcome of one end-to-end request through [`Engine::process`].
#[derive(Clone, Debug)]
pub struct Processed {
    pub decision: MatchDecision,
    pub response: String,
    /// Matched entry on a hit, newly recorded entry on a miss.
    pub entry_id: Option<EntryId>,
    pub tokens_saved: u64,
    pub latency_ms: f64,
}

struct CacheState {
    store: Store,
    index: FlatIndex,
    /// (last_hit_at, created_at, id): the first element is the eviction victim.
    lru: BTreeSet<(u64, u64, EntryId)>,
    approx_bytes: u64,
}

impl CacheState {
    fn lru_key(e: &CacheEntry) -> (u64, u64, EntryId) {
        (e.last_hit_at, e.created_at, e.entry_id)
    }
}

pub struct Engine {
    config: CacheConfig,
    embedder: Arc<dyn Embedder>,
    params: AttentionParams,
    version: u64,
    state: RwLock<CacheState>,
    metrics: Mutex<Metrics>,
}

/// Stamp for strategies whose `g` does not depend on attention weights.
fn strategy_version(strategy: ContextStrategy, params: &AttentionParams) -> u64 {
    match strategy {
        ContextStrategy::Attention => params.version(),
        ContextStrategy::QueryOnly => 1,
        ContextStrategy::Concat => 2,
        ContextStrategy::Average => 3,
    }
}

fn wall_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

impl Engine {
    /// Opens the store named by `config.store_path` (in memory when unset)
    /// and rebuilds the vector index from it.
    pub fn open(config: CacheConfig, embedder: Arc<dyn Embedder>, params: AttentionParams) -> Result<Self> {
        let store = match &config.store_path {
            Some(path) => Store::open(path)?,
            None => Store::in_memory(),
        };
        Self::with_store(config, embedder, params, store)
    }

    /// Builds the embedder and attention parameters from `config`.
    pub fn from_config(config: CacheConfig) -> Result<Self> {
        config.validate()?;
        let embedder = crate::embedder::from_config(&config)?;
        let params = AttentionParams::from_config(&config)?;
        Self::open(config, embedder, params)
    }

    pub fn with_store(
        config: CacheConfig,
        embedder: Arc<dyn Embedder>,
        params: AttentionParams,
        store: Store,
    ) -> Result<Self> {
        config.validate()?;
        if embedder.dim() != config.d {
            return Err(Error::Dimension { expected: config.d, actual: embedder.dim() });
        }
        if params.dim() != config.d {
            return Err(Error::Dimension { expected: config.d, actual: params.dim() });
        }
        let mut index = FlatIndex::new(config.d);
        let mut lru = BTreeSet::new();
        let mut approx_bytes = 0;
        for e in store.scan_entries() {
            index.insert(e.entry_id, &e.v_q)?;
            lru.insert(CacheState::lru_key(e));
            approx_bytes += e.approx_bytes() as u64;
        }
        let version = strategy_version(config.strategy, &params);
        let engine = Engine {
            config,
            embedder,
            params,
            version,
            state: RwLock::new(CacheState { store, index, lru, approx_bytes }),
            metrics: Mutex::new(Metrics::default()),
        };
        engine.evict_if_needed()?;
        Ok(engine)
    }

    pub fn config(&self) -> &CacheConfig {
        &self.config
    }

    pub fn embedder(&self) -> &Arc<dyn Embedder> {
        &self.embedder
    }

    pub fn params(&self) -> &AttentionParams {
        &self.params
    }

    /// Stamp written into every entry this engine records.
    pub fn params_version(&self) -> u64 {
        self.version
    }

    pub fn len(&self) -> usize {
        self.state.read().store.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn entry(&self, id: EntryId) -> Result<CacheEntry> {
        self.state.read().store.get_entry(id).cloned()
    }

    /// Snapshot of all live entries in id order.
    pub fn entries(&self) -> Vec<CacheEntry> {
        self.state.read().store.scan_entries().cloned().collect()
    }

    fn context_turns<'a>(&self, session: &'a SessionState) -> Vec<&'a Turn> {
        let include_assistant = self.config.embed_assistant_turns;
        let mut picked: Vec<&Turn> = session
            .turns()
            .iter()
            .rev()
            .filter(|t| include_assistant || t.role == Role::User)
            .take(self.config.n_max)
            .collect();
        picked.reverse();
        picked
    }

    fn embed_query(&self, session: &SessionState, query: &str) -> Result<UnitVector> {
        let key = EmbeddingCacheKey::new(query);
        if key.as_str().is_empty() {
            return Err(Error::EmptyQuery);
        }
        match session.memo().get(&key) {
            Some(v) => Ok(v),
            None => self.embedder.embed(query),
        }
    }

    /// Context representation of `history + query` under this engine's strategy.
    pub fn context_vector(&self, session: &SessionState, query: &str, v_q: &UnitVector) -> Result<UnitVector> {
        let history: Vec<Turn> = self.context_turns(session).into_iter().cloned().collect();
        match self.config.strategy {
            ContextStrategy::QueryOnly => Ok(v_q.clone()),
            ContextStrategy::Concat => {
                let mut text = String::new();
                for t in &history {
                    text.push_str(&t.text);
                    text.push(' ');
                }
                text.push_str(query);
                self.embedder.embed(&text)
            }
            ContextStrategy::Average => {
                let mut vs = embed_history(self.embedder.as_ref(), &history, session.memo())?;
                vs.push(v_q.clone());
                let d = v_q.dim();
                let mut mean = vec![0.0; d];
                for v in &vs {
                    mean.iter_mut().zip(v.iter()).for_each(|(m, x)| *m += x);
                }
                let n = vs.len() as f64;
                mean.iter_mut().for_each(|m| *m /= n);
                UnitVector::normalize(&mean)
            }
            ContextStrategy::Attention => {
                let mut vs = embed_history(self.embedder.as_ref(), &history, session.memo())?;
                vs.push(v_q.clone());
                pool_context(&ContextSequence::new(vs)?, &self.params)
            }
        }
    }

    /// Two-stage lookup. Never mutates the cache.
    pub fn lookup(&self, session: &SessionState, query: &str) -> Result<Lookup> {
        let v_q = self.embed_query(session, query)?;
        let g_current = self.context_vector(session, query, &v_q)?;
        let decision = self.decide(&v_q, &g_current)?;
        Ok(Lookup { decision, v_q, g_current })
    }

    /// Runs both stages for precomputed vectors.
    pub fn decide(&self, v_q: &UnitVector, g_current: &UnitVector) -> Result<MatchDecision> {
        let state = self.state.read();
        if state.index.is_empty() {
            return Ok(MatchDecision::miss(MissReason::EmptyCache));
        }
        let candidates = state.index.query_threshold(v_q, self.config.theta1, self.config.k1_cap)?;
        if candidates.is_empty() {
            return Ok(MatchDecision::miss(MissReason::NoStage1Candidates));
        }
        // best by (S_c desc, last_hit_at desc, id asc)
        let mut best: Option<(f64, f64, u64, EntryId)> = None;
        for c in &candidates {
            let entry = state.store.get_entry(c.entry_id)?;
            if entry.params_version != self.version {
                continue;
            }
            let s = cosine(g_current, &entry.g)?;
            let better = match best {
                None => true,
                Some((bs, _, bl, bid)) => {
                    s > bs || (s == bs && (entry.last_hit_at > bl || (entry.last_hit_at == bl && c.entry_id < bid)))
                }
            };
            if better {
                best = Some((s, c.stage1_similarity, entry.last_hit_at, c.entry_id));
            }
        }
        let Some((s_c, s1, _, id)) = best else {
            // every candidate was produced under different parameters
            let mut d = MatchDecision::miss(MissReason::BelowTheta2);
            d.stage1_similarity = Some(candidates[0].stage1_similarity);
            return Ok(d);
        };
        if s_c > self.config.theta2 {
            Ok(MatchDecision {
                outcome: Outcome::Hit,
                matched_entry_id: Some(id),
                stage1_similarity: Some(s1),
                stage2_similarity: Some(s_c),
                miss_reason: None,
            })
        } else {
            Ok(MatchDecision {
                outcome: Outcome::Miss,
                matched_entry_id: None,
                stage1_similarity: Some(s1),
                stage2_similarity: Some(s_c),
                miss_reason: Some(MissReason::BelowTheta2),
            })
        }
    }

    /// Stores a new entry for a missed query and appends the exchange to the
    /// session.
    pub fn record(
        &self,
        session: &mut SessionState,
        query: &str,
        response: &str,
        lookup: &Lookup,
        response_token_count: usize,
    ) -> Result<EntryId> {
        let query_turn = Turn::user(query)?;
        let response_turn = Turn::assistant(response)?;
        let id = self.insert_entry(session, query, response, lookup, response_token_count)?;
        session.push_exchange(query_turn, &lookup.v_q, response_turn);
        Ok(id)
    }

    fn insert_entry(
        &self,
        session: &SessionState,
        query: &str,
        response: &str,
        lookup: &Lookup,
        response_token_count: usize,
    ) -> Result<EntryId> {
        let mut evicted = 0;
        let id = {
            let mut state = self.state.write();
            let id = state.store.allocate_id();
            let now = state.store.tick();
            let entry = CacheEntry {
                entry_id: id,
                session_id: session.session_id().to_owned(),
                turn_index: session.turn_index(),
                query: query.to_owned(),
                response: response.to_owned(),
                v_q: lookup.v_q.clone(),
                g: lookup.g_current.clone(),
                created_at: now,
                last_hit_at: now,
                hit_count: 0,
                response_token_count: response_token_count as u64,
                params_version: self.version,
                created_wall_ms: wall_ms(),
            };
            let key = CacheState::lru_key(&entry);
            let bytes = entry.approx_bytes() as u64;
            state.index.insert(id, &lookup.v_q)?;
            if let Err(e) = state.store.put_entry(entry) {
                state.index.remove(id)?;
                return Err(e);
            }
            state.lru.insert(key);
            state.approx_bytes += bytes;
            evicted += Self::evict_locked(&mut state, self.config.capacity)?;
            id
        };
        if evicted > 0 {
            self.metrics.lock().evictions += evicted as u64;
        }
        Ok(id)
    }

    /// Marks `id` as hit and appends the exchange with the cached response.
    /// Returns `None` when the entry vanished since the lookup.
    pub fn serve_hit(&self, session: &mut SessionState, query: &str, lookup: &Lookup) -> Result<Option<CacheEntry>> {
        let Some(id) = lookup.decision.matched_entry_id.filter(|_| lookup.decision.is_hit()) else {
            return Err(Error::InvalidRequest("serve_hit called without a hit".into()));
        };
        let entry = {
            let mut state = self.state.write();
            let Ok(old) = state.store.get_entry(id).map(CacheState::lru_key) else {
                return Ok(None);
            };
            let now = state.store.tick();
            state.store.touch(id, now)?;
            let entry = state.store.get_entry(id)?.clone();
            state.lru.remove(&old);
            state.lru.insert(CacheState::lru_key(&entry));
            entry
        };
        if self.config.record_on_hit {
            self.insert_entry(session, query, &entry.response, lookup, entry.response_token_count as usize)?;
        }
        session.push_exchange(Turn::user(query)?, &lookup.v_q, Turn::assistant(entry.response.clone())?);
        Ok(Some(entry))
    }

    fn evict_locked(state: &mut CacheState, capacity: usize) -> Result<usize> {
        let mut evicted = 0;
        while state.store.len() > capacity {
            let Some(victim) = state.lru.pop_first() else { break };
            let removed = state.store.delete_entry(victim.2)?;
            state.index.remove(victim.2)?;
            state.approx_bytes = state.approx_bytes.saturating_sub(removed.approx_bytes() as u64);
            evicted += 1;
        }
        Ok(evicted)
    }

    /// Evicts least-recently-hit entries (oldest first on ties) until the
    /// cache fits its capacity.
    pub fn evict_if_needed(&self) -> Result<usize> {
        let n = Self::evict_locked(&mut self.state.write(), self.config.capacity)?;
        if n > 0 {
            self.metrics.lock().evictions += n as u64;
        }
        Ok(n)
    }

    /// Full request workflow: lookup, then either serve the cached response
    /// or call `llm` and record its answer.
    pub fn process<F>(&self, session: &mut SessionState, query: &str, llm: F) -> Result<Processed>
    where
        F: FnOnce(&[Turn], &str) -> Result<LlmReply>,
    {
        let started = Instant::now();
        let result = self.process_inner(session, query, llm, started);
        if result.is_err() {
            self.metrics.lock().failed_requests += 1;
        }
        result
    }

    fn process_inner<F>(&self, session: &mut SessionState, query: &str, llm: F, started: Instant) -> Result<Processed>
    where
        F: FnOnce(&[Turn], &str) -> Result<LlmReply>,
    {
        let mut lookup = self.lookup(session, query)?;
        if lookup.decision.is_hit() {
            if let Some(entry) = self.serve_hit(session, query, &lookup)? {
                let latency_ms = started.elapsed().as_secs_f64() * 1e3;
                {
                    let mut m = self.metrics.lock();
                    m.queries_total += 1;
                    m.cache_hits += 1;
                    m.hit_latency_ms.record(latency_ms);
                }
                return Ok(Processed {
                    decision: lookup.decision,
                    response: entry.response,
                    entry_id: Some(entry.entry_id),
                    tokens_saved: entry.response_token_count,
                    latency_ms,
                });
            }
            // evicted between lookup and hit: fall through as a miss
            lookup.decision = MatchDecision::miss(MissReason::NoStage1Candidates);
        }
        let reply = llm(session.turns(), query)?;
        let id = self.record(session, query, &reply.text, &lookup, reply.token_count)?;
        let latency_ms = started.elapsed().as_secs_f64() * 1e3;
        {
            let mut m = self.metrics.lock();
            m.queries_total += 1;
            m.cache_misses += 1;
            m.llm_calls += 1;
            m.miss_latency_ms.record(latency_ms);
        }
        Ok(Processed { decision: lookup.decision, response: reply.text, entry_id: Some(id), tokens_saved: 0, latency_ms })
    }

    pub fn snapshot_metrics(&self) -> Metrics {
        let state = self.state.read();
        let mut m = self.metrics.lock().clone();
        m.entries_live = state.store.len() as u64;
        m.approx_memory_bytes = state.approx_bytes + (state.index.len() * self.config.d * 8) as u64;
        m
    }

    /// Drops every cached entry.
    pub fn flush(&self) -> Result<usize> {
        let mut state = self.state.write();
        let n = state.store.len();
        state.store.clear()?;
        state.index = FlatIndex::new(self.config.d);
        state.lru.clear();
        state.approx_bytes = 0;
        Ok(n)
    }

    /// Inserts a fully formed entry, e.g. when importing from another store.
    pub fn import_entry(&self, entry: CacheEntry) -> Result<()> {
        let mut state = self.state.write();
        if entry.v_q.dim() != self.config.d || entry.g.dim() != self.config.d {
            return Err(Error::Dimension { expected: self.config.d, actual: entry.v_q.dim() });
        }
        let key = CacheState::lru_key(&entry);
        let bytes = entry.approx_bytes() as u64;
        let id = entry.entry_id;
        state.index.insert(id, &entry.v_q)?;
        if let Err(e) = state.store.put_entry(entry) {
            state.index.remove(id)?;
            return Err(e);
        }
        state.lru.insert(key);
        state.approx_bytes += bytes;
        let evicted = Self::evict_locked(&mut state, self.config.capacity)?;
        drop(state);
        if evicted > 0 {
            self.metrics.lock().evictions += evicted as u64;
        }
        Ok(())
    }
}

/// Word-count token estimate used when a backend does not report usage.
pub fn estimate_tokens(text: &str) -> usize {
    word_count(text)
}
