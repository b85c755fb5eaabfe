use crate::embedder::{EmbeddingCacheKey, EmbeddingMemo};
use crate::turn::{Role, Turn};
use crate::vector::UnitVector;

/// One conversation's history. Sessions are sequential by nature; the engine
/// borrows them immutably for lookups and mutably to append turns.
#[derive(Debug)]
pub struct SessionState {
    session_id: String,
    turns: Vec<Turn>,
    memo: EmbeddingMemo,
    next_turn_index: u64,
}

impl SessionState {
    pub fn new(session_id: impl Into<String>) -> Self {
        SessionState {
            session_id: session_id.into(),
            turns: Vec::new(),
            memo: EmbeddingMemo::new(),
            next_turn_index: 0,
        }
    }

    /// Seeds a session with prior turns that never went through the cache.
    pub fn with_history(session_id: impl Into<String>, turns: Vec<Turn>) -> Self {
        let mut s = SessionState::new(session_id);
        s.next_turn_index = turns.iter().filter(|t| t.role == Role::User).count() as u64;
        s.turns = turns;
        s
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    pub fn turns(&self) -> &[Turn] {
        &self.turns
    }

    pub fn memo(&self) -> &EmbeddingMemo {
        &self.memo
    }

    /// Index the next user query will get.
    pub fn turn_index(&self) -> u64 {
        self.next_turn_index
    }

    /// Appends a completed exchange, keeping the query vector for reuse.
    pub(crate) fn push_exchange(&mut self, query: Turn, v_q: &UnitVector, response: Turn) {
        self.memo.insert(EmbeddingCacheKey::new(&query.text), v_q.clone());
        self.turns.push(query);
        self.turns.push(response);
        self.next_turn_index += 1;
    }
}
