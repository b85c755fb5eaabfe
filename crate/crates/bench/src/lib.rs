//! Fixtures shared by the retrieval benchmarks.

use contextcache::attention::ContextSequence;
use contextcache::engine::{Engine, SessionState};
use contextcache::store::CacheEntry;
use contextcache::{normalize, CacheConfig, EntryId, FlatIndex, Turn, UnitVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_unit(rng: &mut impl Rng, d: usize) -> UnitVector {
    loop {
        let raw: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        if let Ok(v) = normalize(&raw) {
            return v;
        }
    }
}

/// Index holding `n` random unit vectors.
pub fn random_index(n: usize, d: usize, seed: u64) -> FlatIndex {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut index = FlatIndex::new(d);
    for i in 0..n {
        index.insert(EntryId(i as u64 + 1), &random_unit(&mut rng, d)).expect("dimension matches");
    }
    index
}

pub fn random_sequence(len: usize, d: usize, seed: u64) -> ContextSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ContextSequence::new((0..len).map(|_| random_unit(&mut rng, d)).collect()).expect("non-empty sequence")
}

/// Engine preloaded with `n` entries with random vectors.
pub fn populated_engine(config: CacheConfig, n: usize, seed: u64) -> Engine {
    let d = config.d;
    let engine = Engine::from_config(config).expect("valid config");
    let version = engine.params_version();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..n {
        let entry = CacheEntry {
            entry_id: EntryId(i as u64 + 1),
            session_id: format!("s{i}"),
            turn_index: 0,
            query: format!("query {i}"),
            response: format!("response {i}"),
            v_q: random_unit(&mut rng, d),
            g: random_unit(&mut rng, d),
            created_at: i as u64,
            last_hit_at: i as u64,
            hit_count: 0,
            response_token_count: 2,
            params_version: version,
            created_wall_ms: 0,
        };
        engine.import_entry(entry).expect("import");
    }
    engine
}

/// Session with `turns` prior user turns.
pub fn session_with_history(turns: usize) -> SessionState {
    let history = (0..turns)
        .map(|i| Turn::user(format!("earlier question number {i} about databases")).expect("non-empty"))
        .collect();
    SessionState::with_history("bench", history)
}
