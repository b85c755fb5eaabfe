//! Benchmark harness: synthetic dialogues, paraphrased workloads, replay
//! against each context strategy, and precision/recall scoring.

mod corpus;
mod dataset;
mod paraphrase;
mod replay;
mod workload;

pub use corpus::{generate_corpus, topic_count, CORPUS_SEED};
pub use dataset::{read_dialogues, write_dialogues, Dialogue};
pub use paraphrase::{Paraphraser, BUNDLED_SYNONYMS};
pub use replay::{precision_recall, replay, score, BenchReport, LatencySummary, ReplayEntry};
pub use workload::{
    generate_workload, generate_workload_with, read_workload, validate_lineage, write_workload, Phase, WorkloadRecord,
};

use crate::config::{CacheConfig, ConfigLayers};
use crate::error::Result;

pub const BUNDLED_DIALOGUES: &str = include_str!("../../data/dialogues.jsonl");
/// Cache settings the bundled workload and the conversation fixtures are
/// calibrated for.
pub const FIXTURE_CONFIG: &str = include_str!("../../data/fixture.toml");
pub const DEFAULT_WARM_FRACTION: f64 = 0.3;

pub fn bundled_dialogues() -> Vec<Dialogue> {
    read_dialogues(BUNDLED_DIALOGUES.as_bytes()).expect("bundled dialogues parse")
}

pub fn fixture_config() -> Result<CacheConfig> {
    ConfigLayers::new().file(FIXTURE_CONFIG)?.build()
}
