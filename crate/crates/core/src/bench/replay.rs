//! Workload replay against one context strategy, and precision/recall scoring.

use std::collections::HashMap;
use std::fmt;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::workload::{Phase, WorkloadRecord};
use crate::config::{CacheConfig, ContextStrategy};
use crate::engine::{Engine, LlmReply, Outcome, SessionState};
use crate::error::{Error, Result};
use crate::turn::word_count;
use crate::vindex::EntryId;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayEntry {
    pub record_id: String,
    pub phase: Phase,
    pub outcome: Outcome,
    pub matched_entry_id: Option<EntryId>,
    /// Entry written for this record (warm records and misses).
    pub recorded_entry_id: Option<EntryId>,
    /// Entry holding the warm record this one paraphrases.
    pub target_entry_id: Option<EntryId>,
    /// Whether the target was still cached when this record was replayed.
    pub target_cached: bool,
    pub stage1_similarity: Option<f64>,
    pub stage2_similarity: Option<f64>,
    pub latency_ms: f64,
}

/// Replays `workload` on a fresh in-memory engine. Warm records are stored
/// unconditionally without consulting the LLM; test records go through the
/// full lookup path with a mock LLM that answers the reference response
/// after `config.llm_delay_ms`.
pub fn replay(workload: &[WorkloadRecord], strategy: ContextStrategy, config: &CacheConfig) -> Result<Vec<ReplayEntry>> {
    let config = CacheConfig { strategy, store_path: None, ..config.clone() };
    let delay = Duration::from_millis(config.llm_delay_ms);
    let engine = Engine::from_config(config)?;
    let mut sessions: HashMap<&str, SessionState> = HashMap::new();
    let mut warm_entries: HashMap<&str, EntryId> = HashMap::new();
    let mut log = Vec::with_capacity(workload.len());

    for rec in workload {
        let session = sessions.entry(rec.session_id.as_str()).or_insert_with(|| SessionState::new(&rec.session_id));
        match rec.phase {
            Phase::Warm => {
                let started = std::time::Instant::now();
                let lookup = engine.lookup(session, &rec.query)?;
                let tokens = word_count(&rec.reference_response);
                let id = engine.record(session, &rec.query, &rec.reference_response, &lookup, tokens)?;
                warm_entries.insert(rec.record_id.as_str(), id);
                log.push(ReplayEntry {
                    record_id: rec.record_id.clone(),
                    phase: Phase::Warm,
                    outcome: Outcome::Miss,
                    matched_entry_id: None,
                    recorded_entry_id: Some(id),
                    target_entry_id: None,
                    target_cached: false,
                    stage1_similarity: None,
                    stage2_similarity: None,
                    latency_ms: started.elapsed().as_secs_f64() * 1e3,
                });
            }
            Phase::Test => {
                let target = rec.paraphrase_of.as_deref().and_then(|t| warm_entries.get(t).copied());
                let target_cached = target.is_some_and(|id| engine.entry(id).is_ok());
                let p = engine.process(session, &rec.query, |_, _| {
                    thread::sleep(delay);
                    Ok(LlmReply { text: rec.reference_response.clone(), token_count: word_count(&rec.reference_response) })
                })?;
                let hit = p.decision.is_hit();
                log.push(ReplayEntry {
                    record_id: rec.record_id.clone(),
                    phase: Phase::Test,
                    outcome: p.decision.outcome,
                    matched_entry_id: if hit { p.entry_id } else { None },
                    recorded_entry_id: if hit { None } else { p.entry_id },
                    target_entry_id: target,
                    target_cached,
                    stage1_similarity: p.decision.stage1_similarity,
                    stage2_similarity: p.decision.stage2_similarity,
                    latency_ms: p.latency_ms,
                });
            }
        }
    }
    Ok(log)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub count: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
}

impl LatencySummary {
    pub fn from_samples(samples: &[f64]) -> Self {
        if samples.is_empty() {
            return LatencySummary::default();
        }
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        let rank = |q: f64| s[((q * s.len() as f64).ceil() as usize).clamp(1, s.len()) - 1];
        LatencySummary {
            count: s.len(),
            mean_ms: s.iter().sum::<f64>() / s.len() as f64,
            median_ms: rank(0.5),
            p95_ms: rank(0.95),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub strategy: ContextStrategy,
    pub true_hits: u64,
    pub false_hits: u64,
    pub missed_hits: u64,
    pub true_misses: u64,
    pub precision: f64,
    pub recall: f64,
    pub hit_latency: LatencySummary,
    pub miss_latency: LatencySummary,
}

pub fn precision_recall(true_hits: u64, false_hits: u64, missed_hits: u64) -> (f64, f64) {
    let ratio = |num: u64, den: u64| if den == 0 { 1.0 } else { num as f64 / den as f64 };
    (ratio(true_hits, true_hits + false_hits), ratio(true_hits, true_hits + missed_hits))
}

/// A test record should hit iff it paraphrases a warm record whose entry is
/// still cached. A hit counts as true only when it returns that entry.
pub fn score(log: &[ReplayEntry], workload: &[WorkloadRecord], strategy: ContextStrategy) -> Result<BenchReport> {
    if log.len() != workload.len() {
        return Err(Error::BenchInput(format!("log has {} entries for {} records", log.len(), workload.len())));
    }
    let (mut th, mut fh, mut mh, mut tm) = (0, 0, 0, 0);
    let (mut hit_ms, mut miss_ms) = (Vec::new(), Vec::new());
    for (entry, rec) in log.iter().zip(workload) {
        if entry.record_id != rec.record_id || entry.phase != rec.phase {
            return Err(Error::BenchInput(format!("log entry {} does not match record {}", entry.record_id, rec.record_id)));
        }
        if rec.phase == Phase::Warm {
            continue;
        }
        let should_hit = rec.paraphrase_of.is_some() && entry.target_cached;
        match entry.outcome {
            Outcome::Hit => {
                hit_ms.push(entry.latency_ms);
                if should_hit && entry.matched_entry_id == entry.target_entry_id {
                    th += 1;
                } else {
                    fh += 1;
                }
            }
            Outcome::Miss => {
                miss_ms.push(entry.latency_ms);
                if should_hit {
                    mh += 1;
                } else {
                    tm += 1;
                }
            }
        }
    }
    let (precision, recall) = precision_recall(th, fh, mh);
    Ok(BenchReport {
        strategy,
        true_hits: th,
        false_hits: fh,
        missed_hits: mh,
        true_misses: tm,
        precision,
        recall,
        hit_latency: LatencySummary::from_samples(&hit_ms),
        miss_latency: LatencySummary::from_samples(&miss_ms),
    })
}

impl BenchReport {
    pub const CSV_HEADER: &'static str = "strategy,true_hits,false_hits,missed_hits,true_misses,precision,recall,\
hit_mean_ms,hit_median_ms,hit_p95_ms,miss_mean_ms,miss_median_ms,miss_p95_ms";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{:.6},{:.6},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4}",
            self.strategy,
            self.true_hits,
            self.false_hits,
            self.missed_hits,
            self.true_misses,
            self.precision,
            self.recall,
            self.hit_latency.mean_ms,
            self.hit_latency.median_ms,
            self.hit_latency.p95_ms,
            self.miss_latency.mean_ms,
            self.miss_latency.median_ms,
            self.miss_latency.p95_ms,
        )
    }

    /// Test records accounted for.
    pub fn total(&self) -> u64 {
        self.true_hits + self.false_hits + self.missed_hits + self.true_misses
    }

    /// Everything except latency, which varies between runs.
    pub fn same_outcomes(&self, other: &BenchReport) -> bool {
        (self.strategy, self.true_hits, self.false_hits, self.missed_hits, self.true_misses)
            == (other.strategy, other.true_hits, other.false_hits, other.missed_hits, other.true_misses)
    }
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "strategy     {}", self.strategy)?;
        writeln!(f, "true hits    {}", self.true_hits)?;
        writeln!(f, "false hits   {}", self.false_hits)?;
        writeln!(f, "missed hits  {}", self.missed_hits)?;
        writeln!(f, "true misses  {}", self.true_misses)?;
        writeln!(f, "precision    {:.4}", self.precision)?;
        writeln!(f, "recall       {:.4}", self.recall)?;
        for (name, l) in [("hit", &self.hit_latency), ("miss", &self.miss_latency)] {
            writeln!(
                f,
                "{name:<4} latency mean {:.3} ms, median {:.3} ms, p95 {:.3} ms (n={})",
                l.mean_ms, l.median_ms, l.p95_ms, l.count
            )?;
        }
        Ok(())
    }
}
