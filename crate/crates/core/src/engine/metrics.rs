use serde::{Deserialize, Serialize};

/// Upper bucket bounds in milliseconds; the last bucket is open-ended.
pub const LATENCY_BUCKETS_MS: &[f64] =
    &[0.1, 0.25, 0.5, 1.0, 2.5, 5.0, 10.0, 25.0, 50.0, 100.0, 250.0, 500.0, 1000.0, 2500.0, 5000.0];

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub count: u64,
    pub sum_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    /// `buckets[i]` counts samples `<= LATENCY_BUCKETS_MS[i]`, exclusive of
    /// lower buckets; one extra trailing bucket for the overflow.
    pub buckets: Vec<u64>,
}

impl Histogram {
    pub fn new() -> Self {
        Histogram { buckets: vec![0; LATENCY_BUCKETS_MS.len() + 1], ..Default::default() }
    }

    pub fn record(&mut self, ms: f64) {
        if self.buckets.is_empty() {
            self.buckets = vec![0; LATENCY_BUCKETS_MS.len() + 1];
        }
        if self.count == 0 {
            self.min_ms = ms;
            self.max_ms = ms;
        } else {
            self.min_ms = self.min_ms.min(ms);
            self.max_ms = self.max_ms.max(ms);
        }
        self.count += 1;
        self.sum_ms += ms;
        let i = LATENCY_BUCKETS_MS.iter().position(|&b| ms <= b).unwrap_or(LATENCY_BUCKETS_MS.len());
        self.buckets[i] += 1;
    }

    pub fn mean_ms(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum_ms / self.count as f64
        }
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub queries_total: u64,
    pub cache_hits: u64,
    pub cache_misses: u64,
    pub llm_calls: u64,
    pub evictions: u64,
    pub failed_requests: u64,
    pub entries_live: u64,
    pub approx_memory_bytes: u64,
    pub hit_latency_ms: Histogram,
    pub miss_latency_ms: Histogram,
}

impl Default for Metrics {
    fn default() -> Self {
        Metrics {
            queries_total: 0,
            cache_hits: 0,
            cache_misses: 0,
            llm_calls: 0,
            evictions: 0,
            failed_requests: 0,
            entries_live: 0,
            approx_memory_bytes: 0,
            hit_latency_ms: Histogram::new(),
            miss_latency_ms: Histogram::new(),
        }
    }
}

impl Metrics {
    /// `queries_total == cache_hits + cache_misses` and `llm_calls == cache_misses`.
    pub fn identities_hold(&self) -> bool {
        self.queries_total == self.cache_hits + self.cache_misses && self.llm_calls == self.cache_misses
    }
}
