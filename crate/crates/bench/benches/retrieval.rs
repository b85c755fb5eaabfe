use std::hint::black_box;

use contextcache::attention::{pool_context, AttentionParams};
use contextcache::{CacheConfig, ContextStrategy, PoolingMode};
use contextcache_bench::{populated_engine, random_index, random_sequence, random_unit, session_with_history};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn vindex_query(c: &mut Criterion) {
    let mut group = c.benchmark_group("vindex_query_threshold");
    let d = 128;
    for n in [1_000, 10_000] {
        let index = random_index(n, d, 1);
        let q = random_unit(&mut ChaCha8Rng::seed_from_u64(2), d);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| index.query_threshold(black_box(&q), 0.1, 64).unwrap())
        });
    }
    group.finish();
}

fn attention_pool(c: &mut Criterion) {
    let mut group = c.benchmark_group("pool_context");
    let d = 128;
    for len in [1, 4, 11] {
        let seq = random_sequence(len, d, 3);
        for pooling in [PoolingMode::Last, PoolingMode::Mean] {
            let params = AttentionParams::identity(d).with_pooling(pooling);
            group.bench_with_input(BenchmarkId::new(pooling.to_string(), len), &len, |b, _| {
                b.iter(|| pool_context(black_box(&seq), &params).unwrap())
            });
        }
    }
    group.finish();
}

fn engine_lookup(c: &mut Criterion) {
    let mut group = c.benchmark_group("engine_lookup");
    for strategy in [ContextStrategy::QueryOnly, ContextStrategy::Attention] {
        let config = CacheConfig { d: 128, theta1: 0.1, strategy, ..CacheConfig::default() };
        let engine = populated_engine(config, 5_000, 4);
        let session = session_with_history(6);
        group.bench_function(strategy.to_string(), |b| {
            b.iter(|| engine.lookup(black_box(&session), "what are its key features").unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, vindex_query, attention_pool, engine_lookup);
criterion_main!(benches);
