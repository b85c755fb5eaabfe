//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::HashSet;
use std::io::{BufRead, BufReader};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use anyhow::{bail, ensure, Context, Result};
use contextcache::attention::{attend, pool_context, AttentionParams, ContextSequence};
use contextcache::bench::{
    bundled_dialogues, fixture_config, generate_workload, replay, score, BenchReport, LatencySummary, Phase,
    WorkloadRecord, DEFAULT_WARM_FRACTION,
};
use contextcache::engine::{Engine, LlmReply, MatchDecision, MissReason, Outcome, SessionState};
use contextcache::service::{ChatRequest, ChatResponse, ChatService, LlmBackend, Stats};
use contextcache::store::CacheEntry;
use contextcache::trainer::{loss_gradient, mean_loss, triplet_loss, Triplet};
use contextcache::vector::Matrix;
use contextcache::{normalize, CacheConfig, ContextStrategy, EntryId, Error, PoolingMode, Turn, UnitVector};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = fn() -> Result<String>;

fn main() {
    let criteria: [(&str, Check); 9] = [
        ("scenario fidelity", c1_scenario),
        ("hit latency ratio", c2_latency_ratio),
        ("two-stage oracle equivalence", c3_oracle),
        ("precision/recall separation", c4_precision_recall),
        ("attention unit properties", c5_attention),
        ("gradient check", c6_gradients),
        ("durability across kill -9", c7_durability),
        ("cache-hit overhead", c8_overhead),
        ("metrics identities", c9_metrics),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !filter.is_empty() && !filter.iter().any(|f| f == &n.to_string()) {
            continue;
        }
        let started = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|p| bail!("panicked: {}", panic_message(&p)));
        let secs = started.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {n} ({name}): PASS [{secs:.2}s] {detail}"),
            Err(e) => {
                failed += 1;
                println!("criterion {n} ({name}): FAIL [{secs:.2}s] {e:#}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

fn panic_message(p: &Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<String>()
        .cloned()
        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "unknown panic".into())
}

fn quiet_fixture() -> CacheConfig {
    CacheConfig { llm_delay_ms: 0, ..fixture_config().unwrap() }
}

fn user(text: &str) -> Turn {
    Turn::user(text).unwrap()
}

fn assistant(text: &str) -> Turn {
    Turn::assistant(text).unwrap()
}

fn echo_llm(_: &[Turn], q: &str) -> contextcache::Result<LlmReply> {
    Ok(LlmReply { text: format!("answer: {q}"), token_count: 2 })
}

fn c1_scenario() -> Result<String> {
    let started = Instant::now();
    let engine = Engine::from_config(quiet_fixture())?;
    let opening = [user("What is a relational database?"), assistant("A relational database stores data in tables.")];

    let mut warm = SessionState::with_history("warm", opening.to_vec());
    let lookup = engine.lookup(&warm, "What are its key features?")?;
    let warm_id = engine.record(&mut warm, "What are its key features?", "Tables, keys and SQL.", &lookup, 4)?;

    let mut matching = SessionState::with_history("matching", opening.to_vec());
    let a = engine.process(&mut matching, "Explain the important features as a relational database", |_, _| {
        Err(Error::LlmBackend("a hit must not call the LLM".into()))
    })?;
    ensure!(a.decision.outcome == Outcome::Hit, "paraphrase missed: {:?}", a.decision);
    ensure!(a.decision.matched_entry_id == Some(warm_id), "hit the wrong entry: {:?}", a.decision);

    let before = engine.len();
    let mut other = SessionState::with_history(
        "other",
        vec![user("What is cloud computing?"), assistant("Renting compute over the network.")],
    );
    let b = engine.process(&mut other, "What are its key features?", echo_llm)?;
    ensure!(b.decision.outcome == Outcome::Miss, "cross-context query hit: {:?}", b.decision);
    ensure!(engine.len() == before + 1, "store grew by {}", engine.len() - before);

    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    Ok(format!(
        "(a) hit S={:.3}; (b) miss S={:.3}, store {} -> {}",
        a.decision.stage2_similarity.unwrap(),
        b.decision.stage2_similarity.unwrap_or(f64::NAN),
        before,
        engine.len()
    ))
}

fn c2_latency_ratio() -> Result<String> {
    let started = Instant::now();
    let config = CacheConfig { d: 32, ..CacheConfig::default() };
    let service = ChatService::new(Arc::new(Engine::from_config(config)?), LlmBackend::mock(500));
    let message = "How do I reverse a linked list in place?";
    let miss = service.handle_chat(&ChatRequest { session_id: "origin".into(), message: message.into() })?;
    ensure!(miss.cache == Outcome::Miss, "first request should miss");
    let mut hits = Vec::with_capacity(100);
    for i in 0..100 {
        let r = service.handle_chat(&ChatRequest { session_id: format!("reader-{i}"), message: message.into() })?;
        ensure!(r.cache == Outcome::Hit, "request {i} missed");
        hits.push(r.latency_ms);
    }
    let summary = LatencySummary::from_samples(&hits);
    let ratio = miss.latency_ms / summary.p95_ms;
    ensure!(summary.p95_ms <= 50.0, "p95 hit latency {:.3} ms", summary.p95_ms);
    ensure!(ratio >= 10.0, "ratio {ratio:.1}");
    ensure!(started.elapsed() < Duration::from_secs(120), "took {:?}", started.elapsed());
    Ok(format!("miss {:.1} ms, p95 hit {:.3} ms, ratio {ratio:.0}x", miss.latency_ms, summary.p95_ms))
}

fn random_unit(rng: &mut ChaCha8Rng, d: usize) -> UnitVector {
    loop {
        let raw: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        if let Ok(v) = normalize(&raw) {
            return v;
        }
    }
}

fn near(rng: &mut ChaCha8Rng, v: &UnitVector, noise: f64) -> UnitVector {
    let raw: Vec<f64> = v.iter().map(|x| x + rng.random_range(-noise..noise)).collect();
    normalize(&raw).unwrap_or_else(|_| v.clone())
}

fn sum_dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s.clamp(-1.0, 1.0)
}

/// Brute-force decision over every entry, written without the index.
fn oracle(entries: &[CacheEntry], version: u64, cfg: &CacheConfig, v_q: &UnitVector, g: &UnitVector) -> MatchDecision {
    let mut miss = MatchDecision {
        outcome: Outcome::Miss,
        matched_entry_id: None,
        stage1_similarity: None,
        stage2_similarity: None,
        miss_reason: Some(MissReason::EmptyCache),
    };
    if entries.is_empty() {
        return miss;
    }
    let mut best: Option<&CacheEntry> = None;
    let mut best_s1 = f64::NEG_INFINITY;
    let mut best_s = f64::NEG_INFINITY;
    let mut top_s1 = f64::NEG_INFINITY;
    for e in entries {
        let s1 = sum_dot(v_q, &e.v_q);
        if s1 <= cfg.theta1 {
            continue;
        }
        top_s1 = top_s1.max(s1);
        if e.params_version != version {
            continue;
        }
        let s = sum_dot(g, &e.g);
        let wins = match best {
            None => true,
            Some(b) => {
                s > best_s
                    || (s == best_s && e.last_hit_at > b.last_hit_at)
                    || (s == best_s && e.last_hit_at == b.last_hit_at && e.entry_id < b.entry_id)
            }
        };
        if wins {
            best = Some(e);
            best_s = s;
            best_s1 = s1;
        }
    }
    if top_s1 == f64::NEG_INFINITY {
        miss.miss_reason = Some(MissReason::NoStage1Candidates);
        return miss;
    }
    match best {
        None => {
            miss.miss_reason = Some(MissReason::BelowTheta2);
            miss.stage1_similarity = Some(top_s1);
            miss
        }
        Some(b) if best_s > cfg.theta2 => MatchDecision {
            outcome: Outcome::Hit,
            matched_entry_id: Some(b.entry_id),
            stage1_similarity: Some(best_s1),
            stage2_similarity: Some(best_s),
            miss_reason: None,
        },
        Some(_) => {
            miss.miss_reason = Some(MissReason::BelowTheta2);
            miss.stage1_similarity = Some(best_s1);
            miss.stage2_similarity = Some(best_s);
            miss
        }
    }
}

fn c3_oracle() -> Result<String> {
    let started = Instant::now();
    let d = 8;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut lookups, mut hits) = (0, 0);
    for state in 0..200 {
        let config = CacheConfig {
            d,
            theta1: rng.random_range(0.01..0.8),
            theta2: rng.random_range(0.01..0.95),
            k1_cap: 1000,
            capacity: 1000,
            ..CacheConfig::default()
        };
        let engine = Engine::from_config(config.clone())?;
        let version = engine.params_version();
        let n = if state == 0 { 0 } else { rng.random_range(1..=1000) };
        let mut entries: Vec<CacheEntry> = Vec::with_capacity(n);
        for i in 0..n {
            // duplicated vectors and shared timestamps exercise the tie-breaks
            let (v_q, g) = match entries.choose(&mut rng) {
                Some(prev) if rng.random_bool(0.1) => (prev.v_q.clone(), prev.g.clone()),
                _ => (random_unit(&mut rng, d), random_unit(&mut rng, d)),
            };
            let entry = CacheEntry {
                entry_id: EntryId(i as u64 + 1),
                session_id: format!("s{i}"),
                turn_index: 0,
                query: format!("q{i}"),
                response: format!("r{i}"),
                v_q,
                g,
                created_at: i as u64,
                last_hit_at: rng.random_range(0..20),
                hit_count: 0,
                response_token_count: 1,
                params_version: if rng.random_bool(0.05) { version ^ 1 } else { version },
                created_wall_ms: 0,
            };
            engine.import_entry(entry.clone())?;
            entries.push(entry);
        }
        ensure!(engine.len() == n, "state {state}: {} of {n} entries live", engine.len());
        for _ in 0..50 {
            let (v_q, g) = match entries.choose(&mut rng) {
                Some(e) if rng.random_bool(0.5) => (near(&mut rng, &e.v_q, 0.5), near(&mut rng, &e.g, 0.8)),
                _ => (random_unit(&mut rng, d), random_unit(&mut rng, d)),
            };
            let got = engine.decide(&v_q, &g)?;
            let want = oracle(&entries, version, &config, &v_q, &g);
            ensure!(got == want, "state {state}: engine {got:?} vs oracle {want:?}");
            lookups += 1;
            hits += got.is_hit() as usize;
        }
    }
    ensure!(started.elapsed() < Duration::from_secs(300), "took {:?}", started.elapsed());
    Ok(format!("{lookups} lookups over 200 states agree ({hits} hits)"))
}

struct BenchRuns {
    query_only: [BenchReport; 2],
    attention: [BenchReport; 2],
}

fn bench_runs() -> &'static BenchRuns {
    static RUNS: OnceLock<BenchRuns> = OnceLock::new();
    RUNS.get_or_init(|| {
        let config = fixture_config().unwrap();
        let workload = generate_workload(&bundled_dialogues(), 42, DEFAULT_WARM_FRACTION).unwrap();
        let run = |s| score(&replay(&workload, s, &config).unwrap(), &workload, s).unwrap();
        let qo1 = run(ContextStrategy::QueryOnly);
        let at1 = run(ContextStrategy::Attention);
        let qo2 = run(ContextStrategy::QueryOnly);
        let at2 = run(ContextStrategy::Attention);
        BenchRuns { query_only: [qo1, qo2], attention: [at1, at2] }
    })
}

fn c4_precision_recall() -> Result<String> {
    let runs = bench_runs();
    let [qo, qo2] = &runs.query_only;
    let [at, at2] = &runs.attention;
    ensure!(qo.same_outcomes(qo2), "query_only report changed between runs");
    ensure!(at.same_outcomes(at2), "attention report changed between runs");
    ensure!(at.precision > qo.precision, "precision {:.3} vs {:.3}", at.precision, qo.precision);
    ensure!(at.recall >= qo.recall, "recall {:.3} vs {:.3}", at.recall, qo.recall);
    Ok(format!(
        "precision {:.3} vs {:.3}, recall {:.3} vs {:.3} (attention vs query_only), deterministic",
        at.precision, qo.precision, at.recall, qo.recall
    ))
}

fn c8_overhead() -> Result<String> {
    let runs = bench_runs();
    let mean = |r: &[BenchReport; 2]| (r[0].hit_latency.mean_ms + r[1].hit_latency.mean_ms) / 2.0;
    let (qo, at) = (mean(&runs.query_only), mean(&runs.attention));
    ensure!(qo > 0.0 && at > 0.0, "no hits recorded");
    let overhead = at / qo - 1.0;
    ensure!(overhead <= 0.25, "attention {at:.4} ms vs query_only {qo:.4} ms (+{:.1}%)", overhead * 100.0);
    Ok(format!("attention {at:.4} ms vs query_only {qo:.4} ms ({:+.1}%)", overhead * 100.0))
}

fn uv(v: &[f64]) -> UnitVector {
    normalize(v).unwrap()
}

fn c5_attention() -> Result<String> {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let d = rng.random_range(2..=8);
        let n = rng.random_range(1..=6);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| random_unit(&mut rng, d).to_vec()).collect();
        let x = Matrix::from_rows(&rows)?;
        let mut w = || {
            let mut m = Matrix::identity(d);
            m.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-1.0..1.0));
            m
        };
        let params = AttentionParams::new(w(), w(), w())?;
        let out = attend(&x, &params)?;
        for i in 0..n {
            let sum: f64 = (0..n).map(|j| out.weights[(i, j)]).sum();
            ensure!((sum - 1.0).abs() <= 1e-9, "softmax row sums to {sum}");
        }
    }

    for _ in 0..100 {
        let d = rng.random_range(2..=16);
        let v = random_unit(&mut rng, d);
        // the position-0 encoding offsets the row, so identity here means pe off
        for pooling in [PoolingMode::Last, PoolingMode::Mean] {
            let params = AttentionParams::identity(d).with_pooling(pooling).with_positional_encoding(false);
            let g = pool_context(&ContextSequence::new(vec![v.clone()])?, &params)?;
            let off = g.iter().zip(v.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            ensure!(off <= 1e-9, "single-turn g differs from v_Q by {off}");
        }
    }

    let mean_plain = AttentionParams::identity(6).with_pooling(PoolingMode::Mean).with_positional_encoding(false);
    for _ in 0..100 {
        let mut seq: Vec<UnitVector> = (0..rng.random_range(2..=6)).map(|_| random_unit(&mut rng, 6)).collect();
        let g1 = pool_context(&ContextSequence::new(seq.clone())?, &mean_plain)?;
        rand::seq::SliceRandom::shuffle(seq.as_mut_slice(), &mut rng);
        let g2 = pool_context(&ContextSequence::new(seq)?, &mean_plain)?;
        let off = g1.iter().zip(g2.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        ensure!(off <= 1e-9, "permutation changed g by {off}");
    }

    // Hand example: rows e1, e2 with identity weights. Values computed
    // independently: a = e^(1/sqrt 2) / (e^(1/sqrt 2) + 1).
    let a0 = 0.6697615493266569;
    let (hi, lo) = (0.8969000404208691, 0.44223332924265574);
    let x = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]])?;
    let out = attend(&x, &AttentionParams::identity(2))?;
    ensure!((out.weights[(0, 0)] - a0).abs() <= 1e-5, "weight {}", out.weights[(0, 0)]);
    ensure!((out.weights[(0, 1)] - (1.0 - a0)).abs() <= 1e-5, "weight {}", out.weights[(0, 1)]);
    let last = AttentionParams::identity(2).with_positional_encoding(false).with_pooling(PoolingMode::Last);
    let g = pool_context(&ContextSequence::new(vec![uv(&[0.0, 1.0]), uv(&[1.0, 0.0])])?, &last)?;
    ensure!((g[0] - hi).abs() <= 1e-5 && (g[1] - lo).abs() <= 1e-5, "pooled {:?}", g.as_slice());
    let g = pool_context(&ContextSequence::new(vec![uv(&[1.0, 0.0]), uv(&[0.0, 1.0])])?, &last)?;
    ensure!((g[0] - lo).abs() <= 1e-5 && (g[1] - hi).abs() <= 1e-5, "pooled {:?}", g.as_slice());

    ensure!(started.elapsed() < Duration::from_secs(10), "took {:?}", started.elapsed());
    Ok("softmax rows, single-turn identity, permutation invariance, d=2 example".into())
}

fn random_seq(rng: &mut ChaCha8Rng, d: usize) -> ContextSequence {
    let n = rng.random_range(1..=3);
    ContextSequence::new((0..n).map(|_| random_unit(rng, d)).collect()).unwrap()
}

fn perturbed(base: &AttentionParams, which: usize, r: usize, c: usize, delta: f64) -> AttentionParams {
    let mut ws = [base.w_q().clone(), base.w_k().clone(), base.w_v().clone()];
    ws[which][(r, c)] += delta;
    let [q, k, v] = ws;
    AttentionParams::new(q, k, v)
        .unwrap()
        .with_positional_encoding(base.positional_encoding)
        .with_pooling(base.pooling)
}

fn c6_gradients() -> Result<String> {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (margin, h) = (0.5, 1e-5);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    while checked < 20 {
        let d = rng.random_range(2..=4);
        let mut w = || {
            let mut m = Matrix::identity(d);
            m.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.5..0.5));
            m
        };
        let params = AttentionParams::new(w(), w(), w())?
            .with_positional_encoding(rng.random_bool(0.5))
            .with_pooling(if rng.random_bool(0.5) { PoolingMode::Last } else { PoolingMode::Mean });
        let batch: Vec<Triplet> = (0..2)
            .map(|_| {
                let negatives = (0..rng.random_range(1..=2)).map(|_| random_seq(&mut rng, d)).collect();
                Triplet::new(random_seq(&mut rng, d), random_seq(&mut rng, d), negatives).unwrap()
            })
            .collect();
        // the hinge is not differentiable at zero; skip instances close to it
        let near_kink = batch.iter().any(|t| {
            t.negatives.iter().any(|n| {
                let one = Triplet::new(t.anchor.clone(), t.positive.clone(), vec![n.clone()]).unwrap();
                let l = triplet_loss(&params, &one, margin).unwrap();
                let wider = triplet_loss(&params, &one, margin + 1e-3).unwrap();
                (l > 0.0 && l < 1e-3) || (l == 0.0 && wider > 0.0)
            })
        });
        if mean_loss(&params, &batch, margin)? == 0.0 || near_kink {
            continue;
        }
        let grads = loss_gradient(&params, &batch, margin)?;
        for (which, g) in [&grads.w_q, &grads.w_k, &grads.w_v].into_iter().enumerate() {
            for r in 0..d {
                for c in 0..d {
                    let up = mean_loss(&perturbed(&params, which, r, c, h), &batch, margin)?;
                    let down = mean_loss(&perturbed(&params, which, r, c, -h), &batch, margin)?;
                    let numeric = (up - down) / (2.0 * h);
                    let analytic = g[(r, c)];
                    let scale = analytic.abs().max(numeric.abs());
                    // entries that vanish analytically are compared absolutely
                    let err = if scale < 1e-6 { (numeric - analytic).abs() } else { (numeric - analytic).abs() / scale };
                    ensure!(err <= 1e-4, "instance {checked} w{which}[{r},{c}]: analytic {analytic} vs numeric {numeric}");
                    worst = worst.max(err);
                }
            }
        }
        checked += 1;
    }
    ensure!(started.elapsed() < Duration::from_secs(30), "took {:?}", started.elapsed());
    Ok(format!("20 instances, worst relative error {worst:.2e}"))
}

struct Server {
    child: Child,
    url: String,
}

impl Server {
    fn start(config: &Path) -> Result<Server> {
        let mut child = Command::new(env!("CARGO_BIN_EXE_contextcache"))
            .args(["--config", config.to_str().unwrap(), "serve", "--listen", "127.0.0.1:0"])
            .stdout(Stdio::null())
            .stderr(Stdio::piped())
            .spawn()
            .context("spawning server")?;
        let mut lines = BufReader::new(child.stderr.take().unwrap()).lines();
        let addr = loop {
            match lines.next() {
                Some(line) => {
                    if let Some(addr) = line?.strip_prefix("listening on ") {
                        break addr.trim().to_owned();
                    }
                }
                None => {
                    let _ = child.kill();
                    bail!("server exited before listening");
                }
            }
        };
        // keep draining so the server never blocks on a full pipe
        std::thread::spawn(move || lines.for_each(drop));
        Ok(Server { child, url: format!("http://{addr}") })
    }

    fn chat(&self, session: &str, message: &str) -> Result<ChatResponse> {
        let req = ChatRequest { session_id: session.into(), message: message.into() };
        Ok(ureq::post(&format!("{}/v1/chat", self.url)).send_json(&req)?.into_json()?)
    }

    fn stats(&self) -> Result<Stats> {
        Ok(ureq::get(&format!("{}/v1/stats", self.url)).call()?.into_json()?)
    }

    fn kill(mut self) -> Result<()> {
        // Child::kill sends SIGKILL on unix
        self.child.kill()?;
        self.child.wait()?;
        Ok(())
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn c7_durability() -> Result<String> {
    let started = Instant::now();
    let dir = tempfile::tempdir()?;
    let store = dir.path().join("cache.log");
    let config = CacheConfig { store_path: Some(store.clone()), ..quiet_fixture() };
    let config_file = dir.path().join("cache.toml");
    std::fs::write(&config_file, config.to_file_string())?;

    // in-process twin warmed with the same requests
    let twin = ChatService::new(
        Arc::new(Engine::from_config(CacheConfig { store_path: None, ..config.clone() })?),
        LlmBackend::mock(0),
    );
    let workload = generate_workload(&bundled_dialogues(), 7, DEFAULT_WARM_FRACTION)?;

    let server = Server::start(&config_file)?;
    let mut warmed: HashSet<&str> = HashSet::new();
    for r in workload.iter().filter(|r| r.phase == Phase::Warm) {
        if twin.engine().len() == 100 {
            break;
        }
        let remote = server.chat(&r.session_id, &r.query)?;
        let local = twin.handle_chat(&ChatRequest { session_id: r.session_id.clone(), message: r.query.clone() })?;
        let local = ChatResponse { latency_ms: remote.latency_ms, ..local };
        ensure!(remote == local, "warm response diverged at {}: {remote:?} vs {local:?}", r.record_id);
        warmed.insert(&r.record_id);
    }
    ensure!(twin.engine().len() == 100, "warm phase produced {} entries", twin.engine().len());
    ensure!(server.stats()?.metrics.entries_live == 100, "server holds a different entry count");
    server.kill()?;

    // rebuilt index answers random lookups exactly like the twin
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let texts: Vec<&str> = workload.iter().map(|r| r.query.as_str()).collect();
    {
        let reopened = Engine::from_config(config.clone())?;
        ensure!(reopened.len() == 100, "reopened store holds {} entries", reopened.len());
        for i in 0..100 {
            let history: Vec<Turn> = (0..rng.random_range(0..3)).map(|_| user(texts.choose(&mut rng).unwrap())).collect();
            let session = SessionState::with_history(format!("probe{i}"), history);
            let query = texts.choose(&mut rng).unwrap();
            let want = twin.engine().lookup(&session, query)?.decision;
            let got = reopened.lookup(&session, query)?.decision;
            ensure!(got == want, "probe {i} ({query}): {got:?} vs {want:?}");
        }
    }

    // replay paraphrase sessions whose every target was warmed
    let server = Server::start(&config_file)?;
    let mut sessions: Vec<&str> = Vec::new();
    for r in &workload {
        if r.session_id.starts_with("para/") && !sessions.contains(&r.session_id.as_str()) {
            sessions.push(&r.session_id);
        }
    }
    let in_session = |s: &str| workload.iter().filter(move |r| r.session_id == s).collect::<Vec<&WorkloadRecord>>();
    let (mut expected, mut preserved) = (0, 0);
    for s in sessions {
        let records = in_session(s);
        if !records.iter().all(|r| r.paraphrase_of.as_deref().is_some_and(|t| warmed.contains(t))) {
            continue;
        }
        for r in records {
            let target = workload.iter().find(|w| Some(&w.record_id) == r.paraphrase_of.as_ref()).unwrap();
            let local = twin.handle_chat(&ChatRequest { session_id: r.session_id.clone(), message: r.query.clone() })?;
            let remote = server.chat(&r.session_id, &r.query)?;
            let lineage_correct = local.matched_entry_id.is_some_and(|id| {
                twin.engine()
                    .entry(id)
                    .is_ok_and(|e| e.session_id == target.session_id && e.query == target.query)
            });
            if lineage_correct {
                expected += 1;
                if remote.cache == Outcome::Hit && remote.matched_entry_id == local.matched_entry_id {
                    preserved += 1;
                }
            }
            ensure!(remote.cache == local.cache, "{}: {:?} after restart vs {:?}", r.record_id, remote.cache, local.cache);
        }
    }
    server.kill()?;
    ensure!(expected > 0, "no lineage-correct hits to check");
    ensure!(preserved == expected, "{preserved}/{expected} lineage-correct hits preserved");
    ensure!(started.elapsed() < Duration::from_secs(60), "took {:?}", started.elapsed());
    Ok(format!("100 entries survived kill -9; 100/100 probes identical; {preserved}/{expected} lineage-correct hits preserved"))
}

fn c9_metrics() -> Result<String> {
    let engine = Engine::from_config(CacheConfig { d: 16, capacity: 200, ..CacheConfig::default() })?;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let words = ["cache", "vector", "query", "index", "rust", "thread", "disk", "model", "token", "latency"];
    let mut sessions: Vec<SessionState> = (0..20).map(|i| SessionState::new(format!("s{i}"))).collect();
    let mut failures = 0;
    for i in 0..1000 {
        let n = rng.random_range(1..=3);
        let query = (0..n).map(|_| *words.choose(&mut rng).unwrap()).collect::<Vec<_>>().join(" ");
        let fail = rng.random_bool(0.1);
        let k = rng.random_range(0..sessions.len());
        let session = &mut sessions[k];
        let result = engine.process(session, &query, |h, q| {
            if fail {
                Err(Error::LlmBackend("injected".into()))
            } else {
                echo_llm(h, q)
            }
        });
        if result.is_err() {
            failures += 1;
        }
        let m = engine.snapshot_metrics();
        ensure!(m.queries_total == m.cache_hits + m.cache_misses, "request {i}: {m:?}");
        ensure!(m.llm_calls == m.cache_misses, "request {i}: {m:?}");
        ensure!(m.failed_requests == failures, "request {i}: failed {} vs {failures}", m.failed_requests);
    }
    let m = engine.snapshot_metrics();
    Ok(format!("{} hits, {} misses, {} failed, identities held after every request", m.cache_hits, m.cache_misses, failures))
}
