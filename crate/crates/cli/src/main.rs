use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use contextcache::attention::{write_weights, AttentionParams};
use contextcache::bench::{self, BenchReport, Dialogue, WorkloadRecord};
use contextcache::config::{ConfigLayers, CONFIG_KEYS};
use contextcache::engine::{Engine, SessionState};
use contextcache::service::{ChatService, LlmBackend};
use contextcache::trainer::{self, TrainHyper};
use contextcache::{CacheConfig, ContextStrategy, Store};

#[derive(Parser)]
#[command(name = "contextcache", version, about = "Context-aware semantic cache for multi-turn LLM chat")]
struct Cli {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(subcommand)]
    command: Command,
}

/// Every cache setting as a flag. Precedence: flag > environment > file > default.
#[derive(Args, Default)]
struct ConfigArgs {
    /// Configuration file (TOML, flat `key = value`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Vector width.
    #[arg(long, global = true)]
    d: Option<String>,
    /// Stage-1 query similarity threshold, in (0, 1].
    #[arg(long, global = true)]
    theta1: Option<String>,
    /// Stage-2 context similarity threshold, in (0, 1].
    #[arg(long, global = true)]
    theta2: Option<String>,
    /// Most stage-1 candidates passed to stage 2.
    #[arg(long = "k1-cap", global = true)]
    k1_cap: Option<String>,
    /// Most history turns pooled into the context vector.
    #[arg(long = "n-max", global = true)]
    n_max: Option<String>,
    /// Most cached entries before LRU eviction.
    #[arg(long, global = true)]
    capacity: Option<String>,
    /// last | mean.
    #[arg(long = "pooling-mode", global = true)]
    pooling_mode: Option<String>,
    /// Add sinusoidal turn positions (true | false).
    #[arg(long = "positional-encoding", global = true)]
    positional_encoding: Option<String>,
    /// query_only | concat | average | attention.
    #[arg(long, global = true)]
    strategy: Option<String>,
    /// Include assistant turns in the context (true | false).
    #[arg(long = "embed-assistant-turns", global = true)]
    embed_assistant_turns: Option<String>,
    /// Also store the hitting query as an alias entry (true | false).
    #[arg(long = "record-on-hit", global = true)]
    record_on_hit: Option<String>,
    /// token_hash | remote.
    #[arg(long, global = true)]
    embedder: Option<String>,
    /// Skip stopwords in the token-hash embedder (true | false).
    #[arg(long = "drop-stopwords", global = true)]
    drop_stopwords: Option<String>,
    /// Remote embedding endpoint URL.
    #[arg(long = "embedder-endpoint", global = true)]
    embedder_endpoint: Option<String>,
    /// Remote embedding model name.
    #[arg(long = "embedder-model", global = true)]
    embedder_model: Option<String>,
    /// Remote embedding request timeout.
    #[arg(long = "embedder-timeout-ms", global = true)]
    embedder_timeout_ms: Option<String>,
    /// Remote embedding retries.
    #[arg(long = "embedder-max-retries", global = true)]
    embedder_max_retries: Option<String>,
    /// mock | remote.
    #[arg(long = "llm-backend", global = true)]
    llm_backend: Option<String>,
    /// Mock LLM latency per call.
    #[arg(long = "llm-delay-ms", global = true)]
    llm_delay_ms: Option<String>,
    /// Chat-completion endpoint URL.
    #[arg(long = "llm-endpoint", global = true)]
    llm_endpoint: Option<String>,
    /// Chat-completion model name.
    #[arg(long = "llm-model", global = true)]
    llm_model: Option<String>,
    /// Environment variable holding the LLM API key.
    #[arg(long = "llm-api-key-env", global = true)]
    llm_api_key_env: Option<String>,
    /// LLM request timeout.
    #[arg(long = "llm-timeout-ms", global = true)]
    llm_timeout_ms: Option<String>,
    /// Append-only cache log; in memory when unset.
    #[arg(long = "store-path", global = true)]
    store_path: Option<String>,
    /// Attention weights file written by `train`.
    #[arg(long = "weights-path", global = true)]
    weights_path: Option<String>,
}

impl ConfigArgs {
    fn pairs(&self) -> Vec<(&'static str, String)> {
        let fields = [
            ("d", &self.d),
            ("theta1", &self.theta1),
            ("theta2", &self.theta2),
            ("k1_cap", &self.k1_cap),
            ("n_max", &self.n_max),
            ("capacity", &self.capacity),
            ("pooling_mode", &self.pooling_mode),
            ("positional_encoding", &self.positional_encoding),
            ("strategy", &self.strategy),
            ("embed_assistant_turns", &self.embed_assistant_turns),
            ("record_on_hit", &self.record_on_hit),
            ("embedder", &self.embedder),
            ("drop_stopwords", &self.drop_stopwords),
            ("embedder_endpoint", &self.embedder_endpoint),
            ("embedder_model", &self.embedder_model),
            ("embedder_timeout_ms", &self.embedder_timeout_ms),
            ("embedder_max_retries", &self.embedder_max_retries),
            ("llm_backend", &self.llm_backend),
            ("llm_delay_ms", &self.llm_delay_ms),
            ("llm_endpoint", &self.llm_endpoint),
            ("llm_model", &self.llm_model),
            ("llm_api_key_env", &self.llm_api_key_env),
            ("llm_timeout_ms", &self.llm_timeout_ms),
            ("store_path", &self.store_path),
            ("weights_path", &self.weights_path),
        ];
        debug_assert_eq!(fields.len(), CONFIG_KEYS.len());
        fields.into_iter().filter_map(|(k, v)| v.clone().map(|v| (k, v))).collect()
    }

    /// `base` is an optional built-in layer below the config file.
    fn load(&self, base: Option<&str>) -> anyhow::Result<CacheConfig> {
        let mut layers = ConfigLayers::new();
        if let Some(src) = base {
            layers = layers.file(src)?;
        }
        if let Some(path) = &self.config {
            let src = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            layers = layers.file(&src).with_context(|| format!("in {}", path.display()))?;
        }
        Ok(layers.env(std::env::vars()).overrides(self.pairs()).build()?)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP chat proxy.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: SocketAddr,
    },
    /// Replay a paraphrased workload and score each strategy.
    Bench {
        /// Dialogue file (ShareGPT JSON lines); the bundled corpus when omitted.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Replay this workload instead of generating one.
        #[arg(long, conflicts_with = "dataset")]
        workload: Option<PathBuf>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long = "warm-fraction", default_value_t = bench::DEFAULT_WARM_FRACTION)]
        warm_fraction: f64,
        #[arg(long, default_value = "bench-out")]
        out: PathBuf,
    },
    /// Fine-tune the attention projections on a dialogue file.
    Train {
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Extra records (workload JSON lines) used as additional negatives.
        #[arg(long)]
        negatives: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long = "learning-rate", default_value_t = 0.05)]
        learning_rate: f64,
        #[arg(long, default_value_t = 0.2)]
        margin: f64,
        #[arg(long = "negatives-per-anchor", default_value_t = 3)]
        negatives_per_anchor: usize,
        #[arg(long, default_value = "weights.bin")]
        out: PathBuf,
    },
    /// Record every exchange of a dialogue file into the cache.
    Warm {
        #[arg(long)]
        file: PathBuf,
    },
    /// List cached entries.
    Inspect {
        /// Longest query prefix to print.
        #[arg(long, default_value_t = 60)]
        width: usize,
    },
    /// Remove every cached entry.
    Flush,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_env("CONTEXTCACHE_LOG"))
        .with_writer(io::stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Serve { listen } => serve(cli.config.load(None)?, listen),
        Command::Bench { dataset, workload, seed, warm_fraction, out } => {
            let config = cli.config.load(Some(bench::FIXTURE_CONFIG))?;
            // an explicit --strategy picks one strategy; otherwise all are compared
            let strategies: Vec<ContextStrategy> = match cli.config.strategy {
                Some(_) => vec![config.strategy],
                None => vec![ContextStrategy::QueryOnly, ContextStrategy::Concat, ContextStrategy::Average, ContextStrategy::Attention],
            };
            let records = match workload {
                Some(path) => bench::read_workload(BufReader::new(open(&path)?))?,
                None => bench::generate_workload(&dialogues(dataset.as_deref())?, seed, warm_fraction)?,
            };
            bench::validate_lineage(&records)?;
            run_bench(&config, &records, &strategies, &out)
        }
        Command::Train { dataset, negatives, epochs, seed, learning_rate, margin, negatives_per_anchor, out } => {
            let config = cli.config.load(Some(bench::FIXTURE_CONFIG))?;
            let hyper = TrainHyper { margin, learning_rate, epochs, seed, negatives_per_anchor };
            let mut records = bench::generate_workload(&dialogues(dataset.as_deref())?, seed, bench::DEFAULT_WARM_FRACTION)?;
            if let Some(path) = negatives {
                records.extend(bench::read_workload(BufReader::new(open(&path)?))?);
            }
            run_train(&config, &records, &hyper, &out)
        }
        Command::Warm { file } => {
            let config = cli.config.load(None)?;
            if config.store_path.is_none() {
                bail!("warm needs a store: set store_path or pass --store-path");
            }
            let dialogues = bench::read_dialogues(BufReader::new(open(&file)?))?;
            let engine = Engine::from_config(config)?;
            let mut n = 0;
            for d in &dialogues {
                let mut session = SessionState::new(&d.id);
                for (q, r) in d.exchanges() {
                    let lookup = engine.lookup(&session, &q.text)?;
                    engine.record(&mut session, &q.text, &r.text, &lookup, contextcache::turn::word_count(&r.text))?;
                    n += 1;
                }
            }
            println!("recorded {n} exchanges from {} dialogues; {} entries cached", dialogues.len(), engine.len());
            Ok(())
        }
        Command::Inspect { width } => {
            let store = open_store(&cli.config.load(None)?)?;
            let mut out = io::stdout().lock();
            writeln!(out, "{:>8}  {:<24}  {:>4}  {:>5}  query", "id", "session", "turn", "hits")?;
            for e in store.scan_entries() {
                let query: String = e.query.chars().take(width).collect();
                let ellipsis = if e.query.chars().count() > width { "..." } else { "" };
                writeln!(out, "{:>8}  {:<24}  {:>4}  {:>5}  {query}{ellipsis}", e.entry_id, e.session_id, e.turn_index, e.hit_count)?;
            }
            Ok(())
        }
        Command::Flush => {
            let mut store = open_store(&cli.config.load(None)?)?;
            let n = store.len();
            store.clear()?;
            println!("removed {n} entries");
            Ok(())
        }
    }
}

fn open(path: &Path) -> anyhow::Result<File> {
    File::open(path).with_context(|| format!("opening {}", path.display()))
}

fn open_store(config: &CacheConfig) -> anyhow::Result<Store> {
    let Some(path) = &config.store_path else {
        bail!("no store configured: set store_path or pass --store-path");
    };
    Ok(Store::open(path)?)
}

fn dialogues(path: Option<&Path>) -> anyhow::Result<Vec<Dialogue>> {
    Ok(match path {
        Some(p) => bench::read_dialogues(BufReader::new(open(p)?))?,
        None => bench::bundled_dialogues(),
    })
}

fn serve(config: CacheConfig, listen: SocketAddr) -> anyhow::Result<()> {
    let llm = LlmBackend::from_config(&config)?;
    let engine = Arc::new(Engine::from_config(config)?);
    let service = Arc::new(ChatService::new(engine, llm));
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(listen).await?;
        eprintln!("listening on {}", listener.local_addr()?);
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        contextcache::service::serve(listener, service, shutdown).await?;
        anyhow::Ok(())
    })
}

fn run_bench(config: &CacheConfig, records: &[WorkloadRecord], strategies: &[ContextStrategy], out: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    bench::write_workload(BufWriter::new(File::create(out.join("workload.jsonl"))?), records)?;
    let mut csv = BufWriter::new(File::create(out.join("report.csv"))?);
    writeln!(csv, "{}", BenchReport::CSV_HEADER)?;
    for &s in strategies {
        let log = bench::replay(records, s, config)?;
        let report = bench::score(&log, records, s)?;
        let mut log_file = BufWriter::new(File::create(out.join(format!("{s}.log.jsonl")))?);
        for entry in &log {
            serde_json_line(&mut log_file, entry)?;
        }
        writeln!(csv, "{}", report.csv_row())?;
        println!("{report}");
    }
    csv.flush()?;
    println!("wrote {}", out.display());
    Ok(())
}

fn serde_json_line(w: &mut impl Write, value: &impl serde::Serialize) -> anyhow::Result<()> {
    serde_json::to_writer(&mut *w, value)?;
    w.write_all(b"\n")?;
    Ok(())
}

fn run_train(config: &CacheConfig, records: &[WorkloadRecord], hyper: &TrainHyper, out: &Path) -> anyhow::Result<()> {
    let embedder = contextcache::embedder::from_config(config)?;
    let examples = trainer::examples_from_workload(records, embedder.as_ref(), config)?;
    let init = AttentionParams::from_config(config)?;
    let outcome = trainer::train(&examples, hyper, init)?;
    for (epoch, loss) in outcome.losses.iter().enumerate() {
        println!("epoch {epoch:>3}  loss {loss:.6}");
    }
    write_weights(out, &outcome.params)?;
    println!("wrote {} (params version {:016x})", out.display(), outcome.params.version());
    Ok(())
}
