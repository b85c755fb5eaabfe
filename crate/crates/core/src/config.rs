//! Cache configuration: a flat `key = value` file (TOML syntax) with
//! `CONTEXTCACHE_<KEY>` environment overrides.
//!
//! Every key is applied through [`CacheConfig::set`], so the file, the
//! environment and CLI flags share one parser. Precedence is decided by the
//! order in which callers apply layers: defaults, file, env, flags.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ENV_PREFIX: &str = "CONTEXTCACHE_";

/// Default vector width for the local token-hash embedder.
pub const DEFAULT_LOCAL_DIM: usize = 8;
/// Default vector width when a remote encoder is configured.
pub const DEFAULT_REMOTE_DIM: usize = 768;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PoolingMode {
    #[default]
    Last,
    Mean,
}

/// How the stage-2 context representation `g` is built.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ContextStrategy {
    /// Stage 1 only; `g` is the query vector.
    QueryOnly,
    /// `g` embeds the concatenated text of history and query.
    Concat,
    /// `g` is the normalized mean of the turn vectors.
    Average,
    /// `g` is attention-pooled over the turn vectors.
    #[default]
    Attention,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderKind {
    #[default]
    TokenHash,
    Remote,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LlmKind {
    #[default]
    Mock,
    Remote,
}

macro_rules! enum_names {
    ($ty:ty { $($variant:ident => $name:literal),+ $(,)? }) => {
        impl $ty {
            pub fn as_str(self) -> &'static str {
                match self { $(<$ty>::$variant => $name),+ }
            }
        }

        impl FromStr for $ty {
            type Err = String;

            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s.trim().to_ascii_lowercase().as_str() {
                    $($name => Ok(<$ty>::$variant),)+
                    other => Err(format!("unknown value `{other}`")),
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

enum_names!(PoolingMode { Last => "last", Mean => "mean" });
enum_names!(ContextStrategy {
    QueryOnly => "query_only",
    Concat => "concat",
    Average => "average",
    Attention => "attention",
});
enum_names!(EmbedderKind { TokenHash => "token_hash", Remote => "remote" });
enum_names!(LlmKind { Mock => "mock", Remote => "remote" });

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CacheConfig {
    pub d: usize,
    pub theta1: f64,
    pub theta2: f64,
    pub k1_cap: usize,
    pub n_max: usize,
    pub capacity: usize,
    pub pooling_mode: PoolingMode,
    pub positional_encoding: bool,
    pub strategy: ContextStrategy,
    pub embed_assistant_turns: bool,
    pub record_on_hit: bool,

    pub embedder: EmbedderKind,
    pub drop_stopwords: bool,
    pub embedder_endpoint: Option<String>,
    pub embedder_model: String,
    pub embedder_timeout_ms: u64,
    pub embedder_max_retries: u32,

    pub llm_backend: LlmKind,
    pub llm_delay_ms: u64,
    pub llm_endpoint: Option<String>,
    pub llm_model: String,
    pub llm_api_key_env: Option<String>,
    pub llm_timeout_ms: u64,

    pub store_path: Option<PathBuf>,
    pub weights_path: Option<PathBuf>,
}

impl Default for CacheConfig {
    fn default() -> Self {
        CacheConfig {
            d: DEFAULT_LOCAL_DIM,
            theta1: 0.7,
            theta2: 0.8,
            k1_cap: 16,
            n_max: 10,
            capacity: 10_000,
            pooling_mode: PoolingMode::Last,
            positional_encoding: true,
            strategy: ContextStrategy::Attention,
            embed_assistant_turns: false,
            record_on_hit: false,
            embedder: EmbedderKind::TokenHash,
            drop_stopwords: false,
            embedder_endpoint: None,
            embedder_model: "text-embedding".to_owned(),
            embedder_timeout_ms: 5_000,
            embedder_max_retries: 3,
            llm_backend: LlmKind::Mock,
            llm_delay_ms: 500,
            llm_endpoint: None,
            llm_model: "gpt-4o-mini".to_owned(),
            llm_api_key_env: None,
            llm_timeout_ms: 60_000,
            store_path: None,
            weights_path: None,
        }
    }
}

/// Every recognised key, in documentation order.
pub const CONFIG_KEYS: &[&str] = &[
    "d",
    "theta1",
    "theta2",
    "k1_cap",
    "n_max",
    "capacity",
    "pooling_mode",
    "positional_encoding",
    "strategy",
    "embed_assistant_turns",
    "record_on_hit",
    "embedder",
    "drop_stopwords",
    "embedder_endpoint",
    "embedder_model",
    "embedder_timeout_ms",
    "embedder_max_retries",
    "llm_backend",
    "llm_delay_ms",
    "llm_endpoint",
    "llm_model",
    "llm_api_key_env",
    "llm_timeout_ms",
    "store_path",
    "weights_path",
];

fn parse<T: FromStr>(field: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value.trim().parse::<T>().map_err(|e| Error::config(field, e.to_string()))
}

fn parse_bool(field: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "on" | "yes" => Ok(true),
        "false" | "0" | "off" | "no" => Ok(false),
        other => Err(Error::config(field, format!("expected a boolean, got `{other}`"))),
    }
}

fn opt_string(value: &str) -> Option<String> {
    let v = value.trim();
    (!v.is_empty()).then(|| v.to_owned())
}

impl CacheConfig {
    /// Applies one `key = value` setting. Range checks happen in
    /// [`CacheConfig::validate`].
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "d" => self.d = parse(key, value)?,
            "theta1" => self.theta1 = parse(key, value)?,
            "theta2" => self.theta2 = parse(key, value)?,
            "k1_cap" => self.k1_cap = parse(key, value)?,
            "n_max" => self.n_max = parse(key, value)?,
            "capacity" => self.capacity = parse(key, value)?,
            "pooling_mode" => self.pooling_mode = parse(key, value)?,
            "positional_encoding" => self.positional_encoding = parse_bool(key, value)?,
            "strategy" => self.strategy = parse(key, value)?,
            "embed_assistant_turns" => self.embed_assistant_turns = parse_bool(key, value)?,
            "record_on_hit" => self.record_on_hit = parse_bool(key, value)?,
            "embedder" => self.embedder = parse(key, value)?,
            "drop_stopwords" => self.drop_stopwords = parse_bool(key, value)?,
            "embedder_endpoint" => self.embedder_endpoint = opt_string(value),
            "embedder_model" => self.embedder_model = value.trim().to_owned(),
            "embedder_timeout_ms" => self.embedder_timeout_ms = parse(key, value)?,
            "embedder_max_retries" => self.embedder_max_retries = parse(key, value)?,
            "llm_backend" => self.llm_backend = parse(key, value)?,
            "llm_delay_ms" => self.llm_delay_ms = parse(key, value)?,
            "llm_endpoint" => self.llm_endpoint = opt_string(value),
            "llm_model" => self.llm_model = value.trim().to_owned(),
            "llm_api_key_env" => self.llm_api_key_env = opt_string(value),
            "llm_timeout_ms" => self.llm_timeout_ms = parse(key, value)?,
            "store_path" => self.store_path = opt_string(value).map(PathBuf::from),
            "weights_path" => self.weights_path = opt_string(value).map(PathBuf::from),
            other => return Err(Error::config(other, "unknown key")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        for (field, theta) in [("theta1", self.theta1), ("theta2", self.theta2)] {
            if !(theta > 0.0 && theta <= 1.0) {
                return Err(Error::config(field, format!("{theta} is outside (0, 1]")));
            }
        }
        for (field, v) in [
            ("d", self.d),
            ("k1_cap", self.k1_cap),
            ("n_max", self.n_max),
            ("capacity", self.capacity),
        ] {
            if v == 0 {
                return Err(Error::config(field, "must be at least 1"));
            }
        }
        if self.embedder == EmbedderKind::Remote && self.embedder_endpoint.is_none() {
            return Err(Error::config("embedder_endpoint", "required when embedder = remote"));
        }
        if self.llm_backend == LlmKind::Remote && self.llm_endpoint.is_none() {
            return Err(Error::config("llm_endpoint", "required when llm_backend = remote"));
        }
        Ok(())
    }

    /// Serializes to the flat file format accepted by [`load_config`].
    pub fn to_file_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Layers of raw `key -> value` settings, applied in order on top of defaults.
#[derive(Debug, Default, Clone)]
pub struct ConfigLayers {
    layers: Vec<BTreeMap<String, String>>,
}

impl ConfigLayers {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds the keys of a flat configuration document.
    pub fn file(mut self, source: &str) -> Result<Self> {
        self.layers.push(parse_document(source)?);
        Ok(self)
    }

    /// Adds `CONTEXTCACHE_*` overrides from an environment snapshot.
    pub fn env<I, K, V>(mut self, vars: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let layer = vars
            .into_iter()
            .filter_map(|(k, v)| {
                let key = k.as_ref().strip_prefix(ENV_PREFIX)?.to_ascii_lowercase();
                CONFIG_KEYS.contains(&key.as_str()).then(|| (key, v.as_ref().to_owned()))
            })
            .collect();
        self.layers.push(layer);
        self
    }

    /// Adds explicit overrides (CLI flags).
    pub fn overrides<I, K, V>(mut self, pairs: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        self.layers.push(pairs.into_iter().map(|(k, v)| (k.into(), v.into())).collect());
        self
    }

    pub fn build(&self) -> Result<CacheConfig> {
        let mut cfg = CacheConfig::default();
        let explicit_d = self.layers.iter().any(|l| l.contains_key("d"));
        for layer in &self.layers {
            for (k, v) in layer {
                cfg.set(k, v)?;
            }
        }
        if !explicit_d && cfg.embedder == EmbedderKind::Remote {
            cfg.d = DEFAULT_REMOTE_DIM;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_document(source: &str) -> Result<BTreeMap<String, String>> {
    let table: toml::Table =
        source.parse().map_err(|e: toml::de::Error| Error::config("<document>", e.message()))?;
    let mut out = BTreeMap::new();
    for (k, v) in table {
        if !CONFIG_KEYS.contains(&k.as_str()) {
            return Err(Error::config(k, "unknown key"));
        }
        let raw = match v {
            toml::Value::String(s) => s,
            toml::Value::Integer(i) => i.to_string(),
            toml::Value::Float(f) => f.to_string(),
            toml::Value::Boolean(b) => b.to_string(),
            other => return Err(Error::config(k, format!("unsupported value {other}"))),
        };
        out.insert(k, raw);
    }
    Ok(out)
}

/// Parses a configuration document, filling defaults and validating ranges.
pub fn load_config(source: &str) -> Result<CacheConfig> {
    ConfigLayers::new().file(source)?.build()
}
