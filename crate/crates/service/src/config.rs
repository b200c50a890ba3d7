//! `key = value` configuration with `TICKETRAG_*` environment overrides.
//!
//! Every key maps to an environment variable by uppercasing it, replacing
//! dots with underscores and prefixing `TICKETRAG_`, so `hnsw.ef_search`
//! becomes `TICKETRAG_HNSW_EF_SEARCH`. Environment values win over the file.

use std::path::Path;
use std::str::FromStr;
use std::time::Duration;

use ticketrag::embedding::{EmbedderKind, EmbedderSpec};
use ticketrag::generation::DEFAULT_BUDGET;
use ticketrag::index::{HnswParams, IndexConfig, IndexKind, Metric};
use ticketrag::lexical::Bm25Params;
use ticketrag::retrieval::{ScoringWeights, TemporalConfig};
use ticketrag::transport::RetryPolicy;

pub const ENV_PREFIX: &str = "TICKETRAG_";

/// Every recognized key, in documentation order.
pub const KEYS: &[&str] = &[
    "bind",
    "embed.kind",
    "embed.dimension",
    "embed.seed",
    "embed.endpoint",
    "embed.model_version",
    "index.kind",
    "index.metric",
    "ivf.nlist",
    "ivf.nprobe",
    "ivf.iters",
    "ivf.seed",
    "hnsw.m",
    "hnsw.ef_construction",
    "hnsw.ef_search",
    "hnsw.seed",
    "bm25.k1",
    "bm25.b",
    "retrieval.k_per_partition",
    "retrieval.k_final",
    "retrieval.hybrid",
    "temporal.enabled",
    "temporal.half_life_days",
    "temporal.floor",
    "scoring.overlap_weight",
    "scoring.feedback_beta",
    "generator.endpoint",
    "generator.fallback",
    "generator.budget",
    "http.timeout_ms",
    "http.retries",
];

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("{source_name}:{line}: expected `key = value`")]
    Syntax { source_name: String, line: usize },
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("{key}: {message}")]
    Value { key: String, message: String },
    #[error("cannot read {path}: {message}")]
    Read { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub bind: String,
    pub embedder: EmbedderSpec,
    pub index: IndexConfig,
    pub bm25: Bm25Params,
    pub k_per_partition: usize,
    pub k_final: usize,
    pub hybrid: bool,
    pub temporal: TemporalConfig,
    pub weights: ScoringWeights,
    pub generator_endpoint: Option<String>,
    pub generator_fallback: bool,
    pub prompt_budget: usize,
    pub http_timeout: Duration,
    pub http_retries: u32,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        let embedder = EmbedderSpec::default();
        ServiceConfig {
            bind: "127.0.0.1:8080".into(),
            index: IndexConfig::hnsw(embedder.dimension, HnswParams::default()),
            embedder,
            bm25: Bm25Params::default(),
            k_per_partition: 5,
            k_final: 8,
            hybrid: true,
            temporal: TemporalConfig::default(),
            weights: ScoringWeights::default(),
            generator_endpoint: None,
            generator_fallback: false,
            prompt_budget: DEFAULT_BUDGET,
            http_timeout: Duration::from_secs(30),
            http_retries: 3,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::Value { key: key.to_owned(), message: e.to_string() })
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(ConfigError::Value { key: key.to_owned(), message: format!("expected a boolean, got {value:?}") }),
    }
}

fn non_empty(value: &str) -> Option<String> {
    (!value.is_empty()).then(|| value.to_owned())
}

/// Maps a config key to its environment variable name.
pub fn env_name(key: &str) -> String {
    format!("{ENV_PREFIX}{}", key.replace('.', "_").to_ascii_uppercase())
}

/// Splits `key = value` lines; `#` starts a comment line and blank lines are skipped.
pub fn parse_pairs(text: &str, source_name: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| ConfigError::Syntax { source_name: source_name.to_owned(), line: i + 1 })?;
        let v = v.trim();
        let v = v.strip_prefix('"').and_then(|s| s.strip_suffix('"')).unwrap_or(v);
        out.push((k.trim().to_owned(), v.to_owned()));
    }
    Ok(out)
}

impl ServiceConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "bind" => self.bind = value.to_owned(),
            "embed.kind" => {
                self.embedder.kind = match value {
                    "hashing" => EmbedderKind::Hashing,
                    "remote" => EmbedderKind::Remote,
                    _ => {
                        return Err(ConfigError::Value {
                            key: key.into(),
                            message: format!("expected hashing or remote, got {value:?}"),
                        })
                    }
                }
            }
            "embed.dimension" => self.embedder.dimension = parse(key, value)?,
            "embed.seed" => self.embedder.seed = Some(parse(key, value)?),
            "embed.endpoint" => self.embedder.endpoint = non_empty(value),
            "embed.model_version" => self.embedder.model_version = value.to_owned(),
            "index.kind" => self.index.kind = parse::<IndexKind>(key, value)?,
            "index.metric" => self.index.metric = parse::<Metric>(key, value)?,
            "ivf.nlist" => self.index.ivf.nlist = parse(key, value)?,
            "ivf.nprobe" => self.index.ivf.nprobe = parse(key, value)?,
            "ivf.iters" => self.index.ivf.kmeans_iters = parse(key, value)?,
            "ivf.seed" => self.index.ivf.seed = parse(key, value)?,
            "hnsw.m" => self.index.hnsw.m = parse(key, value)?,
            "hnsw.ef_construction" => self.index.hnsw.ef_construction = parse(key, value)?,
            "hnsw.ef_search" => self.index.hnsw.ef_search = parse(key, value)?,
            "hnsw.seed" => self.index.hnsw.seed = parse(key, value)?,
            "bm25.k1" => self.bm25.k1 = parse(key, value)?,
            "bm25.b" => self.bm25.b = parse(key, value)?,
            "retrieval.k_per_partition" => self.k_per_partition = parse(key, value)?,
            "retrieval.k_final" => self.k_final = parse(key, value)?,
            "retrieval.hybrid" => self.hybrid = parse_bool(key, value)?,
            "temporal.enabled" => self.temporal.enabled = parse_bool(key, value)?,
            "temporal.half_life_days" => self.temporal.half_life_days = parse(key, value)?,
            "temporal.floor" => self.temporal.floor = parse(key, value)?,
            "scoring.overlap_weight" => self.weights.overlap = parse(key, value)?,
            "scoring.feedback_beta" => self.weights.feedback_beta = parse(key, value)?,
            "generator.endpoint" => self.generator_endpoint = non_empty(value),
            "generator.fallback" => self.generator_fallback = parse_bool(key, value)?,
            "generator.budget" => self.prompt_budget = parse(key, value)?,
            "http.timeout_ms" => self.http_timeout = Duration::from_millis(parse(key, value)?),
            "http.retries" => self.http_retries = parse(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.to_owned())),
        }
        Ok(())
    }

    /// Applies file pairs, then environment overrides, then re-derives the
    /// hashing model version and index dimension from the embedder settings.
    pub fn from_sources(
        file: &[(String, String)],
        env: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self, ConfigError> {
        let mut cfg = ServiceConfig::default();
        let mut model_set = false;
        for (k, v) in file {
            cfg.set(k, v)?;
            model_set |= k == "embed.model_version";
        }
        let env: Vec<(String, String)> = env.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
        for key in KEYS {
            let name = env_name(key);
            if let Some((_, v)) = env.iter().find(|(k, _)| *k == name) {
                cfg.set(key, v)?;
                model_set |= *key == "embed.model_version";
            }
        }
        if cfg.embedder.kind == EmbedderKind::Hashing && !model_set {
            let seed = cfg.embedder.seed.unwrap_or(0);
            cfg.embedder = EmbedderSpec::hashing(cfg.embedder.dimension, seed);
        }
        cfg.index.dimension = cfg.embedder.dimension;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` (when given) and the process environment.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let pairs = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| ConfigError::Read { path: p.display().to_string(), message: e.to_string() })?;
                parse_pairs(&text, &p.display().to_string())?
            }
            None => Vec::new(),
        };
        Self::from_sources(&pairs, std::env::vars())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let value = |key: &str, e: String| ConfigError::Value { key: key.to_owned(), message: e };
        self.embedder.validate().map_err(|e| value("embed", e.to_string()))?;
        self.index.validate().map_err(|e| value("index", e.to_string()))?;
        if self.k_per_partition == 0 || self.k_final == 0 {
            return Err(value("retrieval", "k values must be positive".into()));
        }
        if self.k_final > 3 * self.k_per_partition {
            return Err(value("retrieval.k_final", "exceeds three times k_per_partition".into()));
        }
        Ok(())
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy { max_attempts: self.http_retries.max(1), ..RetryPolicy::default() }
    }
}
