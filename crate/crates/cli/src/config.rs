use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use serde::Deserialize;

pub const ENV_PREFIX: &str = "TERMSCOPE_";

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub corpus: PathBuf,
    pub seed: u64,
    pub model_endpoint: Option<String>,
    pub model_id: String,
    pub max_retries: u32,
    pub rate_per_second: u32,
    pub max_in_flight: usize,
    pub embed_endpoint: String,
    pub embed_model: String,
    pub eps: f64,
    pub min_pts: usize,
    pub min_delay_ms: u64,
    pub max_hosts_in_flight: usize,
    pub respect_robots: bool,
    pub fetch_timeout_secs: u64,
    pub classification_mode: String,
    pub depth_limit: u32,
    pub taxonomy: Option<PathBuf>,
    pub financial_template: Option<PathBuf>,
    pub patterns: Option<PathBuf>,
    pub port: u16,
    pub cors_origins: Vec<String>,
    pub cache_ttl_secs: u64,
    pub payment_mode: String,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            corpus: PathBuf::from("corpus"),
            seed: 0,
            model_endpoint: None,
            model_id: "gpt-4o".into(),
            max_retries: 2,
            rate_per_second: 5,
            max_in_flight: 8,
            embed_endpoint: "hash:256".into(),
            embed_model: "text-embedding-3-small".into(),
            eps: termscope_core::topics::DEFAULT_EPS,
            min_pts: termscope_core::topics::DEFAULT_MIN_PTS,
            min_delay_ms: 1000,
            max_hosts_in_flight: 16,
            respect_robots: true,
            fetch_timeout_secs: 20,
            classification_mode: "url_html".into(),
            depth_limit: termscope_core::harvest::DEFAULT_DEPTH_LIMIT,
            taxonomy: None,
            financial_template: None,
            patterns: None,
            port: 8787,
            cors_origins: Vec::new(),
            cache_ttl_secs: 24 * 60 * 60,
            payment_mode: "heuristic".into(),
        }
    }
}

fn parse_env<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| anyhow::anyhow!("{ENV_PREFIX}{key}={value:?}: {e}"))
}

impl Config {
    /// Read a TOML file; a missing default file is not an error.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => Config::default(),
        };
        Ok(cfg)
    }

    /// Apply `TERMSCOPE_*` variables from an iterator of (key, value) pairs.
    pub fn apply_env(&mut self, vars: impl IntoIterator<Item = (String, String)>) -> Result<()> {
        for (k, v) in vars {
            let Some(key) = k.strip_prefix(ENV_PREFIX) else { continue };
            match key {
                "CORPUS" => self.corpus = PathBuf::from(v),
                "SEED" => self.seed = parse_env(key, &v)?,
                "MODEL_ENDPOINT" => self.model_endpoint = Some(v),
                "MODEL_ID" => self.model_id = v,
                "MAX_RETRIES" => self.max_retries = parse_env(key, &v)?,
                "RATE_PER_SECOND" => self.rate_per_second = parse_env(key, &v)?,
                "MAX_IN_FLIGHT" => self.max_in_flight = parse_env(key, &v)?,
                "EMBED_ENDPOINT" => self.embed_endpoint = v,
                "EMBED_MODEL" => self.embed_model = v,
                "EPS" => self.eps = parse_env(key, &v)?,
                "MIN_PTS" => self.min_pts = parse_env(key, &v)?,
                "MIN_DELAY_MS" => self.min_delay_ms = parse_env(key, &v)?,
                "MAX_HOSTS_IN_FLIGHT" => self.max_hosts_in_flight = parse_env(key, &v)?,
                "RESPECT_ROBOTS" => self.respect_robots = parse_env(key, &v)?,
                "FETCH_TIMEOUT_SECS" => self.fetch_timeout_secs = parse_env(key, &v)?,
                "CLASSIFICATION_MODE" => self.classification_mode = v,
                "DEPTH_LIMIT" => self.depth_limit = parse_env(key, &v)?,
                "TAXONOMY" => self.taxonomy = Some(PathBuf::from(v)),
                "FINANCIAL_TEMPLATE" => self.financial_template = Some(PathBuf::from(v)),
                "PATTERNS" => self.patterns = Some(PathBuf::from(v)),
                "PORT" => self.port = parse_env(key, &v)?,
                "CORS_ORIGINS" => {
                    self.cors_origins = v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
                }
                "CACHE_TTL_SECS" => self.cache_ttl_secs = parse_env(key, &v)?,
                "PAYMENT_MODE" => self.payment_mode = v,
                // keys read elsewhere (API keys, log filter)
                _ => {}
            }
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) || self.min_pts == 0 {
            bail!("eps must be > 0 and min_pts ≥ 1 (got {}, {})", self.eps, self.min_pts);
        }
        self.classification_mode
            .parse::<termscope_core::store::ClassificationMode>()
            .map_err(anyhow::Error::msg)?;
        self.payment_mode.parse::<termscope_core::lens::PaymentMode>().map_err(anyhow::Error::msg)?;
        Ok(())
    }
}
