//! Pluggable LLM access: prompt rendering, strict reply parsing, a
//! write-once reply cache, request rate limiting and a deterministic mock.

mod cache;
mod client;
mod limiter;
mod mock;
mod parse;
mod prompt;

use std::sync::Arc;
use std::time::Instant;

use thiserror::Error;

pub use self::cache::{cache_key, ModelReply, ReplyCache, CACHE_FILE};
pub use self::client::{ChatModel, ChatRequest, Completion, HttpChatModel, API_KEY_ENV};
pub use self::limiter::{InFlight, RateLimiter};
pub use self::mock::MockModel;
pub use self::parse::*;
pub use self::prompt::{PromptName, PromptTemplate, DEFAULT_MAX_PAYLOAD_CHARS, PLACEHOLDER};

use crate::clock::{Clock, SystemClock};
use crate::store::sha256_hex;
use crate::taxonomy::{FinancialTemplate, Taxonomy};

pub const RETRY_SUFFIX: &str = "\n\nRespond with exactly one label.";

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("payload is empty")]
    EmptyPayload,
    #[error("payload of {len} chars exceeds the {max}-char budget")]
    PayloadTooLarge { len: usize, max: usize },
    #[error("model reply {raw:?} is outside the label set")]
    UnparseableReply { raw: String, cache_key: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("configuration error: {0}")]
    Config(String),
}

/// Text form of a parsed label, stored alongside the raw reply.
pub trait ReplyLabel {
    fn label_text(&self) -> String;
}

impl ReplyLabel for SimpleLabel {
    fn label_text(&self) -> String {
        match self {
            SimpleLabel::Malicious => "m".into(),
            SimpleLabel::Benign => "b".into(),
        }
    }
}

impl ReplyLabel for TaxonomyLabel {
    fn label_text(&self) -> String {
        match self {
            TaxonomyLabel::Benign => "b".into(),
            TaxonomyLabel::Others => crate::taxonomy::OTHERS_LABEL.into(),
            TaxonomyLabel::Type(t) => t.clone(),
        }
    }
}

impl ReplyLabel for FinancialLabel {
    fn label_text(&self) -> String {
        match self {
            FinancialLabel::NotFinancial => "n".into(),
            FinancialLabel::Category(c) => c.clone(),
        }
    }
}

impl ReplyLabel for ShoppingLabel {
    fn label_text(&self) -> String {
        match self {
            ShoppingLabel::Shopping => "shopping".into(),
            ShoppingLabel::NonShopping => "non-shopping".into(),
        }
    }
}

impl ReplyLabel for PaymentLabel {
    fn label_text(&self) -> String {
        match self {
            PaymentLabel::Payment => "payment".into(),
            PaymentLabel::NonPayment => "non-payment".into(),
        }
    }
}

impl ReplyLabel for String {
    fn label_text(&self) -> String {
        self.clone()
    }
}

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    pub model_id: String,
    pub max_retries: u32,
    /// Dispatches per second; 0 disables the limiter.
    pub rate_per_second: u32,
    pub max_in_flight: usize,
    pub max_payload_chars: usize,
}

impl GatewayConfig {
    pub fn new(model_id: impl Into<String>) -> Self {
        GatewayConfig {
            model_id: model_id.into(),
            max_retries: 2,
            rate_per_second: 0,
            max_in_flight: 8,
            max_payload_chars: DEFAULT_MAX_PAYLOAD_CHARS,
        }
    }
}

/// A parsed label with the reply it came from.
#[derive(Debug, Clone)]
pub struct Labeled<T> {
    pub value: T,
    pub reply: ModelReply,
}

pub struct Gateway {
    model: Arc<dyn ChatModel>,
    config: GatewayConfig,
    cache: Arc<ReplyCache>,
    limiter: RateLimiter,
    in_flight: InFlight,
}

/// Resolve an endpoint string: `mock:<path>` loads a reply table, anything
/// else is treated as a chat-completions URL.
pub fn open_model(endpoint: &str) -> Result<Arc<dyn ChatModel>, GatewayError> {
    match endpoint.strip_prefix("mock:") {
        Some(path) => Ok(Arc::new(MockModel::from_file(path)?)),
        None => Ok(Arc::new(HttpChatModel::from_env(endpoint)?)),
    }
}

fn payload_hash(payload: &str, image: Option<&[u8]>) -> String {
    match image {
        None => sha256_hex(payload.as_bytes()),
        Some(img) => sha256_hex(format!("{payload}\0{}", sha256_hex(img)).as_bytes()),
    }
}

impl Gateway {
    pub fn new(model: Arc<dyn ChatModel>, config: GatewayConfig) -> Self {
        Self::with_parts(model, config, Arc::new(ReplyCache::in_memory()), Arc::new(SystemClock::new()))
    }

    pub fn with_parts(
        model: Arc<dyn ChatModel>,
        config: GatewayConfig,
        cache: Arc<ReplyCache>,
        clock: Arc<dyn Clock>,
    ) -> Self {
        Gateway {
            limiter: RateLimiter::new(config.rate_per_second, clock),
            in_flight: InFlight::new(config.max_in_flight),
            model,
            config,
            cache,
        }
    }

    pub fn model_id(&self) -> &str {
        &self.config.model_id
    }

    pub fn cache(&self) -> &ReplyCache {
        &self.cache
    }

    /// Cache-first request with strict parsing and bounded retries.
    ///
    /// A cached reply is never re-requested, even when it failed to parse:
    /// reruns stay free of model calls.
    pub fn ask<T: ReplyLabel>(
        &self,
        template: &PromptTemplate,
        payload: &str,
        image: Option<&[u8]>,
        parse: impl Fn(&str) -> Option<T>,
    ) -> Result<Labeled<T>, GatewayError> {
        let first = template.render(payload, self.config.max_payload_chars)?;
        let hash = payload_hash(payload, image);
        let key = cache_key(&self.config.model_id, template.name, template.version, &hash);

        if let Some(cached) = self.cache.get(&key) {
            return match parse(&cached.raw) {
                Some(value) => Ok(Labeled { value, reply: cached }),
                None => Err(GatewayError::UnparseableReply { raw: cached.raw, cache_key: key }),
            };
        }

        let mut last = None;
        for attempt in 0..=self.config.max_retries {
            let text = if attempt == 0 { first.clone() } else { format!("{first}{RETRY_SUFFIX}") };
            let request = ChatRequest {
                model_id: self.config.model_id.clone(),
                prompt: template.name,
                prompt_version: template.version,
                payload_hash: hash.clone(),
                text,
                image_png: image.map(<[u8]>::to_vec),
                attempt,
                temperature: 0.0,
            };
            let started = Instant::now();
            let completion = {
                let _slot = self.in_flight.enter();
                self.limiter.acquire();
                self.model.complete(&request)?
            };
            let parsed = parse(&completion.text);
            let reply = ModelReply {
                raw: completion.text,
                parsed: parsed.as_ref().map(ReplyLabel::label_text),
                model_id: self.config.model_id.clone(),
                prompt: template.name,
                prompt_version: template.version,
                latency_ms: started.elapsed().as_millis() as u64,
                prompt_tokens: completion.prompt_tokens,
                completion_tokens: completion.completion_tokens,
                cache_key: key.clone(),
            };
            if let Some(value) = parsed {
                let reply = self.cache.put(reply)?;
                return Ok(Labeled { value, reply });
            }
            tracing::debug!(attempt, raw = %reply.raw, prompt = %template.name, "reply outside label set");
            last = Some(reply);
        }
        let reply = self.cache.put(last.expect("at least one attempt"))?;
        tracing::warn!(raw = %reply.raw, prompt = %template.name, "unparseable reply after retries");
        Err(GatewayError::UnparseableReply { raw: reply.raw, cache_key: key })
    }

    pub fn classify_simple(&self, term: &str) -> Result<Labeled<SimpleLabel>, GatewayError> {
        self.ask(&PromptTemplate::simple_binary(), term, None, parse_simple)
    }

    pub fn classify_taxonomy(
        &self,
        term: &str,
        taxonomy: &Taxonomy,
    ) -> Result<Labeled<TaxonomyLabel>, GatewayError> {
        self.ask(&PromptTemplate::unfavorable_taxonomy(taxonomy), term, None, |r| {
            parse_taxonomy(r, taxonomy)
        })
    }

    pub fn classify_financial(
        &self,
        term: &str,
        template: &FinancialTemplate,
    ) -> Result<Labeled<FinancialLabel>, GatewayError> {
        self.ask(&PromptTemplate::financial_template(template), term, None, |r| {
            parse_financial(r, template)
        })
    }

    pub fn classify_website(
        &self,
        payload: &str,
        screenshot: Option<&[u8]>,
    ) -> Result<Labeled<ShoppingLabel>, GatewayError> {
        self.ask(&PromptTemplate::website_cls(), payload, screenshot, parse_shopping)
    }

    pub fn classify_payment_page(
        &self,
        payload: &str,
        screenshot: Option<&[u8]>,
    ) -> Result<Labeled<PaymentLabel>, GatewayError> {
        self.ask(&PromptTemplate::payment_page_cls(), payload, screenshot, parse_payment)
    }
}
