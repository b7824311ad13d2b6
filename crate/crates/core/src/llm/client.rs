use std::time::Duration;

use base64::Engine;
use serde_json::{json, Value};

use super::{GatewayError, PromptName};

pub const API_KEY_ENV: &str = "TERMSCOPE_LLM_KEY";

/// One chat-completion request as seen by a model backend.
#[derive(Debug, Clone)]
pub struct ChatRequest {
    pub model_id: String,
    pub prompt: PromptName,
    pub prompt_version: u32,
    /// sha256 of the raw payload (plus attached image, if any).
    pub payload_hash: String,
    /// Fully rendered user message.
    pub text: String,
    pub image_png: Option<Vec<u8>>,
    /// 0 for the first try, then 1.. for retries.
    pub attempt: u32,
    pub temperature: f32,
}

#[derive(Debug, Clone, Default)]
pub struct Completion {
    pub text: String,
    pub prompt_tokens: Option<u32>,
    pub completion_tokens: Option<u32>,
}

pub trait ChatModel: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<Completion, GatewayError>;
}

/// Client for OpenAI-style `/chat/completions` endpoints.
pub struct HttpChatModel {
    endpoint: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpChatModel {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        Ok(HttpChatModel { endpoint: endpoint.into(), api_key, client })
    }

    /// Build from the endpoint, reading the key from `TERMSCOPE_LLM_KEY`.
    pub fn from_env(endpoint: impl Into<String>) -> Result<Self, GatewayError> {
        Self::new(endpoint, std::env::var(API_KEY_ENV).ok())
    }

    pub fn request_body(request: &ChatRequest) -> Value {
        let content = match &request.image_png {
            None => json!(request.text),
            Some(png) => {
                let b64 = base64::engine::general_purpose::STANDARD.encode(png);
                json!([
                    { "type": "text", "text": request.text },
                    { "type": "image_url", "image_url": { "url": format!("data:image/png;base64,{b64}") } }
                ])
            }
        };
        json!({
            "model": request.model_id,
            "temperature": request.temperature,
            "messages": [ { "role": "user", "content": content } ],
        })
    }

    pub fn parse_response(body: &Value) -> Result<Completion, GatewayError> {
        let text = body
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| GatewayError::Transport(format!("malformed completion: {body}")))?;
        let tokens = |p: &str| body.pointer(p).and_then(Value::as_u64).map(|v| v as u32);
        Ok(Completion {
            text: text.to_string(),
            prompt_tokens: tokens("/usage/prompt_tokens"),
            completion_tokens: tokens("/usage/completion_tokens"),
        })
    }
}

impl ChatModel for HttpChatModel {
    fn complete(&self, request: &ChatRequest) -> Result<Completion, GatewayError> {
        let mut req = self.client.post(&self.endpoint).json(&Self::request_body(request));
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| GatewayError::Transport(e.to_string()))?;
        let status = resp.status();
        let body: Value = resp.json().map_err(|e| GatewayError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(GatewayError::Transport(format!("HTTP {status}: {body}")));
        }
        Self::parse_response(&body)
    }
}
