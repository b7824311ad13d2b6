//! Deterministic lookup-table model for tests and offline runs.
//!
//! Reply table file format (JSON):
//!
//! ```json
//! {
//!   "defaults": { "financial_template": "n" },
//!   "replies": {
//!     "simple_binary": { "No refunds.": "m", "sha256:<hex>": ["maybe", "b"] }
//!   }
//! }
//! ```
//!
//! Keys are raw payload text, or `sha256:` followed by the payload hash. A
//! list value gives the reply for each successive attempt (the last entry
//! repeats).

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Deserialize;

use super::{ChatModel, ChatRequest, Completion, GatewayError, PromptName};
use crate::store::sha256_hex;

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(String),
    Many(Vec<String>),
}

impl OneOrMany {
    fn into_vec(self) -> Vec<String> {
        match self {
            OneOrMany::One(s) => vec![s],
            OneOrMany::Many(v) => v,
        }
    }
}

#[derive(Debug, Deserialize, Default)]
struct TableFile {
    #[serde(default)]
    defaults: BTreeMap<String, String>,
    #[serde(default)]
    replies: BTreeMap<String, BTreeMap<String, OneOrMany>>,
}

#[derive(Debug, Default)]
pub struct MockModel {
    replies: HashMap<(PromptName, String), Vec<String>>,
    defaults: HashMap<PromptName, String>,
    calls: AtomicUsize,
    log: Mutex<Vec<(PromptName, String)>>,
}

impl MockModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_json(json: &str) -> Result<Self, GatewayError> {
        let file: TableFile =
            serde_json::from_str(json).map_err(|e| GatewayError::Config(format!("mock table: {e}")))?;
        let mut model = MockModel::new();
        for (prompt, reply) in file.defaults {
            let prompt = prompt.parse().map_err(GatewayError::Config)?;
            model.defaults.insert(prompt, reply);
        }
        for (prompt, table) in file.replies {
            let prompt: PromptName = prompt.parse().map_err(GatewayError::Config)?;
            for (key, value) in table {
                let hash = match key.strip_prefix("sha256:") {
                    Some(h) => h.to_string(),
                    None => sha256_hex(key.as_bytes()),
                };
                model.replies.insert((prompt, hash), value.into_vec());
            }
        }
        Ok(model)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let path = path.as_ref();
        let json = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&json)
    }

    /// Register the reply for a raw payload.
    pub fn reply(self, prompt: PromptName, payload: &str, reply: &str) -> Self {
        self.replies_seq(prompt, payload, &[reply])
    }

    /// Register one reply per attempt for a raw payload.
    pub fn replies_seq(mut self, prompt: PromptName, payload: &str, replies: &[&str]) -> Self {
        self.replies.insert(
            (prompt, sha256_hex(payload.as_bytes())),
            replies.iter().map(|s| s.to_string()).collect(),
        );
        self
    }

    pub fn default_reply(mut self, prompt: PromptName, reply: &str) -> Self {
        self.defaults.insert(prompt, reply.to_string());
        self
    }

    pub fn call_count(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// (prompt, payload hash) of every call made so far, in order.
    pub fn calls(&self) -> Vec<(PromptName, String)> {
        self.log.lock().unwrap().clone()
    }

    pub fn calls_for(&self, prompt: PromptName) -> Vec<String> {
        self.calls().into_iter().filter(|(p, _)| *p == prompt).map(|(_, h)| h).collect()
    }
}

impl ChatModel for MockModel {
    fn complete(&self, request: &ChatRequest) -> Result<Completion, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.log.lock().unwrap().push((request.prompt, request.payload_hash.clone()));
        let text = match self.replies.get(&(request.prompt, request.payload_hash.clone())) {
            Some(seq) => seq[(request.attempt as usize).min(seq.len() - 1)].clone(),
            None => self.defaults.get(&request.prompt).cloned().ok_or_else(|| {
                GatewayError::Transport(format!(
                    "mock has no reply for {} payload {}",
                    request.prompt, request.payload_hash
                ))
            })?,
        };
        Ok(Completion { text, prompt_tokens: None, completion_tokens: None })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request(prompt: PromptName, payload: &str, attempt: u32) -> ChatRequest {
        ChatRequest {
            model_id: "mock".into(),
            prompt,
            prompt_version: 1,
            payload_hash: sha256_hex(payload.as_bytes()),
            text: String::new(),
            image_png: None,
            attempt,
            temperature: 0.0,
        }
    }

    #[test]
    fn table_file_with_hash_and_sequences() {
        let hash = sha256_hex(b"B term");
        let json = format!(
            r#"{{"defaults":{{"financial_template":"n"}},
                "replies":{{"simple_binary":{{"A term":"m","sha256:{hash}":["maybe","b"]}}}}}}"#
        );
        let m = MockModel::from_json(&json).unwrap();
        assert_eq!(m.complete(&request(PromptName::SimpleBinary, "A term", 0)).unwrap().text, "m");
        assert_eq!(m.complete(&request(PromptName::SimpleBinary, "B term", 0)).unwrap().text, "maybe");
        assert_eq!(m.complete(&request(PromptName::SimpleBinary, "B term", 5)).unwrap().text, "b");
        assert_eq!(m.complete(&request(PromptName::FinancialTemplate, "zzz", 0)).unwrap().text, "n");
        assert!(m.complete(&request(PromptName::WebsiteCls, "zzz", 0)).is_err());
        assert_eq!(m.call_count(), 5);
    }

    #[test]
    fn bad_prompt_name_rejected() {
        assert!(MockModel::from_json(r#"{"defaults":{"nope":"x"}}"#).is_err());
    }
}
