use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};

use super::{GatewayError, PromptName};
use crate::store::sha256_hex;

pub const CACHE_FILE: &str = "llm_cache.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReply {
    pub raw: String,
    /// Parsed label, or `None` when the reply violated the label contract.
    pub parsed: Option<String>,
    pub model_id: String,
    pub prompt: PromptName,
    pub prompt_version: u32,
    pub latency_ms: u64,
    pub prompt_tokens: Option<u32>,
    pub completion_tokens: Option<u32>,
    pub cache_key: String,
}

pub fn cache_key(model_id: &str, prompt: PromptName, version: u32, payload_hash: &str) -> String {
    sha256_hex(format!("{model_id}\n{prompt}@{version}\n{payload_hash}").as_bytes())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Entry {
    key: String,
    reply: ModelReply,
}

/// Write-once reply cache, optionally persisted as JSON lines.
#[derive(Debug, Default)]
pub struct ReplyCache {
    entries: RwLock<HashMap<String, ModelReply>>,
    file: Mutex<Option<(PathBuf, File)>>,
}

impl ReplyCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let path = path.as_ref().to_path_buf();
        let io = |e: std::io::Error| GatewayError::Config(format!("{}: {e}", path.display()));
        let mut entries = HashMap::new();
        if path.exists() {
            for line in BufReader::new(File::open(&path).map_err(io)?).lines() {
                let line = line.map_err(io)?;
                if line.trim().is_empty() {
                    continue;
                }
                // A torn last line from an interrupted run is dropped.
                if let Ok(e) = serde_json::from_str::<Entry>(&line) {
                    entries.entry(e.key).or_insert(e.reply);
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path).map_err(io)?;
        Ok(ReplyCache { entries: RwLock::new(entries), file: Mutex::new(Some((path, file))) })
    }

    pub fn get(&self, key: &str) -> Option<ModelReply> {
        self.entries.read().unwrap().get(key).cloned()
    }

    /// Insert unless present. Returns the entry that ends up cached.
    pub fn put(&self, reply: ModelReply) -> Result<ModelReply, GatewayError> {
        let mut entries = self.entries.write().unwrap();
        if let Some(existing) = entries.get(&reply.cache_key) {
            return Ok(existing.clone());
        }
        if let Some((path, file)) = self.file.lock().unwrap().as_mut() {
            let mut line = serde_json::to_string(&Entry { key: reply.cache_key.clone(), reply: reply.clone() })
                .map_err(|e| GatewayError::Config(e.to_string()))?;
            line.push('\n');
            file.write_all(line.as_bytes())
                .and_then(|_| file.flush())
                .map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))?;
        }
        entries.insert(reply.cache_key.clone(), reply.clone());
        Ok(reply)
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reply(key: &str, raw: &str) -> ModelReply {
        ModelReply {
            raw: raw.into(),
            parsed: Some(raw.into()),
            model_id: "m".into(),
            prompt: PromptName::SimpleBinary,
            prompt_version: 1,
            latency_ms: 0,
            prompt_tokens: None,
            completion_tokens: None,
            cache_key: key.into(),
        }
    }

    #[test]
    fn keys_differ_by_model_and_version() {
        let a = cache_key("m1", PromptName::SimpleBinary, 1, "h");
        assert_ne!(a, cache_key("m2", PromptName::SimpleBinary, 1, "h"));
        assert_ne!(a, cache_key("m1", PromptName::SimpleBinary, 2, "h"));
        assert_ne!(a, cache_key("m1", PromptName::UnfavorableTaxonomy, 1, "h"));
        assert_eq!(a, cache_key("m1", PromptName::SimpleBinary, 1, "h"));
    }

    #[test]
    fn write_once_and_persisted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(CACHE_FILE);
        {
            let c = ReplyCache::open(&path).unwrap();
            c.put(reply("k", "m")).unwrap();
            let kept = c.put(reply("k", "b")).unwrap();
            assert_eq!(kept.raw, "m");
        }
        let c = ReplyCache::open(&path).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.get("k").unwrap().raw, "m");
    }
}
