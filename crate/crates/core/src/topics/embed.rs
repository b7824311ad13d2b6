use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::TopicError;
use crate::store::sha256_hex;

pub const EMBEDDINGS_FILE: &str = "embeddings.jsonl";
pub const EMBED_KEY_ENV: &str = "TERMSCOPE_EMBED_KEY";
const CHUNK: usize = 64;

pub trait EmbeddingProvider: Send + Sync {
    fn id(&self) -> &str;
    /// One raw (not necessarily normalized) vector per input text.
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, TopicError>;
}

/// Unit-norm vectors for a set of terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingBatch {
    pub term_ids: Vec<String>,
    pub vectors: Vec<Vec<f64>>,
    pub provider: String,
    pub dimension: usize,
}

impl EmbeddingBatch {
    pub fn len(&self) -> usize {
        self.term_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.term_ids.is_empty()
    }

    /// Build from already normalized vectors, checking the batch invariants.
    pub fn from_parts(
        provider: impl Into<String>,
        term_ids: Vec<String>,
        vectors: Vec<Vec<f64>>,
    ) -> Result<Self, TopicError> {
        if term_ids.len() != vectors.len() {
            return Err(TopicError::Embedding(format!("{} ids for {} vectors", term_ids.len(), vectors.len())));
        }
        let dimension = vectors.first().map_or(0, Vec::len);
        for v in &vectors {
            if v.len() != dimension {
                return Err(TopicError::DimensionMismatch { expected: dimension, got: v.len() });
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-6 {
                return Err(TopicError::Embedding(format!("vector norm {norm} is not 1")));
            }
        }
        Ok(EmbeddingBatch { term_ids, vectors, provider: provider.into(), dimension })
    }
}

pub fn l2_normalize(v: &mut [f64]) -> Result<(), TopicError> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(TopicError::Embedding("zero or non-finite vector".into()));
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Ok(())
}

/// Embed `(term_id, text)` pairs in chunks, normalizing every vector.
pub fn embed_terms(terms: &[(String, String)], provider: &dyn EmbeddingProvider) -> Result<EmbeddingBatch, TopicError> {
    let mut dimension: Option<usize> = None;
    let mut vectors = Vec::with_capacity(terms.len());
    for chunk in terms.chunks(CHUNK) {
        let texts: Vec<String> = chunk.iter().map(|(_, t)| t.clone()).collect();
        let raw = provider.embed(&texts)?;
        if raw.len() != texts.len() {
            return Err(TopicError::Embedding(format!("provider returned {} vectors for {} texts", raw.len(), texts.len())));
        }
        for mut v in raw {
            match dimension {
                None => dimension = Some(v.len()),
                Some(d) if d != v.len() => return Err(TopicError::DimensionMismatch { expected: d, got: v.len() }),
                _ => {}
            }
            l2_normalize(&mut v)?;
            vectors.push(v);
        }
    }
    Ok(EmbeddingBatch {
        term_ids: terms.iter().map(|(id, _)| id.clone()).collect(),
        vectors,
        provider: provider.id().to_string(),
        dimension: dimension.unwrap_or(0),
    })
}

#[derive(Serialize, Deserialize)]
struct Row {
    term_id: String,
    provider: String,
    vector: Vec<f64>,
}

/// Append a batch to a JSONL embedding file. The dimension must match what
/// the file already holds for the same provider.
pub fn save_batch(path: impl AsRef<Path>, batch: &EmbeddingBatch) -> Result<(), TopicError> {
    let path = path.as_ref();
    if let Some(existing) = load_batch(path, &batch.provider)? {
        if !existing.is_empty() && !batch.is_empty() && existing.dimension != batch.dimension {
            return Err(TopicError::DimensionMismatch { expected: existing.dimension, got: batch.dimension });
        }
    }
    let mut file = OpenOptions::new().create(true).append(true).open(path)?;
    for (id, v) in batch.term_ids.iter().zip(&batch.vectors) {
        let row = Row { term_id: id.clone(), provider: batch.provider.clone(), vector: v.clone() };
        writeln!(file, "{}", serde_json::to_string(&row)?)?;
    }
    Ok(())
}

/// All stored vectors of one provider, last row per term winning, in first-seen order.
pub fn load_batch(path: impl AsRef<Path>, provider: &str) -> Result<Option<EmbeddingBatch>, TopicError> {
    let path = path.as_ref();
    if !path.exists() {
        return Ok(None);
    }
    let mut order = Vec::new();
    let mut rows: HashMap<String, Vec<f64>> = HashMap::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: Row = serde_json::from_str(&line)?;
        if row.provider != provider {
            continue;
        }
        if rows.insert(row.term_id.clone(), row.vector).is_none() {
            order.push(row.term_id);
        }
    }
    let vectors = order.iter().map(|id| rows.remove(id).unwrap()).collect();
    EmbeddingBatch::from_parts(provider, order, vectors).map(Some)
}

/// Vectors looked up by text (or `sha256:<hex>` of the text) from a JSON table.
pub struct MockEmbedder {
    id: String,
    vectors: HashMap<String, Vec<f64>>,
}

impl MockEmbedder {
    pub fn new(vectors: HashMap<String, Vec<f64>>) -> Self {
        MockEmbedder { id: "mock".into(), vectors }
    }

    /// `{"vectors": {"<text or sha256:hex>": [..], ...}}`
    pub fn from_json(json: &str) -> Result<Self, TopicError> {
        #[derive(Deserialize)]
        struct File {
            vectors: HashMap<String, Vec<f64>>,
        }
        let f: File = serde_json::from_str(json)?;
        Ok(Self::new(f.vectors))
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, TopicError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

impl EmbeddingProvider for MockEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, TopicError> {
        texts
            .iter()
            .map(|t| {
                self.vectors
                    .get(t)
                    .or_else(|| self.vectors.get(&format!("sha256:{}", sha256_hex(t.as_bytes()))))
                    .cloned()
                    .ok_or_else(|| TopicError::Embedding(format!("no mock vector for {t:?}")))
            })
            .collect()
    }
}

/// Feature-hashed bag of word unigrams and bigrams. Deterministic and offline.
pub struct HashingEmbedder {
    id: String,
    dimension: usize,
}

impl HashingEmbedder {
    pub fn new(dimension: usize) -> Self {
        HashingEmbedder { id: format!("hash-{dimension}"), dimension: dimension.max(1) }
    }

    fn bucket(&self, feature: &str) -> (usize, f64) {
        let h = sha256_hex(feature.as_bytes());
        let n = u64::from_str_radix(&h[..16], 16).unwrap();
        ((n % self.dimension as u64) as usize, if n >> 63 == 0 { 1.0 } else { -1.0 })
    }
}

impl EmbeddingProvider for HashingEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, TopicError> {
        Ok(texts
            .iter()
            .map(|t| {
                let words: Vec<String> = t
                    .split(|c: char| !c.is_alphanumeric())
                    .filter(|w| !w.is_empty())
                    .map(str::to_lowercase)
                    .collect();
                let mut v = vec![0.0; self.dimension];
                let bigrams = words.windows(2).map(|w| format!("{} {}", w[0], w[1]));
                for f in words.iter().cloned().chain(bigrams) {
                    let (i, s) = self.bucket(&f);
                    v[i] += s;
                }
                if v.iter().all(|&x| x == 0.0) {
                    v[0] = 1.0;
                }
                v
            })
            .collect())
    }
}

/// OpenAI-style `/embeddings` endpoint.
pub struct HttpEmbedder {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpEmbedder {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, api_key: Option<String>) -> Result<Self, TopicError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_secs(120))
            .build()
            .map_err(|e| TopicError::Embedding(e.to_string()))?;
        Ok(HttpEmbedder { endpoint: endpoint.into(), model: model.into(), api_key, client })
    }

    pub fn parse_response(body: &Value) -> Result<Vec<Vec<f64>>, TopicError> {
        let data = body["data"].as_array().ok_or_else(|| TopicError::Embedding("response has no data array".into()))?;
        let mut rows: Vec<(u64, Vec<f64>)> = data
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let v = d["embedding"]
                    .as_array()
                    .ok_or_else(|| TopicError::Embedding("missing embedding".into()))?
                    .iter()
                    .map(|x| x.as_f64().ok_or_else(|| TopicError::Embedding("non-numeric component".into())))
                    .collect::<Result<Vec<f64>, _>>()?;
                Ok((d["index"].as_u64().unwrap_or(i as u64), v))
            })
            .collect::<Result<_, TopicError>>()?;
        rows.sort_by_key(|(i, _)| *i);
        Ok(rows.into_iter().map(|(_, v)| v).collect())
    }
}

impl EmbeddingProvider for HttpEmbedder {
    fn id(&self) -> &str {
        &self.model
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, TopicError> {
        let mut req = self.client.post(&self.endpoint).json(&json!({ "model": self.model, "input": texts }));
        if let Some(k) = &self.api_key {
            req = req.bearer_auth(k);
        }
        let resp = req.send().map_err(|e| TopicError::Embedding(e.to_string()))?;
        let status = resp.status();
        let body: Value = resp.json().map_err(|e| TopicError::Embedding(e.to_string()))?;
        if !status.is_success() {
            return Err(TopicError::Embedding(format!("HTTP {status}: {body}")));
        }
        Self::parse_response(&body)
    }
}

/// `mock:<path>`, `hash:<dim>` or an HTTP endpoint serving `model`.
pub fn open_embedder(spec: &str, model: &str) -> Result<Box<dyn EmbeddingProvider>, TopicError> {
    if let Some(path) = spec.strip_prefix("mock:") {
        return Ok(Box::new(MockEmbedder::from_file(path)?));
    }
    if let Some(dim) = spec.strip_prefix("hash:") {
        let d = dim.parse().map_err(|_| TopicError::Embedding(format!("bad dimension {dim:?}")))?;
        return Ok(Box::new(HashingEmbedder::new(d)));
    }
    Ok(Box::new(HttpEmbedder::new(spec, model, std::env::var(EMBED_KEY_ENV).ok())?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    fn terms(texts: &[&str]) -> Vec<(String, String)> {
        texts.iter().enumerate().map(|(i, t)| (format!("t{i}"), t.to_string())).collect()
    }

    #[test]
    fn mock_vectors_are_normalized() {
        let mock = MockEmbedder::new(HashMap::from([("a".to_string(), vec![3.0, 4.0, 0.0])]));
        let b = embed_terms(&terms(&["a"]), &mock).unwrap();
        assert_eq!(b.vectors[0], vec![0.6, 0.8, 0.0]);
        assert_eq!(b.dimension, 3);
    }

    #[test]
    fn hashing_is_pure() {
        let h = HashingEmbedder::new(32);
        let b = embed_terms(&terms(&["Restocking fee applies", "Restocking fee applies"]), &h).unwrap();
        assert_eq!(b.vectors[0], b.vectors[1]);
    }

    struct Shifting(Mutex<usize>);

    impl EmbeddingProvider for Shifting {
        fn id(&self) -> &str {
            "shifting"
        }
        fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, TopicError> {
            let mut calls = self.0.lock().unwrap();
            *calls += 1;
            let d = if *calls == 1 { 512 } else { 768 };
            Ok(texts.iter().map(|_| vec![1.0; d]).collect())
        }
    }

    #[test]
    fn dimension_change_across_chunks_is_an_error() {
        let texts: Vec<String> = (0..CHUNK + 1).map(|i| format!("term {i}")).collect();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let err = embed_terms(&terms(&refs), &Shifting(Mutex::new(0))).unwrap_err();
        assert!(matches!(err, TopicError::DimensionMismatch { expected: 512, got: 768 }));
    }

    #[test]
    fn persisted_batches_roundtrip_and_guard_dimension() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(EMBEDDINGS_FILE);
        let b3 = embed_terms(&terms(&["x y", "y z"]), &HashingEmbedder::new(3)).unwrap();
        let b3 = EmbeddingBatch { provider: "p".into(), ..b3 };
        save_batch(&path, &b3).unwrap();
        assert_eq!(load_batch(&path, "p").unwrap().unwrap(), b3);
        let b4 = EmbeddingBatch { provider: "p".into(), ..embed_terms(&terms(&["q"]), &HashingEmbedder::new(4)).unwrap() };
        assert!(matches!(save_batch(&path, &b4), Err(TopicError::DimensionMismatch { .. })));
    }

    #[test]
    fn http_response_parsing() {
        let body = json!({"data": [{"index": 1, "embedding": [0.0, 1.0]}, {"index": 0, "embedding": [1.0, 0.0]}]});
        assert_eq!(HttpEmbedder::parse_response(&body).unwrap(), vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert!(HttpEmbedder::parse_response(&json!({})).is_err());
    }
}
