//! Canonical data model and append-only persistence.
//!
//! Each entity type lives in its own newline-delimited JSON file under the
//! corpus root (`websites.jsonl`, `documents.jsonl`, `terms.jsonl`,
//! `labels.jsonl`). Upserts append a new line; on load the last line per key
//! wins. `index.json` holds the incrementally maintained manifest, and page
//! bodies are kept content-addressed under `pages/`.
//!
//! The store is a single logical writer (`&mut self` on every mutation).
//! Share it across threads behind a mutex.

mod records;
mod url;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

pub use self::records::*;
pub use self::url::{
    ensure_normalized, homepage_of, is_normalized, normalize_url, registrable_domain,
    same_registrable_domain, UrlError,
};

pub const WEBSITES_FILE: &str = "websites.jsonl";
pub const DOCUMENTS_FILE: &str = "documents.jsonl";
pub const TERMS_FILE: &str = "terms.jsonl";
pub const LABELS_FILE: &str = "labels.jsonl";
pub const INDEX_FILE: &str = "index.json";
const PAGES_DIR: &str = "pages";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("invariant violated for {key}: {reason}")]
    Invariant { key: String, reason: String },
    #[error("unknown website {0}")]
    UnknownWebsite(String),
    #[error(transparent)]
    Url(#[from] UrlError),
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("corrupt record in {path} line {line}: {source}")]
    Corrupt { path: PathBuf, line: usize, source: serde_json::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn invariant(key: impl ToString, reason: impl ToString) -> StoreError {
    StoreError::Invariant { key: key.to_string(), reason: reason.to_string() }
}

type LabelKey = (String, Stage, String, u32);

/// Filter for [`CorpusStore::websites_where`]. `None` fields match anything.
#[derive(Debug, Clone, Default)]
pub struct WebsiteFilter {
    pub source: Option<Source>,
    pub language: Option<String>,
    pub verdict: Option<ShoppingVerdict>,
    pub with_tc: Option<bool>,
}

impl WebsiteFilter {
    pub fn matches(&self, w: &WebsiteRecord) -> bool {
        self.source.is_none_or(|s| w.source == s)
            && self.language.as_deref().is_none_or(|l| w.language == l)
            && self.verdict.is_none_or(|v| w.shopping_verdict == v)
            && self.with_tc.is_none_or(|t| w.has_tc() == t)
    }
}

#[derive(Debug, Default)]
pub struct CorpusStore {
    root: Option<PathBuf>,
    websites: BTreeMap<String, WebsiteRecord>,
    documents: BTreeMap<(String, String), TermsDocument>,
    terms: BTreeMap<(String, String, u32), TermRecord>,
    term_keys: HashSet<(String, String)>,
    term_index: HashMap<String, (String, String, u32)>,
    labels: BTreeMap<LabelKey, TermLabel>,
    current_labels: HashMap<(String, Stage), LabelKey>,
    pages: HashMap<String, String>,
    manifest: CorpusManifest,
}

impl CorpusStore {
    /// A store with no backing directory. Nothing is persisted.
    pub fn in_memory() -> Self {
        CorpusStore::default()
    }

    /// Open (creating if needed) a corpus rooted at `root` and replay its record files.
    pub fn open(root: impl AsRef<Path>) -> Result<Self, StoreError> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(root.join(PAGES_DIR))
            .map_err(|source| StoreError::Io { path: root.clone(), source })?;
        let mut store = CorpusStore { root: Some(root.clone()), ..Default::default() };

        for w in read_jsonl::<WebsiteRecord>(&root.join(WEBSITES_FILE))? {
            store.websites.insert(w.url.to_string(), w);
        }
        for d in read_jsonl::<TermsDocument>(&root.join(DOCUMENTS_FILE))? {
            store.documents.insert((d.website_url.to_string(), d.page_url.to_string()), d);
        }
        for t in read_jsonl::<TermRecord>(&root.join(TERMS_FILE))? {
            store.index_term(t);
        }
        for l in read_jsonl::<TermLabel>(&root.join(LABELS_FILE))? {
            store.index_label(l);
        }
        store.manifest = store.recompute_manifest();

        let index_path = root.join(INDEX_FILE);
        if index_path.exists() {
            let on_disk: CorpusManifest = serde_json::from_str(
                &fs::read_to_string(&index_path)
                    .map_err(|source| StoreError::Io { path: index_path.clone(), source })?,
            )?;
            if on_disk != store.manifest {
                tracing::warn!("index.json disagrees with record files; rebuilding");
            }
        }
        store.write_index()?;
        Ok(store)
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    /// Path for a named artifact under the corpus root, if the store is on disk.
    pub fn artifact_path(&self, name: &str) -> Option<PathBuf> {
        self.root.as_ref().map(|r| r.join(name))
    }

    // --- websites ---

    pub fn upsert_website(&mut self, record: WebsiteRecord) -> Result<WebsiteRecord, StoreError> {
        validate_website(&record)?;
        let key = record.url.to_string();
        if let Some(existing) = self.websites.get(&key) {
            if existing.source != record.source {
                return Err(invariant(&key, "source of an existing website cannot change"));
            }
            if record.fetched_at < existing.fetched_at {
                return Ok(existing.clone());
            }
            if *existing == record {
                return Ok(record);
            }
        }
        self.append(WEBSITES_FILE, &record)?;
        if let Some(old) = self.websites.get(&key) {
            let delta = StageDelta::of(old, -1);
            self.manifest.per_source.entry(old.source).or_default().apply(&delta);
        }
        let delta = StageDelta::of(&record, 1);
        self.manifest.per_source.entry(record.source).or_default().apply(&delta);
        self.websites.insert(key, record.clone());
        self.write_index()?;
        Ok(record)
    }

    pub fn website(&self, url: &::url::Url) -> Option<&WebsiteRecord> {
        self.websites.get(url.as_str())
    }

    /// All websites in url order.
    pub fn websites(&self) -> impl Iterator<Item = &WebsiteRecord> {
        self.websites.values()
    }

    pub fn websites_where<'a>(
        &'a self,
        filter: &'a WebsiteFilter,
    ) -> impl Iterator<Item = &'a WebsiteRecord> + 'a {
        self.websites.values().filter(move |w| filter.matches(w))
    }

    // --- documents and terms ---

    /// Record a fetched policy document without terms (e.g. a failed fetch).
    pub fn upsert_document(&mut self, document: TermsDocument) -> Result<(), StoreError> {
        if !self.websites.contains_key(document.website_url.as_str()) {
            return Err(StoreError::UnknownWebsite(document.website_url.to_string()));
        }
        ensure_normalized(&document.page_url)?;
        let key = (document.website_url.to_string(), document.page_url.to_string());
        if self.documents.get(&key) == Some(&document) {
            return Ok(());
        }
        self.append(DOCUMENTS_FILE, &document)?;
        self.documents.insert(key, document);
        Ok(())
    }

    /// Store a document and its terms. Returns how many terms were new; exact
    /// duplicates within the website are skipped.
    pub fn ingest_terms(
        &mut self,
        document: TermsDocument,
        terms: Vec<TermRecord>,
    ) -> Result<usize, StoreError> {
        let source = self
            .websites
            .get(document.website_url.as_str())
            .map(|w| w.source)
            .ok_or_else(|| StoreError::UnknownWebsite(document.website_url.to_string()))?;
        for t in &terms {
            validate_term(t, &document)?;
        }
        self.upsert_document(document)?;

        let mut stored = 0;
        for t in terms {
            if self.term_keys.contains(&(t.website_url.to_string(), t.text.clone())) {
                continue;
            }
            self.append(TERMS_FILE, &t)?;
            self.index_term(t);
            stored += 1;
        }
        if stored > 0 {
            self.manifest.per_source.entry(source).or_default().term_count += stored as u64;
            self.write_index()?;
        }
        Ok(stored)
    }

    fn index_term(&mut self, t: TermRecord) {
        let dedupe = (t.website_url.to_string(), t.text.clone());
        if !self.term_keys.insert(dedupe) {
            return;
        }
        let key = (t.website_url.to_string(), t.source_page_url.to_string(), t.position_index);
        self.term_index.insert(t.id.clone(), key.clone());
        self.terms.insert(key, t);
    }

    pub fn document(&self, website: &::url::Url, page: &::url::Url) -> Option<&TermsDocument> {
        self.documents.get(&(website.to_string(), page.to_string()))
    }

    pub fn documents(&self) -> impl Iterator<Item = &TermsDocument> {
        self.documents.values()
    }

    pub fn documents_of<'a>(
        &'a self,
        website: &'a ::url::Url,
    ) -> impl Iterator<Item = &'a TermsDocument> + 'a {
        self.documents.values().filter(move |d| d.website_url == *website)
    }

    /// All terms ordered by website url, source page, then position.
    pub fn terms(&self) -> impl Iterator<Item = &TermRecord> {
        self.terms.values()
    }

    pub fn terms_of<'a>(&'a self, website: &'a ::url::Url) -> impl Iterator<Item = &'a TermRecord> + 'a {
        self.terms.values().filter(move |t| t.website_url == *website)
    }

    pub fn terms_where<'a, F>(&'a self, pred: F) -> impl Iterator<Item = &'a TermRecord> + 'a
    where
        F: Fn(&TermRecord) -> bool + 'a,
    {
        self.terms.values().filter(move |t| pred(t))
    }

    pub fn term(&self, id: &str) -> Option<&TermRecord> {
        self.term_index.get(id).and_then(|k| self.terms.get(k))
    }

    // --- labels ---

    /// Write a label. Labels are write-once per (term, stage, model, prompt version).
    pub fn put_label(&mut self, label: TermLabel) -> Result<bool, StoreError> {
        if self.term(&label.term_id).is_none() {
            return Err(invariant(&label.term_id, "label for unknown term"));
        }
        let key = label_key(&label);
        if self.labels.contains_key(&key) {
            return Ok(false);
        }
        self.append(LABELS_FILE, &label)?;
        self.index_label(label);
        Ok(true)
    }

    fn index_label(&mut self, label: TermLabel) {
        let key = label_key(&label);
        self.current_labels.insert((label.term_id.clone(), label.stage), key.clone());
        self.labels.entry(key).or_insert(label);
    }

    pub fn label(&self, term_id: &str, stage: Stage, model_id: &str, version: u32) -> Option<&TermLabel> {
        self.labels.get(&(term_id.to_string(), stage, model_id.to_string(), version))
    }

    /// Most recently written label for a term at a stage.
    pub fn current_label(&self, term_id: &str, stage: Stage) -> Option<&TermLabel> {
        self.current_labels
            .get(&(term_id.to_string(), stage))
            .and_then(|k| self.labels.get(k))
    }

    pub fn labels(&self) -> impl Iterator<Item = &TermLabel> {
        self.labels.values()
    }

    // --- pages ---

    /// Store a page body and return its content hash.
    pub fn put_page(&mut self, body: &str) -> Result<String, StoreError> {
        let hash = sha256_hex(body.as_bytes());
        if let Some(root) = &self.root {
            let path = root.join(PAGES_DIR).join(format!("{hash}.html"));
            if !path.exists() {
                fs::write(&path, body).map_err(|source| StoreError::Io { path, source })?;
            }
        } else {
            self.pages.insert(hash.clone(), body.to_string());
        }
        Ok(hash)
    }

    pub fn page(&self, hash: &str) -> Option<String> {
        match &self.root {
            Some(root) => fs::read_to_string(root.join(PAGES_DIR).join(format!("{hash}.html"))).ok(),
            None => self.pages.get(hash).cloned(),
        }
    }

    // --- manifest ---

    pub fn manifest(&self) -> &CorpusManifest {
        &self.manifest
    }

    /// Manifest computed from scratch over the raw records.
    pub fn recompute_manifest(&self) -> CorpusManifest {
        let mut m = CorpusManifest::default();
        for w in self.websites.values() {
            m.per_source.entry(w.source).or_default().apply(&StageDelta::of(w, 1));
        }
        for t in self.terms.values() {
            if let Some(w) = self.websites.get(t.website_url.as_str()) {
                m.per_source.entry(w.source).or_default().term_count += 1;
            }
        }
        m
    }

    fn write_index(&self) -> Result<(), StoreError> {
        if let Some(root) = &self.root {
            let path = root.join(INDEX_FILE);
            let json = serde_json::to_string_pretty(&self.manifest)?;
            fs::write(&path, json).map_err(|source| StoreError::Io { path, source })?;
        }
        Ok(())
    }

    fn append<T: Serialize>(&self, file: &str, record: &T) -> Result<(), StoreError> {
        let Some(root) = &self.root else { return Ok(()) };
        let path = root.join(file);
        let mut line = serde_json::to_string(record)?;
        line.push('\n');
        OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .and_then(|mut f| f.write_all(line.as_bytes()))
            .map_err(|source| StoreError::Io { path, source })
    }
}

fn label_key(l: &TermLabel) -> LabelKey {
    (l.term_id.clone(), l.stage, l.model_id.clone(), l.prompt_version)
}

fn validate_website(w: &WebsiteRecord) -> Result<(), StoreError> {
    ensure_normalized(&w.url)?;
    match (w.source, w.rank) {
        (Source::Tranco, None) => return Err(invariant(&w.url, "tranco source requires a rank")),
        (Source::Tranco, Some(0)) => return Err(invariant(&w.url, "rank must be positive")),
        (s, Some(_)) if s != Source::Tranco => {
            return Err(invariant(&w.url, "rank is only meaningful for tranco sites"))
        }
        _ => {}
    }
    if w.has_tc() && !w.is_english_shopping() {
        return Err(invariant(
            &w.url,
            "term pages recorded on a site that is not an English shopping site",
        ));
    }
    for u in &w.term_page_urls {
        ensure_normalized(u)?;
    }
    Ok(())
}

/// Whitespace-normalized form: trimmed, internal runs collapsed to one space.
pub fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub(crate) fn has_markup(s: &str) -> bool {
    let b = s.as_bytes();
    b.windows(2).any(|w| w[0] == b'<' && (w[1].is_ascii_alphabetic() || w[1] == b'/' || w[1] == b'!'))
}

fn validate_term(t: &TermRecord, doc: &TermsDocument) -> Result<(), StoreError> {
    if t.website_url != doc.website_url {
        return Err(invariant(&t.id, "term belongs to a different website than its document"));
    }
    if t.text.is_empty() {
        return Err(invariant(&t.id, "term text is empty"));
    }
    if collapse_whitespace(&t.text) != t.text {
        return Err(invariant(&t.id, "term text is not whitespace-normalized"));
    }
    if has_markup(&t.text) {
        return Err(invariant(&t.id, "term text contains markup"));
    }
    if t.id != term_id(t.website_url.host_str().unwrap_or_default(), &t.text) {
        return Err(invariant(&t.id, "term id does not match its content"));
    }
    Ok(())
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, StoreError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(source) => return Err(StoreError::Io { path: path.to_path_buf(), source }),
    };
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| StoreError::Io { path: path.to_path_buf(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|source| StoreError::Corrupt {
            path: path.to_path_buf(),
            line: i + 1,
            source,
        })?;
        out.push(record);
    }
    Ok(out)
}
