use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use url::Url;

pub const LANGUAGE_UNKNOWN: &str = "unknown";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Tranco,
    Fcw,
    Flos,
    Custom,
}

impl Source {
    pub const ALL: [Source; 4] = [Source::Tranco, Source::Fcw, Source::Flos, Source::Custom];

    pub fn as_str(self) -> &'static str {
        match self {
            Source::Tranco => "tranco",
            Source::Fcw => "fcw",
            Source::Flos => "flos",
            Source::Custom => "custom",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Source {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Source::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| format!("unknown source {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShoppingVerdict {
    #[default]
    Unknown,
    Shopping,
    NonShopping,
    Unreachable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FetchStatus {
    Ok,
    NotFound,
    HttpError(u16),
    TooManyRedirects,
    Timeout,
    Network,
    RobotsDisallowed,
}

impl FetchStatus {
    pub fn is_ok(self) -> bool {
        self == FetchStatus::Ok
    }
}

/// Where a fetched page body lives in the content-addressed page store.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageRef {
    pub final_url: Url,
    pub fetch_status: FetchStatus,
    pub body_hash: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassificationMode {
    UrlOnly,
    UrlHtml,
    UrlScreenshot,
}

impl FromStr for ClassificationMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "url_only" => Ok(Self::UrlOnly),
            "url_html" => Ok(Self::UrlHtml),
            "url_screenshot" => Ok(Self::UrlScreenshot),
            _ => Err(format!("unknown classification mode {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiteClassification {
    pub mode: ClassificationMode,
    pub model_id: String,
    pub diagnostic: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WebsiteRecord {
    pub url: Url,
    pub source: Source,
    pub rank: Option<u32>,
    #[serde(default)]
    pub shopping_verdict: ShoppingVerdict,
    pub language: String,
    #[serde(default)]
    pub term_page_urls: BTreeSet<Url>,
    pub fetched_at: DateTime<Utc>,
    #[serde(default)]
    pub homepage: Option<PageRef>,
    #[serde(default)]
    pub classification: Option<SiteClassification>,
    /// Set once T&C discovery has run, even when it found nothing.
    #[serde(default)]
    pub discovery_done: bool,
}

impl WebsiteRecord {
    pub fn new(url: Url, source: Source, fetched_at: DateTime<Utc>) -> Self {
        WebsiteRecord {
            url,
            source,
            rank: None,
            shopping_verdict: ShoppingVerdict::Unknown,
            language: LANGUAGE_UNKNOWN.to_string(),
            term_page_urls: BTreeSet::new(),
            fetched_at,
            homepage: None,
            classification: None,
            discovery_done: false,
        }
    }

    pub fn with_rank(mut self, rank: u32) -> Self {
        self.rank = Some(rank);
        self
    }

    pub fn is_shopping(&self) -> bool {
        self.shopping_verdict == ShoppingVerdict::Shopping
    }

    pub fn is_english_shopping(&self) -> bool {
        self.is_shopping() && self.language == "en"
    }

    pub fn has_tc(&self) -> bool {
        !self.term_page_urls.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermsDocument {
    pub website_url: Url,
    pub page_url: Url,
    pub fetch_status: FetchStatus,
    pub raw_body_hash: Option<String>,
    pub extracted_at: Option<DateTime<Utc>>,
    /// Snowball depth the page was found at (1 = linked from the homepage).
    #[serde(default)]
    pub depth: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermRecord {
    pub id: String,
    pub text: String,
    pub website_url: Url,
    pub source_page_url: Url,
    pub position_index: u32,
}

/// Content id of a term: a pure function of the site host and the
/// normalized text.
pub fn term_id(host: &str, text: &str) -> String {
    let mut h = Sha256::new();
    h.update(host.as_bytes());
    h.update([0u8]);
    h.update(text.as_bytes());
    hex_digest(h)
}

pub(crate) fn hex_digest(h: Sha256) -> String {
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_hex(data: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(data);
    hex_digest(h)
}

impl TermRecord {
    pub fn new(website_url: Url, source_page_url: Url, position_index: u32, text: String) -> Self {
        let id = term_id(website_url.host_str().unwrap_or_default(), &text);
        TermRecord { id, text, website_url, source_page_url, position_index }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Financial,
    Unfavorable,
}

impl FromStr for Stage {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "financial" => Ok(Stage::Financial),
            "unfavorable" => Ok(Stage::Unfavorable),
            _ => Err(format!("unknown stage {s:?}")),
        }
    }
}

pub const LABEL_NEEDS_REVIEW: &str = "needs_review";
pub const LABEL_BENIGN: &str = "benign";
pub const LABEL_NOT_FINANCIAL: &str = "not_financial";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermLabel {
    pub term_id: String,
    pub stage: Stage,
    pub label: String,
    pub model_id: String,
    pub prompt_version: u32,
    /// Cache key of the model reply this label was parsed from.
    pub reply_ref: Option<String>,
}

impl TermLabel {
    pub fn needs_review(&self) -> bool {
        self.label == LABEL_NEEDS_REVIEW
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    pub queried: u64,
    pub shopping: u64,
    pub english: u64,
    pub with_tc: u64,
    pub term_count: u64,
}

impl StageCounts {
    pub fn is_monotone(&self) -> bool {
        self.queried >= self.shopping && self.shopping >= self.english && self.english >= self.with_tc
    }

    fn add(&mut self, other: &StageCounts) {
        self.queried += other.queried;
        self.shopping += other.shopping;
        self.english += other.english;
        self.with_tc += other.with_tc;
        self.term_count += other.term_count;
    }

    pub(crate) fn apply(&mut self, delta: &StageDelta) {
        let f = |v: &mut u64, d: i64| *v = (*v as i64 + d) as u64;
        f(&mut self.queried, delta.queried);
        f(&mut self.shopping, delta.shopping);
        f(&mut self.english, delta.english);
        f(&mut self.with_tc, delta.with_tc);
        f(&mut self.term_count, delta.term_count);
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct StageDelta {
    pub queried: i64,
    pub shopping: i64,
    pub english: i64,
    pub with_tc: i64,
    pub term_count: i64,
}

impl StageDelta {
    pub fn of(w: &WebsiteRecord, sign: i64) -> Self {
        StageDelta {
            queried: sign,
            shopping: sign * w.is_shopping() as i64,
            english: sign * w.is_english_shopping() as i64,
            with_tc: sign * w.has_tc() as i64,
            term_count: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub per_source: BTreeMap<Source, StageCounts>,
}

impl CorpusManifest {
    pub fn total(&self) -> StageCounts {
        let mut total = StageCounts::default();
        for c in self.per_source.values() {
            total.add(c);
        }
        total
    }

    pub fn source(&self, source: Source) -> StageCounts {
        self.per_source.get(&source).copied().unwrap_or_default()
    }
}
