use percent_encoding::percent_decode_str;
use regex::{Regex, RegexBuilder};
use scraper::{Html, Selector};
use thiserror::Error;
use url::Url;

use crate::store::{collapse_whitespace, normalize_url};

/// Default anchor patterns for terms-and-conditions style pages.
pub const DEFAULT_POSITIVE: &[&str] = &[
    "terms.*?conditions",
    "terms.*?of.*?use",
    "terms.*?of.*?service",
    "terms.*?of.*?sale",
    "terms.*?of.*?conditions",
    "terms.*?and.*?conditions",
    "terms.*?&.*?conditions",
    "conditions.*?of.*?use",
    "intellectual.*property.*policy",
    "return[s]?.*?policy",
    "refund[s]?.*?policy",
    "return.*?and.*?refund.*?policy",
    "cancellation.*?and.*?returns",
    "cancellation.*?returns",
    "prohibited.*conduct",
    "electronic.*communication.*policy",
    "safety.*guideline",
    "requests.*from.*law.*enforcement",
    "bonus.*terms.*apply",
    "community.*rules",
    "gift.*card.*policy",
    "contact.*us.*here",
    "shipping.*policy",
    "warranty",
    "end.*user.*license",
    "user.*?agreement",
    "payment.*terms",
    "content.*policy",
    "terms",
];

/// Default exclusions. These win over any positive match.
pub const DEFAULT_NEGATIVE: &[&str] = &[
    "privacy.*?policy",
    "cookie.*?policy",
    "privacy.*?notice",
    "sale.*?tax.*?policy",
    "prohibited.*?items",
    "1099.*?k.*?form",
    "dmca.*copyright.*notification",
];

#[derive(Debug, Error)]
pub enum PatternError {
    #[error("invalid pattern {pattern:?}: {source}")]
    Regex { pattern: String, source: regex::Error },
    #[error("line {0}: pattern outside a [positive]/[negative] section")]
    NoSection(usize),
    #[error("line {0}: unknown section {1:?}")]
    UnknownSection(usize, String),
}

/// Ordered positive and negative link patterns, matched case-insensitively.
#[derive(Debug, Clone)]
pub struct LinkPatternSet {
    positive_src: Vec<String>,
    negative_src: Vec<String>,
    positive: Vec<Regex>,
    negative: Vec<Regex>,
}

fn compile(patterns: &[String]) -> Result<Vec<Regex>, PatternError> {
    patterns
        .iter()
        .map(|p| {
            RegexBuilder::new(p)
                .case_insensitive(true)
                .build()
                .map_err(|source| PatternError::Regex { pattern: p.clone(), source })
        })
        .collect()
}

impl LinkPatternSet {
    pub fn new(positive: Vec<String>, negative: Vec<String>) -> Result<Self, PatternError> {
        Ok(LinkPatternSet {
            positive: compile(&positive)?,
            negative: compile(&negative)?,
            positive_src: positive,
            negative_src: negative,
        })
    }

    /// Parse an override file: one regex per line under `[positive]` or
    /// `[negative]` headers. Blank lines and lines starting with `#` are
    /// skipped. A missing section keeps its default list.
    pub fn from_override(text: &str) -> Result<Self, PatternError> {
        let mut positive: Option<Vec<String>> = None;
        let mut negative: Option<Vec<String>> = None;
        let mut section: Option<bool> = None;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            match line {
                "[positive]" => {
                    section = Some(true);
                    positive.get_or_insert_with(Vec::new);
                }
                "[negative]" => {
                    section = Some(false);
                    negative.get_or_insert_with(Vec::new);
                }
                l if l.starts_with('[') && l.ends_with(']') && !l.contains('.') => {
                    return Err(PatternError::UnknownSection(i + 1, l.to_string()))
                }
                l => match section {
                    Some(true) => positive.as_mut().unwrap().push(l.to_string()),
                    Some(false) => negative.as_mut().unwrap().push(l.to_string()),
                    None => return Err(PatternError::NoSection(i + 1)),
                },
            }
        }
        let defaults = |d: &[&str]| d.iter().map(|s| s.to_string()).collect();
        Self::new(positive.unwrap_or_else(|| defaults(DEFAULT_POSITIVE)), negative.unwrap_or_else(|| defaults(DEFAULT_NEGATIVE)))
    }

    pub fn positive_patterns(&self) -> &[String] {
        &self.positive_src
    }

    pub fn negative_patterns(&self) -> &[String] {
        &self.negative_src
    }

    pub fn is_positive(&self, s: &str) -> bool {
        self.positive.iter().any(|r| r.is_match(s))
    }

    pub fn is_negative(&self, s: &str) -> bool {
        self.negative.iter().any(|r| r.is_match(s))
    }

    /// An anchor qualifies when its text or href path hits a positive pattern
    /// and neither hits a negative one.
    pub fn accepts(&self, anchor_text: &str, href_path: &str) -> bool {
        if self.is_negative(anchor_text) || self.is_negative(href_path) {
            return false;
        }
        self.is_positive(anchor_text) || self.is_positive(href_path)
    }
}

impl Default for LinkPatternSet {
    fn default() -> Self {
        let v = |d: &[&str]| d.iter().map(|s| s.to_string()).collect();
        Self::new(v(DEFAULT_POSITIVE), v(DEFAULT_NEGATIVE)).expect("default patterns compile")
    }
}

/// Policy-page links in document order, resolved against `base_url`,
/// fragment-stripped and deduplicated. Non-http(s) and unparseable hrefs are
/// skipped.
pub fn discover_term_links(html: &str, base_url: &Url, patterns: &LinkPatternSet) -> Vec<Url> {
    let doc = Html::parse_document(html);
    let anchors = Selector::parse("a[href]").expect("static selector");
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for a in doc.select(&anchors) {
        let Some(href) = a.value().attr("href") else { continue };
        let Ok(resolved) = base_url.join(href.trim()) else { continue };
        if !matches!(resolved.scheme(), "http" | "https") {
            continue;
        }
        let Ok(url) = normalize_url(resolved.as_str()) else { continue };
        let text = collapse_whitespace(&a.text().collect::<String>());
        let path = percent_decode_str(url.path()).decode_utf8_lossy();
        if patterns.accepts(&text, &path) && seen.insert(url.clone()) {
            out.push(url);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> Url {
        Url::parse("https://shop.example/").unwrap()
    }

    fn links(html: &str) -> Vec<String> {
        discover_term_links(html, &base(), &LinkPatternSet::default())
            .into_iter()
            .map(|u| u.to_string())
            .collect()
    }

    #[test]
    fn anchor_text_examples() {
        assert_eq!(links(r#"<a href="/a">Terms &amp; Conditions</a>"#), ["https://shop.example/a"]);
        assert!(links(r#"<a href="/b">Privacy Policy</a>"#).is_empty());
        assert_eq!(links(r#"<a href="/c">Shipping Policy</a>"#), ["https://shop.example/c"]);
        assert!(links(r#"<a href="/d">Cookie Policy</a>"#).is_empty());
    }

    #[test]
    fn href_path_matches_icon_links() {
        assert_eq!(
            links(r#"<a href="/pages/refund-policy"><img src="x.png"></a>"#),
            ["https://shop.example/pages/refund-policy"]
        );
        assert!(links(r#"<a href="/privacy-policy">Terms</a>"#).is_empty());
    }

    #[test]
    fn dedup_order_and_resolution() {
        let html = r##"
            <a href="/terms#top">Terms of Service</a>
            <a href="mailto:x@y.z">Terms</a>
            <a href="https://shop.example/returns">Returns Policy</a>
            <a href="/terms">Terms</a>
            <a href="javascript:void(0)">Terms</a>
            <a href="http://[bad">Terms</a>
        "##;
        assert_eq!(links(html), ["https://shop.example/terms", "https://shop.example/returns"]);
    }

    #[test]
    fn override_file() {
        let set = LinkPatternSet::from_override("# custom\n[positive]\nlegal\n\n[negative]\nprivacy\n").unwrap();
        assert_eq!(set.positive_patterns(), ["legal"]);
        assert!(set.accepts("Legal notice", "/x"));
        assert!(!set.accepts("Legal privacy", "/x"));

        let only_neg = LinkPatternSet::from_override("[negative]\nfoo\n").unwrap();
        assert_eq!(only_neg.positive_patterns().len(), DEFAULT_POSITIVE.len());
        assert!(LinkPatternSet::from_override("terms\n").is_err());
        assert!(LinkPatternSet::from_override("[positive]\n(unclosed\n").is_err());
        assert!(LinkPatternSet::from_override("[bogus]\n").is_err());
    }
}
