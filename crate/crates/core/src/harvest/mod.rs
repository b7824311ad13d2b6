//! Fetching candidate sites, shopping classification, language detection and
//! policy-page discovery.

pub mod crawl;
pub mod fetch;
pub mod language;
pub mod patterns;

use std::io::Read;

use thiserror::Error;
use url::Url;

pub use self::crawl::{snowball_crawl, snowball_from, CrawlResult, CrawledPage, DEFAULT_DEPTH_LIMIT};
pub use self::fetch::{
    fetch_page, Fetcher, HttpFetcher, MemoryFetcher, MemoryRenderer, MemoryResponse, PageEvidence, PoliteFetcher,
    PolitenessConfig, Renderer,
};
pub use self::language::{detect_language, Detection, LanguageDetector, LanguageError};
pub use self::patterns::{discover_term_links, LinkPatternSet, PatternError, DEFAULT_NEGATIVE, DEFAULT_POSITIVE};

use crate::extract::visible_text;
use crate::llm::{Gateway, GatewayError, ShoppingLabel};
use crate::store::{normalize_url, ClassificationMode, ShoppingVerdict, SiteClassification};

/// Visible page text sent alongside the URL in `url_html` mode.
pub const HTML_PAYLOAD_CHARS: usize = 8_000;

#[derive(Debug, Error)]
pub enum HarvestError {
    #[error("mode url_screenshot needs a screenshot of {0}")]
    MissingScreenshot(Url),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("site list line {line}: {reason}")]
    SiteList { line: usize, reason: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SiteVerdict {
    pub verdict: ShoppingVerdict,
    pub classification: SiteClassification,
}

pub fn website_payload(evidence: &PageEvidence, mode: ClassificationMode) -> String {
    let url = &evidence.final_url;
    match mode {
        ClassificationMode::UrlOnly | ClassificationMode::UrlScreenshot => format!("URL: {url}"),
        ClassificationMode::UrlHtml => {
            let text: String = visible_text(evidence.html_body.as_deref().unwrap_or_default())
                .chars()
                .take(HTML_PAYLOAD_CHARS)
                .collect();
            format!("URL: {url}\n\nPage text:\n{text}")
        }
    }
}

/// Shopping verdict for one fetched homepage. Unreachable pages never reach
/// the model; replies outside the label set yield `Unknown` with a diagnostic.
pub fn classify_website(
    evidence: &PageEvidence,
    mode: ClassificationMode,
    gateway: &Gateway,
) -> Result<SiteVerdict, HarvestError> {
    let mut classification = SiteClassification { mode, model_id: gateway.model_id().to_string(), diagnostic: None };
    if !evidence.is_ok() {
        classification.diagnostic = Some(format!("fetch status {:?}", evidence.fetch_status));
        return Ok(SiteVerdict { verdict: ShoppingVerdict::Unreachable, classification });
    }
    let screenshot = match mode {
        ClassificationMode::UrlScreenshot => {
            Some(evidence.screenshot.as_deref().ok_or_else(|| HarvestError::MissingScreenshot(evidence.url.clone()))?)
        }
        _ => None,
    };
    let verdict = match gateway.classify_website(&website_payload(evidence, mode), screenshot) {
        Ok(l) => match l.value {
            ShoppingLabel::Shopping => ShoppingVerdict::Shopping,
            ShoppingLabel::NonShopping => ShoppingVerdict::NonShopping,
        },
        Err(GatewayError::UnparseableReply { raw, .. }) => {
            tracing::error!(url = %evidence.url, %raw, "website classification reply unparseable");
            classification.diagnostic = Some(format!("unparseable reply: {raw}"));
            ShoppingVerdict::Unknown
        }
        Err(e) => return Err(e.into()),
    };
    Ok(SiteVerdict { verdict, classification })
}

/// One row of a ranked site list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SiteEntry {
    pub rank: Option<u32>,
    pub url: Url,
}

/// Read a `rank,domain` CSV (header optional). Rows with an empty rank are
/// unranked. Duplicate sites keep their first row.
pub fn read_site_list(input: impl Read) -> Result<Vec<SiteEntry>, HarvestError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_reader(input);
    let mut out = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let line = i + 1;
        let (rank, domain) = match (row.get(0), row.get(1)) {
            (Some(r), Some(d)) => (r, d),
            (Some(d), None) => ("", d),
            _ => continue,
        };
        if domain.is_empty() || (i == 0 && rank.eq_ignore_ascii_case("rank")) {
            continue;
        }
        let rank = match rank {
            "" => None,
            r => Some(r.parse::<u32>().ok().filter(|&n| n > 0).ok_or_else(|| HarvestError::SiteList {
                line,
                reason: format!("bad rank {r:?}"),
            })?),
        };
        let url = normalize_url(domain).map_err(|e| HarvestError::SiteList { line, reason: e.to_string() })?;
        if seen.insert(url.clone()) {
            out.push(SiteEntry { rank, url });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{GatewayConfig, MockModel, PromptName};
    use std::sync::Arc;

    fn home() -> PageEvidence {
        let url = Url::parse("https://shop.example/").unwrap();
        PageEvidence::ok(url.clone(), url, "<title>Shop</title><p>Buy shoes</p>".into())
    }

    fn gw(reply: &str) -> (Arc<MockModel>, Gateway) {
        let mock = Arc::new(MockModel::new().default_reply(PromptName::WebsiteCls, reply));
        (mock.clone(), Gateway::new(mock, GatewayConfig::new("mock")))
    }

    #[test]
    fn verdicts() {
        let (_, g) = gw("shopping");
        assert_eq!(classify_website(&home(), ClassificationMode::UrlHtml, &g).unwrap().verdict, ShoppingVerdict::Shopping);
        let (_, g) = gw("Non-Shopping.");
        let v = classify_website(&home(), ClassificationMode::UrlOnly, &g).unwrap();
        assert_eq!(v.verdict, ShoppingVerdict::NonShopping);
        assert_eq!(v.classification.mode, ClassificationMode::UrlOnly);
        assert_eq!(v.classification.model_id, "mock");
    }

    #[test]
    fn unparseable_gives_unknown() {
        let (mock, g) = gw("maybe");
        let v = classify_website(&home(), ClassificationMode::UrlHtml, &g).unwrap();
        assert_eq!(v.verdict, ShoppingVerdict::Unknown);
        assert!(v.classification.diagnostic.unwrap().contains("maybe"));
        assert_eq!(mock.call_count(), 3);
    }

    #[test]
    fn screenshot_mode_requires_image() {
        let (mock, g) = gw("shopping");
        assert!(matches!(
            classify_website(&home(), ClassificationMode::UrlScreenshot, &g),
            Err(HarvestError::MissingScreenshot(_))
        ));
        let mut ev = home();
        ev.screenshot = Some(vec![0x89, b'P', b'N', b'G']);
        assert_eq!(classify_website(&ev, ClassificationMode::UrlScreenshot, &g).unwrap().verdict, ShoppingVerdict::Shopping);
        assert_eq!(mock.call_count(), 1);
    }

    #[test]
    fn unreachable_skips_model() {
        let (mock, g) = gw("shopping");
        let ev = PageEvidence::failed(Url::parse("https://x.example/").unwrap(), crate::store::FetchStatus::Network);
        assert_eq!(classify_website(&ev, ClassificationMode::UrlHtml, &g).unwrap().verdict, ShoppingVerdict::Unreachable);
        assert_eq!(mock.call_count(), 0);
    }

    #[test]
    fn site_list() {
        let csv = "rank,domain\n1,shop.example\n2, Other.Example \n3,shop.example\n,extra.example\n";
        let sites = read_site_list(csv.as_bytes()).unwrap();
        assert_eq!(sites.len(), 3);
        assert_eq!(sites[1].url.as_str(), "https://other.example/");
        assert_eq!(sites[2].rank, None);
        assert!(read_site_list("x,shop.example\n".as_bytes()).is_err());
        assert!(read_site_list("0,shop.example\n".as_bytes()).is_err());
    }
}
