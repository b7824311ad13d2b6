use std::collections::{HashSet, VecDeque};

use url::Url;

use super::fetch::{Fetcher, PageEvidence};
use super::patterns::{discover_term_links, LinkPatternSet};
use crate::store::same_registrable_domain;

pub const DEFAULT_DEPTH_LIMIT: u32 = 2;

#[derive(Debug, Clone)]
pub struct CrawledPage {
    pub url: Url,
    /// 1 for pages linked from the homepage.
    pub depth: u32,
    pub evidence: PageEvidence,
}

#[derive(Debug, Clone, Default)]
pub struct CrawlResult {
    /// Policy pages that loaded, in breadth-first discovery order.
    pub documents: Vec<CrawledPage>,
    /// Matched links that could not be fetched.
    pub failed: Vec<CrawledPage>,
}

/// Breadth-first policy-page crawl starting from an already fetched homepage.
pub fn snowball_from(
    fetcher: &dyn Fetcher,
    homepage: &PageEvidence,
    patterns: &LinkPatternSet,
    depth_limit: u32,
) -> CrawlResult {
    let mut result = CrawlResult::default();
    let Some(html) = homepage.html_body.as_deref().filter(|_| homepage.is_ok()) else {
        return result;
    };
    let seed = &homepage.url;
    let mut visited: HashSet<Url> = HashSet::from([homepage.url.clone(), homepage.final_url.clone()]);
    let mut queue = VecDeque::new();
    let mut enqueue = |links: Vec<Url>, depth: u32, queue: &mut VecDeque<(Url, u32)>| {
        for link in links {
            if same_registrable_domain(seed, &link) && visited.insert(link.clone()) {
                queue.push_back((link, depth));
            }
        }
    };
    enqueue(discover_term_links(html, &homepage.final_url, patterns), 1, &mut queue);

    while let Some((url, depth)) = queue.pop_front() {
        let evidence = fetcher.fetch(&url);
        if !evidence.is_ok() {
            result.failed.push(CrawledPage { url, depth, evidence });
            continue;
        }
        if depth < depth_limit {
            if let Some(body) = evidence.html_body.as_deref() {
                enqueue(discover_term_links(body, &evidence.final_url, patterns), depth + 1, &mut queue);
            }
        }
        result.documents.push(CrawledPage { url, depth, evidence });
    }
    result
}

/// Fetch the seed homepage, then crawl its policy pages.
pub fn snowball_crawl(fetcher: &dyn Fetcher, seed: &Url, patterns: &LinkPatternSet, depth_limit: u32) -> CrawlResult {
    snowball_from(fetcher, &fetcher.fetch(seed), patterns, depth_limit)
}
