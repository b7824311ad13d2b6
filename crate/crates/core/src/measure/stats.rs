use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::classify::unfavorable_category;
use crate::store::{CorpusManifest, CorpusStore, Stage, TermRecord, WebsiteRecord};
use crate::taxonomy::{Category, Taxonomy, OTHERS_LABEL};

pub const RANK_BUCKET_WIDTH: u32 = 20_000;
pub const RANK_RANGE: u32 = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdfPoint {
    pub x: u64,
    pub f: f64,
}

/// Ranks `lo..=hi` and the unfavorable terms of sites ranked there.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankBucket {
    pub lo: u32,
    pub hi: u32,
    pub counts: BTreeMap<Category, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub manifest: CorpusManifest,
    pub category_counts: BTreeMap<Category, u64>,
    pub total_unfavorable: u64,
    pub websites_with_tc: u64,
    pub websites_with_unfavorable: u64,
    pub unfavorable_ratio: f64,
    /// Over sites with T&C.
    pub cdf_terms_per_site: Vec<CdfPoint>,
    /// Over sites with at least one unfavorable term.
    pub cdf_unfavorable_per_site: Vec<CdfPoint>,
    pub rank_bucket_histogram: Vec<RankBucket>,
}

impl CorpusStats {
    /// Ratio as a percentage rounded to two decimals.
    pub fn unfavorable_percent(&self) -> f64 {
        (self.unfavorable_ratio * 10_000.0).round() / 100.0
    }
}

/// Empirical CDF as sorted distinct values with the share at or below each.
pub fn cdf(values: &[u64]) -> Vec<CdfPoint> {
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    let n = sorted.len() as f64;
    let mut out: Vec<CdfPoint> = Vec::new();
    for (i, x) in sorted.iter().enumerate() {
        let f = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(p) if p.x == *x => p.f = f,
            _ => out.push(CdfPoint { x: *x, f }),
        }
    }
    out
}

fn bucket_of(rank: u32, width: u32) -> usize {
    (rank.saturating_sub(1) / width) as usize
}

fn zero_counts() -> BTreeMap<Category, u64> {
    Category::ALL.iter().map(|c| (*c, 0)).collect()
}

/// Category of an unfavorable-stage label, `Others` included.
fn category(taxonomy: &Taxonomy, label: &str) -> Option<Category> {
    if label == OTHERS_LABEL {
        return Some(Category::Others);
    }
    unfavorable_category(taxonomy, label)
}

/// Stats from raw records. `labels` maps term id to its unfavorable-stage label.
pub fn stats_from_records(
    websites: &[WebsiteRecord],
    terms: &[TermRecord],
    labels: &HashMap<String, String>,
    taxonomy: &Taxonomy,
    bucket_width: u32,
) -> CorpusStats {
    let mut manifest = CorpusManifest::default();
    let by_url: HashMap<&str, &WebsiteRecord> = websites.iter().map(|w| (w.url.as_str(), w)).collect();
    for w in websites {
        let c = manifest.per_source.entry(w.source).or_default();
        c.queried += 1;
        c.shopping += w.is_shopping() as u64;
        c.english += w.is_english_shopping() as u64;
        c.with_tc += w.has_tc() as u64;
    }

    let mut terms_per_site: BTreeMap<&str, u64> = BTreeMap::new();
    let mut unfavorable_per_site: BTreeMap<&str, BTreeMap<Category, u64>> = BTreeMap::new();
    let mut category_counts = zero_counts();
    for t in terms {
        let Some(w) = by_url.get(t.website_url.as_str()) else { continue };
        manifest.per_source.entry(w.source).or_default().term_count += 1;
        *terms_per_site.entry(w.url.as_str()).or_insert(0) += 1;
        if let Some(c) = labels.get(&t.id).and_then(|l| category(taxonomy, l)) {
            *category_counts.get_mut(&c).unwrap() += 1;
            *unfavorable_per_site.entry(w.url.as_str()).or_default().entry(c).or_insert(0) += 1;
        }
    }

    let with_tc: Vec<&WebsiteRecord> = websites.iter().filter(|w| w.has_tc()).collect();
    let term_counts: Vec<u64> = with_tc.iter().map(|w| terms_per_site.get(w.url.as_str()).copied().unwrap_or(0)).collect();
    let flagged_counts: Vec<u64> = unfavorable_per_site.values().map(|m| m.values().sum()).collect();

    let max_rank = websites.iter().filter_map(|w| w.rank).max().unwrap_or(0).max(RANK_RANGE);
    let mut histogram: Vec<RankBucket> = (0..=bucket_of(max_rank, bucket_width))
        .map(|i| RankBucket {
            lo: i as u32 * bucket_width + 1,
            hi: (i as u32 + 1) * bucket_width,
            counts: zero_counts(),
        })
        .collect();
    for (url, counts) in &unfavorable_per_site {
        if let Some(rank) = by_url[url].rank {
            let b = &mut histogram[bucket_of(rank, bucket_width)];
            for (c, n) in counts {
                *b.counts.get_mut(c).unwrap() += n;
            }
        }
    }

    let flagged_sites = unfavorable_per_site.len() as u64;
    CorpusStats {
        manifest,
        total_unfavorable: category_counts.values().sum(),
        category_counts,
        websites_with_tc: with_tc.len() as u64,
        websites_with_unfavorable: flagged_sites,
        unfavorable_ratio: if with_tc.is_empty() { 0.0 } else { flagged_sites as f64 / with_tc.len() as f64 },
        cdf_terms_per_site: cdf(&term_counts),
        cdf_unfavorable_per_site: cdf(&flagged_counts),
        rank_bucket_histogram: histogram,
    }
}

/// Stats over a corpus store, using each term's current unfavorable label.
pub fn compute_corpus_stats(store: &CorpusStore, taxonomy: &Taxonomy) -> CorpusStats {
    let websites: Vec<WebsiteRecord> = store.websites().cloned().collect();
    let terms: Vec<TermRecord> = store.terms().cloned().collect();
    let labels: HashMap<String, String> = terms
        .iter()
        .filter_map(|t| store.current_label(&t.id, Stage::Unfavorable).map(|l| (t.id.clone(), l.label.clone())))
        .collect();
    stats_from_records(&websites, &terms, &labels, taxonomy, RANK_BUCKET_WIDTH)
}
