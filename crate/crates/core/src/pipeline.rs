//! End-to-end orchestration over a corpus store. Every stage reads the store,
//! skips work that is already recorded and writes its results back, so a run
//! can be resumed after any failure.

use std::collections::{BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::Url;

use crate::classify::{ClassifyError, Classifier, PassReport, Scope};
use crate::clock::Clock;
use crate::extract::{extract_terms, visible_text};
use crate::harvest::{
    classify_website, detect_language, fetch_page, snowball_from, Fetcher, HarvestError, LinkPatternSet, PageEvidence,
    Renderer, SiteEntry, DEFAULT_DEPTH_LIMIT,
};
use crate::llm::Gateway;
use crate::measure::{compute_corpus_stats, CorpusStats};
use crate::store::{
    ClassificationMode, CorpusManifest, CorpusStore, PageRef, ShoppingVerdict, Source, Stage, StoreError,
    TermsDocument, WebsiteRecord, LANGUAGE_UNKNOWN,
};
use crate::taxonomy::{FinancialTemplate, Taxonomy};
use crate::topics::{
    dbscan, embed_terms, load_batch, run_induction_loop, save_batch, ClusterParams, EmbeddingBatch,
    EmbeddingProvider, InductionOutcome, InductionParams, Reviewer, TopicError, TopicTemplate, CoverageReport,
    EMBEDDINGS_FILE,
};

pub const TOPICS_FILE: &str = "topics.json";
pub const STATS_FILE: &str = "stats.json";
pub const CLUSTERS_FILE: &str = "clusters.json";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Harvest(#[from] HarvestError),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error(transparent)]
    Topics(#[from] TopicError),
    #[error("{0}")]
    MissingLabels(String),
    #[error("site list: {0}")]
    SiteList(String),
}

#[derive(Debug, Clone)]
pub struct PipelineOptions {
    pub source: Source,
    pub top: Option<usize>,
    pub mode: ClassificationMode,
    pub depth_limit: u32,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions { source: Source::Custom, top: None, mode: ClassificationMode::UrlHtml, depth_limit: DEFAULT_DEPTH_LIMIT }
    }
}

/// What one stage did.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    pub processed: usize,
    pub skipped: usize,
}

impl StageReport {
    fn new(stage: &str) -> Self {
        StageReport { stage: stage.to_string(), ..Default::default() }
    }
}

#[derive(Debug, Clone)]
pub struct MeasurementOutcome {
    pub manifest: CorpusManifest,
    pub stats: CorpusStats,
    pub stages: Vec<StageReport>,
}

pub struct Pipeline<'a> {
    pub fetcher: &'a dyn Fetcher,
    pub renderer: Option<&'a dyn Renderer>,
    pub gateway: &'a Gateway,
    pub taxonomy: &'a Taxonomy,
    pub template: &'a FinancialTemplate,
    pub patterns: &'a LinkPatternSet,
    pub clock: &'a dyn Clock,
    pub options: PipelineOptions,
}

fn stored_homepage(store: &CorpusStore, w: &WebsiteRecord) -> Option<PageEvidence> {
    let home = w.homepage.as_ref()?;
    let body = home.body_hash.as_deref().and_then(|h| store.page(h))?;
    let mut ev = PageEvidence::ok(w.url.clone(), home.final_url.clone(), body);
    ev.fetch_status = home.fetch_status;
    Some(ev)
}

/// Split every fetched, not yet extracted policy document into terms.
pub fn extract_pending(store: &mut CorpusStore, clock: &dyn Clock) -> Result<StageReport, PipelineError> {
    let mut report = StageReport::new("extract");
    let pending: Vec<(TermsDocument, String)> = store
        .documents()
        .filter(|d| d.extracted_at.is_none())
        .filter_map(|d| d.raw_body_hash.as_deref().and_then(|h| store.page(h)).map(|body| (d.clone(), body)))
        .collect();
    report.skipped = store.documents().count() - pending.len();
    let extracted: Vec<_> = pending
        .into_par_iter()
        .map(|(doc, body)| {
            let terms = extract_terms(&body, &doc.website_url, &doc.page_url);
            (doc, terms)
        })
        .collect();
    for (mut doc, terms) in extracted {
        doc.extracted_at = Some(clock.utc());
        store.ingest_terms(doc, terms)?;
        report.processed += 1;
    }
    Ok(report)
}

impl Pipeline<'_> {
    /// Record the listed sites and fetch each homepage once.
    pub fn harvest(&self, store: &mut CorpusStore, entries: &[SiteEntry]) -> Result<StageReport, PipelineError> {
        let mut report = StageReport::new("harvest");
        let take = self.options.top.unwrap_or(entries.len());
        let mut todo = Vec::new();
        for e in entries.iter().take(take) {
            if store.website(&e.url).is_some_and(|w| w.homepage.is_some()) {
                report.skipped += 1;
                continue;
            }
            let rank = match (self.options.source, e.rank) {
                (Source::Tranco, None) => {
                    return Err(PipelineError::SiteList(format!("{} has no rank but the source is tranco", e.url)))
                }
                (Source::Tranco, r) => r,
                _ => None,
            };
            todo.push((e.url.clone(), rank));
        }
        let fetched: Vec<(Url, Option<u32>, PageEvidence)> = todo
            .into_par_iter()
            .map(|(url, rank)| {
                let ev = fetch_page(self.fetcher, &url, self.renderer);
                (url, rank, ev)
            })
            .collect();
        for (url, rank, ev) in fetched {
            let mut w = WebsiteRecord::new(url, self.options.source, self.clock.utc());
            w.rank = rank;
            let body_hash = match (&ev.html_body, ev.is_ok()) {
                (Some(body), true) => Some(store.put_page(body)?),
                _ => None,
            };
            if !ev.is_ok() {
                w.shopping_verdict = ShoppingVerdict::Unreachable;
            }
            w.homepage = Some(PageRef { final_url: ev.final_url.clone(), fetch_status: ev.fetch_status, body_hash });
            store.upsert_website(w)?;
            report.processed += 1;
        }
        Ok(report)
    }

    /// Shopping verdict for every fetched site without one, then language
    /// detection on the shopping sites.
    pub fn classify_sites(&self, store: &mut CorpusStore) -> Result<StageReport, PipelineError> {
        let mut report = StageReport::new("classify-sites");
        let pending: Vec<(WebsiteRecord, PageEvidence)> = store
            .websites()
            .filter(|w| w.homepage.is_some() && w.classification.is_none())
            .filter(|w| w.shopping_verdict == ShoppingVerdict::Unknown)
            .filter_map(|w| stored_homepage(store, w).map(|ev| (w.clone(), ev)))
            .collect();
        report.skipped = store.websites().count() - pending.len();
        let results: Vec<(WebsiteRecord, PageEvidence, Result<_, HarvestError>)> = pending
            .into_par_iter()
            .map(|(w, mut ev)| {
                if self.options.mode == ClassificationMode::UrlScreenshot {
                    ev.screenshot = self.renderer.and_then(|r| r.screenshot(&ev.final_url));
                }
                let verdict = classify_website(&ev, self.options.mode, self.gateway);
                (w, ev, verdict)
            })
            .collect();
        for (mut w, ev, verdict) in results {
            let verdict = verdict?;
            w.shopping_verdict = verdict.verdict;
            w.classification = Some(verdict.classification);
            if w.is_shopping() {
                let text = visible_text(ev.html_body.as_deref().unwrap_or_default());
                w.language = detect_language(&text).map_or_else(|_| LANGUAGE_UNKNOWN.to_string(), |d| d.code);
            }
            w.fetched_at = w.fetched_at.max(self.clock.utc());
            store.upsert_website(w)?;
            report.processed += 1;
        }
        Ok(report)
    }

    /// Snowball policy-page discovery on English shopping sites.
    pub fn discover(&self, store: &mut CorpusStore) -> Result<StageReport, PipelineError> {
        let mut report = StageReport::new("discover-tc");
        let pending: Vec<(WebsiteRecord, PageEvidence)> = store
            .websites()
            .filter(|w| w.is_english_shopping() && !w.discovery_done)
            .filter_map(|w| stored_homepage(store, w).map(|ev| (w.clone(), ev)))
            .collect();
        report.skipped = store.websites().filter(|w| w.discovery_done).count();
        let crawled: Vec<_> = pending
            .into_par_iter()
            .map(|(w, home)| {
                let crawl = snowball_from(self.fetcher, &home, self.patterns, self.options.depth_limit);
                (w, crawl)
            })
            .collect();
        for (mut w, crawl) in crawled {
            let mut pages = BTreeSet::new();
            for page in crawl.documents.iter().chain(&crawl.failed) {
                let raw_body_hash = match (&page.evidence.html_body, page.evidence.is_ok()) {
                    (Some(body), true) => Some(store.put_page(body)?),
                    _ => None,
                };
                if raw_body_hash.is_some() {
                    pages.insert(page.url.clone());
                }
                store.upsert_document(TermsDocument {
                    website_url: w.url.clone(),
                    page_url: page.url.clone(),
                    fetch_status: page.evidence.fetch_status,
                    raw_body_hash,
                    extracted_at: None,
                    depth: page.depth,
                })?;
            }
            w.term_page_urls = pages;
            w.discovery_done = true;
            w.fetched_at = w.fetched_at.max(self.clock.utc());
            store.upsert_website(w)?;
            report.processed += 1;
        }
        Ok(report)
    }

    /// Split every fetched, not yet extracted policy document into terms.
    pub fn extract(&self, store: &mut CorpusStore) -> Result<StageReport, PipelineError> {
        extract_pending(store, self.clock)
    }

    /// Both classification passes over all stored terms.
    pub fn classify(&self, store: &mut CorpusStore) -> Result<(PassReport, PassReport), PipelineError> {
        let classifier = Classifier { gateway: self.gateway, taxonomy: self.taxonomy, template: self.template };
        Ok(classifier.run_both(store, &Scope::All)?)
    }

    /// Every stage in order, then corpus statistics.
    pub fn run_measurement(&self, store: &mut CorpusStore, entries: &[SiteEntry]) -> Result<MeasurementOutcome, PipelineError> {
        let mut stages = vec![self.harvest(store, entries)?, self.classify_sites(store)?, self.discover(store)?, self.extract(store)?];
        let (first, second) = self.classify(store)?;
        for (name, pass) in [("classify-financial", first), ("classify-unfavorable", second)] {
            stages.push(StageReport { stage: name.into(), processed: pass.queried, skipped: pass.skipped_existing });
        }
        for s in &stages {
            tracing::info!(stage = %s.stage, processed = s.processed, skipped = s.skipped, "stage done");
        }
        Ok(MeasurementOutcome {
            manifest: store.manifest().clone(),
            stats: compute_corpus_stats(store, self.taxonomy),
            stages,
        })
    }
}

/// Inputs for topic discovery.
pub struct TopicRun<'a> {
    pub gateway: &'a Gateway,
    pub embedder: &'a dyn EmbeddingProvider,
    pub template: &'a FinancialTemplate,
    pub cluster: ClusterParams,
    pub induction: InductionParams,
}

/// Financial-positive terms with their embeddings. Vectors already stored in
/// the corpus for this provider are reused; new ones are appended.
pub struct PositiveBatch {
    pub batch: EmbeddingBatch,
    pub texts: HashMap<String, String>,
}

pub fn embed_financial_positives(
    store: &CorpusStore,
    embedder: &dyn EmbeddingProvider,
    template: &FinancialTemplate,
) -> Result<PositiveBatch, PipelineError> {
    let terms: Vec<_> = store.terms().collect();
    let labeled = terms.iter().filter(|t| store.current_label(&t.id, Stage::Financial).is_some()).count();
    if !terms.is_empty() && labeled == 0 {
        return Err(PipelineError::MissingLabels(
            "no financial labels found; run `termscope classify --stage financial` first".into(),
        ));
    }
    let positives: Vec<(String, String)> = terms
        .iter()
        .filter(|t| {
            store
                .current_label(&t.id, Stage::Financial)
                .is_some_and(|l| !l.needs_review() && template.is_positive(&l.label))
        })
        .map(|t| (t.id.clone(), t.text.clone()))
        .collect();

    let path = store.artifact_path(EMBEDDINGS_FILE);
    let mut known: HashMap<String, Vec<f64>> = HashMap::new();
    if let Some(p) = &path {
        if let Some(b) = load_batch(p, embedder.id())? {
            known.extend(b.term_ids.into_iter().zip(b.vectors));
        }
    }
    let missing: Vec<(String, String)> = positives.iter().filter(|(id, _)| !known.contains_key(id)).cloned().collect();
    if !missing.is_empty() {
        let fresh = embed_terms(&missing, embedder)?;
        if let Some(p) = &path {
            save_batch(p, &fresh)?;
        }
        known.extend(fresh.term_ids.into_iter().zip(fresh.vectors));
    }
    let ids: Vec<String> = positives.iter().map(|(id, _)| id.clone()).collect();
    let vectors = ids.iter().map(|id| known.remove(id).expect("embedded above")).collect();
    Ok(PositiveBatch {
        batch: EmbeddingBatch::from_parts(embedder.id(), ids, vectors)?,
        texts: positives.into_iter().collect(),
    })
}

/// Embed financial-positive terms, cluster them and run the reviewed
/// induction loop. The resulting template is written to the corpus when it
/// has a root.
pub fn run_topic_discovery(
    store: &CorpusStore,
    run: &TopicRun,
    start: Option<TopicTemplate>,
    reviewer: &mut dyn Reviewer,
) -> Result<InductionOutcome, PipelineError> {
    let PositiveBatch { batch, texts } = embed_financial_positives(store, run.embedder, run.template)?;
    let template = start.unwrap_or_else(|| TopicTemplate::from_financial(run.template));
    if batch.is_empty() {
        return Ok(InductionOutcome { template, report: CoverageReport::default(), decisions: Vec::new() });
    }
    let assignment = dbscan(&batch, run.cluster)?;
    tracing::info!(clusters = assignment.n_clusters(), noise = assignment.noise_count(), "clustered");
    let outcome = run_induction_loop(&assignment, &texts, template, run.gateway, reviewer, &run.induction)?;
    if let Some(p) = store.artifact_path(TOPICS_FILE) {
        outcome.template.save(p)?;
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ManualClock;
    use crate::harvest::MemoryFetcher;
    use crate::llm::{GatewayConfig, MockModel, PromptName};
    use crate::topics::{AutoAccept, MockEmbedder};
    use std::sync::Arc;

    const SUB: &str = "Your membership renews automatically every month until you cancel it.";
    const FEE: &str = "A restocking fee of 15% is deducted from every refund we issue.";
    const PLAIN: &str = "We are a family business founded in a small town.";

    fn fixture() -> MemoryFetcher {
        let mut f = MemoryFetcher::new();
        for (i, site) in ["a", "b", "c"].iter().enumerate() {
            let home = format!(
                r#"<html><body><p>Welcome to the {site} store, where we sell shoes and accessories online.</p><a href="/terms">Terms of Service</a></body></html>"#
            );
            f = f.page(&format!("https://{site}.example/"), &home);
            let body = if i == 0 { format!("<p>{SUB}</p><p>{FEE}</p><p>{PLAIN}</p>") } else { format!("<p>{PLAIN}</p>") };
            f = f.page(&format!("https://{site}.example/terms"), &body);
        }
        f.page("https://blog.example/", "<html><body><p>Musings about gardening and the weather in spring.</p></body></html>")
    }

    fn model() -> MockModel {
        MockModel::new()
            .default_reply(PromptName::WebsiteCls, "shopping")
            .reply(PromptName::WebsiteCls, "URL: https://blog.example/\n\nPage text:\nMusings about gardening and the weather in spring.", "non-shopping")
            .default_reply(PromptName::FinancialTemplate, "n")
            .reply(PromptName::FinancialTemplate, SUB, "Subscription/Product Terms")
            .reply(PromptName::FinancialTemplate, FEE, "Return and Refund Policy")
            .reply(PromptName::UnfavorableTaxonomy, SUB, "b")
            .reply(PromptName::UnfavorableTaxonomy, FEE, "Restocking Fee")
    }

    fn entries() -> Vec<SiteEntry> {
        crate::harvest::read_site_list("a.example\nb.example\nc.example\nblog.example\ndown.example\n".as_bytes()).unwrap()
    }

    #[test]
    fn measurement_run_and_resume() {
        let dir = tempfile::tempdir().unwrap();
        let fetcher = fixture();
        let mock = Arc::new(model());
        let gateway = Gateway::new(mock.clone(), GatewayConfig::new("mock"));
        let (tax, tpl, pats, clock) = (Taxonomy::default(), FinancialTemplate::default(), LinkPatternSet::default(), ManualClock::default());
        let p = Pipeline {
            fetcher: &fetcher,
            renderer: None,
            gateway: &gateway,
            taxonomy: &tax,
            template: &tpl,
            patterns: &pats,
            clock: &clock,
            options: PipelineOptions::default(),
        };
        let mut store = CorpusStore::open(dir.path()).unwrap();
        let out = p.run_measurement(&mut store, &entries()).unwrap();
        let total = out.manifest.total();
        assert_eq!((total.queried, total.shopping, total.english, total.with_tc), (5, 3, 3, 3));
        // PLAIN is stored once per site
        assert_eq!(total.term_count, 5);
        assert_eq!(out.stats.websites_with_unfavorable, 1);
        assert_eq!(out.stats.total_unfavorable, 1);
        assert_eq!(out.manifest, store.recompute_manifest());

        let calls = mock.call_count();
        let hits = fetcher.total_hits();
        let mut reopened = CorpusStore::open(dir.path()).unwrap();
        let again = p.run_measurement(&mut reopened, &entries()).unwrap();
        assert_eq!(mock.call_count(), calls);
        assert_eq!(fetcher.total_hits(), hits);
        assert_eq!(again.manifest, out.manifest);
        assert!(again.stages.iter().all(|s| s.processed == 0));
    }

    #[test]
    fn empty_site_list() {
        let fetcher = MemoryFetcher::new();
        let gateway = Gateway::new(Arc::new(MockModel::new()), GatewayConfig::new("mock"));
        let (tax, tpl, pats, clock) = (Taxonomy::default(), FinancialTemplate::default(), LinkPatternSet::default(), ManualClock::default());
        let p = Pipeline {
            fetcher: &fetcher,
            renderer: None,
            gateway: &gateway,
            taxonomy: &tax,
            template: &tpl,
            patterns: &pats,
            clock: &clock,
            options: PipelineOptions::default(),
        };
        let mut store = CorpusStore::in_memory();
        let out = p.run_measurement(&mut store, &[]).unwrap();
        assert_eq!(out.manifest.total().queried, 0);
        assert_eq!(out.stats.unfavorable_ratio, 0.0);
    }

    #[test]
    fn topic_discovery_requires_labels_and_handles_no_positives() {
        let mut store = CorpusStore::in_memory();
        let url = crate::store::normalize_url("a.example").unwrap();
        let mut w = WebsiteRecord::new(url.clone(), Source::Custom, chrono::Utc::now());
        w.shopping_verdict = ShoppingVerdict::Shopping;
        w.language = "en".into();
        store.upsert_website(w).unwrap();
        let page = url.join("/terms").unwrap();
        let doc = TermsDocument { website_url: url.clone(), page_url: page.clone(), fetch_status: crate::store::FetchStatus::Ok, raw_body_hash: None, extracted_at: None, depth: 1 };
        store.ingest_terms(doc, extract_terms(&format!("<p>{PLAIN}</p>"), &url, &page)).unwrap();

        let tpl = FinancialTemplate::default();
        let mock = MockModel::new().default_reply(PromptName::FinancialTemplate, "n");
        let gateway = Gateway::new(Arc::new(mock), GatewayConfig::new("mock"));
        let embedder = MockEmbedder::new(HashMap::new());
        let run = TopicRun { gateway: &gateway, embedder: &embedder, template: &tpl, cluster: ClusterParams::default(), induction: InductionParams::default() };
        assert!(matches!(run_topic_discovery(&store, &run, None, &mut AutoAccept), Err(PipelineError::MissingLabels(_))));

        let tax = Taxonomy::default();
        Classifier { gateway: &gateway, taxonomy: &tax, template: &tpl }.run_pass(&mut store, &Scope::All, Stage::Financial).unwrap();
        let out = run_topic_discovery(&store, &run, None, &mut AutoAccept).unwrap();
        assert_eq!(out.template, TopicTemplate::from_financial(&tpl));
        assert!(out.decisions.is_empty());
    }
}
