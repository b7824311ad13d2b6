//! Per-URL analysis: crawl a site's terms, classify them, check whether the
//! page being viewed is a payment page and turn flagged terms into alerts.

pub mod alerts;
pub mod payment;

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::Url;

pub use self::alerts::{amounts, displayed_on_page, generate_alerts, Alert, FlaggedTerm, EXCERPT_CHARS};
pub use self::payment::{detect_payment_page, payment_signals, PaymentMode, PaymentPageVerdict, MIN_SIGNALS};

use crate::classify::{unfavorable_category, ClassifyError, Classifier};
use crate::clock::Clock;
use crate::extract::{extract_terms, visible_text};
use crate::harvest::{fetch_page, snowball_from, Fetcher, LinkPatternSet, Renderer, DEFAULT_DEPTH_LIMIT};
use crate::llm::{Gateway, GatewayError};
use crate::store::{homepage_of, normalize_url, registrable_domain, UrlError};
use crate::taxonomy::{Category, FinancialTemplate, Taxonomy};

pub const DEFAULT_TTL: Duration = Duration::from_secs(24 * 60 * 60);

#[derive(Debug, Error)]
pub enum LensError {
    #[error(transparent)]
    BadUrl(#[from] UrlError),
    #[error("no page evidence for {0}")]
    InsufficientEvidence(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportStatus {
    Ok,
    Unreachable,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub model_id: String,
    pub taxonomy_version: u32,
    pub template_version: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlertReport {
    pub url: Url,
    pub site: String,
    pub status: ReportStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub no_terms_found: bool,
    pub payment: PaymentPageVerdict,
    pub alerts: Vec<Alert>,
    /// Alerts per category, suppressed ones included.
    pub counts: BTreeMap<Category, usize>,
    pub active: usize,
    pub suppressed: usize,
    pub model: ModelMeta,
    pub elapsed_ms: u64,
}

impl AlertReport {
    fn new(url: Url, status: ReportStatus, payment: PaymentPageVerdict, alerts: Vec<Alert>, model: ModelMeta) -> Self {
        let mut counts: BTreeMap<Category, usize> =
            Category::ALL.iter().filter(|c| **c != Category::Others).map(|c| (*c, 0)).collect();
        for a in &alerts {
            *counts.entry(a.category).or_insert(0) += 1;
        }
        let suppressed = alerts.iter().filter(|a| a.suppressed).count();
        AlertReport {
            site: registrable_domain(&url),
            url,
            status,
            error: None,
            no_terms_found: false,
            payment,
            active: alerts.len() - suppressed,
            suppressed,
            alerts,
            counts,
            model,
            elapsed_ms: 0,
        }
    }

    /// Internal consistency: counts match the alerts and suppression only
    /// happens on payment pages.
    pub fn is_consistent(&self) -> bool {
        let mut tally: BTreeMap<Category, usize> = BTreeMap::new();
        for a in &self.alerts {
            *tally.entry(a.category).or_insert(0) += 1;
        }
        let nonzero: BTreeMap<Category, usize> = self.counts.iter().filter(|(_, n)| **n > 0).map(|(c, n)| (*c, *n)).collect();
        nonzero == tally
            && self.active + self.suppressed == self.alerts.len()
            && (self.payment.is_payment_page || self.suppressed == 0)
            && (!self.payment.is_payment_page || !self.payment.evidence.is_empty())
    }
}

#[derive(Debug, Clone)]
pub struct AnalyzerConfig {
    pub ttl: Duration,
    pub payment_mode: PaymentMode,
    pub depth_limit: u32,
}

impl Default for AnalyzerConfig {
    fn default() -> Self {
        AnalyzerConfig { ttl: DEFAULT_TTL, payment_mode: PaymentMode::Heuristic, depth_limit: DEFAULT_DEPTH_LIMIT }
    }
}

/// Classified terms of one site.
#[derive(Debug, Clone)]
struct SiteAnalysis {
    flagged: Vec<FlaggedTerm>,
    no_terms_found: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct SiteKey {
    domain: String,
    taxonomy_version: u32,
    model_id: String,
}

type SiteSlot = Arc<Mutex<Option<(Duration, Arc<SiteAnalysis>)>>>;

pub struct Analyzer {
    fetcher: Arc<dyn Fetcher>,
    renderer: Option<Arc<dyn Renderer>>,
    gateway: Arc<Gateway>,
    taxonomy: Arc<Taxonomy>,
    template: Arc<FinancialTemplate>,
    patterns: Arc<LinkPatternSet>,
    clock: Arc<dyn Clock>,
    config: AnalyzerConfig,
    sites: Mutex<HashMap<SiteKey, SiteSlot>>,
    reports: Mutex<HashMap<Url, (Duration, AlertReport)>>,
}

enum SiteOutcome {
    Done(Arc<SiteAnalysis>),
    Unreachable(String),
}

impl Analyzer {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        fetcher: Arc<dyn Fetcher>,
        renderer: Option<Arc<dyn Renderer>>,
        gateway: Arc<Gateway>,
        taxonomy: Arc<Taxonomy>,
        template: Arc<FinancialTemplate>,
        patterns: Arc<LinkPatternSet>,
        clock: Arc<dyn Clock>,
        config: AnalyzerConfig,
    ) -> Self {
        Analyzer {
            fetcher,
            renderer,
            gateway,
            taxonomy,
            template,
            patterns,
            clock,
            config,
            sites: Mutex::new(HashMap::new()),
            reports: Mutex::new(HashMap::new()),
        }
    }

    pub fn taxonomy(&self) -> &Taxonomy {
        &self.taxonomy
    }

    pub fn config(&self) -> &AnalyzerConfig {
        &self.config
    }

    fn meta(&self) -> ModelMeta {
        ModelMeta {
            model_id: self.gateway.model_id().to_string(),
            taxonomy_version: self.taxonomy.version,
            template_version: self.template.version,
        }
    }

    fn fresh(&self, stored_at: Duration) -> bool {
        self.clock.now().saturating_sub(stored_at) < self.config.ttl
    }

    /// Analyze the page at `url`. Unreachable sites and failed classification
    /// come back as reports with a non-ok status; only a malformed URL is an error.
    pub fn analyze(&self, url: &str) -> Result<AlertReport, LensError> {
        let url = normalize_url(url)?;
        if let Some((at, report)) = self.reports.lock().unwrap().get(&url) {
            if self.fresh(*at) {
                return Ok(report.clone());
            }
        }
        let started = self.clock.now();
        let mut report = self.build_report(&url);
        report.elapsed_ms = self.clock.now().saturating_sub(started).as_millis() as u64;
        if report.status == ReportStatus::Ok {
            self.reports.lock().unwrap().insert(url, (self.clock.now(), report.clone()));
        }
        Ok(report)
    }

    fn build_report(&self, url: &Url) -> AlertReport {
        let not_payment = PaymentPageVerdict::not_payment(self.config.payment_mode);
        let fail = |status, msg: String| {
            let mut r = AlertReport::new(url.clone(), status, not_payment.clone(), Vec::new(), self.meta());
            r.error = Some(msg);
            r
        };
        let site = match self.site_analysis(url) {
            Ok(SiteOutcome::Done(site)) => site,
            Ok(SiteOutcome::Unreachable(msg)) => return fail(ReportStatus::Unreachable, msg),
            Err(e) => {
                tracing::error!(%url, error = %e, "site analysis failed");
                return fail(ReportStatus::Error, e.to_string());
            }
        };
        let page = fetch_page(self.fetcher.as_ref(), url, self.renderer.as_deref());
        let verdict = if page.is_ok() {
            match detect_payment_page(&page, self.config.payment_mode, Some(&self.gateway)) {
                Ok(v) => v,
                Err(e) => return fail(ReportStatus::Error, e.to_string()),
            }
        } else {
            tracing::warn!(%url, status = ?page.fetch_status, "analyzed page did not load; treating as non-payment");
            not_payment
        };
        let page_text = page.html_body.as_deref().map(visible_text).unwrap_or_default();
        let alerts = generate_alerts(&site.flagged, &verdict, &page_text);
        let mut report = AlertReport::new(url.clone(), ReportStatus::Ok, verdict, alerts, self.meta());
        report.no_terms_found = site.no_terms_found;
        report
    }

    /// Cached per site; concurrent callers for one site wait on a single analysis.
    fn site_analysis(&self, url: &Url) -> Result<SiteOutcome, LensError> {
        let key = SiteKey {
            domain: registrable_domain(url),
            taxonomy_version: self.taxonomy.version,
            model_id: self.gateway.model_id().to_string(),
        };
        let slot = self.sites.lock().unwrap().entry(key).or_default().clone();
        let mut guard = slot.lock().unwrap();
        if let Some((at, site)) = guard.as_ref() {
            if self.fresh(*at) {
                return Ok(SiteOutcome::Done(site.clone()));
            }
        }
        let outcome = self.analyze_site(url)?;
        if let SiteOutcome::Done(site) = &outcome {
            *guard = Some((self.clock.now(), site.clone()));
        }
        Ok(outcome)
    }

    fn analyze_site(&self, url: &Url) -> Result<SiteOutcome, LensError> {
        let home_url = homepage_of(url);
        let home = self.fetcher.fetch(&home_url);
        if !home.is_ok() {
            return Ok(SiteOutcome::Unreachable(format!("{home_url}: {:?}", home.fetch_status)));
        }
        let crawl = snowball_from(self.fetcher.as_ref(), &home, &self.patterns, self.config.depth_limit);
        let mut terms = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for doc in &crawl.documents {
            let Some(html) = doc.evidence.html_body.as_deref() else { continue };
            for t in extract_terms(html, &home_url, &doc.evidence.final_url) {
                if seen.insert(t.id.clone()) {
                    terms.push(t);
                }
            }
        }
        let classifier = Classifier { gateway: &self.gateway, taxonomy: &self.taxonomy, template: &self.template };
        let results = classifier.classify_terms(&terms)?;
        let flagged = terms
            .iter()
            .zip(results)
            .filter_map(|(t, r)| {
                let label = r.unfavorable?;
                let category = unfavorable_category(&self.taxonomy, &label)?;
                Some(FlaggedTerm {
                    term_id: t.id.clone(),
                    text: t.text.clone(),
                    type_name: self.taxonomy.get(&label).map_or(label.clone(), |ty| ty.name.clone()),
                    category,
                    source_page_url: t.source_page_url.clone(),
                })
            })
            .collect();
        Ok(SiteOutcome::Done(Arc::new(SiteAnalysis { flagged, no_terms_found: crawl.documents.is_empty() })))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ManualClock;
    use crate::harvest::MemoryFetcher;
    use crate::llm::{GatewayConfig, MockModel, PromptName};

    pub(crate) const SUBSCRIPTION: &str = "By clicking the button, you agree to a subscription to the FitHabit Fitness App for only $86 per year, charged automatically.";
    pub(crate) const SHIPPING: &str = "You will be charged $6.85 shipping and handling on every order, and this fee is non-refundable.";
    const NEUTRAL: &str = "Our offices are closed on public holidays.";

    fn fixture_fetcher() -> MemoryFetcher {
        let terms = format!("<html><body><p>{SUBSCRIPTION}</p><p>{SHIPPING}</p><p>{NEUTRAL}</p></body></html>");
        MemoryFetcher::new()
            .page("https://fithabit.example/", r#"<html><body><a href="/terms">Terms of Service</a></body></html>"#)
            .page("https://fithabit.example/terms", &terms)
            .page(
                "https://fithabit.example/checkout",
                r#"<html><body><h1>Checkout</h1><form><input name="cardnumber"><input name="cvv"></form>
                <p>Shipping and handling: You will be charged $6.85 shipping and handling for this order.</p>
                <p>Total $92.85</p></body></html>"#,
            )
            .page("https://fithabit.example/blog", "<html><body><article><h1>Spring tips</h1><p>Stretch daily.</p></article></body></html>")
    }

    fn fixture_model() -> MockModel {
        MockModel::new()
            .default_reply(PromptName::FinancialTemplate, "n")
            .reply(PromptName::FinancialTemplate, SUBSCRIPTION, "Subscription/Product Terms")
            .reply(PromptName::FinancialTemplate, SHIPPING, "Shipping and Handling Terms")
            .reply(PromptName::UnfavorableTaxonomy, SUBSCRIPTION, "Immediate Automatic Subscription")
            .reply(PromptName::UnfavorableTaxonomy, SHIPPING, "Non-Refundable Additional Fee")
    }

    fn analyzer(fetcher: MemoryFetcher, model: Arc<MockModel>, clock: Arc<ManualClock>) -> Analyzer {
        Analyzer::new(
            Arc::new(fetcher),
            None,
            Arc::new(Gateway::new(model, GatewayConfig::new("mock"))),
            Arc::new(Taxonomy::default()),
            Arc::new(FinancialTemplate::default()),
            Arc::new(LinkPatternSet::default()),
            clock,
            AnalyzerConfig::default(),
        )
    }

    #[test]
    fn payment_page_suppresses_displayed_fee() {
        let a = analyzer(fixture_fetcher(), Arc::new(fixture_model()), Arc::new(ManualClock::default()));
        let r = a.analyze("https://fithabit.example/checkout").unwrap();
        assert_eq!(r.status, ReportStatus::Ok);
        assert!(r.payment.is_payment_page);
        assert_eq!((r.active, r.suppressed), (1, 1));
        let active: Vec<&Alert> = r.alerts.iter().filter(|a| !a.suppressed).collect();
        assert_eq!(active[0].type_name, "Immediate Automatic Subscription");
        assert!(r.is_consistent());
    }

    #[test]
    fn non_payment_page_shows_everything() {
        let a = analyzer(fixture_fetcher(), Arc::new(fixture_model()), Arc::new(ManualClock::default()));
        let r = a.analyze("https://fithabit.example/blog").unwrap();
        assert!(!r.payment.is_payment_page);
        assert_eq!((r.active, r.suppressed), (2, 0));
        assert_eq!(r.alerts[0].category, Category::PurchaseAndBilling);
        assert_eq!(r.counts[&Category::PurchaseAndBilling], 1);
        assert!(r.is_consistent());
    }

    #[test]
    fn cached_within_ttl() {
        let model = Arc::new(fixture_model());
        let clock = Arc::new(ManualClock::default());
        let a = analyzer(fixture_fetcher(), model.clone(), clock.clone());
        let first = a.analyze("https://fithabit.example/blog").unwrap();
        let calls = model.call_count();
        assert!(calls > 0);
        clock.advance(Duration::from_secs(3600));
        let second = a.analyze("https://fithabit.example/blog").unwrap();
        assert_eq!(model.call_count(), calls);
        assert_eq!(serde_json::to_string(&first).unwrap(), serde_json::to_string(&second).unwrap());
        // other pages of the site reuse the site analysis
        a.analyze("https://fithabit.example/checkout").unwrap();
        assert_eq!(model.call_count(), calls);
    }

    #[test]
    fn expired_entries_are_recomputed_through_the_reply_cache() {
        let model = Arc::new(fixture_model());
        let clock = Arc::new(ManualClock::default());
        let fetcher = fixture_fetcher();
        let a = analyzer(fetcher, model.clone(), clock.clone());
        a.analyze("https://fithabit.example/blog").unwrap();
        let calls = model.call_count();
        clock.advance(DEFAULT_TTL + Duration::from_secs(1));
        let r = a.analyze("https://fithabit.example/blog").unwrap();
        assert_eq!(r.active, 2);
        assert_eq!(model.call_count(), calls);
    }

    #[test]
    fn unreachable_and_no_terms() {
        let a = analyzer(fixture_fetcher(), Arc::new(fixture_model()), Arc::new(ManualClock::default()));
        let r = a.analyze("https://nowhere.example/cart").unwrap();
        assert_eq!(r.status, ReportStatus::Unreachable);
        assert!(r.error.is_some() && r.alerts.is_empty());

        let f = MemoryFetcher::new().page("https://plain.example/", "<html><body><p>Welcome</p></body></html>");
        let a = analyzer(f, Arc::new(fixture_model()), Arc::new(ManualClock::default()));
        let r = a.analyze("plain.example").unwrap();
        assert_eq!(r.status, ReportStatus::Ok);
        assert!(r.no_terms_found && r.alerts.is_empty());

        assert!(matches!(a.analyze("ftp://x"), Err(LensError::BadUrl(_))));
    }

    #[test]
    fn concurrent_requests_share_one_analysis() {
        let model = Arc::new(fixture_model());
        let a = Arc::new(analyzer(fixture_fetcher(), model.clone(), Arc::new(ManualClock::default())));
        let reports: Vec<AlertReport> = std::thread::scope(|s| {
            let hs: Vec<_> = (0..8)
                .map(|i| {
                    let a = a.clone();
                    let path = if i % 2 == 0 { "blog" } else { "checkout" };
                    s.spawn(move || a.analyze(&format!("https://fithabit.example/{path}")).unwrap())
                })
                .collect();
            hs.into_iter().map(|h| h.join().unwrap()).collect()
        });
        assert!(reports.iter().all(AlertReport::is_consistent));
        // 3 financial + 2 unfavorable
        assert_eq!(model.call_count(), 5);
    }
}
