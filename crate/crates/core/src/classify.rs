//! Two-pass term classification: a financial filter followed by the
//! unfavorable-term taxonomy.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::llm::{FinancialLabel, Gateway, GatewayError, TaxonomyLabel};
use crate::store::{
    CorpusStore, Stage, StoreError, TermLabel, TermRecord, LABEL_BENIGN, LABEL_NEEDS_REVIEW, LABEL_NOT_FINANCIAL,
};
use crate::taxonomy::{Category, CriteriaProfile, FinancialTemplate, Taxonomy, TaxonomyError};

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error("{0} term(s) in scope have no financial label yet; run the financial pass first")]
    FinancialPassIncomplete(usize),
    #[error("pass 2 would query {0} term(s) that are not financial-positive")]
    ContainmentViolated(usize),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
}

/// Which terms a pass covers.
#[derive(Debug, Clone, Default)]
pub enum Scope {
    #[default]
    All,
    Terms(BTreeSet<String>),
}

impl Scope {
    fn contains(&self, t: &TermRecord) -> bool {
        match self {
            Scope::All => true,
            Scope::Terms(ids) => ids.contains(&t.id),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct PassReport {
    pub in_scope: usize,
    /// Terms sent to the gateway this run (cache hits included).
    pub queried: usize,
    pub skipped_existing: usize,
    pub needs_review: usize,
    pub label_counts: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TwoPassResult {
    pub term_id: String,
    pub financial: String,
    /// `None` when pass 1 did not send the term on.
    pub unfavorable: Option<String>,
}

pub struct Classifier<'a> {
    pub gateway: &'a Gateway,
    pub taxonomy: &'a Taxonomy,
    pub template: &'a FinancialTemplate,
}

impl Classifier<'_> {
    fn version(&self, stage: Stage) -> u32 {
        match stage {
            Stage::Financial => self.template.version,
            Stage::Unfavorable => self.taxonomy.version,
        }
    }

    /// Whether a stored pass-1 label sends the term to pass 2.
    pub fn is_financial_positive(&self, label: &TermLabel) -> bool {
        !label.needs_review() && self.template.is_positive(&label.label)
    }

    fn classify_one(&self, stage: Stage, text: &str) -> Result<(String, Option<String>), GatewayError> {
        let result = match stage {
            Stage::Financial => self.gateway.classify_financial(text, self.template).map(|l| {
                let label = match l.value {
                    FinancialLabel::NotFinancial => LABEL_NOT_FINANCIAL.to_string(),
                    FinancialLabel::Category(c) => c,
                };
                (label, Some(l.reply.cache_key))
            }),
            Stage::Unfavorable => self.gateway.classify_taxonomy(text, self.taxonomy).map(|l| {
                let label = match l.value {
                    TaxonomyLabel::Benign => LABEL_BENIGN.to_string(),
                    TaxonomyLabel::Others => crate::taxonomy::OTHERS_LABEL.to_string(),
                    TaxonomyLabel::Type(t) => t,
                };
                (label, Some(l.reply.cache_key))
            }),
        };
        match result {
            Err(GatewayError::UnparseableReply { cache_key, .. }) => Ok((LABEL_NEEDS_REVIEW.to_string(), Some(cache_key))),
            other => other,
        }
    }

    /// Label every in-scope term once for `stage`. Pass 2 covers only terms
    /// whose pass-1 label is financial-positive.
    pub fn run_pass(&self, store: &mut CorpusStore, scope: &Scope, stage: Stage) -> Result<PassReport, ClassifyError> {
        let model = self.gateway.model_id().to_string();
        let version = self.version(stage);
        let mut report = PassReport::default();

        let mut in_scope: Vec<&TermRecord> = store.terms().filter(|t| scope.contains(t)).collect();
        if stage == Stage::Unfavorable {
            let missing = in_scope.iter().filter(|t| store.current_label(&t.id, Stage::Financial).is_none()).count();
            if missing > 0 {
                return Err(ClassifyError::FinancialPassIncomplete(missing));
            }
            in_scope.retain(|t| store.current_label(&t.id, Stage::Financial).is_some_and(|l| self.is_financial_positive(l)));
        }
        report.in_scope = in_scope.len();

        let jobs: Vec<(String, String)> = in_scope
            .iter()
            .filter(|t| store.label(&t.id, stage, &model, version).is_none())
            .map(|t| (t.id.clone(), t.text.clone()))
            .collect();
        report.skipped_existing = report.in_scope - jobs.len();

        if stage == Stage::Unfavorable {
            let outside = jobs
                .iter()
                .filter(|(id, _)| !store.current_label(id, Stage::Financial).is_some_and(|l| self.is_financial_positive(l)))
                .count();
            if outside > 0 {
                return Err(ClassifyError::ContainmentViolated(outside));
            }
        }

        let results: Vec<Result<(String, (String, Option<String>)), GatewayError>> = jobs
            .par_iter()
            .map(|(id, text)| self.classify_one(stage, text).map(|r| (id.clone(), r)))
            .collect();
        report.queried = jobs.len();

        for r in results {
            let (term_id, (label, reply_ref)) = r?;
            if label == LABEL_NEEDS_REVIEW {
                report.needs_review += 1;
            }
            store.put_label(TermLabel {
                term_id,
                stage,
                label,
                model_id: model.clone(),
                prompt_version: version,
                reply_ref,
            })?;
        }
        for t in store.terms().filter(|t| scope.contains(t)) {
            if let Some(l) = store.label(&t.id, stage, &model, version) {
                *report.label_counts.entry(l.label.clone()).or_insert(0) += 1;
            }
        }
        Ok(report)
    }

    /// Both passes over terms that live outside a corpus store. Pass 2 runs
    /// only on pass-1 positives.
    pub fn classify_terms(&self, terms: &[TermRecord]) -> Result<Vec<TwoPassResult>, ClassifyError> {
        let first: Vec<(String, Option<String>)> = terms
            .par_iter()
            .map(|t| self.classify_one(Stage::Financial, &t.text))
            .collect::<Result<_, _>>()?;
        let positive = |label: &str| label != LABEL_NEEDS_REVIEW && self.template.is_positive(label);
        let second: Vec<Option<String>> = terms
            .par_iter()
            .zip(&first)
            .map(|(t, (f, _))| {
                if positive(f) {
                    self.classify_one(Stage::Unfavorable, &t.text).map(|(l, _)| Some(l))
                } else {
                    Ok(None)
                }
            })
            .collect::<Result<_, _>>()?;
        Ok(terms
            .iter()
            .zip(first)
            .zip(second)
            .map(|((t, (financial, _)), unfavorable)| TwoPassResult { term_id: t.id.clone(), financial, unfavorable })
            .collect())
    }

    /// Pass 1 then pass 2 over the same scope.
    pub fn run_both(&self, store: &mut CorpusStore, scope: &Scope) -> Result<(PassReport, PassReport), ClassifyError> {
        let first = self.run_pass(store, scope, Stage::Financial)?;
        let second = self.run_pass(store, scope, Stage::Unfavorable)?;
        Ok((first, second))
    }
}

pub fn map_type_to_category(taxonomy: &Taxonomy, type_name: &str) -> Result<Category, TaxonomyError> {
    taxonomy.category_of(type_name)
}

pub fn criteria_profile(taxonomy: &Taxonomy, type_name: &str) -> Result<CriteriaProfile, TaxonomyError> {
    taxonomy.criteria_profile(type_name)
}

/// Category of a stored pass-2 label. `None` for benign and needs_review.
pub fn unfavorable_category(taxonomy: &Taxonomy, label: &str) -> Option<Category> {
    match label {
        LABEL_BENIGN | LABEL_NEEDS_REVIEW => None,
        l => taxonomy.category_of(l).ok(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{GatewayConfig, MockModel, PromptName};
    use crate::store::{Source, TermsDocument, WebsiteRecord};
    use crate::taxonomy::Likelihood::*;
    use std::sync::Arc;
    use url::Url;

    const FITHABIT: &str = "By clicking the button, you agree to a subscription to the FitHabit Fitness App for only $86 per year, charged automatically.";

    fn corpus(texts: &[&str]) -> CorpusStore {
        let mut store = CorpusStore::in_memory();
        let site = Url::parse("https://shop.example/").unwrap();
        let page = Url::parse("https://shop.example/terms").unwrap();
        let mut w = WebsiteRecord::new(site.clone(), Source::Custom, chrono::Utc::now());
        w.shopping_verdict = crate::store::ShoppingVerdict::Shopping;
        w.language = "en".into();
        w.term_page_urls.insert(page.clone());
        store.upsert_website(w).unwrap();
        let doc = TermsDocument {
            website_url: site.clone(),
            page_url: page.clone(),
            fetch_status: crate::store::FetchStatus::Ok,
            raw_body_hash: None,
            extracted_at: None,
            depth: 1,
        };
        let terms = texts
            .iter()
            .enumerate()
            .map(|(i, t)| TermRecord::new(site.clone(), page.clone(), i as u32, t.to_string()))
            .collect();
        store.ingest_terms(doc, terms).unwrap();
        store
    }

    fn texts() -> Vec<String> {
        (0..10).map(|i| format!("Clause number {i} of the agreement applies here.")).collect()
    }

    #[test]
    fn pass_two_queries_only_financial_positives() {
        let owned = texts();
        let refs: Vec<&str> = owned.iter().map(String::as_str).collect();
        let mut store = corpus(&refs);
        let mut mock = MockModel::new()
            .default_reply(PromptName::FinancialTemplate, "n")
            .default_reply(PromptName::UnfavorableTaxonomy, "b");
        for t in &owned[..4] {
            mock = mock.reply(PromptName::FinancialTemplate, t, "Service Termination Policy");
        }
        mock = mock.reply(PromptName::FinancialTemplate, &owned[4], "Financial Glossary");
        let mock = Arc::new(mock);
        let gw = Gateway::new(mock.clone(), GatewayConfig::new("mock"));
        let (tax, tpl) = (Taxonomy::default(), FinancialTemplate::default());
        let c = Classifier { gateway: &gw, taxonomy: &tax, template: &tpl };

        let (p1, p2) = c.run_both(&mut store, &Scope::All).unwrap();
        assert_eq!(p1.queried, 10);
        assert_eq!(p2.in_scope, 4);
        let mut asked = mock.calls_for(PromptName::UnfavorableTaxonomy);
        asked.sort();
        let mut expected: Vec<String> = owned[..4].iter().map(|t| crate::store::sha256_hex(t.as_bytes())).collect();
        expected.sort();
        assert_eq!(asked, expected);

        let before = mock.call_count();
        let (r1, r2) = c.run_both(&mut store, &Scope::All).unwrap();
        assert_eq!(mock.call_count(), before);
        assert_eq!((r1.queried, r2.queried), (0, 0));
        assert_eq!(r2.label_counts.get(LABEL_BENIGN), Some(&4));
    }

    #[test]
    fn unfavorable_pass_requires_financial_pass() {
        let mut store = corpus(&["Refunds are issued within thirty days of purchase."]);
        let gw = Gateway::new(Arc::new(MockModel::new()), GatewayConfig::new("mock"));
        let (tax, tpl) = (Taxonomy::default(), FinancialTemplate::default());
        let c = Classifier { gateway: &gw, taxonomy: &tax, template: &tpl };
        assert!(matches!(
            c.run_pass(&mut store, &Scope::All, Stage::Unfavorable),
            Err(ClassifyError::FinancialPassIncomplete(1))
        ));
    }

    #[test]
    fn fithabit_stored_with_category() {
        let mut store = corpus(&[FITHABIT]);
        let mock = MockModel::new()
            .reply(PromptName::FinancialTemplate, FITHABIT, "Subscription/Product Terms")
            .reply(PromptName::UnfavorableTaxonomy, FITHABIT, "Immediate Automatic Subscription");
        let gw = Gateway::new(Arc::new(mock), GatewayConfig::new("mock"));
        let (tax, tpl) = (Taxonomy::default(), FinancialTemplate::default());
        let c = Classifier { gateway: &gw, taxonomy: &tax, template: &tpl };
        c.run_both(&mut store, &Scope::All).unwrap();
        let id = store.terms().next().unwrap().id.clone();
        let label = store.current_label(&id, Stage::Unfavorable).unwrap();
        assert_eq!(label.label, "Immediate Automatic Subscription");
        assert_eq!(unfavorable_category(&tax, &label.label), Some(Category::PurchaseAndBilling));
    }

    #[test]
    fn unparseable_becomes_needs_review() {
        let mut store = corpus(&["Some odd clause that confuses the model entirely.", "Shipping is free on all orders."]);
        let mock = MockModel::new()
            .reply(PromptName::FinancialTemplate, "Some odd clause that confuses the model entirely.", "perhaps")
            .default_reply(PromptName::FinancialTemplate, "n");
        let gw = Gateway::new(Arc::new(mock), GatewayConfig::new("mock"));
        let (tax, tpl) = (Taxonomy::default(), FinancialTemplate::default());
        let c = Classifier { gateway: &gw, taxonomy: &tax, template: &tpl };
        let r = c.run_pass(&mut store, &Scope::All, Stage::Financial).unwrap();
        assert_eq!(r.needs_review, 1);
        assert_eq!(r.label_counts.values().sum::<usize>(), 2);
        let (_, p2) = c.run_both(&mut store, &Scope::All).unwrap();
        assert_eq!(p2.in_scope, 0);
    }

    #[test]
    fn store_free_two_pass() {
        let site = Url::parse("https://shop.example/").unwrap();
        let terms: Vec<TermRecord> = [FITHABIT, "Be kind to other members of the forum."]
            .iter()
            .enumerate()
            .map(|(i, t)| TermRecord::new(site.clone(), site.clone(), i as u32, t.to_string()))
            .collect();
        let mock = Arc::new(
            MockModel::new()
                .reply(PromptName::FinancialTemplate, FITHABIT, "Subscription/Product Terms")
                .default_reply(PromptName::FinancialTemplate, "n")
                .reply(PromptName::UnfavorableTaxonomy, FITHABIT, "Immediate Automatic Subscription"),
        );
        let gw = Gateway::new(mock.clone(), GatewayConfig::new("mock"));
        let (tax, tpl) = (Taxonomy::default(), FinancialTemplate::default());
        let c = Classifier { gateway: &gw, taxonomy: &tax, template: &tpl };
        let r = c.classify_terms(&terms).unwrap();
        assert_eq!(r[0].unfavorable.as_deref(), Some("Immediate Automatic Subscription"));
        assert_eq!(r[1].financial, LABEL_NOT_FINANCIAL);
        assert_eq!(r[1].unfavorable, None);
        assert_eq!(mock.calls_for(PromptName::UnfavorableTaxonomy).len(), 1);
    }

    #[test]
    fn category_and_profile_lookups() {
        let tax = Taxonomy::default();
        assert_eq!(map_type_to_category(&tax, "Restocking Fee").unwrap(), Category::PostPurchase);
        assert_eq!(map_type_to_category(&tax, "Account Recovery Fee").unwrap(), Category::TerminationAndAccountRecovery);
        assert_eq!(map_type_to_category(&tax, "Forced Waiver of Class Action Rights").unwrap(), Category::Legal);
        assert!(map_type_to_category(&tax, "Made Up Fee").is_err());
        let p = |n| criteria_profile(&tax, n).unwrap();
        assert_eq!(p("Unilateral Unauthorized Account Upgrades"), CriteriaProfile { c1: Always, c2: Always, c3: Always });
        assert_eq!(p("Immediate Automatic Subscription"), CriteriaProfile { c1: Always, c2: Sometimes, c3: Always });
        assert_eq!(p("Non-Refundable Subscription Fee"), CriteriaProfile { c1: Sometimes, c2: Sometimes, c3: Always });
        assert!(criteria_profile(&tax, "Made Up Fee").is_err());
    }
}
