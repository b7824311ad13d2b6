//! Unfavorable financial term taxonomy and the coarser financial-term template
//! used to pre-filter terms before the unfavorable pass.
//!
//! Both are shipped as versioned JSON data files and can be replaced at runtime
//! with [`Taxonomy::from_json`] / [`FinancialTemplate::from_json`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const DEFAULT_TAXONOMY: &str = include_str!("../data/taxonomy.json");
const DEFAULT_FINANCIAL_TEMPLATE: &str = include_str!("../data/financial_template.json");

/// Name of the catch-all label for unfavorable replies outside the named types.
pub const OTHERS_LABEL: &str = "Others";

/// Financial template category whose members never feed the unfavorable pass.
pub const GLOSSARY_CATEGORY: &str = "Financial Glossary";

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("unknown taxonomy type: {0:?}")]
    UnknownType(String),
    #[error("invalid taxonomy data: {0}")]
    Invalid(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    PurchaseAndBilling,
    PostPurchase,
    TerminationAndAccountRecovery,
    Legal,
    /// Unfavorable but outside the named types. Stored, never alerted.
    Others,
}

impl Category {
    /// Display order used for alert sorting, plots and reports.
    pub const ALL: [Category; 5] = [
        Category::PurchaseAndBilling,
        Category::PostPurchase,
        Category::TerminationAndAccountRecovery,
        Category::Legal,
        Category::Others,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::PurchaseAndBilling => "purchase_and_billing",
            Category::PostPurchase => "post_purchase",
            Category::TerminationAndAccountRecovery => "termination_and_account_recovery",
            Category::Legal => "legal",
            Category::Others => "others",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Category::PurchaseAndBilling => "Purchase and Billing",
            Category::PostPurchase => "Post-Purchase",
            Category::TerminationAndAccountRecovery => "Termination and Account Recovery",
            Category::Legal => "Legal",
            Category::Others => "Others",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = TaxonomyError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| TaxonomyError::Invalid(format!("unknown category {s:?}")))
    }
}

/// How reliably a type satisfies one of the three unfairness criteria
/// (substantial injury, unavoidable harm, insufficient benefits).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Likelihood {
    Always,
    Sometimes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriteriaProfile {
    pub c1: Likelihood,
    pub c2: Likelihood,
    pub c3: Likelihood,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnfavorableType {
    pub name: String,
    pub category: Category,
    pub description: String,
    /// `None` only for the legal catch-all, which carries no profile.
    pub criteria: Option<CriteriaProfile>,
    pub example: String,
}

impl UnfavorableType {
    pub fn is_catch_all(&self) -> bool {
        self.criteria.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Taxonomy {
    pub version: u32,
    pub types: Vec<UnfavorableType>,
}

/// Lowercase, and treat runs of whitespace and hyphens as a single space.
pub fn normalize_label(s: &str) -> String {
    let lowered = s.trim().to_lowercase();
    let mut out = String::with_capacity(lowered.len());
    let mut gap = false;
    for ch in lowered.chars() {
        if ch.is_whitespace() || ch == '-' {
            gap = true;
            continue;
        }
        if gap && !out.is_empty() {
            out.push(' ');
        }
        gap = false;
        out.push(ch);
    }
    out
}

impl Taxonomy {
    pub fn from_json(json: &str) -> Result<Self, TaxonomyError> {
        let taxonomy: Taxonomy = serde_json::from_str(json)?;
        taxonomy.validate()?;
        Ok(taxonomy)
    }

    fn validate(&self) -> Result<(), TaxonomyError> {
        let mut seen = std::collections::HashSet::new();
        for t in &self.types {
            if t.category == Category::Others {
                return Err(TaxonomyError::Invalid(format!(
                    "type {:?} cannot live in the Others bucket",
                    t.name
                )));
            }
            if !seen.insert(normalize_label(&t.name)) {
                return Err(TaxonomyError::Invalid(format!("duplicate type {:?}", t.name)));
            }
        }
        if self.types.is_empty() {
            return Err(TaxonomyError::Invalid("no types".into()));
        }
        Ok(())
    }

    /// Types with a criteria profile, i.e. excluding the legal catch-all.
    pub fn named_types(&self) -> impl Iterator<Item = &UnfavorableType> {
        self.types.iter().filter(|t| !t.is_catch_all())
    }

    pub fn get(&self, name: &str) -> Option<&UnfavorableType> {
        let key = normalize_label(name);
        self.types.iter().find(|t| normalize_label(&t.name) == key)
    }

    pub fn category_of(&self, name: &str) -> Result<Category, TaxonomyError> {
        if normalize_label(name) == normalize_label(OTHERS_LABEL) {
            return Ok(Category::Others);
        }
        self.get(name)
            .map(|t| t.category)
            .ok_or_else(|| TaxonomyError::UnknownType(name.to_string()))
    }

    /// The criteria profile of a named type. The legal catch-all has none and
    /// is reported as unknown here.
    pub fn criteria_profile(&self, name: &str) -> Result<CriteriaProfile, TaxonomyError> {
        self.get(name)
            .and_then(|t| t.criteria)
            .ok_or_else(|| TaxonomyError::UnknownType(name.to_string()))
    }

    pub fn types_in(&self, category: Category) -> impl Iterator<Item = &UnfavorableType> {
        self.types.iter().filter(move |t| t.category == category)
    }
}

impl Default for Taxonomy {
    fn default() -> Self {
        Taxonomy::from_json(DEFAULT_TAXONOMY).expect("bundled taxonomy is valid")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinancialCategory {
    pub name: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinancialTemplate {
    pub version: u32,
    pub categories: Vec<FinancialCategory>,
}

impl FinancialTemplate {
    pub fn from_json(json: &str) -> Result<Self, TaxonomyError> {
        let template: FinancialTemplate = serde_json::from_str(json)?;
        if template.categories.is_empty() {
            return Err(TaxonomyError::Invalid("financial template has no categories".into()));
        }
        Ok(template)
    }

    pub fn get(&self, name: &str) -> Option<&FinancialCategory> {
        let key = normalize_label(name);
        self.categories.iter().find(|c| normalize_label(&c.name) == key)
    }

    /// Whether a pass-1 category sends the term on to the unfavorable pass.
    pub fn is_positive(&self, name: &str) -> bool {
        self.get(name)
            .is_some_and(|c| normalize_label(&c.name) != normalize_label(GLOSSARY_CATEGORY))
    }
}

impl Default for FinancialTemplate {
    fn default() -> Self {
        FinancialTemplate::from_json(DEFAULT_FINANCIAL_TEMPLATE)
            .expect("bundled financial template is valid")
    }
}
