//! Strict reply parsers. Each returns `None` for anything outside the
//! closed label set of its prompt.

use serde::{Deserialize, Serialize};

use crate::taxonomy::{normalize_label, FinancialTemplate, Taxonomy, OTHERS_LABEL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimpleLabel {
    Malicious,
    Benign,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaxonomyLabel {
    Benign,
    /// Unfavorable, outside the named types.
    Others,
    Type(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinancialLabel {
    NotFinancial,
    Category(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShoppingLabel {
    Shopping,
    NonShopping,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PaymentLabel {
    Payment,
    NonPayment,
}

/// Trim, lowercase and drop everything except letters, digits, spaces and
/// hyphens; then collapse whitespace.
pub fn normalize_reply(raw: &str) -> String {
    let kept: String = raw
        .trim()
        .to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() || c == '-' || c.is_whitespace() { c } else { ' ' })
        .collect();
    kept.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Remove wrapping quotes and trailing sentence punctuation only.
fn strip_wrapping(raw: &str) -> &str {
    raw.trim()
        .trim_matches(|c: char| matches!(c, '"' | '\'' | '`' | '*' | '“' | '”' | '‘' | '’'))
        .trim_end_matches(['.', '!', ';', ':'])
        .trim()
}

pub fn parse_simple(raw: &str) -> Option<SimpleLabel> {
    match normalize_reply(raw).as_str() {
        "m" => Some(SimpleLabel::Malicious),
        "b" => Some(SimpleLabel::Benign),
        _ => None,
    }
}

pub fn parse_taxonomy(raw: &str, taxonomy: &Taxonomy) -> Option<TaxonomyLabel> {
    let body = strip_wrapping(raw);
    if normalize_reply(body) == "b" {
        return Some(TaxonomyLabel::Benign);
    }
    let key = normalize_label(body);
    if key == normalize_label(OTHERS_LABEL) {
        return Some(TaxonomyLabel::Others);
    }
    taxonomy
        .types
        .iter()
        .find(|t| normalize_label(&t.name) == key)
        .map(|t| TaxonomyLabel::Type(t.name.clone()))
}

pub fn parse_financial(raw: &str, template: &FinancialTemplate) -> Option<FinancialLabel> {
    let body = strip_wrapping(raw);
    if normalize_reply(body) == "n" {
        return Some(FinancialLabel::NotFinancial);
    }
    template.get(body).map(|c| FinancialLabel::Category(c.name.clone()))
}

pub fn parse_shopping(raw: &str) -> Option<ShoppingLabel> {
    match normalize_reply(raw).as_str() {
        "shopping" => Some(ShoppingLabel::Shopping),
        "non-shopping" | "non shopping" | "nonshopping" => Some(ShoppingLabel::NonShopping),
        _ => None,
    }
}

pub fn parse_payment(raw: &str) -> Option<PaymentLabel> {
    match normalize_reply(raw).as_str() {
        "payment" => Some(PaymentLabel::Payment),
        "non-payment" | "non payment" | "nonpayment" => Some(PaymentLabel::NonPayment),
        _ => None,
    }
}
