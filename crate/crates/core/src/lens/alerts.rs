use std::collections::HashSet;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use url::Url;

use super::PaymentPageVerdict;
use crate::taxonomy::Category;

pub const EXCERPT_CHARS: usize = 500;
pub const SHINGLE_TOKENS: usize = 5;

static AMOUNT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"[$€£]\s?\d[\d,]*(\.\d+)?|\d+%").unwrap());
static TOKEN: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"[$€£]?\d[\d,]*(?:\.\d+)?%?|[\p{L}\p{N}]+").unwrap());

/// A term the classifier put into a named taxonomy type.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlaggedTerm {
    pub term_id: String,
    pub text: String,
    pub type_name: String,
    pub category: Category,
    pub source_page_url: Url,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alert {
    pub excerpt: String,
    pub term_id: String,
    pub type_name: String,
    pub category: Category,
    pub source_page_url: Url,
    pub suppressed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suppression_reason: Option<String>,
}

/// Monetary amounts and percentages, whitespace removed.
pub fn amounts(text: &str) -> Vec<String> {
    AMOUNT.find_iter(text).map(|m| m.as_str().split_whitespace().collect()).collect()
}

fn tokens(text: &str) -> Vec<String> {
    TOKEN.find_iter(&text.to_lowercase()).map(|m| m.as_str().to_string()).collect()
}

fn shingles(tokens: &[String]) -> HashSet<String> {
    if tokens.len() < SHINGLE_TOKENS {
        return HashSet::from([tokens.join(" ")]);
    }
    tokens.windows(SHINGLE_TOKENS).map(|w| w.join(" ")).collect()
}

/// Why a term counts as already shown on the page, if it does: every amount
/// it states appears on the page and it shares a 5-token shingle with it.
pub fn displayed_on_page(term: &str, page_text: &str) -> Option<String> {
    let page_amounts: HashSet<String> = amounts(page_text).into_iter().collect();
    let term_amounts = amounts(term);
    if term_amounts.iter().any(|a| !page_amounts.contains(a)) {
        return None;
    }
    let page_tokens = tokens(page_text);
    let term_tokens = tokens(term);
    if term_tokens.is_empty() || page_tokens.len() < term_tokens.len().min(SHINGLE_TOKENS) {
        return None;
    }
    let page_shingles = if term_tokens.len() < SHINGLE_TOKENS {
        page_tokens.windows(term_tokens.len()).map(|w| w.join(" ")).collect()
    } else {
        shingles(&page_tokens)
    };
    let shared = shingles(&term_tokens).into_iter().find(|s| page_shingles.contains(s))?;
    let amounts = if term_amounts.is_empty() { "none".to_string() } else { term_amounts.join(", ") };
    Some(format!("shown on page (amounts: {amounts}; text: \"{shared}\")"))
}

fn excerpt(text: &str) -> String {
    if text.chars().count() <= EXCERPT_CHARS {
        return text.to_string();
    }
    let mut s: String = text.chars().take(EXCERPT_CHARS - 1).collect();
    s.push('…');
    s
}

/// One alert per flagged term, sorted by category then input order.
/// Suppression happens only on payment pages.
pub fn generate_alerts(flagged: &[FlaggedTerm], verdict: &PaymentPageVerdict, page_text: &str) -> Vec<Alert> {
    let mut alerts: Vec<Alert> = flagged
        .iter()
        .filter(|f| f.category != Category::Others)
        .map(|f| {
            let reason = verdict.is_payment_page.then(|| displayed_on_page(&f.text, page_text)).flatten();
            Alert {
                excerpt: excerpt(&f.text),
                term_id: f.term_id.clone(),
                type_name: f.type_name.clone(),
                category: f.category,
                source_page_url: f.source_page_url.clone(),
                suppressed: reason.is_some(),
                suppression_reason: reason,
            }
        })
        .collect();
    alerts.sort_by_key(|a| Category::ALL.iter().position(|c| *c == a.category));
    alerts
}
