use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use scraper::{Html, Selector};
use serde::{Deserialize, Serialize};

use super::LensError;
use crate::extract::visible_text;
use crate::harvest::PageEvidence;
use crate::llm::{Gateway, GatewayError, PaymentLabel};

/// Signals needed before the heuristic calls a page a payment page.
pub const MIN_SIGNALS: usize = 2;

pub const SIGNAL_CARD_FIELD: &str = "card_number_field";
pub const SIGNAL_CVV_EXPIRY: &str = "cvv_or_expiry_field";
pub const SIGNAL_CHECKOUT_TEXT: &str = "checkout_text";
pub const SIGNAL_TOTAL_AMOUNT: &str = "total_amount";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PaymentMode {
    #[default]
    Heuristic,
    Model,
}

impl FromStr for PaymentMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "heuristic" => Ok(Self::Heuristic),
            "model" => Ok(Self::Model),
            _ => Err(format!("unknown payment mode {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaymentPageVerdict {
    pub is_payment_page: bool,
    /// Matched signal names, or `reply:<cache key>` in model mode.
    pub evidence: Vec<String>,
    pub mode: PaymentMode,
}

impl PaymentPageVerdict {
    pub fn not_payment(mode: PaymentMode) -> Self {
        PaymentPageVerdict { is_payment_page: false, evidence: Vec::new(), mode }
    }
}

static CARD_ATTR: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)card.?num|cc-?number|credit.?card|\bpan\b").unwrap());
static CVV_ATTR: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)cvv|cvc|csc|security.?code|cc-?exp|expir|exp.?date|exp.?month|exp.?year").unwrap());
static CHECKOUT_TEXT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b(checkout|check out|payment|billing address)\b").unwrap());
static TOTAL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\btotal\b[^$€£\d]{0,24}[$€£]\s?\d[\d,]*(\.\d+)?").unwrap());

fn field_matches(doc: &Html, re: &Regex) -> bool {
    let fields = Selector::parse("input, select").expect("static selector");
    doc.select(&fields).any(|e| {
        ["name", "id", "autocomplete", "placeholder", "aria-label", "data-field"]
            .iter()
            .filter_map(|a| e.value().attr(a))
            .any(|v| re.is_match(v))
    })
}

/// Signal names present on a page, in fixed order.
pub fn payment_signals(html: &str) -> Vec<String> {
    let doc = Html::parse_document(html);
    let text = visible_text(html);
    let mut out = Vec::new();
    if field_matches(&doc, &CARD_ATTR) {
        out.push(SIGNAL_CARD_FIELD.to_string());
    }
    if field_matches(&doc, &CVV_ATTR) {
        out.push(SIGNAL_CVV_EXPIRY.to_string());
    }
    if CHECKOUT_TEXT.is_match(&text) {
        out.push(SIGNAL_CHECKOUT_TEXT.to_string());
    }
    if TOTAL.is_match(&text) {
        out.push(SIGNAL_TOTAL_AMOUNT.to_string());
    }
    out
}

fn heuristic(html: &str) -> PaymentPageVerdict {
    let signals = payment_signals(html);
    let is_payment_page = signals.len() >= MIN_SIGNALS;
    PaymentPageVerdict {
        is_payment_page,
        evidence: if is_payment_page { signals } else { Vec::new() },
        mode: PaymentMode::Heuristic,
    }
}

pub fn detect_payment_page(
    evidence: &PageEvidence,
    mode: PaymentMode,
    gateway: Option<&Gateway>,
) -> Result<PaymentPageVerdict, LensError> {
    match mode {
        PaymentMode::Heuristic => Ok(evidence.html_body.as_deref().map_or(PaymentPageVerdict::not_payment(mode), heuristic)),
        PaymentMode::Model => {
            if evidence.html_body.is_none() && evidence.screenshot.is_none() {
                return Err(LensError::InsufficientEvidence(evidence.url.to_string()));
            }
            let gateway = gateway.ok_or_else(|| LensError::Config("model payment mode needs a gateway".into()))?;
            let text: String = visible_text(evidence.html_body.as_deref().unwrap_or_default()).chars().take(8_000).collect();
            let payload = format!("URL: {}\n\nPage text:\n{text}", evidence.final_url);
            match gateway.classify_payment_page(&payload, evidence.screenshot.as_deref()) {
                Ok(l) => {
                    let is_payment_page = l.value == PaymentLabel::Payment;
                    Ok(PaymentPageVerdict {
                        is_payment_page,
                        evidence: vec![format!("reply:{}", l.reply.cache_key)],
                        mode,
                    })
                }
                Err(GatewayError::UnparseableReply { raw, .. }) => {
                    tracing::warn!(url = %evidence.url, %raw, "payment reply unparseable; using heuristic");
                    Ok(evidence.html_body.as_deref().map_or(PaymentPageVerdict::not_payment(PaymentMode::Heuristic), heuristic))
                }
                Err(e) => Err(e.into()),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{GatewayConfig, MockModel, PromptName};
    use std::sync::Arc;
    use url::Url;

    fn page(html: &str) -> PageEvidence {
        let u = Url::parse("https://shop.example/p").unwrap();
        PageEvidence::ok(u.clone(), u, html.into())
    }

    #[test]
    fn card_and_cvv_fields() {
        let v = detect_payment_page(
            &page(r#"<form><input name="cardnumber"><input id="cc-csc" autocomplete="cc-csc"></form>"#),
            PaymentMode::Heuristic,
            None,
        )
        .unwrap();
        assert!(v.is_payment_page);
        assert_eq!(v.evidence, [SIGNAL_CARD_FIELD, SIGNAL_CVV_EXPIRY]);
    }

    #[test]
    fn blog_article_is_not_payment() {
        let v = detect_payment_page(
            &page("<article><h1>Ten tips for spring</h1><p>Payment for our writers comes from ads.</p></article>"),
            PaymentMode::Heuristic,
            None,
        )
        .unwrap();
        assert!(!v.is_payment_page);
        assert!(v.evidence.is_empty());
    }

    #[test]
    fn text_signals_count() {
        let html = "<h1>Checkout</h1><p>Order total: $92.85</p>";
        assert_eq!(payment_signals(html), [SIGNAL_CHECKOUT_TEXT, SIGNAL_TOTAL_AMOUNT]);
    }

    #[test]
    fn model_mode() {
        let mock = MockModel::new().default_reply(PromptName::PaymentPageCls, "Payment");
        let gw = Gateway::new(Arc::new(mock), GatewayConfig::new("mock"));
        let v = detect_payment_page(&page("<p>hello</p>"), PaymentMode::Model, Some(&gw)).unwrap();
        assert!(v.is_payment_page);
        assert_eq!(v.mode, PaymentMode::Model);
        assert!(v.evidence[0].starts_with("reply:"));

        let bare = PageEvidence { html_body: None, ..page("") };
        assert!(matches!(
            detect_payment_page(&bare, PaymentMode::Model, Some(&gw)),
            Err(LensError::InsufficientEvidence(_))
        ));
    }
}
