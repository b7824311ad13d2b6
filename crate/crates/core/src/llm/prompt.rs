use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::GatewayError;
use crate::taxonomy::{FinancialTemplate, Taxonomy, OTHERS_LABEL};

pub const PLACEHOLDER: &str = "{{payload}}";

/// Default payload budget in characters (roughly 6k tokens).
pub const DEFAULT_MAX_PAYLOAD_CHARS: usize = 24_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptName {
    SimpleBinary,
    FinancialTemplate,
    UnfavorableTaxonomy,
    WebsiteCls,
    PaymentPageCls,
    TopicAssignment,
}

impl PromptName {
    pub const ALL: [PromptName; 6] = [
        PromptName::SimpleBinary,
        PromptName::FinancialTemplate,
        PromptName::UnfavorableTaxonomy,
        PromptName::WebsiteCls,
        PromptName::PaymentPageCls,
        PromptName::TopicAssignment,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptName::SimpleBinary => "simple_binary",
            PromptName::FinancialTemplate => "financial_template",
            PromptName::UnfavorableTaxonomy => "unfavorable_taxonomy",
            PromptName::WebsiteCls => "website_cls",
            PromptName::PaymentPageCls => "payment_page_cls",
            PromptName::TopicAssignment => "topic_assignment",
        }
    }
}

impl fmt::Display for PromptName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptName {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PromptName::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| format!("unknown prompt {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub name: PromptName,
    pub version: u32,
    pub body: String,
}

const SIMPLE_BINARY: &str = "Classify the following term as 'malicious' or 'benign'. A term is 'malicious' if it is a financial term that is one-sided, unbalanced, unfair, or harmful to users. \n\nRespond only with 'm' for malicious or 'b' for benign.\n\nTerm: ";

const TAXONOMY_HEAD: &str = "You will be provided with a paragraph extracted from the terms and conditions. Your task is to classify them into one of the topics below or 'b' for 'benign':\n\n";

const TAXONOMY_TAIL: &str = "\nIf the term is not a financial term or a reasonable financial term based on common sense, reply 'b' for 'benign'.\n\nIf the term is malicious and financial, reply with a topic from the template above. ";

impl PromptTemplate {
    pub fn simple_binary() -> Self {
        PromptTemplate {
            name: PromptName::SimpleBinary,
            version: 1,
            body: format!("{SIMPLE_BINARY}{PLACEHOLDER}"),
        }
    }

    /// Multi-class prompt listing one bullet per taxonomy type. Its version
    /// tracks the taxonomy version so taxonomy edits invalidate cached labels.
    pub fn unfavorable_taxonomy(taxonomy: &Taxonomy) -> Self {
        let mut body = String::from(TAXONOMY_HEAD);
        for t in &taxonomy.types {
            body.push_str(&format!("- {}: {}\n", t.name, t.description));
        }
        body.push_str(TAXONOMY_TAIL);
        body.push_str(&format!(
            "If it is unfavorable and financial but fits none of the topics, reply '{OTHERS_LABEL}'.\n\nTerm: {PLACEHOLDER}"
        ));
        PromptTemplate { name: PromptName::UnfavorableTaxonomy, version: taxonomy.version, body }
    }

    pub fn financial_template(template: &FinancialTemplate) -> Self {
        let mut body = String::from(
            "You will be provided with a paragraph extracted from the terms and conditions. \
             Decide whether it is a financial term, meaning it has an immediate or future financial impact on the customer. \
             If it is, reply with the one category below that fits it best:\n\n",
        );
        for c in &template.categories {
            body.push_str(&format!("- {}: {}\n", c.name, c.description));
        }
        body.push_str(&format!(
            "\nIf the paragraph is not a financial term, reply 'n'.\n\nTerm: {PLACEHOLDER}"
        ));
        PromptTemplate { name: PromptName::FinancialTemplate, version: template.version, body }
    }

    pub fn website_cls() -> Self {
        PromptTemplate {
            name: PromptName::WebsiteCls,
            version: 1,
            body: format!(
                "Decide whether the website below is a shopping website, meaning it sells products or services \
                 to consumers online. Reply with exactly 'shopping' or 'non-shopping'.\n\n{PLACEHOLDER}"
            ),
        }
    }

    pub fn payment_page_cls() -> Self {
        PromptTemplate {
            name: PromptName::PaymentPageCls,
            version: 1,
            body: format!(
                "Decide whether the page below is a payment page, meaning a checkout step where the visitor enters \
                 payment details or confirms a charge. Reply with exactly 'payment' or 'non-payment'.\n\n{PLACEHOLDER}"
            ),
        }
    }

    pub fn topic_assignment() -> Self {
        PromptTemplate {
            name: PromptName::TopicAssignment,
            version: 1,
            body: format!(
                "You are organizing paragraphs from terms and conditions into topics. \
                 The input lists the current topic template followed by sample paragraphs drawn from one cluster. \
                 If the samples share one of the listed topics, reply with that topic name exactly. \
                 Otherwise reply with a single line of the form\nNEW: <topic name> — <one-line description>\n\n{PLACEHOLDER}"
            ),
        }
    }

    /// Substitute the payload into the body. Output is byte-stable for fixed input.
    pub fn render(&self, payload: &str, max_payload_chars: usize) -> Result<String, GatewayError> {
        if payload.trim().is_empty() {
            return Err(GatewayError::EmptyPayload);
        }
        let len = payload.chars().count();
        if len > max_payload_chars {
            return Err(GatewayError::PayloadTooLarge { len, max: max_payload_chars });
        }
        debug_assert_eq!(self.body.matches(PLACEHOLDER).count(), 1);
        Ok(self.body.replacen(PLACEHOLDER, payload, 1))
    }
}
