//! Embedding, DBSCAN clustering and reviewed topic-template induction.

pub mod dbscan;
pub mod embed;
pub mod induction;
pub mod template;

use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use self::dbscan::{dbscan, ClusterAssignment, ClusterParams, ClusterRef, DEFAULT_EPS, DEFAULT_MIN_PTS};
pub use self::embed::{
    embed_terms, load_batch, open_embedder, save_batch, EmbeddingBatch, EmbeddingProvider, HashingEmbedder,
    HttpEmbedder, MockEmbedder, EMBEDDINGS_FILE,
};
pub use self::induction::{
    run_induction_loop, AutoAccept, CoverageReport, InductionOutcome, InductionParams, Reviewer, ReviewChoice,
    ScriptedReviewer, TerminalReviewer,
};
pub use self::template::{ChangeAction, ChangeEntry, Topic, TopicTemplate};

use crate::llm::{Gateway, GatewayError, PromptTemplate, ReplyLabel};

pub const DEFAULT_SAMPLE_SIZE: usize = 10;
const SAMPLE_CHARS: usize = 600;

#[derive(Debug, Error)]
pub enum TopicError {
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("embedding: {0}")]
    Embedding(String),
    #[error("invalid clustering parameters {0:?}")]
    BadParams(ClusterParams),
    #[error("unknown cluster {0}")]
    UnknownCluster(ClusterRef),
    #[error("unknown topic {0:?}")]
    UnknownTopic(String),
    #[error("topic {0:?} already exists")]
    DuplicateTopic(String),
    #[error("decision is not reviewable: {0}")]
    NotReviewable(String),
    #[error("corrupt topic template: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Up to `k` member term ids of a cluster (or the noise pool), chosen by a seeded RNG.
pub fn sample_cluster(
    assignment: &ClusterAssignment,
    cluster: ClusterRef,
    k: usize,
    seed: u64,
) -> Result<Vec<String>, TopicError> {
    let members = assignment.members(cluster)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(members.choose_multiple(&mut rng, k).map(|s| s.to_string()).collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TopicDecision {
    Existing { name: String },
    Proposed { name: String, description: String },
    NeedsReview { raw: String },
}

impl ReplyLabel for TopicDecision {
    fn label_text(&self) -> String {
        match self {
            TopicDecision::Existing { name } => name.clone(),
            TopicDecision::Proposed { name, description } => format!("NEW: {name} — {description}"),
            TopicDecision::NeedsReview { raw } => raw.clone(),
        }
    }
}

/// A topic decision for one cluster sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterDecision {
    pub cluster: ClusterRef,
    pub sample: Vec<String>,
    pub decision: TopicDecision,
    pub template_version: u32,
}

fn unwrap_reply(s: &str) -> &str {
    s.trim()
        .trim_matches(|c: char| matches!(c, '"' | '\'' | '`' | '*' | '“' | '”'))
        .trim_end_matches(['.', '!'])
        .trim()
}

/// Strict parse of a topic-assignment reply: an existing topic name or one
/// `NEW: <name> — <description>` line.
pub fn parse_topic_reply(raw: &str, template: &TopicTemplate) -> Option<TopicDecision> {
    let line = raw.trim();
    if line.lines().count() != 1 {
        return None;
    }
    let head = line.get(..4).unwrap_or_default();
    if head.eq_ignore_ascii_case("new:") {
        let rest = line[4..].trim();
        let (name, desc) = [" — ", " – ", " - ", ": "].iter().find_map(|sep| rest.split_once(sep))?;
        let (name, desc) = (unwrap_reply(name), desc.trim());
        if name.is_empty() || desc.is_empty() {
            return None;
        }
        return Some(TopicDecision::Proposed { name: name.to_string(), description: desc.to_string() });
    }
    template
        .get(unwrap_reply(line))
        .map(|t| TopicDecision::Existing { name: t.name.clone() })
}

/// Prompt payload: the current topic list followed by numbered samples.
pub fn topic_payload(template: &TopicTemplate, samples: &[&str]) -> String {
    let mut out = String::from("Current topics:\n");
    for t in &template.topics {
        out.push_str(&format!("- {}: {}\n", t.name, t.description));
    }
    out.push_str("\nSamples:\n");
    for (i, s) in samples.iter().enumerate() {
        let s: String = s.chars().take(SAMPLE_CHARS).collect();
        out.push_str(&format!("{}. {s}\n", i + 1));
    }
    out
}

/// Ask the model to place a cluster sample. Replies outside the contract
/// become `NeedsReview`.
pub fn assign_topic(
    cluster: ClusterRef,
    sample: &[String],
    texts: &HashMap<String, String>,
    template: &TopicTemplate,
    gateway: &Gateway,
) -> Result<ClusterDecision, TopicError> {
    let sample_texts: Vec<&str> = sample.iter().map(|id| texts.get(id).map_or("", String::as_str)).collect();
    let payload = topic_payload(template, &sample_texts);
    let decision = match gateway.ask(&PromptTemplate::topic_assignment(), &payload, None, |r| parse_topic_reply(r, template)) {
        Ok(l) => l.value,
        Err(GatewayError::UnparseableReply { raw, .. }) => TopicDecision::NeedsReview { raw },
        Err(e) => return Err(e.into()),
    };
    Ok(ClusterDecision { cluster, sample: sample.to_vec(), decision, template_version: template.version })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReviewAction {
    Accept,
    Reject,
    MergeInto(String),
}

/// Apply a reviewer's verdict on a proposed or needs-review decision,
/// returning the next template version.
pub fn review_decision(
    template: &TopicTemplate,
    decision: &ClusterDecision,
    action: &ReviewAction,
    actor: &str,
) -> Result<TopicTemplate, TopicError> {
    let exemplars: BTreeSet<String> = decision.sample.iter().cloned().collect();
    let subject = match &decision.decision {
        TopicDecision::Existing { name } => {
            return Err(TopicError::NotReviewable(format!("cluster {} already maps to {name:?}", decision.cluster)))
        }
        TopicDecision::Proposed { name, .. } => name.clone(),
        TopicDecision::NeedsReview { .. } => format!("cluster {}", decision.cluster),
    };
    match (action, &decision.decision) {
        (ReviewAction::Accept, TopicDecision::Proposed { name, description }) => {
            template.add(name, description, exemplars, actor)
        }
        (ReviewAction::Accept, _) => {
            Err(TopicError::NotReviewable("a needs_review decision has no proposed topic to accept".into()))
        }
        (ReviewAction::Reject, _) => template.reject(&subject, actor),
        (ReviewAction::MergeInto(target), _) => template.merge(&subject, target, exemplars, actor),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{GatewayConfig, MockModel, PromptName};
    use crate::taxonomy::FinancialTemplate;
    use std::sync::Arc;

    fn assignment(n: usize) -> ClusterAssignment {
        ClusterAssignment {
            params: ClusterParams::default(),
            term_ids: (0..n).map(|i| format!("t{i}")).collect(),
            labels: (0..n).map(|i| if i % 10 == 9 { None } else { Some(0) }).collect(),
            core: vec![true; n],
        }
    }

    #[test]
    fn seeded_sampling() {
        let a = assignment(56);
        let s1 = sample_cluster(&a, ClusterRef::Cluster(0), 10, 7).unwrap();
        assert_eq!(s1.len(), 10);
        assert_eq!(s1, sample_cluster(&a, ClusterRef::Cluster(0), 10, 7).unwrap());
        let small = assignment(4);
        assert_eq!(sample_cluster(&small, ClusterRef::Cluster(0), 10, 7).unwrap().len(), 4);
        assert_eq!(sample_cluster(&a, ClusterRef::Noise, 10, 7).unwrap().len(), 5);
        assert!(sample_cluster(&a, ClusterRef::Cluster(3), 10, 7).is_err());
    }

    #[test]
    fn reply_parsing() {
        let t = TopicTemplate::from_financial(&FinancialTemplate::default());
        assert_eq!(
            parse_topic_reply("Return and Refund Policy", &t),
            Some(TopicDecision::Existing { name: "Return and Refund Policy".into() })
        );
        assert_eq!(
            parse_topic_reply("NEW: Restocking Fee — fee charged for returned items", &t),
            Some(TopicDecision::Proposed { name: "Restocking Fee".into(), description: "fee charged for returned items".into() })
        );
        assert_eq!(parse_topic_reply("These samples are mostly about refunds, I think.", &t), None);
        assert_eq!(parse_topic_reply("NEW: — nothing", &t), None);
    }

    #[test]
    fn assign_and_review() {
        let t = TopicTemplate::from_financial(&FinancialTemplate::default());
        let texts = HashMap::from([("a".to_string(), "An 8% restocking fee applies to all returns.".to_string())]);
        let payload = topic_payload(&t, &["An 8% restocking fee applies to all returns."]);
        let mock = MockModel::new()
            .reply(PromptName::TopicAssignment, &payload, "NEW: Restocking Fee — fee charged for returned items");
        let gw = Gateway::new(Arc::new(mock), GatewayConfig::new("mock"));
        let d = assign_topic(ClusterRef::Cluster(0), &["a".into()], &texts, &t, &gw).unwrap();
        assert!(matches!(d.decision, TopicDecision::Proposed { .. }));

        let accepted = review_decision(&t, &d, &ReviewAction::Accept, "rev").unwrap();
        assert_eq!(accepted.version, t.version + 1);
        assert_eq!(accepted.topics.len(), t.topics.len() + 1);
        let rejected = review_decision(&t, &d, &ReviewAction::Reject, "rev").unwrap();
        assert_eq!(rejected.topics.len(), t.topics.len());
        assert!(review_decision(&t, &d, &ReviewAction::MergeInto("Nope".into()), "rev").is_err());

        let existing = ClusterDecision { decision: TopicDecision::Existing { name: "x".into() }, ..d.clone() };
        assert!(matches!(review_decision(&t, &existing, &ReviewAction::Accept, "r"), Err(TopicError::NotReviewable(_))));
    }

    #[test]
    fn free_prose_needs_review() {
        let t = TopicTemplate::from_financial(&FinancialTemplate::default());
        let mock = MockModel::new().default_reply(PromptName::TopicAssignment, "Hard to say, these are varied.");
        let gw = Gateway::new(Arc::new(mock), GatewayConfig::new("mock"));
        let d = assign_topic(ClusterRef::Cluster(0), &[], &HashMap::new(), &t, &gw).unwrap();
        assert!(matches!(d.decision, TopicDecision::NeedsReview { .. }));
    }
}
