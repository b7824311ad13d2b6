use std::collections::{BTreeMap, HashMap, VecDeque};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{
    assign_topic, review_decision, sample_cluster, ClusterAssignment, ClusterDecision, ClusterRef, ReviewAction,
    TopicDecision, TopicError, TopicTemplate, DEFAULT_SAMPLE_SIZE,
};
use crate::llm::Gateway;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReviewChoice {
    Act(ReviewAction),
    Defer,
}

pub trait Reviewer {
    fn review(&mut self, decision: &ClusterDecision, samples: &[&str], template: &TopicTemplate) -> ReviewChoice;
}

/// Accepts every proposal; defers anything that needs a human.
pub struct AutoAccept;

impl Reviewer for AutoAccept {
    fn review(&mut self, decision: &ClusterDecision, _: &[&str], _: &TopicTemplate) -> ReviewChoice {
        match decision.decision {
            TopicDecision::Proposed { .. } => ReviewChoice::Act(ReviewAction::Accept),
            _ => ReviewChoice::Defer,
        }
    }
}

/// Replays a fixed list of choices, deferring once it runs out.
#[derive(Debug, Default)]
pub struct ScriptedReviewer {
    pub choices: VecDeque<ReviewChoice>,
}

impl ScriptedReviewer {
    pub fn new(choices: impl IntoIterator<Item = ReviewChoice>) -> Self {
        ScriptedReviewer { choices: choices.into_iter().collect() }
    }
}

impl Reviewer for ScriptedReviewer {
    fn review(&mut self, _: &ClusterDecision, _: &[&str], _: &TopicTemplate) -> ReviewChoice {
        self.choices.pop_front().unwrap_or(ReviewChoice::Defer)
    }
}

/// Line-oriented prompt: `a`ccept, `r`eject, `m <topic>` to merge, `d`efer.
pub struct TerminalReviewer<R, W> {
    input: R,
    output: W,
}

impl<R: BufRead, W: Write> TerminalReviewer<R, W> {
    pub fn new(input: R, output: W) -> Self {
        TerminalReviewer { input, output }
    }

    fn ask(&mut self, decision: &ClusterDecision, samples: &[&str], template: &TopicTemplate) -> std::io::Result<ReviewChoice> {
        let out = &mut self.output;
        writeln!(out, "\n== cluster {} (template v{}) ==", decision.cluster, template.version)?;
        match &decision.decision {
            TopicDecision::Proposed { name, description } => writeln!(out, "proposed: {name} — {description}")?,
            TopicDecision::NeedsReview { raw } => writeln!(out, "unparseable reply: {raw}")?,
            TopicDecision::Existing { name } => writeln!(out, "existing: {name}")?,
        }
        for (i, s) in samples.iter().enumerate() {
            let short: String = s.chars().take(200).collect();
            writeln!(out, "  {}. {short}", i + 1)?;
        }
        loop {
            write!(out, "[a]ccept / [r]eject / m <topic> / [d]efer > ")?;
            out.flush()?;
            let mut line = String::new();
            if self.input.read_line(&mut line)? == 0 {
                return Ok(ReviewChoice::Defer);
            }
            let line = line.trim();
            let choice = match line {
                "a" | "accept" => Some(ReviewChoice::Act(ReviewAction::Accept)),
                "r" | "reject" => Some(ReviewChoice::Act(ReviewAction::Reject)),
                "d" | "defer" | "" => Some(ReviewChoice::Defer),
                l => l
                    .strip_prefix("m ")
                    .map(str::trim)
                    .filter(|t| template.get(t).is_some())
                    .map(|t| ReviewChoice::Act(ReviewAction::MergeInto(t.to_string()))),
            };
            match choice {
                Some(c) => return Ok(c),
                None => writeln!(out, "unrecognized or unknown topic: {line}")?,
            }
        }
    }
}

impl<R: BufRead, W: Write> Reviewer for TerminalReviewer<R, W> {
    fn review(&mut self, decision: &ClusterDecision, samples: &[&str], template: &TopicTemplate) -> ReviewChoice {
        self.ask(decision, samples, template).unwrap_or(ReviewChoice::Defer)
    }
}

#[derive(Debug, Clone)]
pub struct InductionParams {
    pub sample_size: usize,
    pub seed: u64,
    /// Sampling rounds per cluster before it is deferred.
    pub max_rounds: usize,
    pub actor: String,
    /// Also try to place the noise pool as one pseudo-cluster.
    pub include_noise: bool,
}

impl Default for InductionParams {
    fn default() -> Self {
        InductionParams { sample_size: DEFAULT_SAMPLE_SIZE, seed: 0, max_rounds: 3, actor: "reviewer".into(), include_noise: false }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub clusters: usize,
    pub assigned: BTreeMap<ClusterRef, String>,
    pub deferred: Vec<ClusterRef>,
    pub noise_points: usize,
    pub rounds: usize,
}

impl CoverageReport {
    /// Assigned non-noise clusters over all non-noise clusters.
    pub fn coverage(&self) -> (usize, usize) {
        (self.assigned.keys().filter(|c| **c != ClusterRef::Noise).count(), self.clusters)
    }
}

#[derive(Debug, Clone)]
pub struct InductionOutcome {
    pub template: TopicTemplate,
    pub report: CoverageReport,
    pub decisions: Vec<ClusterDecision>,
}

fn round_seed(seed: u64, cluster: ClusterRef, round: usize) -> u64 {
    let c = match cluster {
        ClusterRef::Cluster(c) => c as u64 + 1,
        ClusterRef::Noise => 0,
    };
    seed ^ c.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (round as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
}

/// Sample, assign and review clusters until each is assigned or deferred.
pub fn run_induction_loop(
    assignment: &ClusterAssignment,
    texts: &HashMap<String, String>,
    template: TopicTemplate,
    gateway: &Gateway,
    reviewer: &mut dyn Reviewer,
    params: &InductionParams,
) -> Result<InductionOutcome, TopicError> {
    let mut template = template;
    let mut report = CoverageReport {
        clusters: assignment.n_clusters(),
        noise_points: assignment.noise_count(),
        ..Default::default()
    };
    let mut decisions = Vec::new();
    let mut pending: Vec<ClusterRef> = (0..assignment.n_clusters()).map(ClusterRef::Cluster).collect();
    if params.include_noise && report.noise_points > 0 {
        pending.push(ClusterRef::Noise);
    }

    for round in 0..params.max_rounds.max(1) {
        if pending.is_empty() {
            break;
        }
        report.rounds = round + 1;
        let mut retry = Vec::new();
        for cluster in pending {
            let sample = sample_cluster(assignment, cluster, params.sample_size, round_seed(params.seed, cluster, round))?;
            let decision = assign_topic(cluster, &sample, texts, &template, gateway)?;
            decisions.push(decision.clone());
            if let TopicDecision::Existing { name } = &decision.decision {
                report.assigned.insert(cluster, name.clone());
                continue;
            }
            let sample_texts: Vec<&str> = sample.iter().map(|id| texts.get(id).map_or("", String::as_str)).collect();
            match reviewer.review(&decision, &sample_texts, &template) {
                ReviewChoice::Defer => report.deferred.push(cluster),
                ReviewChoice::Act(action) => match review_decision(&template, &decision, &action, &params.actor) {
                    Ok(next) => {
                        template = next;
                        match (&action, &decision.decision) {
                            (ReviewAction::Accept, TopicDecision::Proposed { name, .. }) => {
                                report.assigned.insert(cluster, name.clone());
                            }
                            (ReviewAction::MergeInto(target), _) => {
                                let name = template.get(target).map_or(target.clone(), |t| t.name.clone());
                                report.assigned.insert(cluster, name);
                            }
                            _ => retry.push(cluster),
                        }
                    }
                    Err(e) => {
                        tracing::warn!(%cluster, error = %e, "review action failed; deferring");
                        report.deferred.push(cluster);
                    }
                },
            }
        }
        pending = retry;
    }
    report.deferred.extend(pending);
    report.deferred.sort();
    Ok(InductionOutcome { template, report, decisions })
}
