use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TopicError;
use crate::taxonomy::{normalize_label, FinancialTemplate};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topic {
    pub name: String,
    pub description: String,
    #[serde(default)]
    pub exemplars: BTreeSet<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChangeAction {
    Add,
    Merge,
    Rename,
    Reject,
}

/// One template edit. Carries everything needed to replay it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangeEntry {
    pub version: u32,
    pub action: ChangeAction,
    pub actor: String,
    /// Topic added, merged away, renamed, or proposal rejected.
    pub topic: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    /// Merge target or new name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    #[serde(default)]
    pub exemplars: BTreeSet<String>,
}

/// Versioned topic list. `base` is the starting point the changelog replays onto.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicTemplate {
    pub version: u32,
    pub topics: Vec<Topic>,
    pub base_version: u32,
    pub base: Vec<Topic>,
    #[serde(default)]
    pub changelog: Vec<ChangeEntry>,
}

impl TopicTemplate {
    pub fn new(version: u32, topics: Vec<Topic>) -> Result<Self, TopicError> {
        let mut seen = BTreeSet::new();
        for t in &topics {
            if !seen.insert(normalize_label(&t.name)) {
                return Err(TopicError::DuplicateTopic(t.name.clone()));
            }
        }
        Ok(TopicTemplate { version, base_version: version, base: topics.clone(), topics, changelog: Vec::new() })
    }

    /// Seed from the financial categories, glossary and catch-all excluded.
    pub fn from_financial(template: &FinancialTemplate) -> Self {
        let topics = template
            .categories
            .iter()
            .filter(|c| template.is_positive(&c.name) && c.name != crate::taxonomy::OTHERS_LABEL)
            .map(|c| Topic { name: c.name.clone(), description: c.description.clone(), exemplars: BTreeSet::new() })
            .collect();
        Self::new(1, topics).expect("financial categories are unique")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TopicError> {
        let t: TopicTemplate = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if t.replay()? != t {
            return Err(TopicError::Corrupt("changelog does not reproduce the stored topics".into()));
        }
        Ok(t)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TopicError> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Topic> {
        let key = normalize_label(name);
        self.topics.iter().find(|t| normalize_label(&t.name) == key)
    }

    fn get_mut(&mut self, name: &str) -> Option<&mut Topic> {
        let key = normalize_label(name);
        self.topics.iter_mut().find(|t| normalize_label(&t.name) == key)
    }

    fn apply(&mut self, entry: &ChangeEntry) -> Result<(), TopicError> {
        if entry.version != self.version + 1 {
            return Err(TopicError::Corrupt(format!("version {} follows {}", entry.version, self.version)));
        }
        match entry.action {
            ChangeAction::Add => {
                if self.get(&entry.topic).is_some() {
                    return Err(TopicError::DuplicateTopic(entry.topic.clone()));
                }
                self.topics.push(Topic {
                    name: entry.topic.clone(),
                    description: entry.description.clone().unwrap_or_default(),
                    exemplars: entry.exemplars.clone(),
                });
            }
            ChangeAction::Merge => {
                let target = entry.target.as_deref().ok_or_else(|| TopicError::Corrupt("merge without target".into()))?;
                if self.get(target).is_none() {
                    return Err(TopicError::UnknownTopic(target.to_string()));
                }
                let mut moved = entry.exemplars.clone();
                if normalize_label(&entry.topic) != normalize_label(target) {
                    if let Some(pos) = self.topics.iter().position(|t| normalize_label(&t.name) == normalize_label(&entry.topic)) {
                        moved.extend(self.topics.remove(pos).exemplars);
                    }
                }
                self.get_mut(target).unwrap().exemplars.extend(moved);
            }
            ChangeAction::Rename => {
                let to = entry.target.as_deref().ok_or_else(|| TopicError::Corrupt("rename without target".into()))?;
                if self.get(to).is_some() && normalize_label(to) != normalize_label(&entry.topic) {
                    return Err(TopicError::DuplicateTopic(to.to_string()));
                }
                let t = self.get_mut(&entry.topic).ok_or_else(|| TopicError::UnknownTopic(entry.topic.clone()))?;
                t.name = to.to_string();
            }
            ChangeAction::Reject => {}
        }
        self.version = entry.version;
        self.changelog.push(entry.clone());
        Ok(())
    }

    fn record(
        &self,
        action: ChangeAction,
        actor: &str,
        topic: &str,
        description: Option<&str>,
        target: Option<&str>,
        exemplars: BTreeSet<String>,
    ) -> Result<Self, TopicError> {
        let mut next = self.clone();
        next.apply(&ChangeEntry {
            version: self.version + 1,
            action,
            actor: actor.to_string(),
            topic: topic.to_string(),
            description: description.map(str::to_string),
            target: target.map(str::to_string),
            exemplars,
        })?;
        Ok(next)
    }

    pub fn add(&self, name: &str, description: &str, exemplars: BTreeSet<String>, actor: &str) -> Result<Self, TopicError> {
        self.record(ChangeAction::Add, actor, name, Some(description), None, exemplars)
    }

    /// Fold `from` (a proposal or an existing topic) into `into`.
    pub fn merge(&self, from: &str, into: &str, exemplars: BTreeSet<String>, actor: &str) -> Result<Self, TopicError> {
        self.record(ChangeAction::Merge, actor, from, None, Some(into), exemplars)
    }

    pub fn rename(&self, from: &str, to: &str, actor: &str) -> Result<Self, TopicError> {
        self.record(ChangeAction::Rename, actor, from, None, Some(to), BTreeSet::new())
    }

    pub fn reject(&self, proposal: &str, actor: &str) -> Result<Self, TopicError> {
        self.record(ChangeAction::Reject, actor, proposal, None, None, BTreeSet::new())
    }

    /// Rebuild the current state from `base` and the changelog.
    pub fn replay(&self) -> Result<Self, TopicError> {
        let mut t = TopicTemplate {
            version: self.base_version,
            topics: self.base.clone(),
            base_version: self.base_version,
            base: self.base.clone(),
            changelog: Vec::new(),
        };
        for e in &self.changelog {
            t.apply(e)?;
        }
        Ok(t)
    }
}
