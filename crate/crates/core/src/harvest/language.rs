use std::collections::{BTreeMap, HashMap};
use std::sync::LazyLock;

use thiserror::Error;

use crate::store::collapse_whitespace;

pub const MIN_TEXT_CHARS: usize = 20;

const SMOOTHING: f64 = 0.5;

const BUNDLED: &[(&str, &str)] = &[
    ("de", include_str!("../../data/lang/de.txt")),
    ("en", include_str!("../../data/lang/en.txt")),
    ("es", include_str!("../../data/lang/es.txt")),
    ("fr", include_str!("../../data/lang/fr.txt")),
    ("it", include_str!("../../data/lang/it.txt")),
    ("ja", include_str!("../../data/lang/ja.txt")),
    ("nl", include_str!("../../data/lang/nl.txt")),
    ("pt", include_str!("../../data/lang/pt.txt")),
    ("ru", include_str!("../../data/lang/ru.txt")),
    ("zh", include_str!("../../data/lang/zh.txt")),
];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LanguageError {
    #[error("insufficient text: {0} characters, need {MIN_TEXT_CHARS}")]
    InsufficientText(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub code: String,
    /// Posterior of the winning profile, in [0, 1].
    pub confidence: f64,
}

#[derive(Debug, Clone)]
struct Profile {
    counts: HashMap<String, u32>,
    total: u32,
}

/// Character-trigram language identifier over a fixed set of profiles.
#[derive(Debug, Clone)]
pub struct LanguageDetector {
    profiles: BTreeMap<String, Profile>,
    vocabulary: usize,
}

fn trigrams(text: &str) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .map(|c| if c.is_alphabetic() { c.to_lowercase().next().unwrap_or(c) } else { ' ' })
        .collect();
    let mut out = Vec::new();
    for word in cleaned.split_whitespace() {
        let padded: Vec<char> = format!(" {word} ").chars().collect();
        for w in padded.windows(3) {
            out.push(w.iter().collect());
        }
    }
    out
}

impl LanguageDetector {
    pub fn from_samples<'a>(samples: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        let mut profiles = BTreeMap::new();
        let mut vocab = std::collections::HashSet::new();
        for (code, text) in samples {
            let mut counts = HashMap::new();
            let grams = trigrams(text);
            for g in &grams {
                *counts.entry(g.clone()).or_insert(0) += 1;
                vocab.insert(g.clone());
            }
            profiles.insert(code.to_string(), Profile { counts, total: grams.len() as u32 });
        }
        LanguageDetector { profiles, vocabulary: vocab.len().max(1) }
    }

    pub fn languages(&self) -> impl Iterator<Item = &str> {
        self.profiles.keys().map(String::as_str)
    }

    pub fn detect(&self, text: &str) -> Result<Detection, LanguageError> {
        let text = collapse_whitespace(text);
        let n = text.chars().count();
        if n < MIN_TEXT_CHARS {
            return Err(LanguageError::InsufficientText(n));
        }
        let grams = trigrams(&text);
        let denom_extra = SMOOTHING * self.vocabulary as f64;
        let scores: Vec<(&str, f64)> = self
            .profiles
            .iter()
            .map(|(code, p)| {
                let denom = (p.total as f64 + denom_extra).ln();
                let ll = grams
                    .iter()
                    .map(|g| (*p.counts.get(g).unwrap_or(&0) as f64 + SMOOTHING).ln() - denom)
                    .sum::<f64>();
                (code.as_str(), ll)
            })
            .collect();
        // BTreeMap iteration plus strict `>` keeps the alphabetically first code on ties.
        let (best, best_ll) = scores
            .iter()
            .fold(scores[0], |acc, &s| if s.1 > acc.1 { s } else { acc });
        let z: f64 = scores.iter().map(|(_, ll)| (ll - best_ll).exp()).sum();
        Ok(Detection { code: best.to_string(), confidence: (1.0 / z).clamp(0.0, 1.0) })
    }
}

impl Default for LanguageDetector {
    fn default() -> Self {
        DEFAULT.clone()
    }
}

static DEFAULT: LazyLock<LanguageDetector> = LazyLock::new(|| LanguageDetector::from_samples(BUNDLED.iter().copied()));

/// Detect with the bundled profiles.
pub fn detect_language(text: &str) -> Result<Detection, LanguageError> {
    DEFAULT.detect(text)
}
