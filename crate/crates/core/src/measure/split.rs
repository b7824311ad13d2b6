use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::MeasureError;
use crate::llm::{PromptTemplate, DEFAULT_MAX_PAYLOAD_CHARS};
use crate::store::LABEL_BENIGN;
use crate::taxonomy::Taxonomy;

/// A term with its gold label: a taxonomy type name or `benign`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledTerm {
    pub term_id: String,
    pub text: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSplit {
    pub seed: u64,
    pub ratio: f64,
    pub fine_tuning: Vec<LabeledTerm>,
    pub validation: Vec<LabeledTerm>,
    pub fine_tuning_counts: BTreeMap<String, usize>,
    pub validation_counts: BTreeMap<String, usize>,
}

fn is_benign(label: &str) -> bool {
    label.eq_ignore_ascii_case(LABEL_BENIGN) || label.eq_ignore_ascii_case("b")
}

/// Stratum of a gold label: its taxonomy category, `benign`, or the label itself.
pub fn stratum(taxonomy: &Taxonomy, label: &str) -> String {
    if is_benign(label) {
        return LABEL_BENIGN.to_string();
    }
    taxonomy.category_of(label).map_or_else(|_| label.to_string(), |c| c.as_str().to_string())
}

/// Per-stratum quotas summing to `floor(ratio * n)`, each the floor or ceiling
/// of its exact share. Leftover slots go to the largest remainders.
fn quotas(sizes: &BTreeMap<String, usize>, ratio: f64) -> BTreeMap<String, usize> {
    let n: usize = sizes.values().sum();
    let target = (ratio * n as f64 + 1e-9).floor() as usize;
    let mut out: BTreeMap<String, usize> = BTreeMap::new();
    let mut rems: Vec<(f64, &String)> = Vec::new();
    for (k, size) in sizes {
        let exact = ratio * *size as f64;
        let base = (exact + 1e-9).floor() as usize;
        out.insert(k.clone(), base);
        rems.push((exact - base as f64, k));
    }
    let mut left = target.saturating_sub(out.values().sum());
    rems.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
    for (_, k) in rems {
        if left == 0 {
            break;
        }
        if out[k] < sizes[k] {
            *out.get_mut(k).unwrap() += 1;
            left -= 1;
        }
    }
    out
}

fn counts(items: &[LabeledTerm], taxonomy: &Taxonomy) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for t in items {
        *m.entry(stratum(taxonomy, &t.label)).or_insert(0) += 1;
    }
    m
}

/// Seeded, category-stratified split. `ratio` is the fine-tuning share.
pub fn make_split(items: &[LabeledTerm], ratio: f64, seed: u64, taxonomy: &Taxonomy) -> Result<AnnotationSplit, MeasureError> {
    if items.is_empty() {
        return Err(MeasureError::EmptyInput);
    }
    if !(0.0..=1.0).contains(&ratio) {
        return Err(MeasureError::BadRatio(ratio));
    }
    let mut strata: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, t) in items.iter().enumerate() {
        strata.entry(stratum(taxonomy, &t.label)).or_default().push(i);
    }
    let sizes = strata.iter().map(|(k, v)| (k.clone(), v.len())).collect();
    let quota = quotas(&sizes, ratio);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![false; items.len()];
    for (k, mut idx) in strata {
        idx.shuffle(&mut rng);
        for i in &idx[..quota[&k]] {
            chosen[*i] = true;
        }
    }
    let (ft, val): (Vec<_>, Vec<_>) = items.iter().zip(chosen).partition(|(_, c)| *c);
    let fine_tuning: Vec<LabeledTerm> = ft.into_iter().map(|(t, _)| t.clone()).collect();
    let validation: Vec<LabeledTerm> = val.into_iter().map(|(t, _)| t.clone()).collect();
    Ok(AnnotationSplit {
        seed,
        ratio,
        fine_tuning_counts: counts(&fine_tuning, taxonomy),
        validation_counts: counts(&validation, taxonomy),
        fine_tuning,
        validation,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinetuneRecord {
    pub input: String,
    pub expected: String,
}

/// One record per term: the rendered taxonomy prompt and the expected reply.
pub fn finetune_records(items: &[LabeledTerm], taxonomy: &Taxonomy) -> Result<Vec<FinetuneRecord>, MeasureError> {
    let prompt = PromptTemplate::unfavorable_taxonomy(taxonomy);
    items
        .iter()
        .map(|t| {
            let expected = if is_benign(&t.label) {
                "b".to_string()
            } else {
                taxonomy
                    .get(&t.label)
                    .map(|ty| ty.name.clone())
                    .ok_or_else(|| MeasureError::BadLabel(format!("{}: {:?}", t.term_id, t.label)))?
            };
            Ok(FinetuneRecord { input: prompt.render(&t.text, DEFAULT_MAX_PAYLOAD_CHARS)?, expected })
        })
        .collect()
}

pub fn export_finetune(items: &[LabeledTerm], taxonomy: &Taxonomy, mut out: impl Write) -> Result<usize, MeasureError> {
    let records = finetune_records(items, taxonomy)?;
    for r in &records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(records.len())
}
