use std::collections::BTreeMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use super::MeasureError;
use crate::store::{LABEL_BENIGN, LABEL_NEEDS_REVIEW, LABEL_NOT_FINANCIAL};

/// Binary classifier scores from one confusion matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub fpr: f64,
    pub tpr: f64,
    pub precision: f64,
    pub f1: f64,
    pub auc_single_point: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl EvalMetrics {
    pub fn from_counts(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        let fpr = ratio(fp, fp + tn);
        let tpr = ratio(tp, tp + fn_);
        let precision = ratio(tp, tp + fp);
        let f1 = if precision + tpr == 0.0 { 0.0 } else { 2.0 * precision * tpr / (precision + tpr) };
        EvalMetrics { tp, fp, tn, fn_, fpr, tpr, precision, f1, auc_single_point: (tpr + (1.0 - fpr)) / 2.0 }
    }
}

/// Score predictions against gold labels over the same key set.
pub fn compute_metrics(
    predictions: &BTreeMap<String, bool>,
    gold: &BTreeMap<String, bool>,
) -> Result<EvalMetrics, MeasureError> {
    let missing: Vec<&String> = gold.keys().filter(|k| !predictions.contains_key(*k)).collect();
    let extra: Vec<&String> = predictions.keys().filter(|k| !gold.contains_key(*k)).collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(MeasureError::KeyMismatch { missing: missing.len(), extra: extra.len() });
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (k, g) in gold {
        match (predictions[k], *g) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    Ok(EvalMetrics::from_counts(tp, fp, tn, fn_))
}

/// Binary reading of a label string. Benign and non-financial labels are
/// negative, taxonomy labels positive.
pub fn label_is_positive(label: &str) -> Result<bool, MeasureError> {
    match label.trim().to_lowercase().as_str() {
        "positive" | "m" | "malicious" | "1" | "true" => Ok(true),
        "negative" | "b" | "0" | "false" => Ok(false),
        l if l == LABEL_BENIGN || l == LABEL_NOT_FINANCIAL => Ok(false),
        l if l == LABEL_NEEDS_REVIEW || l.is_empty() => Err(MeasureError::BadLabel(label.to_string())),
        _ => Ok(true),
    }
}

#[derive(Debug, Deserialize)]
struct LabelLine {
    term_id: String,
    label: String,
}

/// Read `{"term_id", "label"}` lines into a binary map.
pub fn read_binary_labels(input: impl BufRead) -> Result<BTreeMap<String, bool>, MeasureError> {
    let mut out = BTreeMap::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let l: LabelLine = serde_json::from_str(&line).map_err(|e| MeasureError::Parse { line: i + 1, reason: e.to_string() })?;
        if out.insert(l.term_id.clone(), label_is_positive(&l.label)?).is_some() {
            return Err(MeasureError::Parse { line: i + 1, reason: format!("duplicate term id {}", l.term_id) });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn maps(pairs: &[(bool, bool)]) -> (BTreeMap<String, bool>, BTreeMap<String, bool>) {
        let p = pairs.iter().enumerate().map(|(i, (p, _))| (i.to_string(), *p)).collect();
        let g = pairs.iter().enumerate().map(|(i, (_, g))| (i.to_string(), *g)).collect();
        (p, g)
    }

    #[test]
    fn perfect_predictor() {
        let pairs: Vec<(bool, bool)> = (0..245).map(|i| (i < 126, i < 126)).collect();
        let (p, g) = maps(&pairs);
        let m = compute_metrics(&p, &g).unwrap();
        assert_eq!((m.fpr, m.tpr, m.f1), (0.0, 1.0, 1.0));
    }

    #[test]
    fn all_positive_predictor() {
        let pairs: Vec<(bool, bool)> = (0..245).map(|i| (true, i < 126)).collect();
        let (p, g) = maps(&pairs);
        let m = compute_metrics(&p, &g).unwrap();
        assert_eq!((m.fpr, m.tpr), (1.0, 1.0));
        assert_eq!(m.precision, 126.0 / 245.0);
    }

    #[test]
    fn key_mismatch() {
        let (p, mut g) = maps(&[(true, true)]);
        g.insert("extra".into(), false);
        assert!(matches!(compute_metrics(&p, &g), Err(MeasureError::KeyMismatch { missing: 1, extra: 0 })));
    }

    #[test]
    fn zero_denominators() {
        let m = EvalMetrics::from_counts(0, 0, 0, 0);
        assert_eq!((m.fpr, m.tpr, m.precision, m.f1), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn label_reading() {
        let input = "{\"term_id\":\"a\",\"label\":\"b\"}\n{\"term_id\":\"b\",\"label\":\"Restocking Fee\"}\n\n";
        let m = read_binary_labels(input.as_bytes()).unwrap();
        assert_eq!(m["a"], false);
        assert_eq!(m["b"], true);
        assert!(read_binary_labels("{\"term_id\":\"a\",\"label\":\"needs_review\"}".as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn identities(tp in 0u64..500, fp in 0u64..500, tn in 0u64..500, fn_ in 0u64..500) {
            let m = EvalMetrics::from_counts(tp, fp, tn, fn_);
            for v in [m.fpr, m.tpr, m.precision, m.f1, m.auc_single_point] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            prop_assert_eq!(m.f1 == 0.0, tp == 0);
            // with no positives tpr is 0 by convention, so a perfect score needs tp > 0
            let perfect = fp == 0 && fn_ == 0 && tp > 0;
            prop_assert_eq!(m.auc_single_point == 1.0, perfect);
        }
    }
}
