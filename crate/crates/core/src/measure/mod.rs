//! Classifier evaluation, corpus statistics, annotation splits and
//! fine-tuning export.

pub mod metrics;
pub mod split;
pub mod stats;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use self::metrics::{compute_metrics, label_is_positive, read_binary_labels, EvalMetrics};
pub use self::split::{export_finetune, finetune_records, make_split, stratum, AnnotationSplit, FinetuneRecord, LabeledTerm};
pub use self::stats::{cdf, compute_corpus_stats, stats_from_records, CdfPoint, CorpusStats, RankBucket, RANK_BUCKET_WIDTH};

use crate::llm::GatewayError;
use crate::taxonomy::Category;

pub const CDF_TERMS_FILE: &str = "cdf_terms_per_site.csv";
pub const CDF_UNFAVORABLE_FILE: &str = "cdf_unfavorable_per_site.csv";
pub const RANK_BUCKETS_FILE: &str = "rank_buckets.csv";

#[derive(Debug, Error)]
pub enum MeasureError {
    #[error("prediction and gold key sets differ ({missing} missing, {extra} extra)")]
    KeyMismatch { missing: usize, extra: usize },
    #[error("label {0} is not a taxonomy type or benign")]
    BadLabel(String),
    #[error("nothing to split")]
    EmptyInput,
    #[error("ratio {0} outside [0, 1]")]
    BadRatio(f64),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn write_cdf(path: &Path, points: &[CdfPoint]) -> Result<(), MeasureError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x", "cdf"])?;
    for p in points {
        w.write_record([p.x.to_string(), p.f.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Write the CDF and rank-bucket series as CSV files into `dir`.
pub fn plot_series(stats: &CorpusStats, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>, MeasureError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let paths = [dir.join(CDF_TERMS_FILE), dir.join(CDF_UNFAVORABLE_FILE), dir.join(RANK_BUCKETS_FILE)];
    write_cdf(&paths[0], &stats.cdf_terms_per_site)?;
    write_cdf(&paths[1], &stats.cdf_unfavorable_per_site)?;

    let mut w = csv::Writer::from_path(&paths[2])?;
    let mut header = vec!["rank_lo".to_string(), "rank_hi".to_string()];
    header.extend(Category::ALL.iter().map(|c| c.as_str().to_string()));
    w.write_record(&header)?;
    for b in &stats.rank_bucket_histogram {
        let mut row = vec![b.lo.to_string(), b.hi.to_string()];
        row.extend(Category::ALL.iter().map(|c| b.counts.get(c).copied().unwrap_or(0).to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(paths.to_vec())
}
