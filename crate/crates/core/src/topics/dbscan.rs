use std::collections::{BTreeMap, VecDeque};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{EmbeddingBatch, TopicError};

pub const DEFAULT_EPS: f64 = 0.15;
pub const DEFAULT_MIN_PTS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterParams {
    /// Cosine-distance radius, inclusive.
    pub eps: f64,
    /// Neighbors (self included) a point needs to be core.
    pub min_pts: usize,
}

impl Default for ClusterParams {
    fn default() -> Self {
        ClusterParams { eps: DEFAULT_EPS, min_pts: DEFAULT_MIN_PTS }
    }
}

/// A cluster id, or the pool of noise points. Serialized as `"3"` or
/// `"noise"` so it can key a JSON map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ClusterRef {
    Cluster(usize),
    Noise,
}

impl std::fmt::Display for ClusterRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ClusterRef::Cluster(c) => write!(f, "{c}"),
            ClusterRef::Noise => f.write_str("noise"),
        }
    }
}

impl std::str::FromStr for ClusterRef {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "noise" => Ok(ClusterRef::Noise),
            n => n.parse().map(ClusterRef::Cluster).map_err(|_| format!("bad cluster id {n:?}")),
        }
    }
}

impl Serialize for ClusterRef {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ClusterRef {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub params: ClusterParams,
    pub term_ids: Vec<String>,
    /// `None` marks noise.
    pub labels: Vec<Option<usize>>,
    pub core: Vec<bool>,
}

impl ClusterAssignment {
    pub fn n_clusters(&self) -> usize {
        self.labels.iter().flatten().max().map_or(0, |m| m + 1)
    }

    pub fn noise_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_none()).count()
    }

    /// Member term ids in input order.
    pub fn members(&self, cluster: ClusterRef) -> Result<Vec<&str>, TopicError> {
        let want = match cluster {
            ClusterRef::Cluster(c) if c >= self.n_clusters() => return Err(TopicError::UnknownCluster(cluster)),
            ClusterRef::Cluster(c) => Some(c),
            ClusterRef::Noise => None,
        };
        Ok(self
            .term_ids
            .iter()
            .zip(&self.labels)
            .filter(|(_, l)| **l == want)
            .map(|(id, _)| id.as_str())
            .collect())
    }

    pub fn sizes(&self) -> BTreeMap<usize, usize> {
        let mut out = BTreeMap::new();
        for l in self.labels.iter().flatten() {
            *out.entry(*l).or_insert(0) += 1;
        }
        out
    }

    pub fn label_of(&self, term_id: &str) -> Option<ClusterRef> {
        let i = self.term_ids.iter().position(|t| t == term_id)?;
        Some(self.labels[i].map_or(ClusterRef::Noise, ClusterRef::Cluster))
    }
}

fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    1.0 - a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
}

/// Neighbor lists (self included, ascending) under cosine distance `<= eps`.
/// Rows are computed in parallel; memory stays O(n + edges).
pub fn neighborhoods(vectors: &[Vec<f64>], eps: f64) -> Vec<Vec<usize>> {
    (0..vectors.len())
        .into_par_iter()
        .map(|i| (0..vectors.len()).filter(|&j| cosine_distance(&vectors[i], &vectors[j]) <= eps).collect())
        .collect()
}

/// DBSCAN over unit vectors. Clusters are numbered by their lowest-index
/// core point; a border point joins the cluster of its lowest-index core
/// neighbor.
pub fn dbscan_vectors(vectors: &[Vec<f64>], params: ClusterParams) -> (Vec<Option<usize>>, Vec<bool>) {
    let n = vectors.len();
    let neighbors = neighborhoods(vectors, params.eps);
    let core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= params.min_pts).collect();
    let mut labels: Vec<Option<usize>> = vec![None; n];
    let mut next = 0;
    for start in 0..n {
        if !core[start] || labels[start].is_some() {
            continue;
        }
        labels[start] = Some(next);
        let mut queue = VecDeque::from([start]);
        while let Some(p) = queue.pop_front() {
            for &q in &neighbors[p] {
                if core[q] && labels[q].is_none() {
                    labels[q] = Some(next);
                    queue.push_back(q);
                }
            }
        }
        next += 1;
    }
    for i in 0..n {
        if !core[i] {
            labels[i] = neighbors[i].iter().find(|&&j| core[j]).and_then(|&j| labels[j]);
        }
    }
    (labels, core)
}

pub fn dbscan(batch: &EmbeddingBatch, params: ClusterParams) -> Result<ClusterAssignment, TopicError> {
    if !(params.eps > 0.0) || params.min_pts == 0 {
        return Err(TopicError::BadParams(params));
    }
    let (labels, core) = dbscan_vectors(&batch.vectors, params);
    Ok(ClusterAssignment { params, term_ids: batch.term_ids.clone(), labels, core })
}
