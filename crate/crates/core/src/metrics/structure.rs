//! Structure-set metrics: cluster diversity, novelty, designability hook.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{tm_proxy, Backbone};

pub const DEFAULT_TM_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diversity {
    /// Clusters per sample.
    pub ratio: f64,
    pub n_clusters: usize,
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        Self((0..n).collect())
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.0[i] != i {
            self.0[i] = self.0[self.0[i]];
            i = self.0[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Single-linkage clusters from a symmetric similarity matrix; returns per-item cluster ids.
pub fn single_linkage(similarity: &[Vec<f64>], threshold: f64) -> Vec<usize> {
    let n = similarity.len();
    let mut uf = UnionFind::new(n);
    for i in 0..n {
        for j in i + 1..n {
            if similarity[i][j] >= threshold {
                uf.union(i, j);
            }
        }
    }
    let mut ids = BTreeMap::new();
    (0..n)
        .map(|i| {
            let root = uf.find(i);
            let next = ids.len();
            *ids.entry(root).or_insert(next)
        })
        .collect()
}

pub fn tm_matrix(set: &[Backbone]) -> Result<Vec<Vec<f64>>> {
    let n = set.len();
    let mut m = vec![vec![1.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let s = tm_proxy(&set[i], &set[j])?;
            m[i][j] = s;
            m[j][i] = s;
        }
    }
    Ok(m)
}

pub fn diversity_from_matrix(similarity: &[Vec<f64>], threshold: f64) -> Result<Diversity> {
    if similarity.is_empty() {
        return Err(Error::InvalidArgument("diversity needs at least one sample".into()));
    }
    let ids = single_linkage(similarity, threshold);
    let n_clusters = ids.iter().max().map_or(0, |m| m + 1);
    Ok(Diversity {
        ratio: n_clusters as f64 / similarity.len() as f64,
        n_clusters,
    })
}

/// Single-linkage clustering under `tm_proxy ≥ threshold`. All chains must share one length.
pub fn cluster_diversity(set: &[Backbone], threshold: f64) -> Result<Diversity> {
    if let Some(first) = set.first() {
        if set.iter().any(|b| b.len() != first.len()) {
            return Err(Error::Shape("cluster_diversity needs equal-length chains".into()));
        }
    }
    diversity_from_matrix(&tm_matrix(set)?, threshold)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Novelty {
    /// Mean over samples of the best `tm_proxy` against same-length references.
    pub mean_max_tm: f64,
    pub n_used: usize,
    pub n_skipped: usize,
}

/// Lower is more novel. Samples with no same-length reference are skipped.
pub fn novelty(samples: &[Backbone], reference: &[Backbone]) -> Result<Novelty> {
    let mut buckets: BTreeMap<usize, Vec<&Backbone>> = BTreeMap::new();
    for r in reference {
        buckets.entry(r.len()).or_default().push(r);
    }
    let mut sum = 0.0;
    let mut used = 0;
    for s in samples {
        let Some(bucket) = buckets.get(&s.len()) else {
            continue;
        };
        let mut best = f64::NEG_INFINITY;
        for r in bucket {
            best = best.max(tm_proxy(s, r)?);
        }
        sum += best;
        used += 1;
    }
    let skipped = samples.len() - used;
    if skipped > 0 {
        log::warn!("novelty: {skipped} samples without a same-length reference skipped");
    }
    Ok(Novelty {
        mean_max_tm: if used == 0 { f64::NAN } else { sum / used as f64 },
        n_used: used,
        n_skipped: skipped,
    })
}

/// Fraction of samples whose externally computed self-consistency RMSD is at most `cutoff` Å.
///
/// Inverse folding and structure prediction are out of scope; callers supply the values.
pub fn designability(sc_rmsd: &[f64], cutoff: f64) -> Result<f64> {
    if sc_rmsd.is_empty() {
        return Err(Error::InvalidArgument("no scRMSD values".into()));
    }
    if sc_rmsd.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidArgument("scRMSD values must be finite and >= 0".into()));
    }
    Ok(sc_rmsd.iter().filter(|&&v| v <= cutoff).count() as f64 / sc_rmsd.len() as f64)
}
