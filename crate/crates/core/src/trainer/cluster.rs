//! Agglomerative clustering of embeddings and cluster purity.

use serde::Serialize;

use crate::autodiff::cosine;
use crate::config::{Distance, Linkage};
use crate::error::{AmnError, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClusteringResult {
    /// Cluster of each item, numbered by first member.
    pub assignment: Vec<usize>,
    pub k: usize,
    pub purity: f64,
}

fn distance(a: &[f64], b: &[f64], kind: Distance) -> f64 {
    match kind {
        Distance::Cosine => 1.0 - cosine(a, b),
        Distance::Euclidean => a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt(),
    }
}

/// Merges the closest pair of clusters until `k` remain. Ties go to the
/// pair with the lowest indices.
pub fn agglomerative(
    items: &[Vec<f64>],
    k: usize,
    linkage: Linkage,
    dist: Distance,
) -> Result<Vec<usize>> {
    let n = items.len();
    if k < 1 || k > n {
        return Err(AmnError::InvalidArgument(format!(
            "cannot form {k} clusters from {n} items"
        )));
    }
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v = distance(&items[i], &items[j], dist);
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    let mut alive = vec![true; n];
    let mut size = vec![1usize; n];
    let mut owner: Vec<usize> = (0..n).collect();
    for _ in 0..n - k {
        let mut best: Option<(usize, usize, f64)> = None;
        for i in (0..n).filter(|&i| alive[i]) {
            for j in (i + 1..n).filter(|&j| alive[j]) {
                if best.is_none_or(|(_, _, b)| d[i][j] < b) {
                    best = Some((i, j, d[i][j]));
                }
            }
        }
        let (i, j, _) = best.expect("more than k clusters remain");
        for m in (0..n).filter(|&m| alive[m] && m != i && m != j) {
            let v = match linkage {
                Linkage::Average => {
                    (size[i] as f64 * d[i][m] + size[j] as f64 * d[j][m])
                        / (size[i] + size[j]) as f64
                }
                Linkage::Single => d[i][m].min(d[j][m]),
                Linkage::Complete => d[i][m].max(d[j][m]),
            };
            d[i][m] = v;
            d[m][i] = v;
        }
        alive[j] = false;
        size[i] += size[j];
        for o in owner.iter_mut().filter(|o| **o == j) {
            *o = i;
        }
    }
    let mut label = vec![usize::MAX; n];
    let mut next = 0;
    Ok(owner
        .iter()
        .map(|&o| {
            if label[o] == usize::MAX {
                label[o] = next;
                next += 1;
            }
            label[o]
        })
        .collect())
}

/// `(1/N) Σ_g max_c |g ∩ c|`, summing over the ground-truth clusters `g`.
pub fn purity(truth: &[usize], predicted: &[usize]) -> Result<f64> {
    if truth.len() != predicted.len() || truth.is_empty() {
        return Err(AmnError::InvalidArgument(format!(
            "purity over {} labels and {} assignments",
            truth.len(),
            predicted.len()
        )));
    }
    let mut overlap: std::collections::BTreeMap<usize, std::collections::HashMap<usize, usize>> =
        Default::default();
    for (&g, &c) in truth.iter().zip(predicted) {
        *overlap.entry(g).or_default().entry(c).or_default() += 1;
    }
    let hits: usize = overlap
        .values()
        .map(|m| m.values().copied().max().unwrap_or(0))
        .sum();
    Ok(hits as f64 / truth.len() as f64)
}

pub fn cluster_and_purity(
    items: &[Vec<f64>],
    truth: &[usize],
    k: usize,
    linkage: Linkage,
    dist: Distance,
) -> Result<ClusteringResult> {
    let assignment = agglomerative(items, k, linkage, dist)?;
    let purity = purity(truth, &assignment)?;
    Ok(ClusteringResult {
        assignment,
        k,
        purity,
    })
}
