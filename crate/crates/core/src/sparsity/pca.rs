//! Two-component PCA of concatenated `(s, a, s')` samples.
//!
//! Each coordinate is z-scored with population statistics; coordinates with
//! zero variance are dropped before the covariance is formed. Eigenvector signs
//! are fixed so the largest-magnitude loading is positive.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::combined_sparsity_value;
use crate::rollout::Dataset;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    /// `(pc1, pc2)` per sample, dataset order.
    pub coords: Vec<[f64; 2]>,
    /// Combined sparsity value per sample.
    pub colors: Vec<f64>,
    /// Variance captured by each component.
    pub explained_variance: [f64; 2],
    /// Indices into the concatenated vector that survived the variance filter.
    pub kept_dims: Vec<usize>,
}

/// Rows of standardized features, the kept column indices, and nothing else.
pub(crate) fn standardize(rows: &[Vec<f64>]) -> (DMatrix<f64>, Vec<usize>) {
    let n = rows.len();
    let dim = rows.first().map_or(0, Vec::len);
    let mut kept = Vec::new();
    let mut cols: Vec<Vec<f64>> = Vec::new();
    for j in 0..dim {
        let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n as f64;
        let var = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        // relative cut so constant coordinates with rounding noise are dropped
        if !(sd > 1e-12 * (1.0 + mean.abs())) {
            continue;
        }
        kept.push(j);
        cols.push(rows.iter().map(|r| (r[j] - mean) / sd).collect());
    }
    let z = DMatrix::from_fn(n, kept.len(), |i, k| cols[k][i]);
    (z, kept)
}

/// Top-2 principal components of `[s, a, s']` for every sample, paired with
/// the sample's combined sparsity at `tau`.
pub fn pca_embedding_2d(d: &Dataset, tau: f64) -> Result<Embedding> {
    let n = d.num_samples();
    if n < 3 {
        return Err(Error::Empty(format!("PCA needs at least 3 samples, got {n}")));
    }
    let rows: Vec<Vec<f64>> = d
        .samples()
        .map(|s| {
            let mut r = s.input();
            r.extend_from_slice(&s.s_next);
            r
        })
        .collect();
    let colors = d
        .samples()
        .map(|s| combined_sparsity_value(&s.j_state, &s.j_action, tau))
        .collect::<Result<Vec<f64>>>()?;

    let (z, kept) = standardize(&rows);
    let k = kept.len();
    let mut coords = vec![[0.0; 2]; n];
    let mut explained = [0.0; 2];
    if k > 0 {
        let cov = (z.transpose() * &z) / n as f64;
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        for (c, &idx) in order.iter().take(2).enumerate() {
            let mut v = eig.eigenvectors.column(idx).into_owned();
            let pivot = v.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap_or(0.0);
            if pivot < 0.0 {
                v = -v;
            }
            let proj = &z * v;
            for (i, p) in proj.iter().enumerate() {
                coords[i][c] = *p;
            }
            explained[c] = eig.eigenvalues[idx].max(0.0);
        }
    }
    Ok(Embedding {
        coords,
        colors,
        explained_variance: explained,
        kept_dims: kept,
    })
}
