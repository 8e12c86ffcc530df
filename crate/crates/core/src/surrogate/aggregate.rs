//! Summaries across seeds and environments.
//!
//! Errors from different environments live on different scales; before
//! pooling them, each environment's values are min-max scaled to `[0, 1]`
//! over all runs of that environment.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Five-number summary; quantiles interpolate linearly between order
/// statistics (`q = (n - 1) p`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl Quartiles {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("no values to summarize".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index: i });
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let pos = (v.len() - 1) as f64 * p;
            let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
            v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
        };
        Ok(Quartiles {
            min: v[0],
            q1: q(0.25),
            median: q(0.5),
            q3: q(0.75),
            max: v[v.len() - 1],
        })
    }
}

/// Scales `values` to `[0, 1]`; a constant input maps to zeros.
pub fn min_max_normalized(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    values
        .iter()
        .map(|&v| if span > 0.0 { (v - lo) / span } else { 0.0 })
        .collect()
}

/// One finished training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub env: String,
    pub mode: String,
    pub seed: u64,
    pub value: f64,
}

/// Per-mode quartiles of environment-wise min-max normalized values.
pub fn pooled_quartiles(runs: &[RunRecord]) -> Result<BTreeMap<String, Quartiles>> {
    let mut by_env: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in runs.iter().enumerate() {
        by_env.entry(&r.env).or_default().push(i);
    }
    let mut by_mode: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for idx in by_env.values() {
        let vals: Vec<f64> = idx.iter().map(|&i| runs[i].value).collect();
        for (&i, v) in idx.iter().zip(min_max_normalized(&vals)) {
            by_mode.entry(runs[i].mode.clone()).or_default().push(v);
        }
    }
    by_mode.into_iter().map(|(m, v)| Ok((m, Quartiles::of(&v)?))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quartiles_interpolate() {
        let q = Quartiles::of(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!((q.min, q.q1, q.median, q.q3, q.max), (1.0, 1.75, 2.5, 3.25, 4.0));
        let one = Quartiles::of(&[7.0]).unwrap();
        assert_eq!(one.q1, 7.0);
        assert!(Quartiles::of(&[]).is_err());
        assert!(Quartiles::of(&[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn min_max_edges() {
        assert_eq!(min_max_normalized(&[2.0, 4.0, 3.0]), vec![0.0, 1.0, 0.5]);
        assert_eq!(min_max_normalized(&[5.0, 5.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn pooling_is_per_environment() {
        let rec = |env: &str, mode: &str, value| RunRecord {
            env: env.into(),
            mode: mode.into(),
            seed: 0,
            value,
        };
        // env b is 1000x larger; after scaling both contribute equally
        let runs = [
            rec("a", "x", 1.0),
            rec("a", "y", 3.0),
            rec("b", "x", 1000.0),
            rec("b", "y", 3000.0),
        ];
        let q = pooled_quartiles(&runs).unwrap();
        assert_eq!(q["x"].max, 0.0);
        assert_eq!(q["y"].min, 1.0);
    }
}
