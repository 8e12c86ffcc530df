//! Run-length statistics of per-element zero patterns.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Block;
use crate::rollout::{Dataset, Sample};

/// Maximal runs of equal values, in order, as `(value, length)`.
pub fn run_lengths(seq: &[bool]) -> Vec<(bool, usize)> {
    let mut out: Vec<(bool, usize)> = Vec::new();
    for &b in seq {
        match out.last_mut() {
            Some((v, n)) if *v == b => *n += 1,
            _ => out.push((b, 1)),
        }
    }
    out
}

/// Run-length distributions of one Jacobian element over a dataset.
///
/// Histograms map run length to number of runs and exclude runs that span a
/// whole episode; those are listed separately in `full_episode_*`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ElementDurations {
    pub block: Block,
    pub row: usize,
    pub col: usize,
    pub zero_runs: BTreeMap<usize, usize>,
    pub nonzero_runs: BTreeMap<usize, usize>,
    pub full_episode_zero: Vec<usize>,
    pub full_episode_nonzero: Vec<usize>,
}

impl ElementDurations {
    fn new(block: Block, row: usize, col: usize) -> Self {
        ElementDurations {
            block,
            row,
            col,
            ..Default::default()
        }
    }

    fn add_episode(&mut self, seq: &[bool]) {
        let runs = run_lengths(seq);
        if let [(zero, len)] = runs[..] {
            if zero {
                self.full_episode_zero.push(len);
            } else {
                self.full_episode_nonzero.push(len);
            }
            return;
        }
        for (zero, len) in runs {
            let h = if zero { &mut self.zero_runs } else { &mut self.nonzero_runs };
            *h.entry(len).or_insert(0) += 1;
        }
    }

    fn merge(&mut self, other: ElementDurations) {
        for (k, v) in other.zero_runs {
            *self.zero_runs.entry(k).or_insert(0) += v;
        }
        for (k, v) in other.nonzero_runs {
            *self.nonzero_runs.entry(k).or_insert(0) += v;
        }
        self.full_episode_zero.extend(other.full_episode_zero);
        self.full_episode_nonzero.extend(other.full_episode_nonzero);
    }

    /// Total steps covered by all runs, excluded ones included.
    pub fn total_steps(&self) -> usize {
        let h = |m: &BTreeMap<usize, usize>| m.iter().map(|(l, c)| l * c).sum::<usize>();
        h(&self.zero_runs)
            + h(&self.nonzero_runs)
            + self.full_episode_zero.iter().sum::<usize>()
            + self.full_episode_nonzero.iter().sum::<usize>()
    }
}

fn episode_durations(ep: &[Sample], d_s: usize, d_a: usize, tau: f64) -> Vec<ElementDurations> {
    let mut out = Vec::with_capacity(d_s * (d_s + d_a));
    let mut seq = Vec::with_capacity(ep.len());
    for (block, cols) in [(Block::State, d_s), (Block::Action, d_a)] {
        for i in 0..d_s {
            for j in 0..cols {
                seq.clear();
                seq.extend(ep.iter().map(|s| {
                    let m = if block == Block::State { &s.j_state } else { &s.j_action };
                    m[[i, j]].abs() < tau
                }));
                let mut e = ElementDurations::new(block, i, j);
                e.add_episode(&seq);
                out.push(e);
            }
        }
    }
    out
}

/// Zero-run and nonzero-run length distributions for every state-Jacobian
/// element (row-major) followed by every action-Jacobian element.
pub fn run_length_durations(d: &Dataset, tau: f64) -> Vec<ElementDurations> {
    let (ds, da) = (d.d_s(), d.d_a());
    let per_episode: Vec<Vec<ElementDurations>> = d
        .episodes
        .par_iter()
        .filter(|ep| !ep.is_empty())
        .map(|ep| episode_durations(ep, ds, da, tau))
        .collect();
    let mut total = episode_durations(&[], ds, da, tau);
    for ep in per_episode {
        for (acc, e) in total.iter_mut().zip(ep) {
            acc.merge(e);
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_encoded_pattern() {
        assert_eq!(
            run_lengths(&[true, true, false, true]),
            vec![(true, 2), (false, 1), (true, 1)]
        );
        assert!(run_lengths(&[]).is_empty());
    }

    #[test]
    fn full_episode_runs_are_flagged() {
        let mut e = ElementDurations::new(Block::State, 0, 0);
        e.add_episode(&[true; 1000]);
        assert!(e.zero_runs.is_empty());
        assert_eq!(e.full_episode_zero, vec![1000]);
        e.add_episode(&[true, true, false, true]);
        assert_eq!(e.zero_runs, BTreeMap::from([(1, 1), (2, 1)]));
        assert_eq!(e.nonzero_runs, BTreeMap::from([(1, 1)]));
        assert_eq!(e.total_steps(), 1004);
    }

    proptest! {
        #[test]
        fn runs_partition_the_sequence(seq in prop::collection::vec(any::<bool>(), 0..200)) {
            let runs = run_lengths(&seq);
            prop_assert_eq!(runs.iter().map(|r| r.1).sum::<usize>(), seq.len());
            prop_assert!(runs.iter().all(|r| r.1 >= 1));
            prop_assert!(runs.windows(2).all(|w| w[0].0 != w[1].0));
            let rebuilt: Vec<bool> = runs.iter().flat_map(|&(v, n)| std::iter::repeat(v).take(n)).collect();
            prop_assert_eq!(rebuilt, seq);
        }
    }
}
