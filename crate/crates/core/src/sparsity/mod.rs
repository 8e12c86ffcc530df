//! Jacobian sparsity statistics.
//!
//! An entry counts as zero when `|J_ij| < tau`. A *global* zero is an entry
//! that is zero in every sample of a dataset. A missing causal edge forces a
//! global zero, so global zeros are an upper bound on the missing edges. A
//! zero first derivative at one point says nothing about the edge on its own.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rollout::{Dataset, Sample};
use crate::{Error, Result};

mod pca;
mod runs;

pub use pca::{pca_embedding_2d, Embedding};
pub use runs::{run_length_durations, run_lengths, ElementDurations};

/// Number of histogram bins over `[0, 1]`.
pub const HIST_BINS: usize = 10;

/// Which Jacobian a statistic is taken over.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Block {
    #[default]
    State,
    Action,
    Combined,
}

impl Block {
    pub fn name(self) -> &'static str {
        match self {
            Block::State => "state",
            Block::Action => "action",
            Block::Combined => "combined",
        }
    }
}

/// Below-threshold pattern of one matrix (`true` = zero).
#[derive(Clone, Debug, PartialEq)]
pub struct ZeroMask {
    pub mask: Array2<bool>,
    pub tau: f64,
}

impl ZeroMask {
    pub fn of(j: ArrayView2<f64>, tau: f64) -> Result<Self> {
        check_tau(tau)?;
        Ok(ZeroMask {
            mask: j.mapv(|v| v.abs() < tau),
            tau,
        })
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&z| z).count()
    }

    /// True where both masks are true.
    pub fn and(&mut self, j: ArrayView2<f64>) {
        let tau = self.tau;
        self.mask.zip_mut_with(&j, |m, v| *m &= v.abs() < tau);
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::Parameter(format!("threshold must be positive and finite, got {tau}")));
    }
    Ok(())
}

fn count_zeros(j: ArrayView2<f64>, tau: f64) -> usize {
    j.iter().filter(|v| v.abs() < tau).count()
}

/// Percentage `100 * count / total`.
pub fn percentage(count: usize, total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    100.0 * count as f64 / total as f64
}

/// Fraction of entries with `|J_ij| < tau`.
pub fn sparsity_value(j: &Array2<f64>, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    if j.is_empty() {
        return Err(Error::Empty("sparsity of an empty matrix".into()));
    }
    Ok(count_zeros(j.view(), tau) as f64 / j.len() as f64)
}

/// Sparsity of `[j_state | j_action]`.
pub fn combined_sparsity_value(j_state: &Array2<f64>, j_action: &Array2<f64>, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    if j_state.nrows() != j_action.nrows() {
        return Err(Error::Shape(format!(
            "state Jacobian has {} rows, action Jacobian {}",
            j_state.nrows(),
            j_action.nrows()
        )));
    }
    let total = j_state.len() + j_action.len();
    if total == 0 {
        return Err(Error::Empty("sparsity of an empty matrix".into()));
    }
    let zeros = count_zeros(j_state.view(), tau) + count_zeros(j_action.view(), tau);
    Ok(zeros as f64 / total as f64)
}

fn zeros_and_total(s: &Sample, tau: f64, which: Block) -> (usize, usize) {
    let zs = || count_zeros(s.j_state.view(), tau);
    let za = || count_zeros(s.j_action.view(), tau);
    match which {
        Block::State => (zs(), s.j_state.len()),
        Block::Action => (za(), s.j_action.len()),
        Block::Combined => (zs() + za(), s.j_state.len() + s.j_action.len()),
    }
}

fn nonempty(d: &Dataset, what: &str) -> Result<()> {
    if d.is_empty() {
        return Err(Error::Empty(format!("{what} of an empty dataset")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct GlobalZeros {
    pub state: ZeroMask,
    pub action: ZeroMask,
    pub state_count: usize,
    pub action_count: usize,
    /// `100 * state_count / d_s^2`.
    pub state_percent: f64,
    pub action_percent: f64,
}

/// Entries below `tau` in every sample.
pub fn global_zero_mask(d: &Dataset, tau: f64) -> Result<GlobalZeros> {
    check_tau(tau)?;
    nonempty(d, "global zero mask")?;
    let mut it = d.samples();
    let first = it.next().expect("non-empty");
    let mut state = ZeroMask::of(first.j_state.view(), tau)?;
    let mut action = ZeroMask::of(first.j_action.view(), tau)?;
    for s in it {
        state.and(s.j_state.view());
        action.and(s.j_action.view());
    }
    let (sc, ac) = (state.count(), action.count());
    Ok(GlobalZeros {
        state_percent: percentage(sc, state.mask.len()),
        action_percent: percentage(ac, action.mask.len()),
        state_count: sc,
        action_count: ac,
        state,
        action,
    })
}

/// Per-element zero percentages.
#[derive(Clone, Debug, PartialEq)]
pub struct ZeroFractions {
    pub state: Array2<f64>,
    pub action: Array2<f64>,
}

/// Percentage of steps each element is below `tau`, computed per episode and
/// then averaged over the non-empty episodes.
pub fn zero_fraction_matrix(d: &Dataset, tau: f64) -> Result<ZeroFractions> {
    check_tau(tau)?;
    nonempty(d, "zero fraction")?;
    let (ds, da) = (d.d_s(), d.d_a());
    let per_episode: Vec<(Array2<f64>, Array2<f64>)> = d
        .episodes
        .par_iter()
        .filter(|ep| !ep.is_empty())
        .map(|ep| {
            let mut cs = Array2::<usize>::zeros((ds, ds));
            let mut ca = Array2::<usize>::zeros((ds, da));
            for s in ep {
                cs.zip_mut_with(&s.j_state, |c, v| *c += (v.abs() < tau) as usize);
                ca.zip_mut_with(&s.j_action, |c, v| *c += (v.abs() < tau) as usize);
            }
            let n = ep.len();
            (cs.mapv(|c| percentage(c, n)), ca.mapv(|c| percentage(c, n)))
        })
        .collect();
    let k = per_episode.len() as f64;
    let mut state = Array2::zeros((ds, ds));
    let mut action = Array2::zeros((ds, da));
    for (s, a) in &per_episode {
        state += s;
        action += a;
    }
    Ok(ZeroFractions {
        state: state / k,
        action: action / k,
    })
}

/// Counts per bin of width 0.1 over `[0, 1]`; the last bin is closed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub mean: f64,
}

/// Bin index of the sparsity value `zeros / total`, decided in integer
/// arithmetic so values on a bin edge land in the upper bin.
pub fn hist_bin(zeros: usize, total: usize) -> usize {
    (HIST_BINS * zeros / total).min(HIST_BINS - 1)
}

pub fn hist_edges() -> Vec<f64> {
    (0..=HIST_BINS).map(|k| k as f64 / HIST_BINS as f64).collect()
}

/// Histogram and mean of per-sample sparsity values.
pub fn sparsity_histogram(d: &Dataset, tau: f64, which: Block) -> Result<Histogram> {
    check_tau(tau)?;
    nonempty(d, "sparsity histogram")?;
    let mut counts = vec![0usize; HIST_BINS];
    let mut sum = 0.0;
    let mut n = 0usize;
    for s in d.samples() {
        let (z, t) = zeros_and_total(s, tau, which);
        if t == 0 {
            return Err(Error::Empty("sparsity of an empty matrix".into()));
        }
        counts[hist_bin(z, t)] += 1;
        sum += z as f64 / t as f64;
        n += 1;
    }
    Ok(Histogram {
        edges: hist_edges(),
        counts,
        mean: sum / n as f64,
    })
}

/// Sparsity value at every step of one episode.
pub fn sparsity_timeseries(episode: &[Sample], tau: f64, which: Block) -> Vec<f64> {
    episode
        .iter()
        .map(|s| {
            let (z, t) = zeros_and_total(s, tau, which);
            z as f64 / t as f64
        })
        .collect()
}
