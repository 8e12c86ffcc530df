//! Open-loop noise policies, trajectory collection, and dataset persistence.

use std::collections::BTreeMap;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envs::{self, EnvSpec};
use crate::{Error, Result};

mod io;
mod noise;

pub use io::{load_dataset, save_dataset, DATASET_FORMAT_VERSION, FIELD_FILES, MANIFEST_FILE};
pub use noise::colored_noise_sequence;

/// One transition with its Jacobians.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub t: usize,
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub s_next: Vec<f64>,
    pub j_state: Array2<f64>,
    pub j_action: Array2<f64>,
}

impl Sample {
    /// Concatenated model input `[s, a]`.
    pub fn input(&self) -> Vec<f64> {
        let mut x = self.s.clone();
        x.extend_from_slice(&self.a);
        x
    }

    /// `[j_state | j_action]`, shape `d_s x (d_s + d_a)`.
    pub fn joint_jacobian(&self) -> Array2<f64> {
        ndarray::concatenate![ndarray::Axis(1), self.j_state, self.j_action]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    White,
    Colored,
}

/// Open-loop noise policy: `a_t = centre + half_width * clip(scale * n_t, -1, 1)`
/// with `n_t` a unit-variance colored-noise sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyDescriptor {
    pub kind: PolicyKind,
    pub beta: f64,
    pub scale: f64,
    pub seed: u64,
}

impl PolicyDescriptor {
    pub fn white(scale: f64, seed: u64) -> Self {
        PolicyDescriptor {
            kind: PolicyKind::White,
            beta: 0.0,
            scale,
            seed,
        }
    }

    pub fn colored(beta: f64, scale: f64, seed: u64) -> Self {
        PolicyDescriptor {
            kind: PolicyKind::Colored,
            beta,
            scale,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=3.0).contains(&self.beta) {
            return Err(Error::Parameter(format!(
                "policy beta must lie in [0, 3], got {}",
                self.beta
            )));
        }
        if self.kind == PolicyKind::White && self.beta != 0.0 {
            return Err(Error::Parameter("white policy requires beta = 0".into()));
        }
        if !(self.scale > 0.0 && self.scale <= 1.0) {
            return Err(Error::Parameter(format!(
                "policy scale must lie in (0, 1], got {}",
                self.scale
            )));
        }
        Ok(())
    }
}

/// Dataset header. Serialized as `manifest.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub env: String,
    pub d_s: usize,
    pub d_a: usize,
    pub dt: f64,
    pub horizon: usize,
    /// Full parameter set of the environment (defaults plus overrides).
    pub params: BTreeMap<String, f64>,
    pub episodes: usize,
    pub seed: u64,
    pub episode_seeds: Vec<u64>,
    pub episode_lengths: Vec<usize>,
    /// Episodes cut short by a simulation divergence.
    pub truncated: Vec<bool>,
    pub policy: PolicyDescriptor,
    /// SHA-256 over the binary field files, hex encoded.
    pub content_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub episodes: Vec<Vec<Sample>>,
}

impl Dataset {
    /// An episode-free dataset for `env`.
    pub fn empty(env: &EnvSpec, policy: PolicyDescriptor, seed: u64) -> Self {
        let mut d = Dataset {
            manifest: Manifest {
                format_version: DATASET_FORMAT_VERSION,
                env: env.name.clone(),
                d_s: env.d_s,
                d_a: env.d_a,
                dt: env.dt,
                horizon: env.horizon,
                params: env.params.clone(),
                episodes: 0,
                seed,
                episode_seeds: vec![],
                episode_lengths: vec![],
                truncated: vec![],
                policy,
                content_hash: String::new(),
                config_hash: None,
            },
            episodes: vec![],
        };
        d.manifest.content_hash = io::content_hash(&d);
        d
    }

    pub fn num_samples(&self) -> usize {
        self.episodes.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.num_samples() == 0
    }

    pub fn samples(&self) -> impl Iterator<Item = &Sample> {
        self.episodes.iter().flatten()
    }

    pub fn d_s(&self) -> usize {
        self.manifest.d_s
    }

    pub fn d_a(&self) -> usize {
        self.manifest.d_a
    }

    /// Rebuilds the environment the data was collected from.
    pub fn env(&self) -> Result<EnvSpec> {
        envs::make_env(&self.manifest.env, &self.manifest.params)
    }

    /// New dataset holding only the given episodes, manifest updated to match.
    pub fn select_episodes(&self, keep: &[usize]) -> Dataset {
        let m = &self.manifest;
        let mut out = Dataset {
            manifest: Manifest {
                episodes: keep.len(),
                episode_seeds: keep.iter().map(|&i| m.episode_seeds[i]).collect(),
                episode_lengths: keep.iter().map(|&i| m.episode_lengths[i]).collect(),
                truncated: keep.iter().map(|&i| m.truncated[i]).collect(),
                ..m.clone()
            },
            episodes: keep.iter().map(|&i| self.episodes[i].clone()).collect(),
        };
        out.manifest.content_hash = io::content_hash(&out);
        out
    }
}

struct EpisodeOutcome {
    samples: Vec<Sample>,
    truncated: bool,
}

fn run_episode(env: &EnvSpec, policy: &PolicyDescriptor, reset_seed: u64, noise_seed: u64) -> Result<EpisodeOutcome> {
    let beta = match policy.kind {
        PolicyKind::White => 0.0,
        PolicyKind::Colored => policy.beta,
    };
    let noise = colored_noise_sequence(beta, env.horizon.max(2), env.d_a, noise_seed)?;
    let mut state = envs::reset(env, reset_seed);
    let mut samples = Vec::with_capacity(env.horizon);
    for t in 0..env.horizon {
        let a: Vec<f64> = (0..env.d_a)
            .map(|k| {
                let (lo, hi) = (env.action_low[k], env.action_high[k]);
                let u = (policy.scale * noise[[t, k]]).clamp(-1.0, 1.0);
                0.5 * (lo + hi) + 0.5 * (hi - lo) * u
            })
            .collect();
        match envs::step_with_jacobians(env, &state, &a) {
            Ok((next, jac)) => {
                samples.push(Sample {
                    t,
                    s: state.values,
                    a,
                    s_next: next.values.clone(),
                    j_state: jac.j_state,
                    j_action: jac.j_action,
                });
                state = next;
            }
            Err(Error::Divergence { .. }) => {
                return Ok(EpisodeOutcome {
                    samples,
                    truncated: true,
                })
            }
            Err(e) => return Err(e),
        }
    }
    Ok(EpisodeOutcome {
        samples,
        truncated: false,
    })
}

/// Rolls out `episodes` episodes of length `env.horizon`.
///
/// Episode `k` resets with seed `seed + k` and draws its actions from noise
/// seed `policy.seed + k`; episodes run in parallel and are assembled in
/// index order, so the result is independent of thread count.
pub fn collect(env: &EnvSpec, policy: &PolicyDescriptor, episodes: usize, seed: u64) -> Result<Dataset> {
    if episodes < 1 {
        return Err(Error::Parameter("collect needs at least one episode".into()));
    }
    policy.validate()?;
    let outcomes: Vec<EpisodeOutcome> = (0..episodes)
        .into_par_iter()
        .map(|k| {
            run_episode(
                env,
                policy,
                seed.wrapping_add(k as u64),
                policy.seed.wrapping_add(k as u64),
            )
        })
        .collect::<Result<_>>()?;

    let mut d = Dataset::empty(env, policy.clone(), seed);
    d.manifest.episodes = episodes;
    d.manifest.episode_seeds = (0..episodes).map(|k| seed.wrapping_add(k as u64)).collect();
    d.manifest.episode_lengths = outcomes.iter().map(|o| o.samples.len()).collect();
    d.manifest.truncated = outcomes.iter().map(|o| o.truncated).collect();
    d.episodes = outcomes.into_iter().map(|o| o.samples).collect();
    d.manifest.content_hash = io::content_hash(&d);
    Ok(d)
}
