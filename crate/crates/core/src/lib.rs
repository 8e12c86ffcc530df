//! Jacobian sparsity analysis for differentiable dynamical systems.
//!
//! The toolkit collects transitions `s' = step(s, a)` together with the exact
//! state and action Jacobians from a set of analytic environments, measures how
//! sparse those Jacobians are (globally, per state, and over time), and trains
//! MLP surrogate models with Jacobian-aware losses to check whether they pick
//! up the same structure.
//!
//! Module map:
//!
//! * [`diff`]: forward-mode dual numbers and a finite-difference oracle.
//! * [`envs`]: analytic environments with known causal structure.
//! * [`rollout`]: colored-noise policies, trajectory collection, dataset files.
//! * [`normalization`]: Z-score statistics and the induced Jacobian scaling.
//! * [`sparsity`]: zero masks, zero fractions, histograms, run lengths, PCA export.
//! * [`surrogate`]: MLP model, the five loss modes, exact gradients, training.
//! * [`cli_reports`]: the command implementations behind the `dynasparse` binary.

pub mod cli_reports;
pub mod diff;
pub mod envs;
mod error;
pub mod normalization;
pub mod rollout;
pub mod sparsity;
pub mod surrogate;

pub use error::{Error, Result};

/// Zero threshold for environment (ground-truth) Jacobians.
pub const TAU_ENV: f64 = 1e-12;

/// Zero threshold for learned-model Jacobians.
pub const TAU_MODEL: f64 = 1e-6;
