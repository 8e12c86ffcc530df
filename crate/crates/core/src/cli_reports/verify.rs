//! Self-checks run by `dynasparse verify`: environment Jacobians against
//! central differences, causal-mask recovery, normalization identities, loss
//! gradients against parameter-space differences, and the run-length encoder
//! against a naive one.

use std::collections::BTreeMap;

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Provenance, RunConfig};
use crate::diff;
use crate::envs::{joint_jacobian, joint_jacobian_fd, make_env, EnvSpec, ENV_NAMES};
use crate::normalization::{fit_stats, normalize_jacobian, NormStats};
use crate::rollout::{self, PolicyDescriptor};
use crate::sparsity::{global_zero_mask, run_lengths};
use crate::surrogate::{gradient_check, Batch, LossMode, LossSpec, MlpModel};
use crate::{Result, TAU_ENV};

/// Adds `delta` to element `(row, col)` of every forward-mode Jacobian of
/// `env` before comparison. Exists to prove the check can fail.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Corruption {
    pub env: String,
    pub row: usize,
    pub col: usize,
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    /// Random in-range `(s, a)` per environment.
    pub samples: usize,
    pub fd_step: f64,
    pub jacobian_tol: f64,
    /// Episodes collected for the causal-mask check.
    pub mask_episodes: usize,
    pub gradient_batches: usize,
    pub gradient_tol: f64,
    pub normalization_tol: f64,
    pub corrupt: Option<Corruption>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            samples: 1000,
            fd_step: 1e-6,
            jacobian_tol: 1e-5,
            mask_episodes: 10,
            gradient_batches: 10,
            gradient_tol: 1e-4,
            normalization_tol: 1e-5,
            corrupt: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub max_error: f64,
    pub tolerance: f64,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    #[serde(flatten)]
    pub provenance: Provenance,
    pub config: VerifyConfig,
    pub checks: Vec<CheckResult>,
    pub all_passed: bool,
}

fn check(name: impl Into<String>, max_error: f64, tolerance: f64, extra_ok: bool, detail: String) -> CheckResult {
    CheckResult {
        name: name.into(),
        passed: extra_ok && max_error <= tolerance,
        max_error,
        tolerance,
        detail,
    }
}

/// Largest `|a - b|` entry, scaled by `1 + max|b|`, and its position.
fn worst_entry(a: &Array2<f64>, b: &Array2<f64>) -> (f64, (usize, usize)) {
    let scale = 1.0 + diff::max_abs(b);
    let mut worst = (f64::NEG_INFINITY, (0, 0));
    for ((ij, x), y) in a.indexed_iter().zip(b.iter()) {
        let e = (x - y).abs() / scale;
        if e > worst.0 || e.is_nan() {
            worst = (e, ij);
        }
    }
    worst
}

fn jacobian_check(env: &EnvSpec, cfg: &VerifyConfig, seed: u64) -> Result<CheckResult> {
    let h = cfg.fd_step;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let corrupt = cfg.corrupt.as_ref().filter(|c| c.env == env.name);
    let mut worst = (0.0f64, 0usize, (0usize, 0usize));
    let mut skipped = 0usize;
    for k in 0..cfg.samples {
        let s = env.sample_state(&mut rng);
        let a = env.sample_action(&mut rng);
        if env.switch_distance(&s).is_some_and(|d| d < h) {
            skipped += 1;
            continue;
        }
        let mut fwd = joint_jacobian(env, &s, &a)?;
        if let Some(c) = corrupt {
            if let Some(v) = fwd.get_mut((c.row, c.col)) {
                *v += c.delta;
            }
        }
        let fd = joint_jacobian_fd(env, &s, &a, h)?;
        let (e, ij) = worst_entry(&fwd, &fd);
        if e > worst.0 || e.is_nan() {
            worst = (e, k, ij);
        }
    }
    let skip_ok = (skipped as f64) < 0.01 * cfg.samples as f64;
    let (e, k, (i, j)) = worst;
    Ok(check(
        format!("jacobian_fd/{}", env.name),
        e,
        cfg.jacobian_tol,
        skip_ok,
        format!(
            "{} samples, {skipped} skipped within {h} of a contact switch; worst element ({i}, {j}) of sample {k}",
            cfg.samples
        ),
    ))
}

fn mask_check(env: &EnvSpec, known: &Array2<bool>, cfg: &VerifyConfig, seed: u64) -> Result<CheckResult> {
    let d = rollout::collect(env, &PolicyDescriptor::colored(1.0, 1.0, seed), cfg.mask_episodes, seed)?;
    let g = global_zero_mask(&d, TAU_ENV)?;
    let (mut fp, mut fn_) = (0usize, 0usize);
    let mut first = None;
    for ((i, j), &dep) in known.indexed_iter() {
        let zero = if j < env.d_s {
            g.state.mask[(i, j)]
        } else {
            g.action.mask[(i, j - env.d_s)]
        };
        if zero == dep {
            if zero {
                fp += 1;
            } else {
                fn_ += 1;
            }
            first.get_or_insert((i, j));
        }
    }
    let mism = fp + fn_;
    let detail = match first {
        None => format!("{} samples, mask matches", d.num_samples()),
        Some((i, j)) => format!(
            "{} samples, {fp} spurious zeros, {fn_} missed zeros; first mismatch at ({i}, {j})",
            d.num_samples()
        ),
    };
    Ok(check(format!("causal_mask/{}", env.name), mism as f64, 0.0, true, detail))
}

fn normalization_check(env: &EnvSpec, cfg: &VerifyConfig, seed: u64) -> Result<Vec<CheckResult>> {
    let d = rollout::collect(env, &PolicyDescriptor::colored(1.0, 1.0, seed), 1, seed)?;
    let stats = fit_stats(&d)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let d_in = env.d_in();

    let mut rt = 0.0f64;
    for _ in 0..10_000 {
        let x: Vec<f64> = (0..d_in).map(|_| 10.0 * rng.random::<f64>() - 5.0).collect();
        let back = stats.denormalize_input(&stats.normalize_input(&x)?)?;
        for (a, b) in x.iter().zip(&back) {
            rt = rt.max((a - b).abs() / (1.0 + a.abs()));
        }
    }

    let composed = |stats: &NormStats, xn: &[f64]| -> Result<Vec<f64>> {
        let x = stats.denormalize_input(xn)?;
        stats.normalize_output(&env.transition_joint(&x))
    };
    let mut jerr = 0.0f64;
    let mut skipped = 0usize;
    // a normalized step moves raw inputs by up to sigma times as much
    let reach = cfg.fd_step * stats.sigma_in.iter().fold(1.0f64, |m, &v| m.max(v + stats.epsilon));
    for s in d.samples().step_by(7).take(100) {
        if env.switch_distance(&s.s).is_some_and(|dist| dist < reach) {
            skipped += 1;
            continue;
        }
        let jn = normalize_jacobian(&s.joint_jacobian(), &stats)?;
        let xn = stats.normalize_input(&s.input())?;
        let fd = diff::jacobian_fd(|x: &[f64]| composed(&stats, x).expect("dimension"), &xn, cfg.fd_step)?;
        jerr = jerr.max(diff::relative_max_error(&jn, &fd));
    }

    let mut zeros_kept = true;
    for _ in 0..1000 {
        let j = Array2::from_shape_fn((env.d_s, d_in), |_| {
            if rng.random::<f64>() < 0.5 {
                0.0
            } else {
                Distribution::<f64>::sample(&StandardNormal, &mut rng)
            }
        });
        let jn = normalize_jacobian(&j, &stats)?;
        zeros_kept &= j.iter().zip(jn.iter()).all(|(&a, &b)| (a == 0.0) == (b == 0.0));
    }

    Ok(vec![
        check("normalization/round_trip", rt, 1e-12, true, "10000 random vectors".into()),
        check(
            "normalization/jacobian_fd",
            jerr,
            cfg.normalization_tol,
            true,
            format!("100 {} samples, {skipped} near a contact switch skipped", env.name),
        ),
        check(
            "normalization/zeros_preserved",
            if zeros_kept { 0.0 } else { 1.0 },
            0.0,
            true,
            "1000 random sparse matrices".into(),
        ),
    ])
}

/// A 2-4-2 network with dropout 0.25, random biases, and a batch whose
/// ground-truth Jacobians are about 40% exact zeros.
pub fn gradient_problem(seed: u64) -> (MlpModel, Batch) {
    let mut model = MlpModel::new(&[2, 4, 2], 0.25, seed).expect("valid widths");
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(100));
    let mut normal = move || -> f64 { StandardNormal.sample(&mut rng) };
    for b in model.biases.iter_mut() {
        b.mapv_inplace(|_| 0.3 * normal());
    }
    let bsz = 6;
    let x = Array2::from_shape_simple_fn((bsz, 2), &mut normal);
    let y = Array2::from_shape_simple_fn((bsz, 2), &mut normal);
    let mut jac = Array3::from_shape_simple_fn((bsz, 2, 2), &mut normal);
    let mut r2 = ChaCha8Rng::seed_from_u64(seed.wrapping_add(200));
    jac.mapv_inplace(|v| if r2.random::<f64>() < 0.4 { 0.0 } else { v });
    let batch = Batch {
        x,
        y,
        jac: Some(jac),
        dropout_seed: Some(seed),
    };
    (model, batch)
}

fn gradient_checks(cfg: &VerifyConfig, seed: u64) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for mode in LossMode::ALL {
        let mut worst = (0.0f64, 0u64);
        for b in 0..cfg.gradient_batches as u64 {
            let (model, batch) = gradient_problem(seed.wrapping_add(b));
            let e = gradient_check(&model, &batch, &LossSpec::new(mode), 1e-6)?;
            if e > worst.0 || e.is_nan() {
                worst = (e, b);
            }
        }
        out.push(check(
            format!("gradient/{mode}"),
            worst.0,
            cfg.gradient_tol,
            true,
            format!("{} batches on 2-4-2, worst batch {}", cfg.gradient_batches, worst.1),
        ));
    }
    Ok(out)
}

fn naive_runs(seq: &[bool]) -> BTreeMap<(bool, usize), usize> {
    let mut out = BTreeMap::new();
    let mut start = 0;
    for t in 1..=seq.len() {
        if t == seq.len() || seq[t] != seq[start] {
            *out.entry((seq[start], t - start)).or_insert(0) += 1;
            start = t;
        }
    }
    out
}

fn run_length_check(seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0usize;
    for _ in 0..1000 {
        let n = rng.random_range(1..200);
        let p = rng.random::<f64>();
        let seq: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < p).collect();
        let mut got = BTreeMap::new();
        for r in run_lengths(&seq) {
            *got.entry(r).or_insert(0) += 1;
        }
        if got != naive_runs(&seq) {
            bad += 1;
        }
    }
    check(
        "run_lengths/oracle",
        bad as f64,
        0.0,
        true,
        "1000 random sequences against a naive encoder".into(),
    )
}

/// Runs every check. `cfg.env_params` apply to the environment named by
/// `cfg.env`; the others use their defaults.
pub fn cmd_verify(cfg: &RunConfig) -> Result<VerifyReport> {
    let v = &cfg.verify;
    let mut checks = Vec::new();
    let empty = BTreeMap::new();
    for (k, name) in ENV_NAMES.iter().enumerate() {
        let params = if *name == cfg.env { &cfg.env_params } else { &empty };
        let env = make_env(name, params)?;
        checks.push(jacobian_check(&env, v, cfg.seed.wrapping_add(k as u64))?);
    }
    for name in ["decoupled_pair", "reacher2"] {
        let env = make_env(name, if name == cfg.env { &cfg.env_params } else { &empty })?;
        let known = env.known_mask.clone().expect("environment has a known mask");
        checks.push(mask_check(&env, &known, v, cfg.seed)?);
    }
    let env = make_env(&cfg.env, &cfg.env_params)?;
    checks.extend(normalization_check(&env, v, cfg.seed)?);
    checks.extend(gradient_checks(v, cfg.seed)?);
    checks.push(run_length_check(cfg.seed));
    let all_passed = checks.iter().all(|c| c.passed);
    Ok(VerifyReport {
        provenance: cfg.provenance(),
        config: v.clone(),
        checks,
        all_passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cli_reports::Overrides;

    fn quick() -> RunConfig {
        let mut c = RunConfig::default().apply(&Overrides::default());
        c.verify.samples = 50;
        c.verify.mask_episodes = 1;
        c.verify.gradient_batches = 2;
        c
    }

    #[test]
    fn quick_verify_passes() {
        let r = cmd_verify(&quick()).unwrap();
        for c in &r.checks {
            assert!(c.passed, "{c:?}");
        }
        assert!(r.all_passed);
        assert!(r.checks.iter().filter(|c| c.name.starts_with("jacobian_fd/")).count() == ENV_NAMES.len());
    }

    #[test]
    fn corruption_names_the_element() {
        let mut c = quick();
        c.verify.corrupt = Some(Corruption {
            env: "reacher2".into(),
            row: 2,
            col: 5,
            delta: 1e-3,
        });
        let r = cmd_verify(&c).unwrap();
        assert!(!r.all_passed);
        let bad: Vec<_> = r.checks.iter().filter(|c| !c.passed).collect();
        assert_eq!(bad.len(), 1);
        assert_eq!(bad[0].name, "jacobian_fd/reacher2");
        assert!(bad[0].detail.contains("element (2, 5)"), "{}", bad[0].detail);
    }

    #[test]
    fn naive_encoder_agrees_on_edges() {
        assert_eq!(naive_runs(&[true]), BTreeMap::from([((true, 1), 1)]));
        assert_eq!(
            naive_runs(&[false, false, true, false]),
            BTreeMap::from([((false, 2), 1), ((true, 1), 1), ((false, 1), 1)])
        );
    }
}
