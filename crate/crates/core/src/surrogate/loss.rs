//! Training objectives and their exact parameter gradients.
//!
//! Every mode is `MSE(state) + lambda * term`:
//!
//! | mode                   | term                                              |
//! |------------------------|---------------------------------------------------|
//! | `state`                | 0                                                 |
//! | `state+jacobian_mse`   | mean `(J_model - J_true)^2`                       |
//! | `state+jacobian_mae`   | mean `|J_model - J_true|`                         |
//! | `state+jacobian_l1reg` | mean `|J_model|`                                  |
//! | `state+sae`            | mean `|J_model - J_true|` over `|J_true| < tau`   |
//!
//! The state term sees dropout; Jacobian terms use the dropout-free network.
//! The SAE mean is taken over the masked entries of the whole batch and is
//! zero when the batch has none.

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array2, Array3, ArrayView3};
use rayon::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{Gradients, JacTrace, MlpModel};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossMode {
    #[serde(rename = "state")]
    State,
    #[serde(rename = "state+jacobian_mse")]
    JacobianMse,
    #[serde(rename = "state+jacobian_mae")]
    JacobianMae,
    #[serde(rename = "state+jacobian_l1reg")]
    JacobianL1Reg,
    #[serde(rename = "state+sae")]
    Sae,
}

impl LossMode {
    pub const ALL: [LossMode; 5] = [
        LossMode::State,
        LossMode::JacobianMse,
        LossMode::JacobianMae,
        LossMode::JacobianL1Reg,
        LossMode::Sae,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossMode::State => "state",
            LossMode::JacobianMse => "state+jacobian_mse",
            LossMode::JacobianMae => "state+jacobian_mae",
            LossMode::JacobianL1Reg => "state+jacobian_l1reg",
            LossMode::Sae => "state+sae",
        }
    }

    /// Whether the mode differentiates through the model Jacobian.
    pub fn uses_jacobian(self) -> bool {
        self != LossMode::State
    }

    /// Whether the mode compares against stored ground-truth Jacobians.
    pub fn needs_ground_truth(self) -> bool {
        matches!(self, LossMode::JacobianMse | LossMode::JacobianMae | LossMode::Sae)
    }
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossMode::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            let valid: Vec<&str> = LossMode::ALL.iter().map(|m| m.name()).collect();
            Error::Parameter(format!("unknown loss mode `{s}`; valid modes: {}", valid.join(", ")))
        })
    }
}

/// Loss mode, Jacobian term weight, and the zero threshold for SAE masks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub mode: LossMode,
    pub jac_weight: f64,
    pub tau_env: f64,
}

impl LossSpec {
    pub fn new(mode: LossMode) -> Self {
        LossSpec {
            mode,
            jac_weight: 1.0,
            tau_env: crate::TAU_ENV,
        }
    }
}

/// Normalized inputs, targets and (optionally) ground-truth Jacobians.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// `B x d_in`.
    pub x: Array2<f64>,
    /// `B x d_out`.
    pub y: Array2<f64>,
    /// `B x d_out x d_in`.
    pub jac: Option<Array3<f64>>,
    /// Seed of the dropout masks for the state term; `None` disables dropout.
    pub dropout_seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub state: f64,
    pub term: f64,
}

#[inline]
fn sgn(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_batch(model: &MlpModel, batch: &Batch, spec: &LossSpec) -> Result<()> {
    let (b, d, o) = (batch.x.nrows(), model.d_in(), model.d_out());
    if b == 0 {
        return Err(Error::Empty("loss of an empty batch".into()));
    }
    if batch.x.ncols() != d || batch.y.dim() != (b, o) {
        return Err(Error::Shape(format!(
            "batch is {:?} -> {:?}, model is {d} -> {o}",
            batch.x.dim(),
            batch.y.dim()
        )));
    }
    if spec.mode.needs_ground_truth() {
        match &batch.jac {
            None => return Err(Error::MissingJacobians(spec.mode.name().into())),
            Some(j) if j.dim() != (b, o, d) => {
                return Err(Error::Shape(format!(
                    "ground-truth Jacobians are {:?}, expected {:?}",
                    j.dim(),
                    (b, o, d)
                )))
            }
            _ => {}
        }
    }
    Ok(())
}

/// Rows per data-parallel chunk of a batch. Fixed, so results do not depend on
/// the number of threads.
const CHUNK: usize = 64;

/// Sum of the Jacobian term over one chunk and its gradient with respect to
/// the model Jacobian (already divided by `denom` and scaled by `weight`), in
/// the tangent layout of [`JacTrace`].
fn jacobian_term(
    jt: &JacTrace,
    truth: Option<ArrayView3<f64>>,
    mode: LossMode,
    tau: f64,
    denom: f64,
    weight: f64,
) -> (f64, Array2<f64>) {
    let d = jt.d_in;
    let (rows, o) = jt.ps.last().expect("at least one layer").dim();
    let mut g = Array2::zeros((rows, o));
    let truth_at = |k: usize, i: usize, j: usize| truth.as_ref().map_or(0.0, |t| t[[k, i, j]]);
    let k_scale = weight / denom;
    let mut sum = 0.0;
    for k in 0..rows / d {
        for i in 0..o {
            for j in 0..d {
                let m = jt.get(k, i, j);
                let (val, grad) = match mode {
                    LossMode::JacobianMse => {
                        let r = m - truth_at(k, i, j);
                        (r * r, 2.0 * r)
                    }
                    LossMode::JacobianMae => {
                        let r = m - truth_at(k, i, j);
                        (r.abs(), sgn(r))
                    }
                    LossMode::JacobianL1Reg => (m.abs(), sgn(m)),
                    LossMode::Sae => {
                        let t = truth_at(k, i, j);
                        if t.abs() < tau {
                            let r = m - t;
                            (r.abs(), sgn(r))
                        } else {
                            (0.0, 0.0)
                        }
                    }
                    LossMode::State => unreachable!("no Jacobian term"),
                };
                sum += val;
                g[[k * d + j, i]] = grad * k_scale;
            }
        }
    }
    (sum, g)
}

struct ChunkOut {
    state_sum: f64,
    term_sum: f64,
    grads: Option<Gradients>,
}

struct Norms {
    state: f64,
    term: f64,
}

fn eval_chunk(
    model: &MlpModel,
    batch: &Batch,
    rows: std::ops::Range<usize>,
    chunk: usize,
    spec: &LossSpec,
    norms: &Norms,
    want_grad: bool,
) -> ChunkOut {
    let x = batch.x.slice(s![rows.clone(), ..]).to_owned();
    let y = batch.y.slice(s![rows.clone(), ..]);
    let mut rng = batch.dropout_seed.map(|seed| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        r.set_stream(chunk as u64);
        r
    });
    let dropout = rng.is_some() && model.dropout > 0.0;
    let state_tr = model.trace(&x, rng.as_mut());

    let resid = state_tr.output() - &y;
    let state_sum = resid.iter().map(|r| r * r).sum::<f64>();
    let mut grads = want_grad.then(|| model.zero_gradients());
    if let Some(g) = grads.as_mut() {
        let d_out = resid * (2.0 / norms.state);
        model.backward(&state_tr, Some(&d_out), &[], g);
    }

    let mut term_sum = 0.0;
    if spec.mode.uses_jacobian() && norms.term > 0.0 {
        let clean;
        let tr = if dropout {
            clean = model.trace(&x, None);
            &clean
        } else {
            &state_tr
        };
        let jt = model.jac_trace(tr);
        let truth = batch.jac.as_ref().map(|t| t.slice(s![rows, .., ..]));
        let (t, g_j) = jacobian_term(&jt, truth, spec.mode, spec.tau_env, norms.term, spec.jac_weight);
        term_sum = t;
        if let Some(g) = grads.as_mut() {
            if spec.jac_weight != 0.0 {
                let inject = model.jac_backward(tr, &jt, g_j, g);
                model.backward(tr, None, &inject, g);
            }
        }
    }
    ChunkOut {
        state_sum,
        term_sum,
        grads,
    }
}

/// Evaluates the loss in fixed-size row chunks (in parallel) and combines the
/// chunk results in order.
fn evaluate(model: &MlpModel, batch: &Batch, spec: &LossSpec, want_grad: bool) -> Result<(LossParts, Option<Gradients>)> {
    check_batch(model, batch, spec)?;
    let (b, d, o) = (batch.x.nrows(), model.d_in(), model.d_out());
    let term_norm = match spec.mode {
        LossMode::State => 0.0,
        LossMode::Sae => {
            let t = batch.jac.as_ref().expect("checked");
            t.iter().filter(|v| v.abs() < spec.tau_env).count() as f64
        }
        _ => (b * o * d) as f64,
    };
    let norms = Norms {
        state: (b * o) as f64,
        term: term_norm,
    };
    let outs: Vec<ChunkOut> = (0..b.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| eval_chunk(model, batch, c * CHUNK..((c + 1) * CHUNK).min(b), c, spec, &norms, want_grad))
        .collect();

    let mut state = 0.0;
    let mut term = 0.0;
    let mut grads = want_grad.then(|| model.zero_gradients());
    for out in outs {
        state += out.state_sum;
        term += out.term_sum;
        if let (Some(acc), Some(g)) = (grads.as_mut(), out.grads) {
            acc.add(&g);
        }
    }
    let state = state / norms.state;
    let term = if norms.term > 0.0 { term / norms.term } else { 0.0 };
    let parts = LossParts {
        total: state + spec.jac_weight * term,
        state,
        term,
    };
    if let Some(g) = &grads {
        if let Some(layer) = g.non_finite_layer() {
            return Err(Error::NonFiniteGradient { layer });
        }
    }
    Ok((parts, grads))
}

/// Loss value and its decomposition.
pub fn compute_loss(model: &MlpModel, batch: &Batch, spec: &LossSpec) -> Result<LossParts> {
    Ok(evaluate(model, batch, spec, false)?.0)
}

/// Loss value and the exact gradient with respect to every parameter.
pub fn loss_gradient(model: &MlpModel, batch: &Batch, spec: &LossSpec) -> Result<(LossParts, Gradients)> {
    let (parts, g) = evaluate(model, batch, spec, true)?;
    Ok((parts, g.expect("requested")))
}

/// Central-difference check of [`loss_gradient`] over every parameter.
/// Returns `max|g - fd| / max(max|fd|, 1e-12)`.
pub fn gradient_check(model: &MlpModel, batch: &Batch, spec: &LossSpec, h: f64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::Parameter(format!("step must be positive, got {h}")));
    }
    let (_, g) = loss_gradient(model, batch, spec)?;
    let g = g.to_flat();
    let p0 = model.to_flat();
    let mut m = model.clone();
    let mut worst = 0.0f64;
    let mut scale = 0.0f64;
    for k in 0..p0.len() {
        let mut p = p0.clone();
        p[k] = p0[k] + h;
        m.set_flat(&p)?;
        let up = compute_loss(&m, batch, spec)?.total;
        p[k] = p0[k] - h;
        m.set_flat(&p)?;
        let down = compute_loss(&m, batch, spec)?.total;
        let fd = (up - down) / (2.0 * h);
        worst = worst.max((g[k] - fd).abs());
        scale = scale.max(fd.abs());
    }
    Ok(worst / scale.max(1e-12))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn toy(seed: u64) -> (MlpModel, Batch) {
        let mut model = MlpModel::new(&[2, 4, 2], 0.25, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        for b in model.biases.iter_mut() {
            b.mapv_inplace(|_| 0.3 * Distribution::<f64>::sample(&StandardNormal, &mut rng));
        }
        let bsz = 6;
        let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
        let x = Array2::from_shape_simple_fn((bsz, 2), &mut normal);
        let y = Array2::from_shape_simple_fn((bsz, 2), &mut normal);
        let mut jac = Array3::from_shape_simple_fn((bsz, 2, 2), &mut normal);
        let mut r2 = ChaCha8Rng::seed_from_u64(seed + 200);
        jac.mapv_inplace(|v| if r2.random::<f64>() < 0.4 { 0.0 } else { v });
        let batch = Batch {
            x,
            y,
            jac: Some(jac),
            dropout_seed: Some(seed),
        };
        (model, batch)
    }

    #[test]
    fn mode_names_round_trip() {
        for m in LossMode::ALL {
            assert_eq!(m.name().parse::<LossMode>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.name()));
        }
        let err = "jacobian".parse::<LossMode>().unwrap_err().to_string();
        assert!(err.contains("state+sae"), "{err}");
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..10 {
            let (model, batch) = toy(seed);
            for mode in LossMode::ALL {
                let rel = gradient_check(&model, &batch, &LossSpec::new(mode), 1e-6).unwrap();
                assert!(rel < 1e-4, "seed {seed} {mode}: {rel}");
            }
        }
    }

    #[test]
    fn deeper_network_gradients() {
        let mut model = MlpModel::new(&[3, 5, 4, 2], 0.2, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for b in model.biases.iter_mut() {
            b.mapv_inplace(|_| 0.2 * Distribution::<f64>::sample(&StandardNormal, &mut rng));
        }
        let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
        let batch = Batch {
            x: Array2::from_shape_simple_fn((4, 3), &mut normal),
            y: Array2::from_shape_simple_fn((4, 2), &mut normal),
            jac: Some(Array3::from_shape_fn((4, 2, 3), |(k, i, j)| if (k + i + j) % 3 == 0 { 0.0 } else { 0.5 })),
            dropout_seed: Some(3),
        };
        for mode in LossMode::ALL {
            let rel = gradient_check(&model, &batch, &LossSpec::new(mode), 1e-6).unwrap();
            assert!(rel < 1e-4, "{mode}: {rel}");
        }
    }

    #[test]
    fn perfect_predictor_has_zero_loss_and_gradient() {
        let (model, mut batch) = toy(3);
        batch.dropout_seed = None;
        batch.y = model.forward_batch(&batch.x);
        batch.jac = Some(model.jacobian_batch(&batch.x));
        let (parts, g) = loss_gradient(&model, &batch, &LossSpec::new(LossMode::JacobianMse)).unwrap();
        assert_eq!(parts.total, 0.0);
        assert!(g.to_flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sae_ignores_dense_truth() {
        let (model, mut batch) = toy(4);
        batch.jac.as_mut().unwrap().mapv_inplace(|v| if v == 0.0 { 1.0 } else { v });
        let p = compute_loss(&model, &batch, &LossSpec::new(LossMode::Sae)).unwrap();
        assert_eq!(p.term, 0.0);
        assert_eq!(p.total, p.state);
    }

    #[test]
    fn l1reg_on_zero_model() {
        let (mut model, mut batch) = toy(5);
        model.set_flat(&vec![0.0; model.num_params()]).unwrap();
        batch.jac = None;
        let p = compute_loss(&model, &batch, &LossSpec::new(LossMode::JacobianL1Reg)).unwrap();
        assert_eq!(p.term, 0.0);
        let want = batch.y.mapv(|v| v * v).mean().unwrap();
        assert!((p.state - want).abs() < 1e-15);
    }

    #[test]
    fn zero_weight_matches_state_mode_bitwise() {
        let (model, batch) = toy(6);
        let (_, g_state) = loss_gradient(&model, &batch, &LossSpec::new(LossMode::State)).unwrap();
        for mode in LossMode::ALL {
            let spec = LossSpec {
                jac_weight: 0.0,
                ..LossSpec::new(mode)
            };
            let (_, g) = loss_gradient(&model, &batch, &spec).unwrap();
            assert_eq!(g, g_state, "{mode}");
        }
    }

    #[test]
    fn decomposition_holds() {
        let (model, batch) = toy(7);
        for mode in LossMode::ALL {
            let spec = LossSpec {
                jac_weight: 0.37,
                ..LossSpec::new(mode)
            };
            let p = compute_loss(&model, &batch, &spec).unwrap();
            assert!((p.total - (p.state + 0.37 * p.term)).abs() <= 1e-14);
        }
    }

    #[test]
    fn missing_truth_is_rejected() {
        let (model, mut batch) = toy(8);
        batch.jac = None;
        for mode in [LossMode::JacobianMse, LossMode::JacobianMae, LossMode::Sae] {
            assert!(matches!(
                compute_loss(&model, &batch, &LossSpec::new(mode)),
                Err(Error::MissingJacobians(_))
            ));
        }
        assert!(compute_loss(&model, &batch, &LossSpec::new(LossMode::JacobianL1Reg)).is_ok());
        batch.jac = Some(Array3::zeros((6, 2, 3)));
        assert!(matches!(
            compute_loss(&model, &batch, &LossSpec::new(LossMode::Sae)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn dropout_only_touches_state_term() {
        let (model, batch) = toy(9);
        let mut clean = batch.clone();
        clean.dropout_seed = None;
        let spec = LossSpec::new(LossMode::JacobianMae);
        let a = compute_loss(&model, &batch, &spec).unwrap();
        let b = compute_loss(&model, &clean, &spec).unwrap();
        assert_eq!(a.term, b.term);
        assert_ne!(a.state, b.state);
        // a second evaluation with the same seed reproduces the masks
        assert_eq!(a, compute_loss(&model, &batch, &spec).unwrap());
    }

    proptest! {
        #[test]
        fn sae_ignores_nonzero_truth(seed in 0u64..1000, bump in -5.0f64..5.0) {
            let (model, batch) = toy(seed);
            let spec = LossSpec::new(LossMode::Sae);
            let base = compute_loss(&model, &batch, &spec).unwrap().term;
            let mut moved = batch.clone();
            moved.jac.as_mut().unwrap().mapv_inplace(|v| if v == 0.0 { 0.0 } else { v + v.signum() * (1.0 + bump.abs()) });
            prop_assert_eq!(compute_loss(&model, &moved, &spec).unwrap().term, base);
        }
    }
}
