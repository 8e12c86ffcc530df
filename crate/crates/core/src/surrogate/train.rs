//! Mini-batch training with AdamW and held-out evaluation.

use ndarray::{Array2, Array3, Axis};
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{loss_gradient, Batch, LossMode, LossSpec};
use super::mlp::{Gradients, MlpModel};
use crate::normalization::{normalize_jacobian, NormStats};
use crate::rollout::{Dataset, Sample};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub loss_mode: LossMode,
    pub jac_weight: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub test_split: f64,
    pub seed: u64,
    pub shuffle: bool,
    pub width: usize,
    pub depth: usize,
    pub dropout: f64,
    pub tau_env: f64,
    pub tau_model: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss_mode: LossMode::State,
            jac_weight: 1.0,
            learning_rate: 0.002,
            weight_decay: 0.001,
            batch_size: 512,
            epochs: 100,
            test_split: 0.1,
            seed: 0,
            shuffle: true,
            width: super::mlp::DEFAULT_WIDTH,
            depth: super::mlp::DEFAULT_DEPTH,
            dropout: super::mlp::DEFAULT_DROPOUT,
            tau_env: crate::TAU_ENV,
            tau_model: crate::TAU_MODEL,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Parameter(m));
        if !(self.test_split > 0.0 && self.test_split < 1.0) {
            return bad(format!("test_split must be in (0, 1), got {}", self.test_split));
        }
        if self.batch_size == 0 || self.width == 0 {
            return bad("batch_size and width must be positive".into());
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) || !(self.jac_weight >= 0.0) {
            return bad("learning_rate must be positive; weight_decay and jac_weight non-negative".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if !(self.tau_env > 0.0) || !(self.tau_model > 0.0) {
            return bad("thresholds must be positive".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return bad("Adam moments must be in [0, 1) and eps positive".into());
        }
        Ok(())
    }

    pub fn loss_spec(&self) -> LossSpec {
        LossSpec {
            mode: self.loss_mode,
            jac_weight: self.jac_weight,
            tau_env: self.tau_env,
        }
    }

    pub fn widths(&self, d_in: usize, d_out: usize) -> Vec<usize> {
        let mut w = vec![d_in];
        w.extend(std::iter::repeat(self.width).take(self.depth));
        w.push(d_out);
        w
    }
}

/// Adam with decoupled weight decay.
pub struct AdamW {
    lr: f64,
    wd: f64,
    b1: f64,
    b2: f64,
    eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(model: &MlpModel, cfg: &TrainConfig) -> Self {
        let sizes: Vec<usize> = model.zero_gradients().slices().iter().map(|s| s.len()).collect();
        AdamW {
            lr: cfg.learning_rate,
            wd: cfg.weight_decay,
            b1: cfg.beta1,
            b2: cfg.beta2,
            eps: cfg.adam_eps,
            t: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step(&mut self, model: &mut MlpModel, grads: &Gradients) {
        self.t += 1;
        let bc1 = 1.0 - self.b1.powi(self.t);
        let bc2 = 1.0 - self.b2.powi(self.t);
        let decay = 1.0 - self.lr * self.wd;
        for (((p, g), m), v) in model
            .param_slices_mut()
            .into_iter()
            .zip(grads.slices())
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for k in 0..p.len() {
                m[k] = self.b1 * m[k] + (1.0 - self.b1) * g[k];
                v[k] = self.b2 * v[k] + (1.0 - self.b2) * g[k] * g[k];
                let step = (m[k] / bc1) / ((v[k] / bc2).sqrt() + self.eps);
                p[k] = p[k] * decay - self.lr * step;
            }
        }
    }
}

/// Normalized inputs, targets and ground-truth Jacobians.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedSet {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
    pub jac: Array3<f64>,
}

impl NormalizedSet {
    pub fn build(samples: &[&Sample], stats: &NormStats) -> Result<Self> {
        let n = samples.len();
        let (d_in, d_out) = (stats.mu_in.len(), stats.mu_out.len());
        let mut x = Array2::zeros((n, d_in));
        let mut y = Array2::zeros((n, d_out));
        let mut jac = Array3::zeros((n, d_out, d_in));
        for (k, s) in samples.iter().enumerate() {
            x.row_mut(k).assign(&ndarray::aview1(&stats.normalize_input(&s.input())?));
            y.row_mut(k).assign(&ndarray::aview1(&stats.normalize_output(&s.s_next)?));
            jac.index_axis_mut(Axis(0), k)
                .assign(&normalize_jacobian(&s.joint_jacobian(), stats)?);
        }
        Ok(NormalizedSet { x, y, jac })
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn batch(&self, idx: &[usize], with_jac: bool, dropout_seed: Option<u64>) -> Batch {
        Batch {
            x: self.x.select(Axis(0), idx),
            y: self.y.select(Axis(0), idx),
            jac: with_jac.then(|| self.jac.select(Axis(0), idx)),
            dropout_seed,
        }
    }
}

/// Held-out accuracy and Jacobian sparsity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Mean squared error in normalized units.
    pub test_mse: f64,
    /// Mean squared error in raw state units.
    pub test_mse_raw: f64,
    /// Mean sparsity of model Jacobians at `tau_model`.
    pub model_sparsity: f64,
    /// Mean sparsity of normalized ground-truth Jacobians at `tau_env`.
    pub target_sparsity: f64,
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_state: f64,
    pub train_term: f64,
    pub test_mse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    /// Untrained model.
    pub initial: Evaluation,
    pub trained: Evaluation,
    pub history: Vec<EpochRecord>,
}

pub struct TrainRun {
    pub model: MlpModel,
    pub stats: NormStats,
    pub eval: EvalResult,
    pub train_samples: usize,
    pub test_samples: usize,
}

const EVAL_CHUNK: usize = 256;

fn mse(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    (a - b).mapv(|v| v * v).mean().unwrap_or(0.0)
}

/// Test error and sparsity of `model` on a normalized set.
pub fn evaluate(model: &MlpModel, set: &NormalizedSet, stats: &NormStats, tau_model: f64, tau_env: f64) -> Result<Evaluation> {
    if set.is_empty() {
        return Err(Error::Empty("evaluation on an empty test set".into()));
    }
    let n = set.len();
    let pred = model.forward_batch(&set.x);
    let scale = ndarray::Array1::from_iter(stats.sigma_out.iter().map(|s| s + stats.epsilon));
    let raw_err = (&pred - &set.y) * &scale;
    let entries = (set.y.ncols() * set.x.ncols()) as f64;
    let mut model_sparsity = 0.0;
    for start in (0..n).step_by(EVAL_CHUNK) {
        let idx: Vec<usize> = (start..(start + EVAL_CHUNK).min(n)).collect();
        let j = model.jacobian_batch(&set.x.select(Axis(0), &idx));
        for s in j.outer_iter() {
            model_sparsity += s.iter().filter(|v| v.abs() < tau_model).count() as f64 / entries;
        }
    }
    let target_sparsity = set
        .jac
        .outer_iter()
        .map(|s| s.iter().filter(|v| v.abs() < tau_env).count() as f64 / entries)
        .sum::<f64>();
    Ok(Evaluation {
        test_mse: mse(&pred, &set.y),
        test_mse_raw: raw_err.mapv(|v| v * v).mean().unwrap_or(0.0),
        model_sparsity: model_sparsity / n as f64,
        target_sparsity: target_sparsity / n as f64,
        samples: n,
    })
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Seeded train/test partition of `n` sample indices.
pub fn split_indices(n: usize, test_split: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let n_test = ((n as f64 * test_split).round() as usize).max(1);
    if n_test >= n {
        return Err(Error::Empty(format!("{n} samples cannot be split with test_split {test_split}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng(seed, 1));
    let test = idx.split_off(n - n_test);
    Ok((idx, test))
}

/// Trains a fresh model on `dataset`. Normalization statistics come from the
/// training split only.
pub fn train(dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainRun> {
    cfg.validate()?;
    let samples: Vec<&Sample> = dataset.samples().collect();
    let (train_idx, test_idx) = split_indices(samples.len(), cfg.test_split, cfg.seed)?;
    if train_idx.len() < cfg.batch_size {
        return Err(Error::Parameter(format!(
            "batch_size {} exceeds the {} training samples",
            cfg.batch_size,
            train_idx.len()
        )));
    }
    let train_s: Vec<&Sample> = train_idx.iter().map(|&i| samples[i]).collect();
    let test_s: Vec<&Sample> = test_idx.iter().map(|&i| samples[i]).collect();
    let stats = NormStats::from_samples(&train_s)?;
    let train_set = NormalizedSet::build(&train_s, &stats)?;
    let test_set = NormalizedSet::build(&test_s, &stats)?;

    let (d_in, d_out) = (dataset.d_s() + dataset.d_a(), dataset.d_s());
    let mut model = MlpModel::new(&cfg.widths(d_in, d_out), cfg.dropout, cfg.seed)?;
    let initial = evaluate(&model, &test_set, &stats, cfg.tau_model, cfg.tau_env)?;

    let spec = cfg.loss_spec();
    let with_jac = spec.mode.needs_ground_truth();
    let mut opt = AdamW::new(&model, cfg);
    let mut shuffle_rng = rng(cfg.seed, 2);
    let mut dropout_rng = rng(cfg.seed, 3);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut shuffle_rng);
        }
        let (mut tot, mut st, mut tm) = (0.0, 0.0, 0.0);
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = train_set.batch(chunk, with_jac, Some(dropout_rng.next_u64()));
            let diverged = |msg: String| Error::TrainingDivergence { epoch, batch: bi, msg };
            let (parts, grads) = loss_gradient(&model, &batch, &spec).map_err(|e| diverged(e.to_string()))?;
            if !parts.total.is_finite() {
                return Err(diverged(format!("loss is {}", parts.total)));
            }
            opt.step(&mut model, &grads);
            let w = chunk.len() as f64;
            tot += parts.total * w;
            st += parts.state * w;
            tm += parts.term * w;
        }
        if !model.is_finite() {
            return Err(Error::TrainingDivergence {
                epoch,
                batch: order.len().div_ceil(cfg.batch_size) - 1,
                msg: "non-finite parameters after update".into(),
            });
        }
        let n = train_set.len() as f64;
        history.push(EpochRecord {
            epoch,
            train_loss: tot / n,
            train_state: st / n,
            train_term: tm / n,
            test_mse: mse(&model.forward_batch(&test_set.x), &test_set.y),
        });
    }
    let trained = evaluate(&model, &test_set, &stats, cfg.tau_model, cfg.tau_env)?;
    Ok(TrainRun {
        model,
        stats,
        eval: EvalResult {
            initial,
            trained,
            history,
        },
        train_samples: train_set.len(),
        test_samples: test_set.len(),
    })
}
