//! Fully connected ELU network with batched input Jacobians and reverse-mode
//! gradients through those Jacobians.
//!
//! Batches are row-major (`B x width`). Layer `l` maps `widths[l]` to
//! `widths[l + 1]` as `z = h W^T + b`; hidden layers apply ELU then (in
//! training) inverted dropout, the last layer is linear.
//!
//! Jacobians are propagated forward as tangent matrices. For a batch of `B`
//! inputs of dimension `d`, a tangent is stored as a `(B * d) x width` matrix
//! whose row `b * d + j` holds the derivative of the layer values of sample `b`
//! with respect to input `j`, so each layer costs one GEMM.

use ndarray::{s, Array1, Array2, Array3, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::{Error, Result};

pub const DEFAULT_WIDTH: usize = 512;
pub const DEFAULT_DEPTH: usize = 2;
pub const DEFAULT_DROPOUT: f64 = 0.1;

#[inline]
pub(crate) fn elu(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        z.exp_m1()
    }
}

#[inline]
fn elu_d(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        z.exp()
    }
}

#[inline]
fn elu_dd(z: f64) -> f64 {
    if z > 0.0 {
        0.0
    } else {
        z.exp()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel {
    pub widths: Vec<usize>,
    /// `weights[l]` is `widths[l + 1] x widths[l]`.
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub dropout: f64,
}

/// Parameter gradients, shaped like the model.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Gradients {
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(2 * self.weights.len());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.push(w.as_slice().expect("standard layout"));
            out.push(b.as_slice().expect("standard layout"));
        }
        out
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.slices().concat()
    }

    pub(crate) fn add(&mut self, other: &Gradients) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }

    /// First layer holding a non-finite entry.
    pub(crate) fn non_finite_layer(&self) -> Option<usize> {
        (0..self.weights.len()).find(|&l| {
            self.weights[l].iter().chain(self.biases[l].iter()).any(|v| !v.is_finite())
        })
    }
}

/// Forward values of one batch.
pub(crate) struct Trace {
    /// Pre-activations per layer; the last entry is the network output.
    pub zs: Vec<Array2<f64>>,
    /// Layer inputs: `hs[0]` is the batch, `hs[l]` the (dropped-out) output of
    /// hidden layer `l - 1`.
    pub hs: Vec<Array2<f64>>,
    /// Scaled dropout masks per hidden layer.
    pub masks: Vec<Option<Array2<f64>>>,
}

impl Trace {
    pub fn output(&self) -> &Array2<f64> {
        self.zs.last().expect("at least one layer")
    }
}

/// Forward tangents of one batch (see module docs for the layout).
pub(crate) struct JacTrace {
    /// `ps[l]`: derivative of `zs[l]`.
    pub ps: Vec<Array2<f64>>,
    /// `as_[l]`: derivative of hidden activation `l`.
    pub as_: Vec<Array2<f64>>,
    pub d_in: usize,
}

impl JacTrace {
    /// Network Jacobian of sample `b`, `d_out x d_in`.
    pub fn jacobian(&self, b: usize) -> Array2<f64> {
        let d = self.d_in;
        self.ps
            .last()
            .expect("at least one layer")
            .slice(s![b * d..(b + 1) * d, ..])
            .t()
            .to_owned()
    }

    /// Entry `(i, j)` of sample `b`.
    #[inline]
    pub fn get(&self, b: usize, i: usize, j: usize) -> f64 {
        self.ps.last().expect("at least one layer")[[b * self.d_in + j, i]]
    }
}

fn broadcast_rows(m: &mut Array2<f64>, per_sample: &Array2<f64>, d: usize) {
    let (b, n) = per_sample.dim();
    let mut m3 = m.view_mut().into_shape_with_order((b, d, n)).expect("tangent layout");
    m3 *= &per_sample.view().insert_axis(Axis(1));
}

impl MlpModel {
    /// Kaiming-normal weights (`std = sqrt(2 / fan_in)`), zero biases.
    pub fn new(widths: &[usize], dropout: f64, seed: u64) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Parameter(format!("invalid layer widths {widths:?}")));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::Parameter(format!("dropout must be in [0, 1), got {dropout}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in widths.windows(2) {
            let std = (2.0 / w[0] as f64).sqrt();
            weights.push(Array2::from_shape_simple_fn((w[1], w[0]), || {
                let n: f64 = StandardNormal.sample(&mut rng);
                n * std
            }));
            biases.push(Array1::zeros(w[1]));
        }
        Ok(MlpModel {
            widths: widths.to_vec(),
            weights,
            biases,
            dropout,
        })
    }

    pub fn layers(&self) -> usize {
        self.weights.len()
    }

    pub fn d_in(&self) -> usize {
        self.widths[0]
    }

    pub fn d_out(&self) -> usize {
        *self.widths.last().expect("widths")
    }

    pub fn num_params(&self) -> usize {
        self.widths.windows(2).map(|w| w[1] * (w[0] + 1)).sum()
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            weights: self.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: self.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
        }
    }

    /// Parameters as contiguous slices: `W_0, b_0, W_1, b_1, ...`.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(2 * self.weights.len());
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            out.push(w.as_slice_mut().expect("standard layout"));
            out.push(b.as_slice_mut().expect("standard layout"));
        }
        out
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn set_flat(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "{} parameters given, model has {}",
                p.len(),
                self.num_params()
            )));
        }
        let mut off = 0;
        for s in self.param_slices_mut() {
            s.copy_from_slice(&p[off..off + s.len()]);
            off += s.len();
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.is_finite())
    }

    /// Forward pass over a batch. Dropout is applied only when `dropout_rng`
    /// is given and the rate is positive.
    pub(crate) fn trace(&self, x: &Array2<f64>, mut dropout_rng: Option<&mut ChaCha8Rng>) -> Trace {
        let last = self.layers() - 1;
        let mut zs = Vec::with_capacity(self.layers());
        let mut hs = vec![x.clone()];
        let mut masks = Vec::with_capacity(last);
        for l in 0..self.layers() {
            let mut z = hs[l].dot(&self.weights[l].t());
            z += &self.biases[l];
            if l < last {
                let mut h = z.mapv(elu);
                let mask = match dropout_rng.as_deref_mut() {
                    Some(rng) if self.dropout > 0.0 => {
                        let keep = 1.0 / (1.0 - self.dropout);
                        let p = self.dropout;
                        let m = Array2::from_shape_simple_fn(h.raw_dim(), || {
                            if rng.random::<f64>() < p {
                                0.0
                            } else {
                                keep
                            }
                        });
                        h *= &m;
                        Some(m)
                    }
                    _ => None,
                };
                masks.push(mask);
                hs.push(h);
            }
            zs.push(z);
        }
        Trace { zs, hs, masks }
    }

    /// Forward tangents of a dropout-free trace.
    pub(crate) fn jac_trace(&self, tr: &Trace) -> JacTrace {
        let b = tr.hs[0].nrows();
        let d = self.d_in();
        let n1 = self.widths[1];
        let mut p0 = Array3::zeros((b, d, n1));
        p0.assign(&self.weights[0].t().broadcast((b, d, n1)).expect("broadcast"));
        let p0 = p0.into_shape_with_order((b * d, n1)).expect("tangent layout");
        let mut ps = vec![p0];
        let mut as_ = Vec::with_capacity(self.layers() - 1);
        for l in 0..self.layers() - 1 {
            let mut a = ps[l].clone();
            broadcast_rows(&mut a, &tr.zs[l].mapv(elu_d), d);
            ps.push(a.dot(&self.weights[l + 1].t()));
            as_.push(a);
        }
        JacTrace { ps, as_, d_in: d }
    }

    /// Reverse pass through the forward values. `d_output` is the loss
    /// gradient at the network output; `inject[l]` is an extra gradient at
    /// the pre-activation of hidden layer `l`.
    pub(crate) fn backward(
        &self,
        tr: &Trace,
        d_output: Option<&Array2<f64>>,
        inject: &[Array2<f64>],
        grads: &mut Gradients,
    ) {
        let last = self.layers() - 1;
        let mut delta: Option<Array2<f64>> = d_output.cloned();
        for l in (0..=last).rev() {
            if l < last {
                let mut dz = match &delta {
                    Some(dl) => {
                        let mut g = dl.dot(&self.weights[l + 1]);
                        if let Some(m) = &tr.masks[l] {
                            g *= m;
                        }
                        Zip::from(&mut g).and(&tr.zs[l]).for_each(|g, &z| *g *= elu_d(z));
                        g
                    }
                    None => Array2::zeros(tr.zs[l].raw_dim()),
                };
                if let Some(e) = inject.get(l) {
                    dz += e;
                }
                delta = Some(dz);
            }
            if let Some(dl) = &delta {
                grads.weights[l] += &dl.t().dot(&tr.hs[l]);
                grads.biases[l] += &dl.sum_axis(Axis(0));
            }
        }
    }

    /// Reverse pass through the forward tangents. `g_out` is the loss
    /// gradient with respect to the network Jacobian, in tangent layout.
    /// Weight gradients from the tangent recursion are accumulated into
    /// `grads`; the returned matrices are the induced gradients at each hidden
    /// pre-activation, to be fed to [`MlpModel::backward`].
    pub(crate) fn jac_backward(
        &self,
        tr: &Trace,
        jt: &JacTrace,
        g_out: Array2<f64>,
        grads: &mut Gradients,
    ) -> Vec<Array2<f64>> {
        let d = jt.d_in;
        let mut inject = vec![Array2::zeros((0, 0)); self.layers() - 1];
        let mut gp = g_out;
        for l in (1..self.layers()).rev() {
            grads.weights[l] += &gp.t().dot(&jt.as_[l - 1]);
            let mut ga = gp.dot(&self.weights[l]);
            let z = &tr.zs[l - 1];
            let (rows, n) = ga.dim();
            let mut e = Array2::zeros((rows / d, n));
            let ga3 = ga.view().into_shape_with_order((rows / d, d, n)).expect("tangent layout");
            let p3 = jt.ps[l - 1].view().into_shape_with_order((rows / d, d, n)).expect("tangent layout");
            Zip::from(e.rows_mut())
                .and(ga3.axis_iter(Axis(0)))
                .and(p3.axis_iter(Axis(0)))
                .for_each(|mut er, g, p| {
                    for (gr, pr) in g.rows().into_iter().zip(p.rows()) {
                        Zip::from(&mut er).and(gr).and(pr).for_each(|e, &a, &b| *e += a * b);
                    }
                });
            Zip::from(&mut e).and(z).for_each(|a, &zz| *a *= elu_dd(zz));
            inject[l - 1] = e;
            broadcast_rows(&mut ga, &z.mapv(elu_d), d);
            gp = ga;
        }
        // P_0 rows (k, j) are column j of W_0
        let (rows, n1) = gp.dim();
        let summed = gp
            .into_shape_with_order((rows / d, d, n1))
            .expect("tangent layout")
            .sum_axis(Axis(0));
        grads.weights[0] += &summed.t();
        inject
    }

    /// Network Jacobians for a batch, `B x d_out x d_in`.
    pub fn jacobian_batch(&self, x: &Array2<f64>) -> Array3<f64> {
        let tr = self.trace(x, None);
        let jt = self.jac_trace(&tr);
        let (b, d, o) = (x.nrows(), self.d_in(), self.d_out());
        Array3::from_shape_fn((b, o, d), |(k, i, j)| jt.get(k, i, j))
    }

    /// Batched forward pass without dropout.
    pub fn forward_batch(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut tr = self.trace(x, None);
        tr.zs.pop().expect("at least one layer")
    }
}

/// Default surrogate: `[d_in, 512, 512, d_out]`, dropout 0.1.
pub fn mlp_init(d_in: usize, d_out: usize, seed: u64) -> Result<MlpModel> {
    let mut widths = vec![d_in];
    widths.extend([DEFAULT_WIDTH; DEFAULT_DEPTH]);
    widths.push(d_out);
    MlpModel::new(&widths, DEFAULT_DROPOUT, seed)
}

/// Single-input forward pass. With `training`, dropout masks are drawn from
/// ChaCha8 seeded with `dropout_seed`.
pub fn mlp_forward(model: &MlpModel, x: &[f64], training: bool, dropout_seed: u64) -> Result<Vec<f64>> {
    if x.len() != model.d_in() {
        return Err(Error::Shape(format!("input has {} entries, model expects {}", x.len(), model.d_in())));
    }
    if let Some(index) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    let xb = Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("one row");
    let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
    let tr = model.trace(&xb, training.then_some(&mut rng));
    let y = tr.output().row(0).to_vec();
    if let Some(index) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::Divergence { t: 0, index });
    }
    Ok(y)
}

/// Exact Jacobian of the dropout-free network at `x`, `d_out x d_in`.
pub fn mlp_jacobian(model: &MlpModel, x: &[f64]) -> Result<Array2<f64>> {
    if x.len() != model.d_in() {
        return Err(Error::Shape(format!("input has {} entries, model expects {}", x.len(), model.d_in())));
    }
    let xb = Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("one row");
    let tr = model.trace(&xb, None);
    Ok(model.jac_trace(&tr).jacobian(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::{jacobian_fd, relative_max_error};

    #[test]
    fn init_is_seeded_kaiming() {
        let a = mlp_init(10, 8, 3).unwrap();
        let b = mlp_init(10, 8, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, mlp_init(10, 8, 4).unwrap());
        assert_eq!(a.widths, vec![10, 512, 512, 8]);
        assert!(a.biases.iter().all(|b| b.iter().all(|&v| v == 0.0)));
        let w = &a.weights[1];
        let n = w.len() as f64;
        let mean = w.sum() / n;
        let std = (w.mapv(|v| (v - mean).powi(2)).sum() / n).sqrt();
        let want = (2.0f64 / 512.0).sqrt();
        assert!((std - want).abs() < 0.1 * want);
        assert_eq!(a.num_params(), a.to_flat().len());
    }

    #[test]
    fn zero_model_outputs_zero() {
        let mut m = MlpModel::new(&[3, 5, 2], 0.0, 0).unwrap();
        m.set_flat(&vec![0.0; m.num_params()]).unwrap();
        assert_eq!(mlp_forward(&m, &[1.0, -2.0, 3.0], false, 0).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn eval_mode_is_deterministic_and_dropout_is_seeded() {
        let m = MlpModel::new(&[4, 16, 16, 3], 0.5, 1).unwrap();
        let x = [0.3, -0.2, 1.0, 0.0];
        assert_eq!(mlp_forward(&m, &x, false, 1).unwrap(), mlp_forward(&m, &x, false, 2).unwrap());
        assert_eq!(mlp_forward(&m, &x, true, 7).unwrap(), mlp_forward(&m, &x, true, 7).unwrap());
        assert_ne!(mlp_forward(&m, &x, true, 7).unwrap(), mlp_forward(&m, &x, false, 7).unwrap());
    }

    #[test]
    fn elu_is_continuous_at_zero() {
        for z in [1e-13, -1e-13, 0.0] {
            assert!(elu(z).abs() <= 1e-12);
        }
        let mut hidden = MlpModel::new(&[1, 1, 1], 0.0, 0).unwrap();
        hidden.set_flat(&[1.0, 0.0, 1.0, 0.0]).unwrap();
        let a = mlp_forward(&hidden, &[1e-13], false, 0).unwrap()[0];
        let b = mlp_forward(&hidden, &[-1e-13], false, 0).unwrap()[0];
        assert!((a - b).abs() <= 1e-12);
    }

    #[test]
    fn linear_jacobian_is_weight_matrix() {
        let m = MlpModel::new(&[3, 2], 0.0, 5).unwrap();
        assert_eq!(mlp_jacobian(&m, &[0.1, 0.2, 0.3]).unwrap(), m.weights[0]);
    }

    #[test]
    fn jacobian_matches_fd() {
        let mut m = MlpModel::new(&[5, 3, 3, 4], 0.0, 11).unwrap();
        for b in m.biases.iter_mut() {
            b.mapv_inplace(|_| 0.3);
        }
        let x = [0.4, -0.7, 0.1, 1.2, -0.3];
        let j = mlp_jacobian(&m, &x).unwrap();
        let fd = jacobian_fd(|v: &[f64]| mlp_forward(&m, v, false, 0).unwrap(), &x, 1e-6).unwrap();
        assert!(relative_max_error(&j, &fd) < 1e-5);

        // batched evaluation agrees with single-input evaluation
        let xb = Array2::from_shape_fn((3, 5), |(i, k)| x[k] * (i as f64 + 1.0) - 0.2);
        let jb = m.jacobian_batch(&xb);
        for i in 0..3 {
            let single = mlp_jacobian(&m, &xb.row(i).to_vec()).unwrap();
            assert_eq!(jb.index_axis(Axis(0), i), single);
        }
    }

    #[test]
    fn untrained_jacobian_is_dense() {
        let m = mlp_init(10, 8, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Array2::from_shape_simple_fn((100, 10), || StandardNormal.sample(&mut rng));
        let j = m.jacobian_batch(&x);
        let zeros = j.iter().filter(|v| v.abs() < 1e-6).count();
        assert!((zeros as f64) < 0.01 * j.len() as f64);
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = MlpModel::new(&[2, 3, 1], 0.0, 0).unwrap();
        assert!(mlp_forward(&m, &[1.0], false, 0).is_err());
        assert!(matches!(mlp_forward(&m, &[1.0, f64::NAN], false, 0), Err(Error::NonFinite { index: 1 })));
        assert!(MlpModel::new(&[2], 0.0, 0).is_err());
        assert!(MlpModel::new(&[2, 0, 1], 0.0, 0).is_err());
        assert!(MlpModel::new(&[2, 1], 1.0, 0).is_err());
        let mut big = m.clone();
        big.set_flat(&vec![1e200; m.num_params()]).unwrap();
        assert!(matches!(mlp_forward(&big, &[1e200, 1e200], false, 0), Err(Error::Divergence { .. })));
    }
}
