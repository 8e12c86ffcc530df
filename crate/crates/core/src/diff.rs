//! Forward-mode differentiation for environment Jacobians.
//!
//! Environment dynamics are written once against the [`Real`] trait and then
//! evaluated either on plain `f64` (simulation) or on [`Dual`] numbers
//! (simulation plus exact Jacobian). The value part of a `Dual` goes through
//! exactly the same floating-point operations as the `f64` path, so the two
//! produce bitwise-identical next states.
//!
//! [`jacobian_fd`] is an independent central-difference estimate used as an
//! oracle in tests and in `dynasparse verify`.

use std::ops::{Add, Div, Mul, Neg, Sub};

use ndarray::Array2;

use crate::{Error, Result};

/// Number of input directions carried by one [`Dual`]. Larger inputs are
/// differentiated in several passes.
pub const MAX_DIRECTIONS: usize = 24;

/// Scalar type that environment dynamics are generic over.
pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn cst(v: f64) -> Self;
    /// Primal value, used for branch decisions.
    fn re(self) -> f64;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;

    fn sq(self) -> Self {
        self * self
    }
}

impl Real for f64 {
    #[inline]
    fn cst(v: f64) -> Self {
        v
    }
    #[inline]
    fn re(self) -> f64 {
        self
    }
    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
}

/// Dual number with up to [`MAX_DIRECTIONS`] tangent components.
///
/// `n` is the number of live tangent slots; constants carry `n == 0` and are
/// treated as having all-zero tangents.
#[derive(Clone, Copy, Debug)]
pub struct Dual {
    pub re: f64,
    eps: [f64; MAX_DIRECTIONS],
    n: u8,
}

impl Dual {
    pub fn constant(re: f64) -> Self {
        Dual {
            re,
            eps: [0.0; MAX_DIRECTIONS],
            n: 0,
        }
    }

    /// Variable seeded with a unit tangent in slot `dir` of `n` slots.
    pub fn variable(re: f64, dir: usize, n: usize) -> Self {
        assert!(n <= MAX_DIRECTIONS && dir < n);
        let mut eps = [0.0; MAX_DIRECTIONS];
        eps[dir] = 1.0;
        Dual { re, eps, n: n as u8 }
    }

    /// Tangent component `k` (zero when not live).
    pub fn tangent(&self, k: usize) -> f64 {
        if k < self.n as usize {
            self.eps[k]
        } else {
            0.0
        }
    }

    /// Chain rule for a unary function with derivative `d` at `self.re`.
    #[inline]
    fn chain(self, re: f64, d: f64) -> Self {
        let mut out = Dual {
            re,
            eps: [0.0; MAX_DIRECTIONS],
            n: self.n,
        };
        for k in 0..self.n as usize {
            out.eps[k] = d * self.eps[k];
        }
        out
    }
}

impl Add for Dual {
    type Output = Dual;
    #[inline]
    fn add(self, o: Dual) -> Dual {
        let n = self.n.max(o.n);
        let mut eps = [0.0; MAX_DIRECTIONS];
        for (k, e) in eps.iter_mut().enumerate().take(n as usize) {
            *e = self.eps[k] + o.eps[k];
        }
        Dual {
            re: self.re + o.re,
            eps,
            n,
        }
    }
}

impl Sub for Dual {
    type Output = Dual;
    #[inline]
    fn sub(self, o: Dual) -> Dual {
        let n = self.n.max(o.n);
        let mut eps = [0.0; MAX_DIRECTIONS];
        for (k, e) in eps.iter_mut().enumerate().take(n as usize) {
            *e = self.eps[k] - o.eps[k];
        }
        Dual {
            re: self.re - o.re,
            eps,
            n,
        }
    }
}

impl Mul for Dual {
    type Output = Dual;
    #[inline]
    fn mul(self, o: Dual) -> Dual {
        let n = self.n.max(o.n);
        let mut eps = [0.0; MAX_DIRECTIONS];
        for (k, e) in eps.iter_mut().enumerate().take(n as usize) {
            *e = self.eps[k] * o.re + self.re * o.eps[k];
        }
        Dual {
            re: self.re * o.re,
            eps,
            n,
        }
    }
}

impl Div for Dual {
    type Output = Dual;
    #[inline]
    fn div(self, o: Dual) -> Dual {
        let n = self.n.max(o.n);
        let re = self.re / o.re;
        let mut eps = [0.0; MAX_DIRECTIONS];
        for (k, e) in eps.iter_mut().enumerate().take(n as usize) {
            *e = (self.eps[k] - re * o.eps[k]) / o.re;
        }
        Dual { re, eps, n }
    }
}

impl Neg for Dual {
    type Output = Dual;
    #[inline]
    fn neg(self) -> Dual {
        self.chain(-self.re, -1.0)
    }
}

impl Add<f64> for Dual {
    type Output = Dual;
    #[inline]
    fn add(mut self, c: f64) -> Dual {
        self.re = self.re + c;
        self
    }
}

impl Sub<f64> for Dual {
    type Output = Dual;
    #[inline]
    fn sub(mut self, c: f64) -> Dual {
        self.re = self.re - c;
        self
    }
}

impl Mul<f64> for Dual {
    type Output = Dual;
    #[inline]
    fn mul(self, c: f64) -> Dual {
        self.chain(self.re * c, c)
    }
}

impl Div<f64> for Dual {
    type Output = Dual;
    #[inline]
    fn div(self, c: f64) -> Dual {
        let mut out = self;
        out.re = self.re / c;
        for k in 0..self.n as usize {
            out.eps[k] = self.eps[k] / c;
        }
        out
    }
}

impl Real for Dual {
    fn cst(v: f64) -> Self {
        Dual::constant(v)
    }
    #[inline]
    fn re(self) -> f64 {
        self.re
    }
    fn sin(self) -> Self {
        self.chain(self.re.sin(), self.re.cos())
    }
    fn cos(self) -> Self {
        self.chain(self.re.cos(), -self.re.sin())
    }
    fn sqrt(self) -> Self {
        let r = self.re.sqrt();
        self.chain(r, 0.5 / r)
    }
    fn exp(self) -> Self {
        let e = self.re.exp();
        self.chain(e, e)
    }
}

/// A vector of primal values together with one tangent column per seeded
/// input direction.
#[derive(Clone, Debug, PartialEq)]
pub struct DualVector {
    pub value: Vec<f64>,
    /// `value.len()` rows, one column per differentiated input.
    pub tangents: Array2<f64>,
}

/// State and action Jacobians of one transition.
#[derive(Clone, Debug, PartialEq)]
pub struct JacobianPair {
    /// `d_s x d_s`
    pub j_state: Array2<f64>,
    /// `d_s x d_a`
    pub j_action: Array2<f64>,
}

impl JacobianPair {
    /// Splits an `n x (d_s + d_a)` Jacobian into its state and action blocks.
    pub fn split(full: &Array2<f64>, d_s: usize) -> Self {
        use ndarray::s;
        JacobianPair {
            j_state: full.slice(s![.., ..d_s]).to_owned(),
            j_action: full.slice(s![.., d_s..]).to_owned(),
        }
    }
}

/// Evaluates `f` on dual numbers seeded along every input direction.
///
/// Inputs wider than [`MAX_DIRECTIONS`] are handled in several passes; the
/// returned value comes from the first pass.
pub fn eval_dual<F>(f: F, x: &[f64]) -> Result<DualVector>
where
    F: Fn(&[Dual]) -> Vec<Dual>,
{
    let m = x.len();
    if m == 0 {
        return Err(Error::Parameter("jacobian input must be non-empty".into()));
    }
    let mut value: Option<Vec<f64>> = None;
    let mut tangents = Array2::zeros((0, m));
    let mut start = 0;
    while start < m {
        let width = (m - start).min(MAX_DIRECTIONS);
        let seeded: Vec<Dual> = x
            .iter()
            .enumerate()
            .map(|(i, &xi)| {
                if i >= start && i < start + width {
                    Dual::variable(xi, i - start, width)
                } else {
                    Dual::constant(xi)
                }
            })
            .collect();
        let out = f(&seeded);
        if out.is_empty() {
            return Err(Error::Parameter("jacobian output must be non-empty".into()));
        }
        if value.is_none() {
            tangents = Array2::zeros((out.len(), m));
        } else if tangents.nrows() != out.len() {
            return Err(Error::Shape("output length changed between passes".into()));
        }
        for (r, d) in out.iter().enumerate() {
            if !d.re.is_finite() {
                return Err(Error::NonFinite { index: r });
            }
            for k in 0..width {
                let t = d.tangent(k);
                if !t.is_finite() {
                    return Err(Error::NonFinite { index: r });
                }
                tangents[[r, start + k]] = t;
            }
        }
        if value.is_none() {
            value = Some(out.iter().map(|d| d.re).collect());
        }
        start += width;
    }
    Ok(DualVector {
        value: value.unwrap_or_default(),
        tangents,
    })
}

/// Exact Jacobian (`n x m`) of `f` at `x` by forward-mode differentiation.
pub fn jacobian_forward<F>(f: F, x: &[f64]) -> Result<Array2<f64>>
where
    F: Fn(&[Dual]) -> Vec<Dual>,
{
    eval_dual(f, x).map(|d| d.tangents)
}

/// Central finite-difference Jacobian with step `h`.
pub fn jacobian_fd<F>(f: F, x: &[f64], h: f64) -> Result<Array2<f64>>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    if !(h > 0.0) {
        return Err(Error::Parameter(format!("finite-difference step must be > 0, got {h}")));
    }
    if x.is_empty() {
        return Err(Error::Parameter("jacobian input must be non-empty".into()));
    }
    let m = x.len();
    let mut xp = x.to_vec();
    let mut jac: Option<Array2<f64>> = None;
    for i in 0..m {
        xp[i] = x[i] + h;
        let fp = f(&xp);
        xp[i] = x[i] - h;
        let fm = f(&xp);
        xp[i] = x[i];
        if fp.len() != fm.len() || fp.is_empty() {
            return Err(Error::Shape("finite-difference outputs differ in length".into()));
        }
        let j = jac.get_or_insert_with(|| Array2::zeros((fp.len(), m)));
        for r in 0..fp.len() {
            let d = (fp[r] - fm[r]) / (2.0 * h);
            if !d.is_finite() {
                return Err(Error::NonFinite { index: r });
            }
            j[[r, i]] = d;
        }
    }
    Ok(jac.expect("m >= 1"))
}

/// Max-norm of a matrix.
pub fn max_abs(m: &Array2<f64>) -> f64 {
    m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

/// `‖a - b‖_max / (1 + ‖b‖_max)`, the relative error used for Jacobian checks.
pub fn relative_max_error(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let diff = a
        .iter()
        .zip(b.iter())
        .fold(0.0f64, |acc, (x, y)| acc.max((x - y).abs()));
    diff / (1.0 + max_abs(b))
}
