//! Z-score normalization of model inputs/outputs and the induced Jacobian
//! rescaling.
//!
//! With `x~ = (x - mu_in) / (sigma_in + eps)` and
//! `y~ = (y - mu_out) / (sigma_out + eps)`, the normalized map
//! `f~(x~) = (f(x~ * (sigma_in + eps) + mu_in) - mu_out) / (sigma_out + eps)`
//! has Jacobian `J~ = J ∘ M` with `M_ij = (sigma_in_j + eps) / (sigma_out_i + eps)`.
//! Scaling is strictly positive, so exact zeros of `J` stay exact zeros.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::rollout::{Dataset, Sample};
use crate::{Error, Result};

/// Guard added to every standard deviation.
pub const DEFAULT_EPSILON: f64 = 1e-8;

/// Per-dimension statistics for inputs `[s, a]` and outputs `s'`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mu_in: Vec<f64>,
    pub sigma_in: Vec<f64>,
    pub mu_out: Vec<f64>,
    pub sigma_out: Vec<f64>,
    pub epsilon: f64,
}

fn mean_std<'a>(rows: impl Iterator<Item = &'a [f64]> + Clone, dim: usize) -> (Vec<f64>, Vec<f64>) {
    let mut n = 0usize;
    let mut mean = vec![0.0; dim];
    for r in rows.clone() {
        n += 1;
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; dim];
    for r in rows {
        for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std = var.into_iter().map(|s| (s / n as f64).sqrt()).collect();
    (mean, std)
}

impl NormStats {
    /// Population mean and standard deviation over the given samples.
    pub fn from_samples<'a>(samples: &[&'a Sample]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Empty("cannot fit normalization statistics on no samples".into()))?;
        let (ds, da) = (first.s.len(), first.a.len());
        let inputs: Vec<Vec<f64>> = samples.iter().map(|s| s.input()).collect();
        let (mu_in, sigma_in) = mean_std(inputs.iter().map(Vec::as_slice), ds + da);
        let (mu_out, sigma_out) = mean_std(samples.iter().map(|s| s.s_next.as_slice()), ds);
        Ok(NormStats {
            mu_in,
            sigma_in,
            mu_out,
            sigma_out,
            epsilon: DEFAULT_EPSILON,
        })
    }

    /// Input scaling matrix `M` (see module docs), shape `d_out x d_in`.
    pub fn scaling_matrix(&self) -> Array2<f64> {
        let eps = self.epsilon;
        Array2::from_shape_fn((self.sigma_out.len(), self.sigma_in.len()), |(i, j)| {
            (self.sigma_in[j] + eps) / (self.sigma_out[i] + eps)
        })
    }

    pub fn normalize_input(&self, x: &[f64]) -> Result<Vec<f64>> {
        normalize_vec(x, &self.mu_in, &self.sigma_in, self.epsilon)
    }

    pub fn normalize_output(&self, y: &[f64]) -> Result<Vec<f64>> {
        normalize_vec(y, &self.mu_out, &self.sigma_out, self.epsilon)
    }

    pub fn denormalize_input(&self, x: &[f64]) -> Result<Vec<f64>> {
        denormalize_vec(x, &self.mu_in, &self.sigma_in, self.epsilon)
    }

    pub fn denormalize_output(&self, y: &[f64]) -> Result<Vec<f64>> {
        denormalize_vec(y, &self.mu_out, &self.sigma_out, self.epsilon)
    }
}

/// Statistics over every sample of a dataset.
pub fn fit_stats(dataset: &Dataset) -> Result<NormStats> {
    let samples: Vec<&Sample> = dataset.samples().collect();
    NormStats::from_samples(&samples)
}

fn check_dims(x: &[f64], mu: &[f64], sigma: &[f64]) -> Result<()> {
    if x.len() != mu.len() || mu.len() != sigma.len() {
        return Err(Error::Shape(format!(
            "vector of length {} against statistics of length {}/{}",
            x.len(),
            mu.len(),
            sigma.len()
        )));
    }
    Ok(())
}

/// `(x - mu) / (sigma + eps)`, elementwise.
pub fn normalize_vec(x: &[f64], mu: &[f64], sigma: &[f64], eps: f64) -> Result<Vec<f64>> {
    check_dims(x, mu, sigma)?;
    Ok(x.iter()
        .zip(mu)
        .zip(sigma)
        .map(|((v, m), s)| (v - m) * (1.0 / (s + eps)))
        .collect())
}

/// `x~ * (sigma + eps) + mu`, elementwise.
pub fn denormalize_vec(x: &[f64], mu: &[f64], sigma: &[f64], eps: f64) -> Result<Vec<f64>> {
    check_dims(x, mu, sigma)?;
    Ok(x.iter()
        .zip(mu)
        .zip(sigma)
        .map(|((v, m), s)| v * (s + eps) + m)
        .collect())
}

/// Jacobian of the normalized map: `J ∘ M`.
pub fn normalize_jacobian(j: &Array2<f64>, stats: &NormStats) -> Result<Array2<f64>> {
    let (n, m) = j.dim();
    if n != stats.sigma_out.len() || m != stats.sigma_in.len() {
        return Err(Error::Shape(format!(
            "jacobian is {n}x{m}, statistics expect {}x{}",
            stats.sigma_out.len(),
            stats.sigma_in.len()
        )));
    }
    Ok(j * &stats.scaling_matrix())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::{self, Dual};
    use crate::envs::{make_env, EnvSpec};
    use crate::rollout::{collect, PolicyDescriptor};
    use ndarray::array;
    use proptest::prelude::*;

    fn sample_with(s: Vec<f64>, a: Vec<f64>, s_next: Vec<f64>) -> Sample {
        let (ds, da) = (s.len(), a.len());
        Sample {
            t: 0,
            s,
            a,
            s_next,
            j_state: Array2::zeros((ds, ds)),
            j_action: Array2::zeros((ds, da)),
        }
    }

    #[test]
    fn two_point_stats() {
        let a = sample_with(vec![0.0, 5.0], vec![1.0], vec![0.0, 0.0]);
        let b = sample_with(vec![2.0, 5.0], vec![1.0], vec![2.0, 0.0]);
        let st = NormStats::from_samples(&[&a, &b]).unwrap();
        assert_eq!(st.mu_in, vec![1.0, 5.0, 1.0]);
        assert_eq!(st.sigma_in, vec![1.0, 0.0, 0.0]);
        assert_eq!(st.mu_out, vec![1.0, 0.0]);
        assert_eq!(st.sigma_out, vec![1.0, 0.0]);
        // constant dims stay finite thanks to epsilon
        let x = st.normalize_input(&[3.0, 5.0, 1.0]).unwrap();
        assert!(x.iter().all(|v| v.is_finite()));
        assert_eq!(x[1], 0.0);
    }

    #[test]
    fn empty_dataset_rejected() {
        let env = EnvSpec::by_name("cartpole").unwrap();
        let d = Dataset::empty(&env, PolicyDescriptor::white(1.0, 0), 0);
        assert!(matches!(fit_stats(&d), Err(Error::Empty(_))));
    }

    #[test]
    fn cartpole_stat_shapes() {
        let mut o = std::collections::BTreeMap::new();
        o.insert("horizon".to_string(), 50.0);
        let env = make_env("cartpole", &o).unwrap();
        let d = collect(&env, &PolicyDescriptor::white(1.0, 0), 2, 0).unwrap();
        let st = fit_stats(&d).unwrap();
        assert_eq!(st.mu_in.len(), 5);
        assert_eq!(st.sigma_in.len(), 5);
        assert_eq!(st.mu_out.len(), 4);
        assert_eq!(st.sigma_out.len(), 4);
    }

    #[test]
    fn identity_stats_and_centering() {
        let x = [0.5, -2.0, 3.25];
        let y = normalize_vec(&x, &[0.0; 3], &[1.0; 3], 0.0).unwrap();
        assert_eq!(y, x.to_vec());
        let mu = [1.0, 2.0, 3.0];
        let z = normalize_vec(&mu, &mu, &[0.3, 4.0, 0.0], 1e-8).unwrap();
        assert_eq!(z, vec![0.0; 3]);
        assert!(normalize_vec(&x, &mu[..2], &[1.0; 2], 0.0).is_err());
    }

    #[test]
    fn equal_sigmas_leave_jacobian_unchanged() {
        let st = NormStats {
            mu_in: vec![0.3, -1.0, 2.0],
            sigma_in: vec![0.7; 3],
            mu_out: vec![4.0, 1.0],
            sigma_out: vec![0.7; 2],
            epsilon: 1e-8,
        };
        let j = array![[1.0, -2.0, 0.0], [3.5, 0.25, 7.0]];
        assert_eq!(normalize_jacobian(&j, &st).unwrap(), j);
        assert!(normalize_jacobian(&j.t().to_owned(), &st).is_err());
    }

    #[test]
    fn normalized_jacobian_matches_composed_map() {
        let mut o = std::collections::BTreeMap::new();
        o.insert("horizon".to_string(), 200.0);
        let env = make_env("tethered_ball", &o).unwrap();
        let d = collect(&env, &PolicyDescriptor::colored(1.0, 1.0, 1), 2, 1).unwrap();
        let st = fit_stats(&d).unwrap();
        for s in d.samples().step_by(37) {
            let jn = normalize_jacobian(&s.joint_jacobian(), &st).unwrap();
            let xn = st.normalize_input(&s.input()).unwrap();

            // forward-mode Jacobian of the composed normalized map
            let composed = diff::jacobian_forward(
                |x: &[Dual]| {
                    let raw: Vec<Dual> = x
                        .iter()
                        .zip(&st.mu_in)
                        .zip(&st.sigma_in)
                        .map(|((&v, &m), &sd)| v * (sd + st.epsilon) + m)
                        .collect();
                    env.transition_joint(&raw)
                        .into_iter()
                        .zip(&st.mu_out)
                        .zip(&st.sigma_out)
                        .map(|((y, &m), &sd)| (y - m) * (1.0 / (sd + st.epsilon)))
                        .collect()
                },
                &xn,
            )
            .unwrap();
            assert!(diff::relative_max_error(&composed, &jn) < 1e-10);

            let fd = diff::jacobian_fd(
                |x: &[f64]| {
                    let raw = st.denormalize_input(x).unwrap();
                    st.normalize_output(&env.transition_joint(&raw)).unwrap()
                },
                &xn,
                1e-6,
            )
            .unwrap();
            let near_switch = env.switch_distance(&s.s).unwrap() < 1e-4;
            if !near_switch {
                assert!(diff::relative_max_error(&jn, &fd) < 1e-5);
            }
        }
    }

    proptest! {
        #[test]
        fn round_trip(
            x in prop::collection::vec(-1e3f64..1e3, 6),
            mu in prop::collection::vec(-10f64..10.0, 6),
            sigma in prop::collection::vec(0f64..50.0, 6),
        ) {
            let n = normalize_vec(&x, &mu, &sigma, DEFAULT_EPSILON).unwrap();
            let back = denormalize_vec(&n, &mu, &sigma, DEFAULT_EPSILON).unwrap();
            for (a, b) in x.iter().zip(&back) {
                prop_assert!((a - b).abs() < 1e-12 * (1.0 + a.abs()));
            }
        }

        #[test]
        fn zeros_preserved(
            vals in prop::collection::vec(prop_oneof![Just(0.0), -5f64..5.0], 12),
            sigma_in in prop::collection::vec(0f64..10.0, 4),
            sigma_out in prop::collection::vec(0f64..10.0, 3),
        ) {
            let j = Array2::from_shape_vec((3, 4), vals).unwrap();
            let st = NormStats {
                mu_in: vec![0.0; 4],
                sigma_in,
                mu_out: vec![0.0; 3],
                sigma_out,
                epsilon: DEFAULT_EPSILON,
            };
            let jn = normalize_jacobian(&j, &st).unwrap();
            for (a, b) in j.iter().zip(jn.iter()) {
                prop_assert_eq!(*a == 0.0, *b == 0.0);
            }
        }
    }
}
