//! Two identical, non-interacting spring-mass chains.
//!
//! Each subsystem is a wall spring holding mass 1, and mass 1 joined to mass 2
//! by a spring with a cubic hardening term and a damper. The action pushes
//! mass 1 of its own subsystem.
//!
//! State: `[p1_A, p2_A, v1_A, v2_A, p1_B, p2_B, v1_B, v2_B]`, action `[u_A, u_B]`.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::Rng;

use crate::diff::Real;

pub(crate) const STATE_BOX: [(f64, f64); 8] = [
    (-2.0, 2.0),
    (-2.0, 2.0),
    (-2.0, 2.0),
    (-2.0, 2.0),
    (-2.0, 2.0),
    (-2.0, 2.0),
    (-2.0, 2.0),
    (-2.0, 2.0),
];

#[derive(Clone, Debug)]
pub struct Params {
    pub mass: f64,
    pub wall_stiffness: f64,
    pub coupling_stiffness: f64,
    pub cubic_stiffness: f64,
    pub coupling_damping: f64,
    pub force_gain: f64,
}

pub(crate) fn defaults() -> BTreeMap<String, f64> {
    [
        ("mass", 1.0),
        ("wall_stiffness", 0.5),
        ("coupling_stiffness", 0.5),
        ("cubic_stiffness", 0.2),
        ("coupling_damping", 0.2),
        ("force_gain", 1.0),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

impl Params {
    pub(crate) fn from_lookup(get: impl Fn(&str) -> f64) -> Self {
        Params {
            mass: get("mass"),
            wall_stiffness: get("wall_stiffness"),
            coupling_stiffness: get("coupling_stiffness"),
            cubic_stiffness: get("cubic_stiffness"),
            coupling_damping: get("coupling_damping"),
            force_gain: get("force_gain"),
        }
    }
}

/// Accelerations `(a1, a2)` of one chain.
fn chain_accel<T: Real>(p: &Params, s: &[T], u: T) -> (T, T) {
    let (p1, p2, v1, v2) = (s[0], s[1], s[2], s[3]);
    let d = p2 - p1;
    let spring = d * p.coupling_stiffness + d * d * d * p.cubic_stiffness;
    let damper = (v2 - v1) * p.coupling_damping;
    let a1 = (p1 * (-p.wall_stiffness) + spring + damper + u * p.force_gain) / p.mass;
    let a2 = (-spring - damper) / p.mass;
    (a1, a2)
}

fn chain_step<T: Real>(p: &Params, dt: f64, s: &[T], u: T) -> Vec<T> {
    let (a1, a2) = chain_accel(p, s, u);
    super::integrate(&s[0..2], &s[2..4], &[a1, a2], dt)
}

pub(crate) fn transition<T: Real>(p: &Params, dt: f64, s: &[T], a: &[T]) -> Vec<T> {
    let mut out = chain_step(p, dt, &s[0..4], a[0]);
    out.extend(chain_step(p, dt, &s[4..8], a[1]));
    out
}

pub(crate) fn reset<R: Rng>(rng: &mut R) -> Vec<f64> {
    let mut s = Vec::with_capacity(8);
    for _ in 0..2 {
        s.push(rng.random_range(-1.0..1.0));
        s.push(rng.random_range(-1.0..1.0));
        s.push(rng.random_range(-0.5..0.5));
        s.push(rng.random_range(-0.5..0.5));
    }
    s
}

/// Mechanical energy of both chains (kinetic plus spring potential).
pub fn energy(p: &Params, s: &[f64]) -> f64 {
    s.chunks(4)
        .map(|c| {
            let d = c[1] - c[0];
            0.5 * p.mass * (c[2] * c[2] + c[3] * c[3])
                + 0.5 * p.wall_stiffness * c[0] * c[0]
                + 0.5 * p.coupling_stiffness * d * d
                + 0.25 * p.cubic_stiffness * d.powi(4)
        })
        .sum()
}

/// Block-diagonal adjacency. Within a block the state part is dense; the
/// action reaches only mass 1 (its position and velocity rows).
pub(crate) fn known_mask() -> Array2<bool> {
    Array2::from_shape_fn((8, 10), |(i, j)| {
        let block = i / 4;
        if j < 8 {
            j / 4 == block
        } else {
            let local = i % 4;
            j - 8 == block && (local == 0 || local == 2)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{make_env, reset as env_reset, step, step_with_jacobians, EnvSpec};

    #[test]
    fn perturbing_a_leaves_b_bitwise_unchanged() {
        let env = EnvSpec::by_name("decoupled_pair").unwrap();
        let s = env_reset(&env, 3);
        let mut s2 = s.clone();
        for v in &mut s2.values[..4] {
            *v += 0.37;
        }
        let a = [0.4, -0.2];
        let n1 = step(&env, &s, &a).unwrap();
        let n2 = step(&env, &s2, &a).unwrap();
        assert_eq!(n1.values[4..], n2.values[4..]);
        assert_ne!(n1.values[..4], n2.values[..4]);
    }

    #[test]
    fn off_block_entries_exactly_zero() {
        let env = EnvSpec::by_name("decoupled_pair").unwrap();
        let mask = env.known_mask.clone().unwrap();
        for seed in 0..20 {
            let s = env_reset(&env, seed);
            let (_, j) = step_with_jacobians(&env, &s, &[0.3, -0.7]).unwrap();
            for i in 0..8 {
                for k in 0..8 {
                    if i / 4 != k / 4 {
                        assert_eq!(j.j_state[[i, k]], 0.0);
                    }
                }
                for k in 0..2 {
                    if !mask[[i, 8 + k]] {
                        assert_eq!(j.j_action[[i, k]], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn energy_conserved_without_damping() {
        let mut o = BTreeMap::new();
        o.insert("coupling_damping".to_string(), 0.0);
        let env = make_env("decoupled_pair", &o).unwrap();
        let p = Params::from_lookup(|k| env.params[k]);
        for seed in 0..10 {
            let mut s = env_reset(&env, seed);
            let e0 = energy(&p, &s.values);
            for _ in 0..100 {
                s = step(&env, &s, &[0.0, 0.0]).unwrap();
            }
            let e1 = energy(&p, &s.values);
            assert!(((e1 - e0) / e0).abs() < 0.01, "seed {seed}: {e0} -> {e1}");
        }
    }
}
