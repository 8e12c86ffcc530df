//! Vertical ball with a thrust actuator and a one-sided penalty ground contact.
//!
//! State `[z, v]` (height above ground, vertical velocity), action is the
//! normalized thrust. With penetration `d = -z`, the ground pushes with
//! `k * d + c * d * (-v)` while `d >= 0` and not at all otherwise, so
//! `d v' / d z` is exactly zero in flight and roughly `k * dt / m` in contact.

use std::collections::BTreeMap;

use rand::Rng;

use crate::diff::Real;

pub(crate) const STATE_BOX: [(f64, f64); 2] = [(-0.1, 1.5), (-5.0, 5.0)];

#[derive(Clone, Debug)]
pub struct Params {
    pub mass: f64,
    pub gravity: f64,
    pub stiffness: f64,
    pub damping: f64,
    pub thrust_gain: f64,
}

pub(crate) fn defaults() -> BTreeMap<String, f64> {
    [
        ("mass", 1.0),
        ("gravity", 9.81),
        ("stiffness", 1000.0),
        ("damping", 10.0),
        ("thrust_gain", 5.0),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

impl Params {
    pub(crate) fn from_lookup(get: impl Fn(&str) -> f64) -> Self {
        Params {
            mass: get("mass"),
            gravity: get("gravity"),
            stiffness: get("stiffness"),
            damping: get("damping"),
            thrust_gain: get("thrust_gain"),
        }
    }
}

/// Ground contact is active when penetration `-z >= 0`.
pub fn in_contact(z: f64) -> bool {
    -z >= 0.0
}

pub(crate) fn transition<T: Real>(p: &Params, dt: f64, s: &[T], a: &[T]) -> Vec<T> {
    let (z, v) = (s[0], s[1]);
    let mut force = a[0] * p.thrust_gain - p.mass * p.gravity;
    if in_contact(z.re()) {
        let pen = -z;
        force = force + pen * p.stiffness + pen * (-v) * p.damping;
    }
    super::integrate(&[z], &[v], &[force / p.mass], dt)
}

pub(crate) fn reset<R: Rng>(rng: &mut R) -> Vec<f64> {
    vec![rng.random_range(0.5..1.5), rng.random_range(-0.5..0.5)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{reset as env_reset, step, step_with_jacobians, EnvSpec, State};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reset_is_airborne() {
        let env = EnvSpec::by_name("bouncer").unwrap();
        for seed in 0..100 {
            assert!(env_reset(&env, seed).values[0] > 0.0);
        }
    }

    #[test]
    fn first_step_of_free_fall() {
        let env = EnvSpec::by_name("bouncer").unwrap();
        let s = State {
            values: vec![1.0, 0.0],
            t: 0,
        };
        let next = step(&env, &s, &[0.0]).unwrap();
        let drop = 1.0 - next.values[0];
        let g = env.params["gravity"];
        let dt = env.dt;
        // closed form 0.5 g dt^2, integrator adds one more O(g dt^2) term
        assert!((drop - 0.5 * g * dt * dt).abs() <= 0.5 * g * dt * dt + 1e-15);
        assert!(drop > 0.0);
    }

    #[test]
    fn height_sensitivity_switches_with_contact() {
        let env = EnvSpec::by_name("bouncer").unwrap();
        let k = env.params["stiffness"];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..500 {
            let s = State {
                values: env.sample_state(&mut rng),
                t: 0,
            };
            let a = env.sample_action(&mut rng);
            let (_, j) = step_with_jacobians(&env, &s, &a).unwrap();
            let dv_dz = j.j_state[[1, 0]];
            if in_contact(s.values[0]) {
                assert!(dv_dz.abs() >= k * env.dt / 2.0, "{dv_dz}");
            } else {
                assert!(dv_dz.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn contact_boundary_uses_contact_branch() {
        let env = EnvSpec::by_name("bouncer").unwrap();
        let s = State {
            values: vec![0.0, -1.0],
            t: 0,
        };
        let (_, j) = step_with_jacobians(&env, &s, &[0.0]).unwrap();
        assert!(j.j_state[[1, 0]].abs() > 1.0);
    }
}
