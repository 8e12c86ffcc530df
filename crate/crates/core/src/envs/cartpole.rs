//! Cart-pole with a centering spring on the cart and friction on both joints.
//!
//! State `[x, theta, v, omega]` with `theta = 0` upright; action is the
//! normalized horizontal force. The centering spring and the friction terms
//! make every state variable influence every acceleration, so the Jacobians
//! are dense at generic states.

use std::collections::BTreeMap;

use rand::Rng;

use crate::diff::Real;

pub(crate) const STATE_BOX: [(f64, f64); 4] = [
    (-2.0, 2.0),
    (-std::f64::consts::PI, std::f64::consts::PI),
    (-3.0, 3.0),
    (-5.0, 5.0),
];

#[derive(Clone, Debug)]
pub struct Params {
    pub gravity: f64,
    pub cart_mass: f64,
    pub pole_mass: f64,
    pub pole_half_length: f64,
    pub force_gain: f64,
    pub cart_friction: f64,
    pub pole_friction: f64,
    pub centering_stiffness: f64,
}

pub(crate) fn defaults() -> BTreeMap<String, f64> {
    [
        ("gravity", 9.81),
        ("cart_mass", 1.0),
        ("pole_mass", 0.1),
        ("pole_half_length", 0.5),
        ("force_gain", 10.0),
        ("cart_friction", 0.1),
        ("pole_friction", 0.01),
        ("centering_stiffness", 1.0),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

impl Params {
    pub(crate) fn from_lookup(get: impl Fn(&str) -> f64) -> Self {
        Params {
            gravity: get("gravity"),
            cart_mass: get("cart_mass"),
            pole_mass: get("pole_mass"),
            pole_half_length: get("pole_half_length"),
            force_gain: get("force_gain"),
            cart_friction: get("cart_friction"),
            pole_friction: get("pole_friction"),
            centering_stiffness: get("centering_stiffness"),
        }
    }
}

pub(crate) fn transition<T: Real>(p: &Params, dt: f64, s: &[T], a: &[T]) -> Vec<T> {
    let (x, theta, v, omega) = (s[0], s[1], s[2], s[3]);
    let total = p.cart_mass + p.pole_mass;
    let ml = p.pole_mass * p.pole_half_length;
    let (sin, cos) = (theta.sin(), theta.cos());

    let force = a[0] * p.force_gain - v * p.cart_friction - x * p.centering_stiffness;
    let temp = (force + omega * omega * sin * ml) / total;
    let theta_acc = (sin * p.gravity - cos * temp - omega * (p.pole_friction / ml))
        / ((cos * cos * (-p.pole_mass / total) + 4.0 / 3.0) * p.pole_half_length);
    let x_acc = temp - theta_acc * cos * (ml / total);

    super::integrate(&[x, theta], &[v, omega], &[x_acc, theta_acc], dt)
}

pub(crate) fn reset<R: Rng>(rng: &mut R) -> Vec<f64> {
    vec![
        rng.random_range(-0.2..0.2),
        rng.random_range(-0.2..0.2),
        rng.random_range(-0.1..0.1),
        rng.random_range(-0.1..0.1),
    ]
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use crate::envs::{step, step_with_jacobians, EnvSpec, State};

    #[test]
    fn upright_rest_is_fixed_point() {
        let env = EnvSpec::by_name("cartpole").unwrap();
        let s = State {
            values: vec![0.0; 4],
            t: 0,
        };
        let next = step(&env, &s, &[0.0]).unwrap();
        for v in next.values {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn jacobians_dense_at_random_states() {
        let env = EnvSpec::by_name("cartpole").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let s = State {
                values: env.sample_state(&mut rng),
                t: 0,
            };
            let a = env.sample_action(&mut rng);
            let (_, j) = step_with_jacobians(&env, &s, &a).unwrap();
            assert!(j.j_state.iter().all(|v| v.abs() >= 1e-12), "{:?}", j.j_state);
            assert!(j.j_action.iter().all(|v| v.abs() >= 1e-12));
        }
    }
}
