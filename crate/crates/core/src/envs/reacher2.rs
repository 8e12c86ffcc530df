//! Planar two-link arm (no gravity) with a static 2D target.
//!
//! State `[theta1, theta2, omega1, omega2, target_x, target_y]`, action is the
//! pair of normalized joint torques. The target never moves, and since the arm
//! lies in the horizontal plane its dynamics do not depend on `theta1`; both
//! produce Jacobian entries that are zero for every sample.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use ndarray::Array2;
use rand::Rng;

use crate::diff::Real;

pub(crate) const STATE_BOX: [(f64, f64); 6] = [
    (-PI, PI),
    (-PI, PI),
    (-5.0, 5.0),
    (-5.0, 5.0),
    (-1.0, 1.0),
    (-1.0, 1.0),
];

#[derive(Clone, Debug)]
pub struct Params {
    pub link1_length: f64,
    pub link2_length: f64,
    pub link1_mass: f64,
    pub link2_mass: f64,
    pub joint_damping: f64,
    pub torque_gain: f64,
}

pub(crate) fn defaults() -> BTreeMap<String, f64> {
    [
        ("link1_length", 0.5),
        ("link2_length", 0.5),
        ("link1_mass", 1.0),
        ("link2_mass", 1.0),
        ("joint_damping", 0.1),
        ("torque_gain", 1.0),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

impl Params {
    pub(crate) fn from_lookup(get: impl Fn(&str) -> f64) -> Self {
        Params {
            link1_length: get("link1_length"),
            link2_length: get("link2_length"),
            link1_mass: get("link1_mass"),
            link2_mass: get("link2_mass"),
            joint_damping: get("joint_damping"),
            torque_gain: get("torque_gain"),
        }
    }
}

pub(crate) fn transition<T: Real>(p: &Params, dt: f64, s: &[T], a: &[T]) -> Vec<T> {
    let (th1, th2, w1, w2) = (s[0], s[1], s[2], s[3]);
    let (l1, l2) = (p.link1_length, p.link2_length);
    let (m1, m2) = (p.link1_mass, p.link2_mass);
    let (lc1, lc2) = (0.5 * l1, 0.5 * l2);
    let (i1, i2) = (m1 * l1 * l1 / 12.0, m2 * l2 * l2 / 12.0);

    let cos2 = th2.cos();
    let h = th2.sin() * (m2 * l1 * lc2);
    let m11 = cos2 * (2.0 * m2 * l1 * lc2) + (m1 * lc1 * lc1 + i1 + m2 * (l1 * l1 + lc2 * lc2) + i2);
    let m12 = cos2 * (m2 * l1 * lc2) + (m2 * lc2 * lc2 + i2);
    let m22 = m2 * lc2 * lc2 + i2;

    let c1 = -(h * (w1 * w2 * 2.0 + w2 * w2));
    let c2 = h * w1 * w1;
    let r1 = a[0] * p.torque_gain - c1 - w1 * p.joint_damping;
    let r2 = a[1] * p.torque_gain - c2 - w2 * p.joint_damping;

    let det = m11 * m22 - m12 * m12;
    let acc1 = (r1 * m22 - m12 * r2) / det;
    let acc2 = (m11 * r2 - m12 * r1) / det;

    let mut out = super::integrate(&[th1, th2], &[w1, w2], &[acc1, acc2], dt);
    out.push(s[4]);
    out.push(s[5]);
    out
}

pub(crate) fn reset<R: Rng>(rng: &mut R) -> Vec<f64> {
    let radius = rng.random_range(0.2..0.9);
    let angle: f64 = rng.random_range(-PI..PI);
    vec![
        rng.random_range(-PI..PI),
        rng.random_range(-PI..PI),
        rng.random_range(-0.1..0.1),
        rng.random_range(-0.1..0.1),
        radius * angle.cos(),
        radius * angle.sin(),
    ]
}

pub(crate) fn known_mask() -> Array2<bool> {
    Array2::from_shape_fn((6, 8), |(i, j)| {
        let arm_row = i < 4;
        match j {
            // theta1 only feeds its own integration
            0 => i == 0,
            1..=3 => arm_row,
            4 | 5 => i == j,
            _ => arm_row,
        }
    })
}

#[cfg(test)]
mod tests {
    use crate::envs::{step_with_jacobians, EnvSpec, State};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn target_rows_are_identity() {
        let env = EnvSpec::by_name("reacher2").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let s = State {
                values: env.sample_state(&mut rng),
                t: 0,
            };
            let a = env.sample_action(&mut rng);
            let (next, j) = step_with_jacobians(&env, &s, &a).unwrap();
            assert_eq!(next.values[4..], s.values[4..]);
            for r in 4..6 {
                for c in 0..6 {
                    assert_eq!(j.j_state[[r, c]], if r == c { 1.0 } else { 0.0 });
                    assert_eq!(j.j_state[[c, r]], if r == c { 1.0 } else { 0.0 });
                }
                assert!(j.j_action.row(r).iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn mask_has_expected_zero_counts() {
        let env = EnvSpec::by_name("reacher2").unwrap();
        let m = env.known_mask.unwrap();
        let state_zeros = (0..6)
            .flat_map(|i| (0..6).map(move |j| (i, j)))
            .filter(|&(i, j)| !m[[i, j]])
            .count();
        let action_zeros = (0..6)
            .flat_map(|i| (6..8).map(move |j| (i, j)))
            .filter(|&(i, j)| !m[[i, j]])
            .count();
        // 3 from theta1 invariance, 16 target/arm cross terms, 2 target off-diagonals
        assert_eq!(state_zeros, 21);
        assert_eq!(action_zeros, 4);
    }
}
