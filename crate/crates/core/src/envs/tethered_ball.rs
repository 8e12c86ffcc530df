//! Planar ball-in-cup: an actuated cup tethered to a ball by an elastic string.
//!
//! State `[cup_x, cup_z, ball_x, ball_z, cup_vx, cup_vz, ball_vx, ball_vz]`,
//! action is the normalized 2D force on the cup. The cup is held near the
//! origin by a centering spring and is not subject to gravity; the ball is.
//!
//! With `d = ball - cup` and stretch `e = |d| - L`, the string carries tension
//! `k * e + c * e * de/dt` while `e >= 0` and nothing while slack. Slack
//! strings leave the ball in free fall, so the ball rows of the Jacobian do
//! not depend on the cup at all in that regime.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::Rng;

use crate::diff::Real;

pub(crate) const STATE_BOX: [(f64, f64); 8] = [
    (-0.3, 0.3),
    (-0.3, 0.3),
    (-0.6, 0.6),
    (-0.6, 0.6),
    (-2.0, 2.0),
    (-2.0, 2.0),
    (-3.0, 3.0),
    (-3.0, 3.0),
];

#[derive(Clone, Debug)]
pub struct Params {
    pub gravity: f64,
    pub cup_mass: f64,
    pub ball_mass: f64,
    pub string_length: f64,
    pub string_stiffness: f64,
    pub string_damping: f64,
    pub actuator_gain: f64,
    pub cup_stiffness: f64,
    pub cup_damping: f64,
}

pub(crate) fn defaults() -> BTreeMap<String, f64> {
    [
        ("gravity", 9.81),
        ("cup_mass", 1.0),
        ("ball_mass", 0.25),
        ("string_length", 0.3),
        ("string_stiffness", 1000.0),
        ("string_damping", 10.0),
        ("actuator_gain", 10.0),
        ("cup_stiffness", 20.0),
        ("cup_damping", 5.0),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

impl Params {
    pub(crate) fn from_lookup(get: impl Fn(&str) -> f64) -> Self {
        Params {
            gravity: get("gravity"),
            cup_mass: get("cup_mass"),
            ball_mass: get("ball_mass"),
            string_length: get("string_length"),
            string_stiffness: get("string_stiffness"),
            string_damping: get("string_damping"),
            actuator_gain: get("actuator_gain"),
            cup_stiffness: get("cup_stiffness"),
            cup_damping: get("cup_damping"),
        }
    }
}

/// Signed string stretch `|ball - cup| - L`; negative means slack.
pub fn stretch(p: &Params, s: &[f64]) -> f64 {
    let dx = s[2] - s[0];
    let dz = s[3] - s[1];
    (dx * dx + dz * dz).sqrt() - p.string_length
}

/// Ball rows of the state vector.
pub const BALL_ROWS: [usize; 4] = [2, 3, 6, 7];
/// Cup columns of the state vector.
pub const CUP_COLS: [usize; 4] = [0, 1, 4, 5];

pub(crate) fn transition<T: Real>(p: &Params, dt: f64, s: &[T], a: &[T]) -> Vec<T> {
    let (cx, cz, bx, bz) = (s[0], s[1], s[2], s[3]);
    let (cvx, cvz, bvx, bvz) = (s[4], s[5], s[6], s[7]);

    // string force acting on the ball
    let mut fx = T::cst(0.0);
    let mut fz = T::cst(0.0);
    let dx = bx - cx;
    let dz = bz - cz;
    let dist = (dx * dx + dz * dz).sqrt();
    let e = dist - p.string_length;
    if e.re() >= 0.0 {
        let (ux, uz) = (dx / dist, dz / dist);
        let rate = (bvx - cvx) * ux + (bvz - cvz) * uz;
        let tension = e * p.string_stiffness + e * rate * p.string_damping;
        fx = -(tension * ux);
        fz = -(tension * uz);
    }

    let cup_ax = (a[0] * p.actuator_gain - cvx * p.cup_damping - cx * p.cup_stiffness - fx)
        / p.cup_mass;
    let cup_az = (a[1] * p.actuator_gain - cvz * p.cup_damping - cz * p.cup_stiffness - fz)
        / p.cup_mass;
    let ball_ax = fx / p.ball_mass;
    let ball_az = fz / p.ball_mass - p.gravity;

    super::integrate(
        &[cx, cz, bx, bz],
        &[cvx, cvz, bvx, bvz],
        &[cup_ax, cup_az, ball_ax, ball_az],
        dt,
    )
}

/// Cup at rest at the origin; ball at rest somewhere below it inside the
/// slack radius.
pub(crate) fn reset<R: Rng>(p: &Params, rng: &mut R) -> Vec<f64> {
    let r = p.string_length * rng.random_range(0.3..0.8);
    let phi: f64 = rng.random_range(-1.0..1.0);
    vec![
        0.0,
        0.0,
        r * phi.sin(),
        -r * phi.cos(),
        0.0,
        0.0,
        0.0,
        0.0,
    ]
}

/// Everything may interact except the action, which only reaches the cup:
/// the ball feels the cup's current state, never the new cup velocity.
pub(crate) fn known_mask() -> Array2<bool> {
    Array2::from_shape_fn((8, 10), |(i, j)| j < 8 || !BALL_ROWS.contains(&i))
}
