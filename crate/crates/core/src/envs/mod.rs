//! Analytic, differentiable, discrete-time environments.
//!
//! Every environment integrates its ODE with semi-implicit Euler (velocity
//! first, then position with the new velocity) at `dt = 0.01` s by default.
//! Actions are normalized to `[-1, 1]` per dimension and scaled by a gain
//! parameter inside the dynamics.
//!
//! | name             | d_s | d_a | sparsity regime                          |
//! |------------------|-----|-----|------------------------------------------|
//! | `cartpole`       | 4   | 1   | dense                                    |
//! | `decoupled_pair` | 8   | 2   | globally sparse (two independent blocks) |
//! | `reacher2`       | 6   | 2   | global zeros from static variables       |
//! | `tethered_ball`  | 8   | 2   | state-dependent (slack / taut string)    |
//! | `bouncer`        | 2   | 1   | temporal (flight / ground contact)       |
//!
//! Piecewise dynamics switch with a `>=` comparison, so a state lying exactly
//! on a switching surface uses the "active" branch (contact, taut string) and
//! its one-sided derivative.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{self, Dual, JacobianPair, Real};
use crate::{Error, Result};

pub mod bouncer;
pub mod cartpole;
pub mod decoupled_pair;
pub mod reacher2;
pub mod tethered_ball;

/// Names accepted by [`make_env`].
pub const ENV_NAMES: [&str; 5] = [
    "decoupled_pair",
    "cartpole",
    "tethered_ball",
    "bouncer",
    "reacher2",
];

pub const DEFAULT_DT: f64 = 0.01;
pub const DEFAULT_HORIZON: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    DecoupledPair,
    Cartpole,
    TetheredBall,
    Bouncer,
    Reacher2,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvKind::DecoupledPair => "decoupled_pair",
            EnvKind::Cartpole => "cartpole",
            EnvKind::TetheredBall => "tethered_ball",
            EnvKind::Bouncer => "bouncer",
            EnvKind::Reacher2 => "reacher2",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Ok(match name {
            "decoupled_pair" => EnvKind::DecoupledPair,
            "cartpole" => EnvKind::Cartpole,
            "tethered_ball" => EnvKind::TetheredBall,
            "bouncer" => EnvKind::Bouncer,
            "reacher2" => EnvKind::Reacher2,
            _ => {
                return Err(Error::UnknownEnv {
                    name: name.to_string(),
                    valid: ENV_NAMES.join(", "),
                })
            }
        })
    }
}

/// Typed parameters, resolved once at construction.
#[derive(Clone, Debug)]
enum Model {
    DecoupledPair(decoupled_pair::Params),
    Cartpole(cartpole::Params),
    TetheredBall(tethered_ball::Params),
    Bouncer(bouncer::Params),
    Reacher2(reacher2::Params),
}

/// A named differentiable dynamical system. Immutable after construction.
#[derive(Clone, Debug)]
pub struct EnvSpec {
    pub name: String,
    pub kind: EnvKind,
    pub d_s: usize,
    pub d_a: usize,
    pub dt: f64,
    pub params: BTreeMap<String, f64>,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    pub horizon: usize,
    /// `d_s x (d_s + d_a)`; `true` where an edge may exist.
    pub known_mask: Option<Array2<bool>>,
    model: Model,
}

/// Environment state at step `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct State {
    pub values: Vec<f64>,
    pub t: usize,
}

/// Builds an environment with its documented default parameters, applying
/// `overrides` on top. `dt` and `horizon` may be overridden like any other
/// parameter.
pub fn make_env(name: &str, overrides: &BTreeMap<String, f64>) -> Result<EnvSpec> {
    let kind = EnvKind::from_name(name)?;
    let mut params = match kind {
        EnvKind::DecoupledPair => decoupled_pair::defaults(),
        EnvKind::Cartpole => cartpole::defaults(),
        EnvKind::TetheredBall => tethered_ball::defaults(),
        EnvKind::Bouncer => bouncer::defaults(),
        EnvKind::Reacher2 => reacher2::defaults(),
    };
    params.insert("dt".into(), DEFAULT_DT);
    params.insert("horizon".into(), DEFAULT_HORIZON as f64);
    for (k, v) in overrides {
        match params.get_mut(k) {
            Some(slot) => *slot = *v,
            None => {
                return Err(Error::UnknownParam {
                    env: name.to_string(),
                    param: k.clone(),
                    valid: params.keys().cloned().collect::<Vec<_>>().join(", "),
                })
            }
        }
        if !v.is_finite() {
            return Err(Error::Parameter(format!("override `{k}` must be finite")));
        }
    }
    let dt = params["dt"];
    if !(dt > 0.0) {
        return Err(Error::Parameter(format!("dt must be > 0, got {dt}")));
    }
    let horizon = params["horizon"];
    if !(horizon >= 1.0) || horizon.fract() != 0.0 {
        return Err(Error::Parameter(format!(
            "horizon must be a positive integer, got {horizon}"
        )));
    }
    let get = |k: &str| params[k];
    let (model, d_s, d_a, known_mask) = match kind {
        EnvKind::DecoupledPair => {
            let p = decoupled_pair::Params::from_lookup(get);
            (Model::DecoupledPair(p), 8, 2, Some(decoupled_pair::known_mask()))
        }
        EnvKind::Cartpole => {
            let p = cartpole::Params::from_lookup(get);
            (Model::Cartpole(p), 4, 1, Some(Array2::from_elem((4, 5), true)))
        }
        EnvKind::TetheredBall => {
            let p = tethered_ball::Params::from_lookup(get);
            (Model::TetheredBall(p), 8, 2, Some(tethered_ball::known_mask()))
        }
        EnvKind::Bouncer => {
            let p = bouncer::Params::from_lookup(get);
            (Model::Bouncer(p), 2, 1, Some(Array2::from_elem((2, 3), true)))
        }
        EnvKind::Reacher2 => {
            let p = reacher2::Params::from_lookup(get);
            (Model::Reacher2(p), 6, 2, Some(reacher2::known_mask()))
        }
    };
    Ok(EnvSpec {
        name: kind.name().to_string(),
        kind,
        d_s,
        d_a,
        dt,
        action_low: vec![-1.0; d_a],
        action_high: vec![1.0; d_a],
        horizon: horizon as usize,
        known_mask,
        params,
        model,
    })
}

impl EnvSpec {
    /// Default environment by name.
    pub fn by_name(name: &str) -> Result<Self> {
        make_env(name, &BTreeMap::new())
    }

    /// Raw transition map `(s, a) -> s'`, generic over the scalar type.
    pub fn transition<T: Real>(&self, s: &[T], a: &[T]) -> Vec<T> {
        let dt = self.dt;
        match &self.model {
            Model::DecoupledPair(p) => decoupled_pair::transition(p, dt, s, a),
            Model::Cartpole(p) => cartpole::transition(p, dt, s, a),
            Model::TetheredBall(p) => tethered_ball::transition(p, dt, s, a),
            Model::Bouncer(p) => bouncer::transition(p, dt, s, a),
            Model::Reacher2(p) => reacher2::transition(p, dt, s, a),
        }
    }

    /// Transition on the concatenated input `[s, a]`.
    pub fn transition_joint<T: Real>(&self, x: &[T]) -> Vec<T> {
        self.transition(&x[..self.d_s], &x[self.d_s..])
    }

    /// Distance of `s` to the nearest switching surface of a piecewise
    /// dynamics model, or `None` for smooth environments.
    pub fn switch_distance(&self, s: &[f64]) -> Option<f64> {
        match &self.model {
            Model::TetheredBall(p) => Some(tethered_ball::stretch(p, s).abs()),
            Model::Bouncer(_) => Some(s[0].abs()),
            _ => None,
        }
    }

    /// Uniform sample from the documented in-range box of states, used for
    /// Jacobian verification. Not the reset distribution.
    pub fn sample_state<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let ranges: &[(f64, f64)] = match self.kind {
            EnvKind::DecoupledPair => &decoupled_pair::STATE_BOX,
            EnvKind::Cartpole => &cartpole::STATE_BOX,
            EnvKind::TetheredBall => &tethered_ball::STATE_BOX,
            EnvKind::Bouncer => &bouncer::STATE_BOX,
            EnvKind::Reacher2 => &reacher2::STATE_BOX,
        };
        ranges.iter().map(|&(lo, hi)| rng.random_range(lo..hi)).collect()
    }

    pub fn sample_action<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        self.action_low
            .iter()
            .zip(&self.action_high)
            .map(|(&lo, &hi)| rng.random_range(lo..=hi))
            .collect()
    }

    pub fn d_in(&self) -> usize {
        self.d_s + self.d_a
    }

    #[cfg(test)]
    pub(crate) fn tethered_params(&self) -> Option<&tethered_ball::Params> {
        match &self.model {
            Model::TetheredBall(p) => Some(p),
            _ => None,
        }
    }
}

/// Deterministic initial state from the environment's reset distribution.
pub fn reset(env: &EnvSpec, seed: u64) -> State {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = match &env.model {
        Model::DecoupledPair(_) => decoupled_pair::reset(&mut rng),
        Model::Cartpole(_) => cartpole::reset(&mut rng),
        Model::TetheredBall(p) => tethered_ball::reset(p, &mut rng),
        Model::Bouncer(_) => bouncer::reset(&mut rng),
        Model::Reacher2(_) => reacher2::reset(&mut rng),
    };
    State { values, t: 0 }
}

fn check_inputs(env: &EnvSpec, s: &State, a: &[f64]) -> Result<()> {
    if s.values.len() != env.d_s {
        return Err(Error::Shape(format!(
            "state has {} entries, {} expects {}",
            s.values.len(),
            env.name,
            env.d_s
        )));
    }
    if a.len() != env.d_a {
        return Err(Error::Shape(format!(
            "action has {} entries, {} expects {}",
            a.len(),
            env.name,
            env.d_a
        )));
    }
    if let Some(i) = s.values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Parameter(format!("state component {i} is non-finite")));
    }
    for (i, &ai) in a.iter().enumerate() {
        if !(ai >= env.action_low[i] && ai <= env.action_high[i]) {
            return Err(Error::Parameter(format!(
                "action component {i} = {ai} outside [{}, {}]",
                env.action_low[i], env.action_high[i]
            )));
        }
    }
    if s.t >= env.horizon {
        return Err(Error::Parameter(format!(
            "state at t = {} already reached the horizon {}",
            s.t, env.horizon
        )));
    }
    Ok(())
}

fn check_finite(values: &[f64], t: usize) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::Divergence { t, index }),
        None => Ok(()),
    }
}

/// One semi-implicit Euler step.
pub fn step(env: &EnvSpec, s: &State, a: &[f64]) -> Result<State> {
    check_inputs(env, s, a)?;
    let values = env.transition(&s.values, a);
    check_finite(&values, s.t)?;
    Ok(State {
        values,
        t: s.t + 1,
    })
}

/// One step together with the exact state and action Jacobians.
pub fn step_with_jacobians(env: &EnvSpec, s: &State, a: &[f64]) -> Result<(State, JacobianPair)> {
    check_inputs(env, s, a)?;
    let mut x = s.values.clone();
    x.extend_from_slice(a);
    let dual = diff::eval_dual(|x: &[Dual]| env.transition_joint(x), &x).map_err(|e| match e {
        Error::NonFinite { index } => Error::Divergence { t: s.t, index },
        other => other,
    })?;
    let jac = JacobianPair::split(&dual.tangents, env.d_s);
    Ok((
        State {
            values: dual.value,
            t: s.t + 1,
        },
        jac,
    ))
}

/// Full `d_s x (d_s + d_a)` Jacobian at an arbitrary `(s, a)`, without the
/// range and horizon checks of [`step_with_jacobians`].
pub fn joint_jacobian(env: &EnvSpec, s: &[f64], a: &[f64]) -> Result<Array2<f64>> {
    let mut x = s.to_vec();
    x.extend_from_slice(a);
    diff::jacobian_forward(|x: &[Dual]| env.transition_joint(x), &x)
}

/// Central-difference counterpart of [`joint_jacobian`].
pub fn joint_jacobian_fd(env: &EnvSpec, s: &[f64], a: &[f64], h: f64) -> Result<Array2<f64>> {
    let mut x = s.to_vec();
    x.extend_from_slice(a);
    diff::jacobian_fd(|x: &[f64]| env.transition_joint(x), &x, h)
}

/// Semi-implicit Euler update shared by all environments: `v' = v + dt * acc`,
/// `q' = q + dt * v'`. Returns `[q', v']`.
pub(crate) fn integrate<T: Real>(q: &[T], v: &[T], acc: &[T], dt: f64) -> Vec<T> {
    let v_next: Vec<T> = v.iter().zip(acc).map(|(&vi, &ai)| vi + ai * dt).collect();
    let mut out: Vec<T> = q
        .iter()
        .zip(&v_next)
        .map(|(&qi, &vi)| qi + vi * dt)
        .collect();
    out.extend(v_next);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_env_lists_names() {
        let err = EnvSpec::by_name("hopper").unwrap_err();
        let msg = err.to_string();
        for n in ENV_NAMES {
            assert!(msg.contains(n), "{msg}");
        }
    }

    #[test]
    fn unknown_override_rejected() {
        let mut o = BTreeMap::new();
        o.insert("wingspan".to_string(), 1.0);
        assert!(matches!(
            make_env("cartpole", &o),
            Err(Error::UnknownParam { .. })
        ));
    }

    #[test]
    fn override_echo() {
        let mut o = BTreeMap::new();
        o.insert("stiffness".to_string(), 2000.0);
        let env = make_env("bouncer", &o).unwrap();
        assert_eq!(env.params["stiffness"], 2000.0);
    }

    #[test]
    fn dims_and_masks() {
        for (name, ds, da) in [
            ("decoupled_pair", 8, 2),
            ("cartpole", 4, 1),
            ("tethered_ball", 8, 2),
            ("bouncer", 2, 1),
            ("reacher2", 6, 2),
        ] {
            let env = EnvSpec::by_name(name).unwrap();
            assert_eq!((env.d_s, env.d_a), (ds, da), "{name}");
            assert!(env.dt > 0.0);
            if let Some(m) = &env.known_mask {
                assert_eq!(m.dim(), (ds, ds + da));
            }
            for (lo, hi) in env.action_low.iter().zip(&env.action_high) {
                assert!(lo < hi);
            }
        }
    }

    #[test]
    fn bad_dt_rejected() {
        let mut o = BTreeMap::new();
        o.insert("dt".to_string(), 0.0);
        assert!(make_env("cartpole", &o).is_err());
    }

    #[test]
    fn out_of_range_action_rejected() {
        let env = EnvSpec::by_name("cartpole").unwrap();
        let s = reset(&env, 0);
        assert!(step(&env, &s, &[1.5]).is_err());
        assert!(step(&env, &s, &[f64::NAN]).is_err());
    }

    #[test]
    fn horizon_enforced() {
        let env = EnvSpec::by_name("cartpole").unwrap();
        let mut s = reset(&env, 0);
        s.t = env.horizon;
        assert!(step(&env, &s, &[0.0]).is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let mut o = BTreeMap::new();
        o.insert("stiffness".to_string(), 1e308);
        let env = make_env("bouncer", &o).unwrap();
        let s = State {
            values: vec![-1e10, 0.0],
            t: 3,
        };
        match step(&env, &s, &[0.0]) {
            Err(Error::Divergence { t, .. }) => assert_eq!(t, 3),
            other => panic!("expected divergence, got {other:?}"),
        }
        assert!(matches!(
            step_with_jacobians(&env, &s, &[0.0]),
            Err(Error::Divergence { t: 3, .. })
        ));
    }

    #[test]
    fn reset_is_deterministic() {
        for name in ENV_NAMES {
            let env = EnvSpec::by_name(name).unwrap();
            assert_eq!(reset(&env, 7), reset(&env, 7));
            assert_ne!(reset(&env, 7), reset(&env, 8));
        }
    }

    #[test]
    fn dual_and_plain_steps_agree_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for name in ENV_NAMES {
            let env = EnvSpec::by_name(name).unwrap();
            for _ in 0..50 {
                let s = State {
                    values: env.sample_state(&mut rng),
                    t: 0,
                };
                let a = env.sample_action(&mut rng);
                let plain = step(&env, &s, &a).unwrap();
                let (dual, _) = step_with_jacobians(&env, &s, &a).unwrap();
                assert_eq!(plain, dual, "{name}");
            }
        }
    }

    #[test]
    fn chain_rule_over_two_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for name in ENV_NAMES {
            let env = EnvSpec::by_name(name).unwrap();
            for _ in 0..20 {
                let s = env.sample_state(&mut rng);
                let a = env.sample_action(&mut rng);
                let two = diff::jacobian_forward(
                    |x: &[Dual]| {
                        let ac: Vec<Dual> = a.iter().map(|&v| Dual::constant(v)).collect();
                        let s1 = env.transition(x, &ac);
                        env.transition(&s1, &ac)
                    },
                    &s,
                )
                .unwrap();
                let (s1, j0) = {
                    let st = State { values: s.clone(), t: 0 };
                    step_with_jacobians(&env, &st, &a).unwrap()
                };
                let (_, j1) = step_with_jacobians(&env, &s1, &a).unwrap();
                let prod = j1.j_state.dot(&j0.j_state);
                let err = diff::relative_max_error(&two, &prod);
                assert!(err < 1e-10, "{name}: {err}");
            }
        }
    }
}
