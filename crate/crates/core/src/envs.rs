//! Desk-scale continuous-control environments with delayed and sparse rewards.
//!
//! Each environment exposes its dynamics as a pure step function over an
//! explicit state plus an [`Env`] wrapper that owns the episode counter and a
//! seeded generator for reset noise. Truncation at the episode limit is
//! reported separately from termination.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng as _;

use crate::rng::{seeded, Rng};
use crate::{Error, Result};

pub type Observation = Vec<f64>;
pub type ActionVec = Vec<f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next_obs: Observation,
    pub reward: f64,
    pub done: bool,
    pub truncated: bool,
}

pub trait Env: Send {
    fn name(&self) -> &'static str;
    fn obs_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn reset(&mut self) -> Observation;
    /// Advances one step. Actions are clamped to `[-1, 1]` componentwise.
    fn step(&mut self, action: &[f64]) -> Result<StepResult>;
}

fn clamp_action(action: &[f64], dim: usize) -> Result<Vec<f64>> {
    if action.len() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: action.len() });
    }
    if action.iter().any(|a| !a.is_finite()) {
        return Err(Error::non_finite("action"));
    }
    Ok(action.iter().map(|a| a.clamp(-1.0, 1.0)).collect())
}

// ---------------------------------------------------------------- pointmass

/// Reward shape of the delayed locomotion template:
/// `forward * 1[x > c] - w_a * |a|^2 + H`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayedRewardConfig {
    pub positional_delay_c: f64,
    pub action_cost_w_a: f64,
    pub health_reward_h: f64,
    pub episode_limit: usize,
}

impl DelayedRewardConfig {
    pub fn delayed() -> Self {
        Self { positional_delay_c: 1.0, action_cost_w_a: 0.5, health_reward_h: 0.0, episode_limit: 200 }
    }

    pub fn very_delayed() -> Self {
        Self { positional_delay_c: 2.0, ..Self::delayed() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointMassState {
    pub x: f64,
    pub v: f64,
}

pub const POINTMASS_DT: f64 = 0.1;

/// One step of the 1-D point mass: `v' = clamp(v + 0.1 a, -1, 1)`,
/// `x' = x + 0.1 v'`. The indicator uses the post-step position.
pub fn pointmass_step(state: PointMassState, action: f64, cfg: &DelayedRewardConfig) -> (PointMassState, f64) {
    let v = (state.v + POINTMASS_DT * action).clamp(-1.0, 1.0);
    let x = state.x + POINTMASS_DT * v;
    let forward = if x > cfg.positional_delay_c { v } else { 0.0 };
    let reward = forward - cfg.action_cost_w_a * action * action + cfg.health_reward_h;
    (PointMassState { x, v }, reward)
}

#[derive(Debug, Clone)]
pub struct PointMass {
    pub cfg: DelayedRewardConfig,
    pub state: PointMassState,
    t: usize,
    rng: Rng,
    name: &'static str,
}

impl PointMass {
    pub fn new(cfg: DelayedRewardConfig, rng: Rng, name: &'static str) -> Self {
        Self { cfg, state: PointMassState { x: 0.0, v: 0.0 }, t: 0, rng, name }
    }

    /// Loose bound on `|x|` over one episode (reset noise plus `dt * limit`).
    pub fn position_bound(&self) -> f64 {
        0.01 + POINTMASS_DT * self.cfg.episode_limit as f64
    }
}

impl Env for PointMass {
    fn name(&self) -> &'static str {
        self.name
    }
    fn obs_dim(&self) -> usize {
        2
    }
    fn action_dim(&self) -> usize {
        1
    }
    fn reset(&mut self) -> Observation {
        self.t = 0;
        self.state = PointMassState {
            x: self.rng.random_range(-0.01..0.01),
            v: self.rng.random_range(-0.01..0.01),
        };
        vec![self.state.x, self.state.v]
    }
    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        let a = clamp_action(action, 1)?;
        let (next, reward) = pointmass_step(self.state, a[0], &self.cfg);
        self.state = next;
        self.t += 1;
        Ok(StepResult {
            next_obs: vec![next.x, next.v],
            reward,
            done: false,
            truncated: self.t >= self.cfg.episode_limit,
        })
    }
}

// ----------------------------------------------------------------- cartpole

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartPoleState {
    pub x: f64,
    pub x_dot: f64,
    /// Pole angle, 0 upright, wrapped to `(-pi, pi]`.
    pub theta: f64,
    pub theta_dot: f64,
}

pub const CARTPOLE_LIMIT: usize = 1000;
pub const CART_X_LIMIT: f64 = 2.4;
pub const CART_VEL_LIMIT: f64 = 10.0;
pub const POLE_VEL_LIMIT: f64 = 25.0;

const CART_MASS: f64 = 1.0;
const POLE_MASS: f64 = 0.1;
const POLE_HALF_LENGTH: f64 = 0.5;
const GRAVITY: f64 = 9.8;
const FORCE_SCALE: f64 = 10.0;
const CARTPOLE_DT: f64 = 0.02;

fn wrap_angle(theta: f64) -> f64 {
    let mut t = theta.rem_euclid(2.0 * PI);
    if t > PI {
        t -= 2.0 * PI;
    }
    t
}

/// Sparse success reward: cart near the center and pole nearly upright.
pub fn cartpole_success(state: &CartPoleState) -> bool {
    state.x.abs() < 0.25 && state.theta.cos() > 0.995
}

/// Euler step of the classic cart-pole with sticky walls at `±2.4`.
pub fn cartpole_swingup_step(state: CartPoleState, action: f64) -> (CartPoleState, f64) {
    let force = FORCE_SCALE * action;
    let total_mass = CART_MASS + POLE_MASS;
    let pole_ml = POLE_MASS * POLE_HALF_LENGTH;
    let (sin, cos) = state.theta.sin_cos();
    let temp = (force + pole_ml * state.theta_dot * state.theta_dot * sin) / total_mass;
    let theta_acc = (GRAVITY * sin - cos * temp)
        / (POLE_HALF_LENGTH * (4.0 / 3.0 - POLE_MASS * cos * cos / total_mass));
    let x_acc = temp - pole_ml * theta_acc * cos / total_mass;

    let mut x = state.x + CARTPOLE_DT * state.x_dot;
    let mut x_dot = (state.x_dot + CARTPOLE_DT * x_acc).clamp(-CART_VEL_LIMIT, CART_VEL_LIMIT);
    let theta = wrap_angle(state.theta + CARTPOLE_DT * state.theta_dot);
    let theta_dot = (state.theta_dot + CARTPOLE_DT * theta_acc).clamp(-POLE_VEL_LIMIT, POLE_VEL_LIMIT);
    if x.abs() >= CART_X_LIMIT {
        x = x.clamp(-CART_X_LIMIT, CART_X_LIMIT);
        x_dot = 0.0;
    }
    let next = CartPoleState { x, x_dot, theta, theta_dot };
    let reward = if cartpole_success(&next) { 1.0 } else { 0.0 };
    (next, reward)
}

#[derive(Debug, Clone)]
pub struct CartPoleSwingUp {
    pub state: CartPoleState,
    t: usize,
    rng: Rng,
}

impl CartPoleSwingUp {
    pub fn new(rng: Rng) -> Self {
        Self { state: CartPoleState { x: 0.0, x_dot: 0.0, theta: PI, theta_dot: 0.0 }, t: 0, rng }
    }

    fn observe(&self) -> Observation {
        let s = &self.state;
        vec![s.x, s.x_dot, s.theta.cos(), s.theta.sin(), s.theta_dot]
    }
}

impl Env for CartPoleSwingUp {
    fn name(&self) -> &'static str {
        "cartpole-swingup-sparse"
    }
    fn obs_dim(&self) -> usize {
        5
    }
    fn action_dim(&self) -> usize {
        1
    }
    fn reset(&mut self) -> Observation {
        self.t = 0;
        self.state = CartPoleState {
            x: 0.0,
            x_dot: 0.0,
            theta: wrap_angle(PI + self.rng.random_range(-0.01..0.01)),
            theta_dot: 0.0,
        };
        self.observe()
    }
    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        let a = clamp_action(action, 1)?;
        let (next, reward) = cartpole_swingup_step(self.state, a[0]);
        self.state = next;
        self.t += 1;
        Ok(StepResult { next_obs: self.observe(), reward, done: false, truncated: self.t >= CARTPOLE_LIMIT })
    }
}

// ------------------------------------------------------------- mountain car

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MountainCarState {
    pub p: f64,
    pub v: f64,
}

pub const MOUNTAINCAR_LIMIT: usize = 999;
pub const MOUNTAINCAR_GOAL: f64 = 0.45;

/// Continuous mountain car with a sparse goal bonus and a small action cost.
/// Returns the next state, the reward and whether the goal was reached.
pub fn mountaincar_sparse_step(state: MountainCarState, action: f64) -> (MountainCarState, f64, bool) {
    let v = (state.v + 0.0015 * action - 0.0025 * (3.0 * state.p).cos()).clamp(-0.07, 0.07);
    let p = (state.p + v).clamp(-1.2, 0.6);
    let goal = p >= MOUNTAINCAR_GOAL;
    let reward = if goal { 1.0 } else { 0.0 } - 0.01 * action * action;
    (MountainCarState { p, v }, reward, goal)
}

#[derive(Debug, Clone)]
pub struct MountainCarSparse {
    pub state: MountainCarState,
    t: usize,
    rng: Rng,
}

impl MountainCarSparse {
    pub fn new(rng: Rng) -> Self {
        Self { state: MountainCarState { p: -0.5, v: 0.0 }, t: 0, rng }
    }
}

impl Env for MountainCarSparse {
    fn name(&self) -> &'static str {
        "mountaincar-sparse"
    }
    fn obs_dim(&self) -> usize {
        2
    }
    fn action_dim(&self) -> usize {
        1
    }
    fn reset(&mut self) -> Observation {
        self.t = 0;
        self.state = MountainCarState { p: self.rng.random_range(-0.6..-0.4), v: 0.0 };
        vec![self.state.p, self.state.v]
    }
    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        let a = clamp_action(action, 1)?;
        let (next, reward, goal) = mountaincar_sparse_step(self.state, a[0]);
        self.state = next;
        self.t += 1;
        Ok(StepResult {
            next_obs: vec![next.p, next.v],
            reward,
            done: goal,
            truncated: !goal && self.t >= MOUNTAINCAR_LIMIT,
        })
    }
}

// ----------------------------------------------------------------- registry

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EnvKind {
    PointMassDelayed,
    PointMassVeryDelayed,
    CartPoleSwingUpSparse,
    MountainCarSparse,
}

impl EnvKind {
    pub const ALL: [EnvKind; 4] = [
        EnvKind::PointMassDelayed,
        EnvKind::PointMassVeryDelayed,
        EnvKind::CartPoleSwingUpSparse,
        EnvKind::MountainCarSparse,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EnvKind::PointMassDelayed => "pointmass-delayed",
            EnvKind::PointMassVeryDelayed => "pointmass-very-delayed",
            EnvKind::CartPoleSwingUpSparse => "cartpole-swingup-sparse",
            EnvKind::MountainCarSparse => "mountaincar-sparse",
        }
    }

    /// Builds the environment with its reset noise drawn from `seed`.
    pub fn make(self, seed: u64) -> Box<dyn Env> {
        self.make_with_rng(seeded(seed))
    }

    pub fn make_with_rng(self, rng: Rng) -> Box<dyn Env> {
        match self {
            EnvKind::PointMassDelayed => {
                Box::new(PointMass::new(DelayedRewardConfig::delayed(), rng, "pointmass-delayed"))
            }
            EnvKind::PointMassVeryDelayed => {
                Box::new(PointMass::new(DelayedRewardConfig::very_delayed(), rng, "pointmass-very-delayed"))
            }
            EnvKind::CartPoleSwingUpSparse => Box::new(CartPoleSwingUp::new(rng)),
            EnvKind::MountainCarSparse => Box::new(MountainCarSparse::new(rng)),
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EnvKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown environment '{s}'")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(c: f64, w_a: f64, h: f64) -> DelayedRewardConfig {
        DelayedRewardConfig { positional_delay_c: c, action_cost_w_a: w_a, health_reward_h: h, episode_limit: 200 }
    }

    #[test]
    fn pointmass_before_delay_pays_only_action_cost() {
        let (next, r) = pointmass_step(PointMassState { x: 0.5, v: 0.0 }, 0.4, &cfg(1.0, 0.5, 0.0));
        assert!(next.x <= 1.0);
        assert!((r - (-0.08)).abs() < 1e-15);
    }

    #[test]
    fn pointmass_rest_is_fixed_point() {
        let s = PointMassState { x: 0.0, v: 0.0 };
        let (next, r) = pointmass_step(s, 0.0, &cfg(1.0, 0.5, 0.0));
        assert_eq!(next, s);
        assert_eq!(r, 0.0);
    }

    #[test]
    fn pointmass_past_delay_pays_velocity() {
        let (next, r) = pointmass_step(PointMassState { x: 1.45, v: 0.5 }, 1.0, &cfg(1.0, 0.5, 0.0));
        assert!((next.v - 0.6).abs() < 1e-15);
        assert!((next.x - 1.51).abs() < 1e-12);
        assert!((r - 0.1).abs() < 1e-12);
    }

    #[test]
    fn pointmass_truncates_at_limit() {
        let mut env = EnvKind::PointMassDelayed.make(0);
        env.reset();
        for t in 1..=200 {
            let s = env.step(&[0.0]).unwrap();
            assert!(!s.done);
            assert_eq!(s.truncated, t == 200);
        }
    }

    #[test]
    fn cartpole_upright_center_is_success() {
        let s = CartPoleState { x: 0.0, x_dot: 0.0, theta: 0.0, theta_dot: 0.0 };
        let (next, r) = cartpole_swingup_step(s, 0.0);
        assert_eq!(next, s);
        assert_eq!(r, 1.0);
    }

    #[test]
    fn cartpole_off_center_fails() {
        let s = CartPoleState { x: 0.3, x_dot: 0.0, theta: 0.0, theta_dot: 0.0 };
        assert_eq!(cartpole_swingup_step(s, 0.0).1, 0.0);
    }

    #[test]
    fn cartpole_hanging_fails() {
        for x in [-0.1, 0.0, 0.2] {
            let s = CartPoleState { x, x_dot: 0.0, theta: PI, theta_dot: 0.0 };
            assert_eq!(cartpole_swingup_step(s, 0.5).1, 0.0);
        }
    }

    #[test]
    fn cartpole_starts_hanging() {
        let mut env = CartPoleSwingUp::new(seeded(1));
        let obs = env.reset();
        assert!(obs[2] < -0.999);
        assert_eq!(env.obs_dim(), obs.len());
    }

    #[test]
    fn mountaincar_goal_terminates() {
        let (next, r, goal) = mountaincar_sparse_step(MountainCarState { p: 0.44, v: 0.06 }, 0.0);
        assert!(next.p >= 0.45);
        assert!(goal);
        assert_eq!(r, 1.0);
    }

    #[test]
    fn mountaincar_idle_is_free() {
        let (_, r, goal) = mountaincar_sparse_step(MountainCarState { p: -0.5, v: 0.0 }, 0.0);
        assert!(!goal);
        assert_eq!(r, 0.0);
    }

    #[test]
    fn mountaincar_hand_step() {
        let (next, r, _) = mountaincar_sparse_step(MountainCarState { p: -0.5, v: 0.0 }, 1.0);
        // 0.0015 - 0.0025 cos(-1.5), cos(1.5) = 0.0707372016677029
        let v = 0.0015 - 0.0025 * 0.070_737_201_667_702_9;
        assert!((next.v - v).abs() < 1e-15);
        assert!((next.p - (-0.5 + v)).abs() < 1e-15);
        assert!((r + 0.01).abs() < 1e-15);
    }

    #[test]
    fn env_names_roundtrip() {
        for k in EnvKind::ALL {
            assert_eq!(k.as_str().parse::<EnvKind>().unwrap(), k);
            assert_eq!(k.make(0).name(), k.as_str());
        }
        assert!("ant".parse::<EnvKind>().is_err());
    }

    #[test]
    fn wrong_action_dim_is_rejected() {
        let mut env = EnvKind::MountainCarSparse.make(0);
        env.reset();
        assert!(env.step(&[0.0, 1.0]).is_err());
    }

    fn rollout(kind: EnvKind, seed: u64, actions: &[f64]) -> Vec<StepResult> {
        let mut env = kind.make(seed);
        env.reset();
        let mut out = Vec::new();
        for &a in actions {
            let s = env.step(&[a]).unwrap();
            let end = s.done || s.truncated;
            out.push(s);
            if end {
                env.reset();
            }
        }
        out
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn rollouts_are_deterministic(seed in 0u64..1000, actions in proptest::collection::vec(-1f64..1.0, 1..300)) {
            for kind in EnvKind::ALL {
                prop_assert_eq!(rollout(kind, seed, &actions), rollout(kind, seed, &actions));
            }
        }

        #[test]
        fn pointmass_reward_decomposes(x in -3f64..3.0, v in -1f64..1.0, a in -1f64..1.0, h in 0f64..1.0) {
            let c = cfg(1.0, 0.5, h);
            let (next, r) = pointmass_step(PointMassState { x, v }, a, &c);
            let forward = r + c.action_cost_w_a * a * a - h;
            let expected = if next.x > c.positional_delay_c { next.v } else { 0.0 };
            prop_assert!((forward - expected).abs() < 1e-12);
        }

        #[test]
        fn sparse_rewards_are_binary_before_cost(actions in proptest::collection::vec(-1f64..1.0, 1..400)) {
            for s in rollout(EnvKind::CartPoleSwingUpSparse, 3, &actions) {
                prop_assert!(s.reward == 0.0 || s.reward == 1.0);
            }
            for (s, a) in rollout(EnvKind::MountainCarSparse, 3, &actions).iter().zip(&actions) {
                let base = s.reward + 0.01 * a * a;
                prop_assert!(base.abs() < 1e-12 || (base - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn observations_stay_in_bounds(actions in proptest::collection::vec(-1f64..1.0, 1..600)) {
            let pm = PointMass::new(DelayedRewardConfig::delayed(), seeded(0), "pointmass-delayed");
            let bound = pm.position_bound();
            for s in rollout(EnvKind::PointMassDelayed, 4, &actions) {
                prop_assert!(s.next_obs[0].abs() <= bound && s.next_obs[1].abs() <= 1.0);
            }
            for s in rollout(EnvKind::CartPoleSwingUpSparse, 4, &actions) {
                let o = &s.next_obs;
                prop_assert!(o[0].abs() <= CART_X_LIMIT && o[1].abs() <= CART_VEL_LIMIT && o[4].abs() <= POLE_VEL_LIMIT);
                prop_assert!(o[2].abs() <= 1.0 && o[3].abs() <= 1.0);
            }
            for s in rollout(EnvKind::MountainCarSparse, 4, &actions) {
                let o = &s.next_obs;
                prop_assert!((-1.2..=0.6).contains(&o[0]) && o[1].abs() <= 0.07);
            }
        }
    }
}
