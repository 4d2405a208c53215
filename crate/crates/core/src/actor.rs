//! Shared-trunk, multi-head squashed-Gaussian actor.
//!
//! Head `k` reads the trunk features and emits a mean and a log standard
//! deviation per action dimension. Actions are `tanh(u)` with
//! `u = mean + std * eps`, so gradients reach the trunk and heads through the
//! sampled action (reparameterization).

use rand::Rng;
use rand_distr::StandardNormal;

use crate::critic::critic_input;
use crate::numerics::{adam_step, Activation, AdamState, Matrix, MlpParams};
use crate::{Error, Result};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Added inside the log of the tanh Jacobian.
pub const TANH_EPS: f64 = 1e-6;

const HALF_LOG_TWO_PI: f64 = 0.918_938_533_204_672_7;

#[derive(Debug, Clone, PartialEq)]
pub struct ActorNet {
    pub trunk: MlpParams,
    pub heads: Vec<MlpParams>,
    pub action_dim: usize,
}

/// Gradients with the same layout as [`ActorNet`].
#[derive(Debug, Clone)]
pub struct ActorGrads {
    pub trunk: MlpParams,
    pub heads: Vec<MlpParams>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SquashedSample {
    pub action: Vec<f64>,
    pub log_prob: f64,
}

impl ActorNet {
    /// Trunk `obs_dim -> hidden...` (every layer normalized and activated),
    /// heads are single linear maps to `2 * act_dim`.
    pub fn new<R: Rng + ?Sized>(k: usize, obs_dim: usize, act_dim: usize, hidden: &[usize], rng: &mut R) -> Self {
        assert!(!hidden.is_empty(), "actor trunk needs at least one hidden layer");
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(hidden);
        let trunk = MlpParams::new(&sizes, Activation::CRelu, true, rng);
        let feat = trunk.output_dim();
        let heads = (0..k).map(|_| MlpParams::new(&[feat, 2 * act_dim], Activation::CRelu, false, rng)).collect();
        Self { trunk, heads, action_dim: act_dim }
    }

    pub fn k(&self) -> usize {
        self.heads.len()
    }

    pub fn obs_dim(&self) -> usize {
        self.trunk.input_dim()
    }

    fn check_head(&self, k: usize) -> Result<()> {
        if k >= self.k() {
            return Err(Error::invalid(format!("head {k} out of range for {} heads", self.k())));
        }
        Ok(())
    }

    /// Mean and clamped log-std of head `k` for a batch of states.
    pub fn distribution(&self, k: usize, s: &Matrix) -> Result<(Matrix, Matrix)> {
        self.check_head(k)?;
        let feat = self.trunk.predict(s)?;
        let out = self.heads[k].predict(&feat)?;
        let mean = out.columns(0, self.action_dim);
        let mut log_std = out.columns(self.action_dim, 2 * self.action_dim);
        log_std.data.iter_mut().for_each(|v| *v = v.clamp(LOG_STD_MIN, LOG_STD_MAX));
        Ok((mean, log_std))
    }

    /// `tanh(mean)` of head `k`.
    pub fn deterministic_actions(&self, k: usize, s: &Matrix) -> Result<Matrix> {
        let (mut mean, _) = self.distribution(k, s)?;
        mean.data.iter_mut().for_each(|v| *v = v.tanh());
        Ok(mean)
    }

    pub fn deterministic_action(&self, k: usize, s: &[f64]) -> Result<Vec<f64>> {
        let m = Matrix::from_vec(1, s.len(), s.to_vec())?;
        Ok(self.deterministic_actions(k, &m)?.data)
    }

    /// Reparameterized samples from head `k`, one per state row.
    pub fn sample_actions<R: Rng + ?Sized>(&self, k: usize, s: &Matrix, rng: &mut R) -> Result<(Matrix, Vec<f64>)> {
        let (mean, log_std) = self.distribution(k, s)?;
        let da = self.action_dim;
        let mut actions = Matrix::zeros(s.rows, da);
        let mut log_probs = Vec::with_capacity(s.rows);
        let mut u = vec![0.0; da];
        for i in 0..s.rows {
            for j in 0..da {
                let eps: f64 = rng.sample(StandardNormal);
                u[j] = mean.get(i, j) + log_std.get(i, j).exp() * eps;
                actions.set(i, j, u[j].tanh());
            }
            log_probs.push(squashed_log_prob(mean.row(i), log_std.row(i), &u));
        }
        Ok((actions, log_probs))
    }

    pub fn zero_grads(&self) -> ActorGrads {
        ActorGrads { trunk: self.trunk.zeros_like(), heads: self.heads.iter().map(|h| h.zeros_like()).collect() }
    }
}

/// Log-density of `tanh(u)` when `u ~ N(mean, diag(exp(log_std))^2)`.
pub fn squashed_log_prob(mean: &[f64], log_std: &[f64], u: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(u)
        .map(|((&m, &ls), &u)| {
            let z = (u - m) / ls.exp();
            let t = u.tanh();
            -0.5 * z * z - ls - HALF_LOG_TWO_PI - (1.0 - t * t + TANH_EPS).ln()
        })
        .sum()
}

/// One sample from head `k` at state `s`.
pub fn sample_action<R: Rng + ?Sized>(actor: &ActorNet, k: usize, s: &[f64], rng: &mut R) -> Result<SquashedSample> {
    let m = Matrix::from_vec(1, s.len(), s.to_vec())?;
    let (a, lp) = actor.sample_actions(k, &m, rng)?;
    Ok(SquashedSample { action: a.data, log_prob: lp[0] })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionMode {
    Stochastic,
    /// `tanh(mean)`, no entropy term.
    Deterministic,
}

#[derive(Debug, Clone)]
pub struct ActorLoss {
    pub value: f64,
    pub grads: ActorGrads,
    /// Log-probabilities of every sample drawn, head-major.
    pub log_probs: Vec<f64>,
}

/// Critic value and its action gradient for critic input rows `[s | a]`.
pub type QGrad = (Vec<f64>, Matrix);

/// Value and `dQ/da` of a scalar critic at `(s_i, a_i)`.
pub fn critic_action_grad(critic: &MlpParams, s: &Matrix, a: &Matrix) -> Result<QGrad> {
    let input = critic_input(s, a)?;
    let (out, cache) = critic.forward_batch(&input)?;
    let ones = Matrix::from_vec(s.rows, 1, vec![1.0; s.rows])?;
    let (_, dx) = critic.backward_batch(&cache, &ones)?;
    Ok((out.data, dx.columns(s.cols, s.cols + a.cols)))
}

/// `-(1/(n |heads|)) Σ_{i,k} (Q_k(s_i, ã_ik) - α log π_k(ã_ik | s_i))`.
///
/// `q(k, s, a)` returns the critic values for head `k`'s actions and their
/// action gradients; critic parameters are never touched.
pub fn actor_objective<R, F>(
    actor: &ActorNet,
    heads: &[usize],
    s: &Matrix,
    alpha: f64,
    mode: ActionMode,
    rng: &mut R,
    mut q: F,
) -> Result<ActorLoss>
where
    R: Rng + ?Sized,
    F: FnMut(usize, &Matrix, &Matrix) -> Result<QGrad>,
{
    let n = s.rows;
    let da = actor.action_dim;
    let norm = 1.0 / (n * heads.len()) as f64;
    let stochastic = mode == ActionMode::Stochastic;
    let (feat, trunk_cache) = actor.trunk.forward_batch(s)?;
    let mut feat_grad = Matrix::zeros(n, feat.cols);
    let mut grads = actor.zero_grads();
    let mut value = 0.0;
    let mut all_log_probs = Vec::with_capacity(n * heads.len());

    for &k in heads {
        actor.check_head(k)?;
        let (out, head_cache) = actor.heads[k].forward_batch(&feat)?;
        let mut actions = Matrix::zeros(n, da);
        let mut eps = Matrix::zeros(n, da);
        let mut log_probs = vec![0.0; n];
        let mut u = vec![0.0; da];
        for i in 0..n {
            let row = out.row(i);
            let log_std: Vec<f64> = row[da..].iter().map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX)).collect();
            for j in 0..da {
                let e: f64 = if stochastic { rng.sample(StandardNormal) } else { 0.0 };
                eps.set(i, j, e);
                u[j] = row[j] + log_std[j].exp() * e;
                actions.set(i, j, u[j].tanh());
            }
            if stochastic {
                log_probs[i] = squashed_log_prob(&row[..da], &log_std, &u);
            }
        }
        let (q_values, dq_da) = q(k, s, &actions)?;
        let mut grad_out = Matrix::zeros(n, 2 * da);
        for i in 0..n {
            value -= norm * (q_values[i] - alpha * log_probs[i]);
            let row = out.row(i);
            for j in 0..da {
                let t = actions.get(i, j);
                let dt = 1.0 - t * t;
                let entropy_push = if stochastic { alpha * 2.0 * t * dt / (dt + TANH_EPS) } else { 0.0 };
                let du = -norm * (dq_da.get(i, j) * dt - entropy_push);
                grad_out.set(i, j, du);
                let raw = row[da + j];
                if stochastic && (LOG_STD_MIN..=LOG_STD_MAX).contains(&raw) {
                    let std = raw.exp();
                    grad_out.set(i, da + j, du * std * eps.get(i, j) - alpha * norm);
                }
            }
        }
        let (head_grads, dfeat) = actor.heads[k].backward_batch(&head_cache, &grad_out)?;
        grads.heads[k].accumulate(&head_grads);
        for (f, d) in feat_grad.data.iter_mut().zip(&dfeat.data) {
            *f += d;
        }
        all_log_probs.extend_from_slice(&log_probs);
    }
    let (trunk_grads, _) = actor.trunk.backward_batch(&trunk_cache, &feat_grad)?;
    grads.trunk = trunk_grads;
    if !value.is_finite() {
        return Err(Error::non_finite("actor objective"));
    }
    Ok(ActorLoss { value, grads, log_probs: all_log_probs })
}

/// Soft actor objective with head `k` paired to critic `k`.
pub fn actor_loss<R: Rng + ?Sized>(
    actor: &ActorNet,
    critics: &[MlpParams],
    s: &Matrix,
    alpha: f64,
    rng: &mut R,
) -> Result<ActorLoss> {
    if critics.len() != actor.k() {
        return Err(Error::DimensionMismatch { expected: actor.k(), got: critics.len() });
    }
    let heads: Vec<usize> = (0..actor.k()).collect();
    actor_objective(actor, &heads, s, alpha, ActionMode::Stochastic, rng, |k, s, a| {
        critic_action_grad(&critics[k], s, a)
    })
}

/// Adam state for every actor network.
#[derive(Debug, Clone)]
pub struct ActorOptimizer {
    pub trunk: AdamState,
    pub heads: Vec<AdamState>,
}

impl ActorOptimizer {
    pub fn new(actor: &ActorNet, lr: f64) -> Self {
        Self {
            trunk: AdamState::for_params(&actor.trunk, lr),
            heads: actor.heads.iter().map(|h| AdamState::for_params(h, lr)).collect(),
        }
    }

    pub fn step(&mut self, actor: &mut ActorNet, grads: &ActorGrads) -> Result<()> {
        if !grads.trunk.is_finite() || grads.heads.iter().any(|h| !h.is_finite()) {
            return Err(Error::non_finite("actor gradient"));
        }
        adam_step(&mut actor.trunk, &grads.trunk, &mut self.trunk)?;
        for ((h, g), st) in actor.heads.iter_mut().zip(&grads.heads).zip(&mut self.heads) {
            adam_step(h, g, st)?;
        }
        Ok(())
    }
}

/// Automatic entropy temperature.
#[derive(Debug, Clone)]
pub struct EntropyTuner {
    pub log_alpha: f64,
    pub target_entropy: f64,
    pub lr: f64,
    adam: AdamState,
}

impl EntropyTuner {
    /// Target entropy `-act_dim`.
    pub fn new(act_dim: usize, initial_alpha: f64, lr: f64) -> Self {
        Self { log_alpha: initial_alpha.ln(), target_entropy: -(act_dim as f64), lr, adam: AdamState::new(1, lr) }
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    /// `dJ/d log α` for `J(α) = -α · mean(log π + target_entropy)`.
    pub fn gradient(&self, log_probs: &[f64]) -> f64 {
        let mean = log_probs.iter().sum::<f64>() / log_probs.len() as f64;
        -self.alpha() * (mean + self.target_entropy)
    }

    /// One Adam step on `log α`.
    pub fn update(&mut self, log_probs: &[f64]) -> Result<()> {
        if log_probs.is_empty() {
            return Ok(());
        }
        let g = self.gradient(log_probs);
        let mut p = [self.log_alpha];
        self.adam.lr = self.lr;
        self.adam.step_flat(&mut p, &[g])?;
        self.log_alpha = p[0];
        Ok(())
    }
}

/// Functional form of [`EntropyTuner::update`].
pub fn alpha_update(mut tuner: EntropyTuner, batch_log_probs: &[f64]) -> Result<EntropyTuner> {
    tuner.update(batch_log_probs)?;
    Ok(tuner)
}

/// Posterior-sampling head choice, redrawn every `psr` environment steps.
#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorSelector {
    pub active_head: usize,
    pub psr: usize,
    pub step_counter: u64,
    pub k: usize,
}

impl BehaviorSelector {
    pub fn new(k: usize, psr: usize) -> Result<Self> {
        if k == 0 || psr == 0 {
            return Err(Error::invalid("head count and posterior sampling rate must be positive"));
        }
        Ok(Self { active_head: 0, psr, step_counter: 0, k })
    }

    /// Head to act with on this environment step.
    pub fn select<R: Rng + ?Sized>(&mut self, rng: &mut R) -> usize {
        if self.step_counter.is_multiple_of(self.psr as u64) {
            self.active_head = rng.random_range(0..self.k);
        }
        self.step_counter += 1;
        self.active_head
    }
}
