//! Training loops and evaluation rollouts.
//!
//! Three learners share one loop: the PAC-Bayes actor-critic, a bootstrapped
//! ensemble with frozen randomized priors and deterministic heads, and a
//! two-critic soft actor-critic with no directed exploration. Each run draws
//! from named random streams of one master seed, so a fixed configuration
//! reproduces bit for bit.

use std::collections::hash_map::DefaultHasher;
use std::fmt;
use std::fs;
use std::hash::{Hash, Hasher};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng as _;

use crate::actor::{
    actor_loss, actor_objective, critic_action_grad, ActionMode, ActorNet, ActorOptimizer, BehaviorSelector,
    EntropyTuner,
};
use crate::analysis::{
    write_bound_csv, write_eval_csv, write_train_csv, write_visits_csv, BoundDiagnostics, BoundRecord, BoundSettings,
    EvalRecord, TrainRecord, VisitLogger, VisitRow,
};
use crate::critic::{
    backward_members, critic_input, ensemble_values, forward_members, kl_term, pbac_loss, update_targets,
    CriticEnsemble, CriticLoss, CriticLossBreakdown, NextActions, PriorConfig,
};
use crate::envs::{Env, EnvKind};
use crate::numerics::{adam_step, Activation, AdamState, Matrix, MlpParams};
use crate::replay::{draw_mask, BootstrapMask, Minibatch, ReplayBuffer, Transition};
use crate::rng::{stream, Rng, Stream};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AgentKind {
    Pbac,
    BootDqnP,
    Sac,
}

impl AgentKind {
    pub const ALL: [AgentKind; 3] = [AgentKind::Pbac, AgentKind::BootDqnP, AgentKind::Sac];

    pub fn as_str(self) -> &'static str {
        match self {
            AgentKind::Pbac => "pbac",
            AgentKind::BootDqnP => "bootdqnp",
            AgentKind::Sac => "sac",
        }
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AgentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AgentKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown agent '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub env: EnvKind,
    pub agent: AgentKind,
    pub total_steps: u64,
    pub warmup_steps: u64,
    pub batch_size: usize,
    pub replay_ratio: usize,
    /// Ensemble size and number of actor heads. The soft actor-critic
    /// baseline always uses two critics and one head.
    pub ensemble_size: usize,
    pub gamma: f64,
    pub tau: f64,
    pub kappa: f64,
    pub psr: usize,
    pub sigma0_sq: f64,
    pub critic_lr: f64,
    pub actor_lr: f64,
    pub alpha_lr: f64,
    pub initial_alpha: f64,
    /// Scale of the frozen randomized priors.
    pub prior_scale: f64,
    pub hidden: Vec<usize>,
    pub buffer_capacity: usize,
    pub seed: u64,
    /// Zero selects `total_steps / 100`.
    pub eval_every: u64,
    pub eval_episodes: usize,
    pub visit_every: u64,
    pub visit_dims: (usize, usize),
    pub bound: BoundSettings,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            env: EnvKind::PointMassDelayed,
            agent: AgentKind::Pbac,
            total_steps: 100_000,
            warmup_steps: 10_000,
            batch_size: 256,
            replay_ratio: 5,
            ensemble_size: 10,
            gamma: 0.99,
            tau: 5e-3,
            kappa: 0.05,
            psr: 5,
            sigma0_sq: 1.0,
            critic_lr: 3e-4,
            actor_lr: 3e-4,
            alpha_lr: 3e-4,
            initial_alpha: 1.0,
            prior_scale: 5.0,
            hidden: vec![256, 256],
            buffer_capacity: 100_000,
            seed: 0,
            eval_every: 0,
            eval_episodes: 10,
            visit_every: 500,
            visit_dims: (0, 1),
            bound: BoundSettings::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidArgument(msg));
        if self.total_steps == 0 {
            return fail("total steps must be positive".into());
        }
        if self.warmup_steps > self.total_steps {
            return fail(format!("warmup {} exceeds total steps {}", self.warmup_steps, self.total_steps));
        }
        if self.replay_ratio < 1 || self.batch_size < 1 || self.psr < 1 || self.eval_episodes < 1 {
            return fail("replay ratio, batch size, psr and evaluation episodes must be at least 1".into());
        }
        if self.agent != AgentKind::Sac && self.ensemble_size < 2 {
            return fail("ensemble size must be at least 2".into());
        }
        if !(self.kappa > 0.0 && self.kappa < 1.0) {
            return fail(format!("kappa {} outside (0, 1)", self.kappa));
        }
        if !(0.0..1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.tau) {
            return fail("gamma must lie in [0, 1) and tau in [0, 1]".into());
        }
        if !(self.sigma0_sq > 0.0) || !(self.initial_alpha > 0.0) {
            return fail("prior variance and initial temperature must be positive".into());
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return fail("hidden layer sizes must be positive".into());
        }
        if self.buffer_capacity == 0 || self.visit_every == 0 {
            return fail("buffer capacity and visit interval must be positive".into());
        }
        Ok(())
    }

    pub fn eval_interval(&self) -> u64 {
        if self.eval_every == 0 { (self.total_steps / 100).max(1) } else { self.eval_every }
    }

    /// `out_dir/{env}/{agent}/seed_{k}`.
    pub fn run_dir(&self, out_dir: &Path) -> PathBuf {
        out_dir.join(self.env.as_str()).join(self.agent.as_str()).join(format!("seed_{}", self.seed))
    }
}

/// Frozen randomized prior networks, one per ensemble member.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorFunction {
    pub nets: Vec<MlpParams>,
    pub beta: f64,
}

impl PriorFunction {
    /// `n x K` prior outputs at `(s_i, a_i)`, unscaled.
    pub fn values(&self, s: &Matrix, a: &Matrix) -> Result<Matrix> {
        let input = critic_input(s, a)?;
        Ok(forward_members(&self.nets, &input)?.values)
    }
}

/// Per-member TD loss on prior-perturbed critics `X_k + β p_k`.
///
/// Both the prediction and the bootstrap target include the prior, so for
/// `X_k ≡ 0` the residual is `r + γ β p_k(s', a') - β p_k(s, a)`.
pub fn bootdqnp_loss(
    ens: &CriticEnsemble,
    priors: &PriorFunction,
    batch: &Minibatch,
    mask: &BootstrapMask,
    next_actions: &Matrix,
) -> Result<CriticLoss> {
    let (n, k) = (batch.len(), ens.k());
    if mask.n != n || mask.k != k || priors.nets.len() != k {
        return Err(Error::DimensionMismatch { expected: n * k, got: mask.n * mask.k });
    }
    let input = critic_input(&batch.s, &batch.a)?;
    let pass = forward_members(&ens.members, &input)?;
    let targets = ensemble_values(ens, &batch.s_next, next_actions, true)?;
    let p_now = priors.values(&batch.s, &batch.a)?;
    let p_next = priors.values(&batch.s_next, next_actions)?;
    let norm = 1.0 / (n * k) as f64;
    let beta = priors.beta;
    let mut grad_values = Matrix::zeros(n, k);
    let mut loss = 0.0;
    for kk in 0..k {
        for i in 0..n {
            if !mask.get(i, kk) {
                continue;
            }
            let discount = if batch.done[i] { 0.0 } else { ens.gamma };
            let y = batch.r[i] + discount * (targets.get(i, kk) + beta * p_next.get(i, kk));
            let q = pass.values.get(i, kk) + beta * p_now.get(i, kk);
            loss += norm * (y - q) * (y - q);
            grad_values.set(i, kk, -2.0 * norm * (y - q));
        }
    }
    if !loss.is_finite() {
        return Err(Error::non_finite("prior-ensemble TD loss"));
    }
    let grads = backward_members(&ens.members, &pass, &grad_values)?;
    let breakdown = CriticLossBreakdown { diversity: loss, total: loss, ..Default::default() };
    Ok(CriticLoss { breakdown, grads })
}

/// Soft TD loss with the minimum over target critics in the bootstrap.
pub fn sac_loss(ens: &CriticEnsemble, batch: &Minibatch, next: &NextActions, alpha: f64) -> Result<CriticLoss> {
    let (n, k) = (batch.len(), ens.k());
    let input = critic_input(&batch.s, &batch.a)?;
    let pass = forward_members(&ens.members, &input)?;
    let targets = ensemble_values(ens, &batch.s_next, &next.actions, true)?;
    let norm = 1.0 / (n * k) as f64;
    let mut grad_values = Matrix::zeros(n, k);
    let mut loss = 0.0;
    for i in 0..n {
        let discount = if batch.done[i] { 0.0 } else { ens.gamma };
        let min_target = targets.row(i).iter().copied().fold(f64::INFINITY, f64::min);
        let y = batch.r[i] + discount * (min_target - alpha * next.log_probs[i]);
        for kk in 0..k {
            let x = pass.values.get(i, kk);
            loss += norm * (y - x) * (y - x);
            grad_values.set(i, kk, -2.0 * norm * (y - x));
        }
    }
    if !loss.is_finite() {
        return Err(Error::non_finite("soft TD loss"));
    }
    let grads = backward_members(&ens.members, &pass, &grad_values)?;
    let breakdown = CriticLossBreakdown { diversity: loss, total: loss, ..Default::default() };
    Ok(CriticLoss { breakdown, grads })
}

/// Value and action gradient of `min_k X_k(s, a)` per row.
pub fn min_critic_action_grad(critics: &[MlpParams], s: &Matrix, a: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let mut best: Option<(Vec<f64>, Matrix)> = None;
    for c in critics {
        let (v, g) = critic_action_grad(c, s, a)?;
        best = Some(match best {
            None => (v, g),
            Some((mut bv, mut bg)) => {
                for i in 0..v.len() {
                    if v[i] < bv[i] {
                        bv[i] = v[i];
                        bg.row_mut(i).copy_from_slice(g.row(i));
                    }
                }
                (bv, bg)
            }
        });
    }
    best.ok_or_else(|| Error::invalid("no critics"))
}

/// Value and action gradient of `X_k + β p_k`.
pub fn prior_critic_action_grad(
    critic: &MlpParams,
    prior: &MlpParams,
    beta: f64,
    s: &Matrix,
    a: &Matrix,
) -> Result<(Vec<f64>, Matrix)> {
    let (mut v, mut g) = critic_action_grad(critic, s, a)?;
    let (pv, pg) = critic_action_grad(prior, s, a)?;
    for (x, p) in v.iter_mut().zip(&pv) {
        *x += beta * p;
    }
    for (x, p) in g.data.iter_mut().zip(&pg.data) {
        *x += beta * p;
    }
    Ok((v, g))
}

/// Losses of the last gradient phase, as logged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseLosses {
    pub diversity: f64,
    pub coherence: Option<f64>,
    pub propagation: Option<f64>,
    /// Fingerprint of the bootstrap mask drawn for this phase.
    pub mask: Option<u64>,
}

fn critic_step(ens: &mut CriticEnsemble, opts: &mut [AdamState], loss: &CriticLoss) -> Result<()> {
    if loss.grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::non_finite("critic gradient"));
    }
    for ((m, g), st) in ens.members.iter_mut().zip(&loss.grads).zip(opts) {
        adam_step(m, g, st)?;
    }
    Ok(())
}

fn hash_params(h: &mut DefaultHasher, nets: &[MlpParams]) {
    for net in nets {
        for v in net.to_flat() {
            v.to_bits().hash(h);
        }
    }
}

#[derive(Debug, Clone)]
pub struct PbacLearner {
    pub critics: CriticEnsemble,
    pub actor: ActorNet,
    pub tuner: EntropyTuner,
    pub prior: PriorConfig,
    pub kappa: f64,
    critic_opt: Vec<AdamState>,
    actor_opt: ActorOptimizer,
}

#[derive(Debug, Clone)]
pub struct BootDqnPLearner {
    pub critics: CriticEnsemble,
    pub priors: PriorFunction,
    pub actor: ActorNet,
    pub kappa: f64,
    critic_opt: Vec<AdamState>,
    actor_opt: ActorOptimizer,
}

#[derive(Debug, Clone)]
pub struct SacLearner {
    pub critics: CriticEnsemble,
    pub actor: ActorNet,
    pub tuner: EntropyTuner,
    critic_opt: Vec<AdamState>,
    actor_opt: ActorOptimizer,
}

#[derive(Debug, Clone)]
pub enum Learner {
    Pbac(PbacLearner),
    BootDqnP(BootDqnPLearner),
    Sac(SacLearner),
}

impl Learner {
    pub fn new(cfg: &TrainConfig, obs_dim: usize, act_dim: usize, rng: &mut Rng) -> Result<Self> {
        let k = if cfg.agent == AgentKind::Sac { 2 } else { cfg.ensemble_size };
        let critics = CriticEnsemble::new(k, obs_dim, act_dim, &cfg.hidden, cfg.gamma, cfg.tau, rng)?;
        let critic_opt = critics.members.iter().map(|m| AdamState::for_params(m, cfg.critic_lr)).collect();
        let heads = if cfg.agent == AgentKind::Sac { 1 } else { k };
        let actor = ActorNet::new(heads, obs_dim, act_dim, &cfg.hidden, rng);
        let actor_opt = ActorOptimizer::new(&actor, cfg.actor_lr);
        let tuner = EntropyTuner::new(act_dim, cfg.initial_alpha, cfg.alpha_lr);
        Ok(match cfg.agent {
            AgentKind::Pbac => Learner::Pbac(PbacLearner {
                critics,
                actor,
                tuner,
                prior: PriorConfig::new(cfg.sigma0_sq)?,
                kappa: cfg.kappa,
                critic_opt,
                actor_opt,
            }),
            AgentKind::BootDqnP => {
                let mut sizes = vec![obs_dim + act_dim];
                sizes.extend_from_slice(&cfg.hidden);
                sizes.push(1);
                let nets = (0..k).map(|_| MlpParams::new(&sizes, Activation::CRelu, false, rng)).collect();
                Learner::BootDqnP(BootDqnPLearner {
                    critics,
                    priors: PriorFunction { nets, beta: cfg.prior_scale },
                    actor,
                    kappa: cfg.kappa,
                    critic_opt,
                    actor_opt,
                })
            }
            AgentKind::Sac => Learner::Sac(SacLearner { critics, actor, tuner, critic_opt, actor_opt }),
        })
    }

    pub fn actor(&self) -> &ActorNet {
        match self {
            Learner::Pbac(l) => &l.actor,
            Learner::BootDqnP(l) => &l.actor,
            Learner::Sac(l) => &l.actor,
        }
    }

    pub fn critics(&self) -> &CriticEnsemble {
        match self {
            Learner::Pbac(l) => &l.critics,
            Learner::BootDqnP(l) => &l.critics,
            Learner::Sac(l) => &l.critics,
        }
    }

    pub fn heads(&self) -> usize {
        self.actor().k()
    }

    pub fn alpha(&self) -> Option<f64> {
        match self {
            Learner::Pbac(l) => Some(l.tuner.alpha()),
            Learner::Sac(l) => Some(l.tuner.alpha()),
            Learner::BootDqnP(_) => None,
        }
    }

    /// Exploration action of `head` at `s`.
    pub fn behavior_action(&self, head: usize, s: &[f64], rng: &mut Rng) -> Result<Vec<f64>> {
        match self {
            Learner::BootDqnP(l) => l.actor.deterministic_action(head, s),
            _ => Ok(crate::actor::sample_action(self.actor(), head, s, rng)?.action),
        }
    }

    /// Deterministic evaluation action `tanh(mean)` of `head`.
    pub fn eval_action(&self, head: usize, s: &[f64]) -> Result<Vec<f64>> {
        self.actor().deterministic_action(head, s)
    }

    /// One gradient phase: critics, actor, temperature, targets.
    pub fn update(&mut self, batch: &Minibatch, active_head: usize, masks: &mut Rng, noise: &mut Rng) -> Result<PhaseLosses> {
        match self {
            Learner::Pbac(l) => {
                let alpha = l.tuner.alpha();
                let mask = draw_mask(batch.len(), l.critics.k(), l.kappa, masks)?;
                let (actions, log_probs) = l.actor.sample_actions(active_head, &batch.s_next, noise)?;
                let next = NextActions { actions, log_probs };
                let loss = pbac_loss(&l.critics, batch, &mask, &next, alpha, &l.prior)?;
                critic_step(&mut l.critics, &mut l.critic_opt, &loss)?;
                let a_loss = actor_loss(&l.actor, &l.critics.members, &batch.s, alpha, noise)?;
                l.actor_opt.step(&mut l.actor, &a_loss.grads)?;
                l.tuner.update(&a_loss.log_probs)?;
                update_targets(&mut l.critics)?;
                let b = loss.breakdown;
                Ok(PhaseLosses {
                    diversity: b.diversity,
                    coherence: Some(b.coherence),
                    propagation: Some(b.propagation),
                    mask: Some(mask.fingerprint()),
                })
            }
            Learner::BootDqnP(l) => {
                let mask = draw_mask(batch.len(), l.critics.k(), l.kappa, masks)?;
                let next = l.actor.deterministic_actions(active_head, &batch.s_next)?;
                let loss = bootdqnp_loss(&l.critics, &l.priors, batch, &mask, &next)?;
                critic_step(&mut l.critics, &mut l.critic_opt, &loss)?;
                let heads: Vec<usize> = (0..l.actor.k()).collect();
                let (critics, priors) = (&l.critics.members, &l.priors);
                let a_loss =
                    actor_objective(&l.actor, &heads, &batch.s, 0.0, ActionMode::Deterministic, noise, |k, s, a| {
                        prior_critic_action_grad(&critics[k], &priors.nets[k], priors.beta, s, a)
                    })?;
                l.actor_opt.step(&mut l.actor, &a_loss.grads)?;
                update_targets(&mut l.critics)?;
                Ok(PhaseLosses {
                    diversity: loss.breakdown.diversity,
                    coherence: None,
                    propagation: None,
                    mask: Some(mask.fingerprint()),
                })
            }
            Learner::Sac(l) => {
                let alpha = l.tuner.alpha();
                let (actions, log_probs) = l.actor.sample_actions(0, &batch.s_next, noise)?;
                let loss = sac_loss(&l.critics, batch, &NextActions { actions, log_probs }, alpha)?;
                critic_step(&mut l.critics, &mut l.critic_opt, &loss)?;
                let critics = &l.critics.members;
                let a_loss = actor_objective(&l.actor, &[0], &batch.s, alpha, ActionMode::Stochastic, noise, |_, s, a| {
                    min_critic_action_grad(critics, s, a)
                })?;
                l.actor_opt.step(&mut l.actor, &a_loss.grads)?;
                l.tuner.update(&a_loss.log_probs)?;
                update_targets(&mut l.critics)?;
                Ok(PhaseLosses { diversity: loss.breakdown.diversity, coherence: None, propagation: None, mask: None })
            }
        }
    }

    /// Hash of every trainable parameter (critics, targets, actor, temperature).
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        let c = self.critics();
        hash_params(&mut h, &c.members);
        hash_params(&mut h, &c.targets);
        let a = self.actor();
        hash_params(&mut h, std::slice::from_ref(&a.trunk));
        hash_params(&mut h, &a.heads);
        if let Some(alpha) = self.alpha() {
            alpha.to_bits().hash(&mut h);
        }
        h.finish()
    }
}

/// Bound terms on one batch: risk and variance of the online critics, with
/// next actions `tanh(mean)` of head 0.
pub fn bound_diagnostics(
    ens: &CriticEnsemble,
    batch: &Minibatch,
    next_actions: &Matrix,
    prior: &PriorConfig,
    settings: BoundSettings,
) -> Result<BoundDiagnostics> {
    let (n, k) = (batch.len(), ens.k());
    let now = ensemble_values(ens, &batch.s, &batch.a, false)?;
    let next = ensemble_values(ens, &batch.s_next, next_actions, false)?;
    let mut risk = 0.0;
    let mut variance = 0.0;
    for i in 0..n {
        let discount = if batch.done[i] { 0.0 } else { ens.gamma };
        let row = now.row(i);
        for kk in 0..k {
            let e = batch.r[i] + discount * next.get(i, kk) - row[kk];
            risk += e * e;
        }
        let mean = row.iter().sum::<f64>() / k as f64;
        variance += row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (k - 1) as f64;
    }
    let kl = kl_term(ens, batch, next_actions, prior)?;
    BoundDiagnostics::new(risk / (n * k) as f64, kl, variance / n as f64, n, settings, ens.gamma)
}

/// A policy rolled out by [`evaluate`].
pub trait Policy {
    /// Called before each episode.
    fn begin_episode(&mut self, _rng: &mut Rng) {}
    fn act(&mut self, obs: &[f64]) -> Result<Vec<f64>>;
}

/// Deterministic head of a learner, redrawn uniformly at each episode start.
pub struct HeadPolicy<'a> {
    pub learner: &'a Learner,
    pub head: usize,
}

impl Policy for HeadPolicy<'_> {
    fn begin_episode(&mut self, rng: &mut Rng) {
        self.head = rng.random_range(0..self.learner.heads());
    }

    fn act(&mut self, obs: &[f64]) -> Result<Vec<f64>> {
        self.learner.eval_action(self.head, obs)
    }
}

/// Wraps a closure as a fixed policy.
pub struct FnPolicy<F>(pub F);

impl<F: FnMut(&[f64]) -> Result<Vec<f64>>> Policy for FnPolicy<F> {
    fn act(&mut self, obs: &[f64]) -> Result<Vec<f64>> {
        (self.0)(obs)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub mean: f64,
    pub returns: Vec<f64>,
}

/// Undiscounted returns of `episodes` complete episodes.
pub fn evaluate<P: Policy + ?Sized>(policy: &mut P, env: &mut dyn Env, episodes: usize, rng: &mut Rng) -> Result<EvalResult> {
    if episodes == 0 {
        return Err(Error::invalid("evaluation needs at least one episode"));
    }
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        policy.begin_episode(rng);
        let mut obs = env.reset();
        let mut total = 0.0;
        loop {
            let a = policy.act(&obs)?;
            let res = env.step(&a)?;
            total += res.reward;
            if res.done || res.truncated {
                break;
            }
            obs = res.next_obs;
        }
        returns.push(total);
    }
    let mean = returns.iter().sum::<f64>() / episodes as f64;
    Ok(EvalResult { mean, returns })
}

/// Everything a run records.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
    pub evals: Vec<EvalRecord>,
    pub visits: Vec<VisitRow>,
    pub bounds: Vec<BoundRecord>,
    pub gradient_phases: u64,
    /// Bootstrap-mask fingerprint of every gradient phase, in order.
    pub mask_fingerprints: Vec<u64>,
    pub eval_episodes: usize,
}

impl TrainLog {
    pub fn final_eval(&self) -> Option<&EvalRecord> {
        self.evals.last()
    }

    /// Writes `train.csv`, `eval.csv`, `visits.csv` and `bound.csv` into `dir`.
    pub fn write_csvs(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_train_csv(&dir.join("train.csv"), &self.records)?;
        write_eval_csv(&dir.join("eval.csv"), self.eval_episodes, &self.evals)?;
        write_visits_csv(&dir.join("visits.csv"), &self.visits)?;
        write_bound_csv(&dir.join("bound.csv"), &self.bounds)?;
        Ok(())
    }
}

/// Result of a finished run.
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub log: TrainLog,
    pub learner: Learner,
    pub initial_fingerprint: u64,
    pub buffer_len: usize,
}

struct Streams {
    env: Rng,
    masks: Rng,
    noise: Rng,
    heads: Rng,
    replay: Rng,
    eval: Rng,
    warmup: Rng,
    diagnostics: Rng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        Self {
            env: stream(seed, Stream::Env),
            masks: stream(seed, Stream::Masks),
            noise: stream(seed, Stream::ActionNoise),
            heads: stream(seed, Stream::HeadSelection),
            replay: stream(seed, Stream::Replay),
            eval: stream(seed, Stream::Eval),
            warmup: stream(seed, Stream::Warmup),
            diagnostics: stream(seed, Stream::Diagnostics),
        }
    }
}

fn at_step(step: u64, e: Error) -> Error {
    match e {
        Error::NumericFailure(msg) => Error::NumericFailure(format!("step {step}: {msg}")),
        other => other,
    }
}

/// Runs the configured agent.
pub fn train(cfg: &TrainConfig) -> Result<TrainRun> {
    cfg.validate()?;
    let mut streams = Streams::new(cfg.seed);
    let mut env = cfg.env.make_with_rng(streams.env.clone());
    let mut eval_env = cfg.env.make_with_rng(stream(cfg.seed, Stream::EvalEnv));
    let (ds, da) = (env.obs_dim(), env.action_dim());
    let mut learner = Learner::new(cfg, ds, da, &mut stream(cfg.seed, Stream::Init))?;
    let initial_fingerprint = learner.fingerprint();
    let mut selector = BehaviorSelector::new(learner.heads(), cfg.psr)?;
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity);
    let mut visits = VisitLogger::new(cfg.visit_every, cfg.visit_dims)?;
    let eval_interval = cfg.eval_interval();
    let prior = PriorConfig::new(cfg.sigma0_sq)?;

    let mut log = TrainLog { eval_episodes: cfg.eval_episodes, ..Default::default() };
    let mut obs = env.reset();
    let mut episode_return = 0.0;
    for step in 1..=cfg.total_steps {
        let head = selector.select(&mut streams.heads);
        let action = if step <= cfg.warmup_steps {
            (0..da).map(|_| streams.warmup.random_range(-1.0..=1.0)).collect()
        } else {
            learner.behavior_action(head, &obs, &mut streams.noise).map_err(|e| at_step(step, e))?
        };
        let res = env.step(&action)?;
        episode_return += res.reward;
        visits.record(step, &res.next_obs)?;
        buffer.push(Transition { s: obs, a: action, r: res.reward, s_next: res.next_obs.clone(), done: res.done });

        let mut record = TrainRecord {
            step,
            episode_return: None,
            loss_diversity: None,
            loss_coherence: None,
            loss_propagation: None,
            alpha: None,
            active_head: head,
        };
        if step > cfg.warmup_steps {
            let mut last = None;
            for _ in 0..cfg.replay_ratio {
                let batch = buffer.sample(cfg.batch_size, &mut streams.replay)?;
                let phase = learner
                    .update(&batch, head, &mut streams.masks, &mut streams.noise)
                    .map_err(|e| at_step(step, e))?;
                log.gradient_phases += 1;
                log.mask_fingerprints.extend(phase.mask);
                last = Some(phase);
            }
            if let Some(p) = last {
                record.loss_diversity = Some(p.diversity);
                record.loss_coherence = p.coherence;
                record.loss_propagation = p.propagation;
            }
        }
        record.alpha = learner.alpha();
        if res.done || res.truncated {
            record.episode_return = Some(episode_return);
            episode_return = 0.0;
            obs = env.reset();
        } else {
            obs = res.next_obs;
        }
        log.records.push(record);

        if step % eval_interval == 0 || step == cfg.total_steps {
            let mut policy = HeadPolicy { learner: &learner, head: 0 };
            let result = evaluate(&mut policy, eval_env.as_mut(), cfg.eval_episodes, &mut streams.eval)
                .map_err(|e| at_step(step, e))?;
            log.evals.push(EvalRecord { step, mean_return: result.mean, returns: result.returns });
            let batch = buffer.sample(cfg.batch_size, &mut streams.diagnostics)?;
            let next = learner.actor().deterministic_actions(0, &batch.s_next)?;
            let diagnostics = bound_diagnostics(learner.critics(), &batch, &next, &prior, cfg.bound)
                .map_err(|e| at_step(step, e))?;
            log.bounds.push(BoundRecord { step, diagnostics });
        }
    }
    log.visits = visits.rows;
    Ok(TrainRun { log, learner, initial_fingerprint, buffer_len: buffer.len() })
}

fn with_agent(cfg: &TrainConfig, agent: AgentKind) -> TrainConfig {
    TrainConfig { agent, ..cfg.clone() }
}

pub fn train_pbac(cfg: &TrainConfig) -> Result<TrainRun> {
    train(&with_agent(cfg, AgentKind::Pbac))
}

pub fn train_bootdqnp(cfg: &TrainConfig) -> Result<TrainRun> {
    train(&with_agent(cfg, AgentKind::BootDqnP))
}

pub fn train_sac_baseline(cfg: &TrainConfig) -> Result<TrainRun> {
    train(&with_agent(cfg, AgentKind::Sac))
}

/// Runs `seeds` concurrently (one single-threaded run each), results in
/// seed order.
pub fn train_seeds(cfg: &TrainConfig, seeds: &[u64]) -> Vec<Result<TrainRun>> {
    crate::par::map_range(seeds.len(), |i| train(&TrainConfig { seed: seeds[i], ..cfg.clone() }))
}
