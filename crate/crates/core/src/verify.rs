//! Self-check suite: exact finite-MDP checks, finite-difference gradient
//! checks and the hand-evaluated critic objective.

use rand::Rng as _;

use crate::actor::{actor_loss, actor_objective, ActionMode, ActorNet};
use crate::agent::{bootdqnp_loss, prior_critic_action_grad, PriorFunction};
use crate::critic::{kl_term, pbac_loss, CriticEnsemble, NextActions, PriorConfig};
use crate::numerics::{Activation, Matrix, MlpParams};
use crate::oracle::run_suite;
use crate::par::map_range;
use crate::replay::{draw_mask, BootstrapMask, Minibatch, Transition};
use crate::rng::{seeded, Rng};
use crate::Result;

pub const FD_STEP: f64 = 1e-5;
pub const GRADIENT_TOL: f64 = 1e-4;

/// `|a - b| / max(|a| + |b|, 1e-6)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-6)
}

/// Central differences of `loss` over the flat parameters of `net`.
pub fn numeric_gradient(net: &MlpParams, mut loss: impl FnMut(&MlpParams) -> f64) -> Vec<f64> {
    let base = net.to_flat();
    let mut probe = net.clone();
    let mut p = base.clone();
    (0..base.len())
        .map(|i| {
            p[i] = base[i] + FD_STEP;
            probe.set_flat(&p).expect("same shape");
            let up = loss(&probe);
            p[i] = base[i] - FD_STEP;
            probe.set_flat(&p).expect("same shape");
            let down = loss(&probe);
            p[i] = base[i];
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

fn worst(analytic: &MlpParams, numeric: &[f64]) -> f64 {
    analytic.to_flat().iter().zip(numeric).map(|(a, b)| relative_error(*a, *b)).fold(0.0, f64::max)
}

struct Case {
    rng: Rng,
    n: usize,
    k: usize,
    ds: usize,
    da: usize,
    hidden: usize,
}

impl Case {
    fn new(seed: u64) -> Self {
        let mut rng = seeded(seed);
        let n = rng.random_range(1..=5);
        let k = rng.random_range(2..=4);
        let ds = rng.random_range(1..=3);
        let da = rng.random_range(1..=2);
        let hidden = rng.random_range(2..=6);
        Self { rng, n, k, ds, da, hidden }
    }

    fn batch(&mut self) -> Result<Minibatch> {
        let rng = &mut self.rng;
        let rows: Vec<Transition> = (0..self.n)
            .map(|_| Transition {
                s: (0..self.ds).map(|_| rng.random_range(-1.0..1.0)).collect(),
                a: (0..self.da).map(|_| rng.random_range(-1.0..1.0)).collect(),
                r: rng.random_range(-1.0..1.0),
                s_next: (0..self.ds).map(|_| rng.random_range(-1.0..1.0)).collect(),
                done: rng.random_bool(0.2),
            })
            .collect();
        Minibatch::from_transitions(&rows)
    }

    fn ensemble(&mut self) -> Result<CriticEnsemble> {
        let gamma = self.rng.random_range(0.3..0.99);
        let mut ens = CriticEnsemble::new(self.k, self.ds, self.da, &[self.hidden], gamma, 0.005, &mut self.rng)?;
        // targets differ from members so both paths are exercised
        for t in &mut ens.targets {
            let flat: Vec<f64> = t.to_flat().iter().map(|v| v + self.rng.random_range(-0.2..0.2)).collect();
            t.set_flat(&flat)?;
        }
        Ok(ens)
    }

    fn actions(&mut self) -> Result<Matrix> {
        let rng = &mut self.rng;
        Matrix::from_vec(self.n, self.da, (0..self.n * self.da).map(|_| rng.random_range(-1.0..1.0)).collect())
    }
}

/// Worst relative error of the critic objective's member gradients on one
/// random configuration.
pub fn pbac_gradient_case(seed: u64) -> Result<f64> {
    let mut c = Case::new(seed);
    let batch = c.batch()?;
    let ens = c.ensemble()?;
    let next = NextActions { actions: c.actions()?, log_probs: (0..c.n).map(|_| c.rng.random_range(-2.0..1.0)).collect() };
    let kappa = c.rng.random_range(0.05..0.5);
    let mask = draw_mask(c.n, c.k, kappa, &mut c.rng)?;
    let alpha = c.rng.random_range(0.0..0.5);
    let prior = PriorConfig::new(c.rng.random_range(0.5..2.0))?;
    let loss = pbac_loss(&ens, &batch, &mask, &next, alpha, &prior)?;
    let mut err: f64 = 0.0;
    for k in 0..c.k {
        let numeric = numeric_gradient(&ens.members[k], |m| {
            let mut probe = ens.clone();
            probe.members[k] = m.clone();
            pbac_loss(&probe, &batch, &mask, &next, alpha, &prior).expect("finite").breakdown.total
        });
        err = err.max(worst(&loss.grads[k], &numeric));
    }
    Ok(err)
}

fn actor_for(c: &mut Case, heads: usize) -> ActorNet {
    ActorNet::new(heads, c.ds, c.da, &[c.hidden], &mut c.rng)
}

fn critics_for(c: &mut Case) -> Vec<MlpParams> {
    (0..c.k)
        .map(|_| MlpParams::new(&[c.ds + c.da, c.hidden, 1], Activation::CRelu, false, &mut c.rng))
        .collect()
}

/// Worst relative error of the soft actor objective over trunk and heads.
pub fn actor_gradient_case(seed: u64) -> Result<f64> {
    let mut c = Case::new(seed);
    let batch = c.batch()?;
    let heads = c.k;
    let actor = actor_for(&mut c, heads);
    let critics = critics_for(&mut c);
    let alpha = c.rng.random_range(0.0..0.5);
    let noise_seed: u64 = c.rng.random();
    let value = |a: &ActorNet| actor_loss(a, &critics, &batch.s, alpha, &mut seeded(noise_seed)).expect("finite").value;
    let loss = actor_loss(&actor, &critics, &batch.s, alpha, &mut seeded(noise_seed))?;
    let mut err = worst(
        &loss.grads.trunk,
        &numeric_gradient(&actor.trunk, |t| value(&ActorNet { trunk: t.clone(), ..actor.clone() })),
    );
    for h in 0..actor.k() {
        let numeric = numeric_gradient(&actor.heads[h], |p| {
            let mut probe = actor.clone();
            probe.heads[h] = p.clone();
            value(&probe)
        });
        err = err.max(worst(&loss.grads.heads[h], &numeric));
    }
    Ok(err)
}

/// Worst relative error of the prior-ensemble critic loss and its
/// deterministic actor objective.
pub fn bootdqnp_gradient_case(seed: u64) -> Result<f64> {
    let mut c = Case::new(seed);
    let batch = c.batch()?;
    let ens = c.ensemble()?;
    let priors = PriorFunction { nets: critics_for(&mut c), beta: c.rng.random_range(0.0..5.0) };
    let next = c.actions()?;
    let mask = draw_mask(c.n, c.k, c.rng.random_range(0.05..0.5), &mut c.rng)?;
    let loss = bootdqnp_loss(&ens, &priors, &batch, &mask, &next)?;
    let mut err: f64 = 0.0;
    for k in 0..c.k {
        let numeric = numeric_gradient(&ens.members[k], |m| {
            let mut probe = ens.clone();
            probe.members[k] = m.clone();
            bootdqnp_loss(&probe, &priors, &batch, &mask, &next).expect("finite").breakdown.total
        });
        err = err.max(worst(&loss.grads[k], &numeric));
    }

    let k = c.k;
    let actor = actor_for(&mut c, k);
    let heads: Vec<usize> = (0..k).collect();
    let members = &ens.members;
    let objective = |a: &ActorNet| {
        actor_objective(a, &heads, &batch.s, 0.0, ActionMode::Deterministic, &mut seeded(0), |k, s, x| {
            prior_critic_action_grad(&members[k], &priors.nets[k], priors.beta, s, x)
        })
    };
    let a_loss = objective(&actor)?;
    let value = |a: &ActorNet| objective(a).expect("finite").value;
    err = err.max(worst(
        &a_loss.grads.trunk,
        &numeric_gradient(&actor.trunk, |t| value(&ActorNet { trunk: t.clone(), ..actor.clone() })),
    ));
    for h in 0..actor.k() {
        let numeric = numeric_gradient(&actor.heads[h], |p| {
            let mut probe = actor.clone();
            probe.heads[h] = p.clone();
            value(&probe)
        });
        err = err.max(worst(&a_loss.grads.heads[h], &numeric));
    }
    Ok(err)
}

/// Worst error over `cases` seeded configurations, run through [`map_range`].
pub fn gradient_sweep(case: fn(u64) -> Result<f64>, base_seed: u64, cases: usize) -> Result<f64> {
    map_range(cases, |i| case(base_seed + i as u64)).into_iter().try_fold(0.0, |acc, e| Ok(f64::max(acc, e?)))
}

/// Terms of the one-datapoint, two-member hand example: `X = (0, 2)`,
/// targets `(2, 0)`, `r = 1`, `γ = 0.5`, `σ0² = 1`, no entropy bonus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HandValues {
    pub diversity: f64,
    pub coherence: f64,
    pub propagation: f64,
    pub total: f64,
    pub kl: f64,
}

pub fn hand_example() -> Result<HandValues> {
    let members = vec![MlpParams::constant(2, 0.0), MlpParams::constant(2, 2.0)];
    let mut ens = CriticEnsemble::from_members(members, 0.5, 0.005)?;
    ens.targets = vec![MlpParams::constant(2, 2.0), MlpParams::constant(2, 0.0)];
    let batch =
        Minibatch::from_transitions(&[Transition { s: vec![0.3], a: vec![0.1], r: 1.0, s_next: vec![0.4], done: false }])?;
    let next = NextActions::deterministic(Matrix::from_vec(1, 1, vec![0.0])?);
    let prior = PriorConfig::new(1.0)?;
    let b = pbac_loss(&ens, &batch, &BootstrapMask::ones(1, 2), &next, 0.0, &prior)?.breakdown;
    let kl = kl_term(&ens, &batch, &next.actions, &prior)?;
    Ok(HandValues { diversity: b.diversity, coherence: b.coherence, propagation: b.propagation, total: b.total, kl })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

/// Runs every check; `cases` random configurations per randomized family.
pub fn run_all(oracle_cases: usize, gradient_cases: usize) -> Vec<CheckOutcome> {
    let mut out = Vec::new();
    match run_suite(0, oracle_cases) {
        Ok(r) => {
            let n = r.cases.len();
            out.push(CheckOutcome {
                name: "oracle_general_decomposition",
                pass: r.count(|c| c.general) == n,
                detail: format!("{}/{} cases, max gap {:.3e}", r.count(|c| c.general), n, r.max_general_gap()),
            });
            out.push(CheckOutcome {
                name: "oracle_contraction",
                pass: r.count(|c| c.contraction) == n,
                detail: format!("{}/{} cases", r.count(|c| c.contraction), n),
            });
            out.push(CheckOutcome {
                name: "oracle_value_error_bound",
                pass: r.count(|c| c.lemma4) == n,
                detail: format!("{}/{} cases", r.count(|c| c.lemma4), n),
            });
            out.push(CheckOutcome {
                name: "oracle_marginal_form_iid",
                pass: r.count(|c| c.marginal_identical_rows) == n,
                detail: format!("{}/{} cases", r.count(|c| c.marginal_identical_rows), n),
            });
            out.push(CheckOutcome {
                name: "oracle_marginal_form_fails_on_swap_chain",
                pass: r.swap_chain_fails,
                detail: "expected failure".into(),
            });
        }
        Err(e) => out.push(CheckOutcome { name: "oracle_suite", pass: false, detail: e.to_string() }),
    }
    let families: [(&'static str, fn(u64) -> Result<f64>); 3] = [
        ("gradient_critic_objective", pbac_gradient_case),
        ("gradient_actor_objective", actor_gradient_case),
        ("gradient_prior_ensemble", bootdqnp_gradient_case),
    ];
    for (name, case) in families {
        out.push(match gradient_sweep(case, 0, gradient_cases) {
            Ok(e) => CheckOutcome { name, pass: e < GRADIENT_TOL, detail: format!("max relative error {e:.3e}") },
            Err(e) => CheckOutcome { name, pass: false, detail: e.to_string() },
        });
    }
    out.push(match hand_example() {
        Ok(h) => {
            let expected = [2.5, 2.5, -0.75 * 2f64.ln(), 4.480_140, 2.153_426];
            let got = [h.diversity, h.coherence, h.propagation, h.total, h.kl];
            let tol = [1e-9, 1e-9, 1e-9, 1e-6, 1e-6];
            let pass = got.iter().zip(&expected).zip(&tol).all(|((g, e), t)| (g - e).abs() < *t);
            CheckOutcome { name: "critic_hand_values", pass, detail: format!("{got:?}") }
        }
        Err(e) => CheckOutcome { name: "critic_hand_values", pass: false, detail: e.to_string() },
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_sweeps_pass() {
        assert!(gradient_sweep(pbac_gradient_case, 100, 10).unwrap() < GRADIENT_TOL);
        assert!(gradient_sweep(actor_gradient_case, 100, 10).unwrap() < GRADIENT_TOL);
        assert!(gradient_sweep(bootdqnp_gradient_case, 100, 10).unwrap() < GRADIENT_TOL);
    }

    #[test]
    fn run_all_passes() {
        let outcomes = run_all(20, 5);
        for o in &outcomes {
            assert!(o.pass, "{o:?}");
        }
        assert_eq!(outcomes.len(), 9);
    }
}
