//! Exact checks on finite Markov chains.
//!
//! A [`FiniteMdp`] is the chain induced by a fixed policy: transition matrix
//! `P`, per-state reward `r` and discount `γ`. Value functions are vectors
//! over states and every expectation is a full enumeration, so the only
//! tolerance needed is floating-point slack.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::Exp1;

use crate::par::map_range;
use crate::rng::seeded;
use crate::{Error, Result};

/// Values of a function at each state under the policy's action.
pub type ValueVector = Vec<f64>;

const ROW_SUM_TOL: f64 = 1e-12;
const CHECK_TOL: f64 = 1e-12;

/// `lhs <= rhs` up to rounding. Both sides are built from value vectors of
/// magnitude up to `scale`, so they can only be resolved to `scale * eps`;
/// inequalities that are tight in exact arithmetic need matching slack.
fn within(lhs: f64, rhs: f64, scale: f64) -> bool {
    lhs <= rhs + CHECK_TOL * scale.max(1.0)
}

fn max_abs<'a>(vs: impl IntoIterator<Item = &'a [f64]>) -> f64 {
    vs.into_iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FiniteMdp {
    /// Row-stochastic, `p[s][s']`.
    pub p: Vec<Vec<f64>>,
    pub r: Vec<f64>,
    pub gamma: f64,
}

impl FiniteMdp {
    pub fn new(p: Vec<Vec<f64>>, r: Vec<f64>, gamma: f64) -> Result<Self> {
        let s = r.len();
        if s == 0 || p.len() != s || p.iter().any(|row| row.len() != s) {
            return Err(Error::invalid("transition matrix must be square and match the reward vector"));
        }
        for row in &p {
            if row.iter().any(|v| !(*v >= 0.0)) || (row.iter().sum::<f64>() - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::invalid("transition rows must be non-negative and sum to one"));
            }
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::invalid(format!("discount {gamma} outside [0, 1)")));
        }
        Ok(Self { p, r, gamma })
    }

    pub fn states(&self) -> usize {
        self.r.len()
    }

    /// `(P v)(s)`.
    pub fn expect_next(&self, v: &[f64]) -> Vec<f64> {
        self.p.iter().map(|row| row.iter().zip(v).map(|(p, x)| p * x).sum()).collect()
    }

    /// `(T X)(s) = r(s) + γ (P X)(s)`.
    pub fn bellman(&self, x: &[f64]) -> Vec<f64> {
        self.expect_next(x).iter().zip(&self.r).map(|(e, r)| r + self.gamma * e).collect()
    }
}

/// Stationary distribution by power iteration from the uniform vector.
pub fn stationary_dist(m: &FiniteMdp) -> Result<Vec<f64>> {
    let s = m.states();
    let mut pi = vec![1.0 / s as f64; s];
    for _ in 0..1_000_000 {
        let mut next = vec![0.0; s];
        for (i, row) in m.p.iter().enumerate() {
            for (j, p) in row.iter().enumerate() {
                next[j] += pi[i] * p;
            }
        }
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|v| *v /= total);
        let diff = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        pi = next;
        if diff < 1e-15 {
            return Ok(pi);
        }
    }
    Err(Error::NoConvergence("stationary distribution".into()))
}

/// Solves `(I - γP) Q = r`.
pub fn q_pi_exact(m: &FiniteMdp) -> Result<ValueVector> {
    let s = m.states();
    let a = DMatrix::from_fn(s, s, |i, j| if i == j { 1.0 } else { 0.0 } - m.gamma * m.p[i][j]);
    let b = DVector::from_column_slice(&m.r);
    let q = a.lu().solve(&b).ok_or_else(|| Error::NumericFailure("singular policy evaluation system".into()))?;
    Ok(q.iter().copied().collect())
}

/// `‖v‖²` weighted by `weights`.
pub fn weighted_sq_norm(v: &[f64], weights: &[f64]) -> f64 {
    v.iter().zip(weights).map(|(x, w)| w * x * x).sum()
}

fn residual(m: &FiniteMdp, x: &[f64]) -> Vec<f64> {
    m.bellman(x).iter().zip(x).map(|(t, x)| t - x).collect()
}

/// `E_{s~π} Var_{s'|s} X(s')`.
fn conditional_variance(m: &FiniteMdp, pi: &[f64], x: &[f64]) -> f64 {
    let mean = m.expect_next(x);
    let second = m.expect_next(&x.iter().map(|v| v * v).collect::<Vec<_>>());
    pi.iter().zip(mean.iter().zip(&second)).map(|(w, (m1, m2))| w * (m2 - m1 * m1)).sum()
}

/// `Var_{s~π} X(s)`.
fn marginal_variance(pi: &[f64], x: &[f64]) -> f64 {
    let mean: f64 = pi.iter().zip(x).map(|(w, v)| w * v).sum();
    pi.iter().zip(x).map(|(w, v)| w * (v - mean) * (v - mean)).sum()
}

/// Expected squared sample-Bellman residual, enumerated over `s ~ π`,
/// `s' ~ P(·|s)` and averaged over the ensemble.
pub fn ltilde_exact(m: &FiniteMdp, ensemble: &[ValueVector]) -> Result<f64> {
    let pi = stationary_dist(m)?;
    Ok(ltilde_with(m, &pi, ensemble))
}

fn ltilde_with(m: &FiniteMdp, pi: &[f64], ensemble: &[ValueVector]) -> f64 {
    let total: f64 = ensemble
        .iter()
        .map(|x| {
            let mut acc = 0.0;
            for (s, row) in m.p.iter().enumerate() {
                for (s2, p) in row.iter().enumerate() {
                    let e = m.r[s] + m.gamma * x[s2] - x[s];
                    acc += pi[s] * p * e * e;
                }
            }
            acc
        })
        .sum();
    total / ensemble.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lemma1Report {
    pub ltilde: f64,
    /// Residual norm plus the conditional next-state variance.
    pub general_rhs: f64,
    pub general_pass: bool,
    /// Residual norm plus the marginal variance under the stationary law.
    pub marginal_rhs: f64,
    pub marginal_pass: bool,
}

fn check_ensemble(m: &FiniteMdp, ensemble: &[ValueVector]) -> Result<()> {
    if ensemble.is_empty() || ensemble.iter().any(|x| x.len() != m.states()) {
        return Err(Error::invalid("ensemble members must be non-empty value vectors over all states"));
    }
    Ok(())
}

/// Decompositions of the expected sample-Bellman residual.
///
/// The general form holds on every chain. The marginal form needs next states
/// drawn i.i.d. from the stationary law and fails on chains such as a
/// deterministic swap.
pub fn lemma1_checks(m: &FiniteMdp, ensemble: &[ValueVector]) -> Result<Lemma1Report> {
    check_ensemble(m, ensemble)?;
    let pi = stationary_dist(m)?;
    let ltilde = ltilde_with(m, &pi, ensemble);
    let g2 = m.gamma * m.gamma;
    let k = ensemble.len() as f64;
    let (mut general, mut marginal) = (0.0, 0.0);
    for x in ensemble {
        let res = weighted_sq_norm(&residual(m, x), &pi);
        general += (res + g2 * conditional_variance(m, &pi, x)) / k;
        marginal += (res + g2 * marginal_variance(&pi, x)) / k;
    }
    Ok(Lemma1Report {
        ltilde,
        general_rhs: general,
        general_pass: (ltilde - general).abs() < CHECK_TOL,
        marginal_rhs: marginal,
        marginal_pass: (ltilde - marginal).abs() < CHECK_TOL,
    })
}

/// `‖T Q1 - T Q2‖_π` and `γ ‖Q1 - Q2‖_π`.
pub fn contraction_norms(m: &FiniteMdp, q1: &[f64], q2: &[f64]) -> Result<(f64, f64)> {
    let pi = stationary_dist(m)?;
    let t: Vec<f64> = m.bellman(q1).iter().zip(m.bellman(q2)).map(|(a, b)| a - b).collect();
    let d: Vec<f64> = q1.iter().zip(q2).map(|(a, b)| a - b).collect();
    Ok((weighted_sq_norm(&t, &pi).sqrt(), m.gamma * weighted_sq_norm(&d, &pi).sqrt()))
}

pub fn contraction_check(m: &FiniteMdp, q1: &[f64], q2: &[f64]) -> Result<bool> {
    let (lhs, rhs) = contraction_norms(m, q1, q2)?;
    Ok(within(lhs, rhs, max_abs([q1, q2])))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lemma4Report {
    /// `(‖X - Q‖_π, ‖TX - X‖_π / (1-γ))` per member.
    pub members: Vec<(f64, f64)>,
    pub members_pass: bool,
    /// `E‖X - Q‖²_π` and `E‖TX - X‖²_π / (1-γ)²`.
    pub ensemble: (f64, f64),
    pub ensemble_pass: bool,
}

impl Lemma4Report {
    pub fn pass(&self) -> bool {
        self.members_pass && self.ensemble_pass
    }
}

/// Value error bounded by Bellman residual, per member and in squared
/// ensemble form.
pub fn lemma4_theorem_check(m: &FiniteMdp, ensemble: &[ValueVector]) -> Result<Lemma4Report> {
    check_ensemble(m, ensemble)?;
    let pi = stationary_dist(m)?;
    let q = q_pi_exact(m)?;
    let scale = 1.0 / (1.0 - m.gamma);
    let members: Vec<(f64, f64)> = ensemble
        .iter()
        .map(|x| {
            let err: Vec<f64> = x.iter().zip(&q).map(|(a, b)| a - b).collect();
            (weighted_sq_norm(&err, &pi).sqrt(), weighted_sq_norm(&residual(m, x), &pi).sqrt() * scale)
        })
        .collect();
    let k = ensemble.len() as f64;
    let magnitude = max_abs(ensemble.iter().map(Vec::as_slice).chain([q.as_slice()]));
    let lhs = members.iter().map(|(l, _)| l * l).sum::<f64>() / k;
    let rhs = members.iter().map(|(_, r)| r * r).sum::<f64>() / k;
    Ok(Lemma4Report {
        members_pass: members.iter().all(|(l, r)| within(*l, *r, magnitude)),
        members,
        ensemble: (lhs, rhs),
        ensemble_pass: within(lhs, rhs, magnitude * magnitude),
    })
}

fn dirichlet_row<R: Rng + ?Sized>(s: usize, rng: &mut R) -> Vec<f64> {
    let raw: Vec<f64> = (0..s).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|v| v / total).collect()
}

fn fix_row_sum(row: &mut [f64]) {
    // push rounding residue into the largest entry
    let err = 1.0 - row.iter().sum::<f64>();
    let (imax, _) = row.iter().enumerate().fold((0, f64::MIN), |acc, (i, v)| if *v > acc.1 { (i, *v) } else { acc });
    row[imax] += err;
}

/// Dirichlet(1, ..., 1) rows, uniform `[0, 1]` rewards.
pub fn random_mdp<R: Rng + ?Sized>(s: usize, gamma: f64, rng: &mut R) -> Result<FiniteMdp> {
    let p = (0..s)
        .map(|_| {
            let mut row = dirichlet_row(s, rng);
            fix_row_sum(&mut row);
            row
        })
        .collect();
    let r = (0..s).map(|_| rng.random::<f64>()).collect();
    FiniteMdp::new(p, r, gamma)
}

/// Every row equal to one Dirichlet draw, so next states are i.i.d.
pub fn identical_rows_mdp<R: Rng + ?Sized>(s: usize, gamma: f64, rng: &mut R) -> Result<FiniteMdp> {
    let mut row = dirichlet_row(s, rng);
    fix_row_sum(&mut row);
    let r = (0..s).map(|_| rng.random::<f64>()).collect();
    FiniteMdp::new(vec![row; s], r, gamma)
}

/// Deterministic two-state swap with reward on the second state.
pub fn swap_chain(gamma: f64) -> Result<FiniteMdp> {
    FiniteMdp::new(vec![vec![0.0, 1.0], vec![1.0, 0.0]], vec![0.0, 1.0], gamma)
}

/// `k` value vectors with entries uniform in `[-1, 1]`.
pub fn random_ensemble<R: Rng + ?Sized>(s: usize, k: usize, rng: &mut R) -> Vec<ValueVector> {
    (0..k).map(|_| (0..s).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

pub const SUITE_GAMMAS: [f64; 3] = [0.5, 0.9, 0.99];

/// Outcome of one randomized case of the oracle suite.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseOutcome {
    pub states: usize,
    pub gamma: f64,
    pub general: bool,
    pub contraction: bool,
    pub lemma4: bool,
    pub marginal_identical_rows: bool,
    /// Largest absolute gap in the general decomposition.
    pub general_gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub cases: Vec<CaseOutcome>,
    /// The marginal form fails on the swap chain, as it should.
    pub swap_chain_fails: bool,
}

impl SuiteReport {
    pub fn count(&self, f: impl Fn(&CaseOutcome) -> bool) -> usize {
        self.cases.iter().filter(|c| f(c)).count()
    }

    pub fn pass(&self) -> bool {
        self.swap_chain_fails
            && self.cases.iter().all(|c| c.general && c.contraction && c.lemma4 && c.marginal_identical_rows)
    }

    pub fn max_general_gap(&self) -> f64 {
        self.cases.iter().map(|c| c.general_gap).fold(0.0, f64::max)
    }
}

/// One randomized case; everything is derived from `seed`.
pub fn run_case(seed: u64) -> Result<CaseOutcome> {
    let mut rng = seeded(seed);
    let states = rng.random_range(2..=8usize);
    let gamma = SUITE_GAMMAS[(seed % 3) as usize];
    let m = random_mdp(states, gamma, &mut rng)?;
    let ens = random_ensemble(states, 5, &mut rng);
    let l1 = lemma1_checks(&m, &ens)?;

    let q = q_pi_exact(&m)?;
    let mut with_q = ens.clone();
    with_q.push(q.clone());
    with_q.push(q.iter().map(|v| v + 0.5).collect());
    let l4 = lemma4_theorem_check(&m, &with_q)?;

    let mut contraction = true;
    for pair in with_q.windows(2) {
        contraction &= contraction_check(&m, &pair[0], &pair[1])?;
    }

    let iid = identical_rows_mdp(states, gamma, &mut rng)?;
    let iid_ens = random_ensemble(states, 5, &mut rng);
    let mut iid_members = iid_ens.clone();
    iid_members.push(q_pi_exact(&iid)?);
    let marginal = lemma1_checks(&iid, &iid_members)?;

    Ok(CaseOutcome {
        states,
        gamma,
        general: l1.general_pass,
        contraction,
        lemma4: l4.pass(),
        marginal_identical_rows: marginal.marginal_pass && marginal.general_pass,
        general_gap: (l1.ltilde - l1.general_rhs).abs(),
    })
}

/// `cases` randomized cases, seeds `base_seed..base_seed + cases`, plus the
/// swap-chain expected failure.
pub fn run_suite(base_seed: u64, cases: usize) -> Result<SuiteReport> {
    let cases = map_range(cases, |i| run_case(base_seed + i as u64)).into_iter().collect::<Result<Vec<_>>>()?;
    let swap = swap_chain(0.9)?;
    let swap_report = lemma1_checks(&swap, &[q_pi_exact(&swap)?, vec![0.3, -0.7]])?;
    Ok(SuiteReport { cases, swap_chain_fails: swap_report.general_pass && !swap_report.marginal_pass })
}
