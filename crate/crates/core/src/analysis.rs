//! Evaluation statistics, bound diagnostics and the CSV artifacts of a run.
//!
//! CSV files are comma-separated with a mandatory header, `.` decimals and LF
//! line endings. Missing values are written as empty fields. Floats use the
//! shortest representation that round-trips, so identical runs produce
//! byte-identical files.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use crate::{Error, Result};

pub const TRAIN_HEADER: [&str; 7] =
    ["step", "episode_return", "loss_diversity", "loss_coherence", "loss_propagation", "alpha", "active_head"];
pub const VISITS_HEADER: [&str; 3] = ["step", "dim_a", "dim_b"];
pub const BOUND_HEADER: [&str; 5] = ["step", "empirical_risk", "kl", "variance_term", "rhs"];

fn sorted(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::invalid("statistic of an empty list"));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::non_finite("statistic input"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Interquartile mean: drop `floor(n/4)` values from each end, average the rest.
pub fn iqm(values: &[f64]) -> Result<f64> {
    let v = sorted(values)?;
    let cut = v.len() / 4;
    Ok(mean(&v[cut..v.len() - cut]))
}

/// Nearest-rank quantile: the `ceil(p n)`-th smallest value (1-based).
pub fn nearest_rank(values: &[f64], p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("quantile level {p} outside [0, 1]")));
    }
    let v = sorted(values)?;
    let rank = ((p * v.len() as f64).ceil() as usize).clamp(1, v.len());
    Ok(v[rank - 1])
}

/// Ordered `(step, return)` checkpoints of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalCurve {
    checkpoints: Vec<(u64, f64)>,
}

impl EvalCurve {
    pub fn new(checkpoints: Vec<(u64, f64)>) -> Result<Self> {
        if checkpoints.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::invalid("evaluation steps must be strictly increasing"));
        }
        Ok(Self { checkpoints })
    }

    pub fn checkpoints(&self) -> &[(u64, f64)] {
        &self.checkpoints
    }

    pub fn final_return(&self) -> Option<f64> {
        self.checkpoints.last().map(|c| c.1)
    }
}

/// Area under the learning curve as the mean checkpoint return.
pub fn aulc(curve: &EvalCurve) -> Result<f64> {
    if curve.checkpoints.is_empty() {
        return Err(Error::invalid("learning curve has no checkpoints"));
    }
    Ok(curve.checkpoints.iter().map(|c| c.1).sum::<f64>() / curve.checkpoints.len() as f64)
}

/// One-sided paired t-test of `mean(a - b) > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    /// `None` on the degenerate zero-variance path.
    pub t: Option<f64>,
    pub p_value: f64,
    pub degenerate: bool,
    pub pairs: usize,
}

pub fn paired_ttest_onesided(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), got: b.len() });
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::invalid("paired t-test needs at least two pairs"));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::non_finite("t-test input"));
    }
    let m = mean(&d);
    let var = d.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        let p_value = if m <= 0.0 { 1.0 } else { 0.0 };
        return Ok(TTest { t: None, p_value, degenerate: true, pairs: n });
    }
    let t = m / (var / n as f64).sqrt();
    let p_value = student_t_sf(t, (n - 1) as f64);
    Ok(TTest { t: Some(t), p_value, degenerate: false, pairs: n })
}

/// `P(T > t)` for Student's t with `dof` degrees of freedom.
pub fn student_t_sf(t: f64, dof: f64) -> f64 {
    let tail = 0.5 * regularized_incomplete_beta(dof / (dof + t * t), dof / 2.0, 0.5);
    if t >= 0.0 { tail } else { 1.0 - tail }
}

/// Lanczos approximation (g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    for (i, c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// `I_x(a, b)` by the Lentz continued fraction.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_continued_fraction(x, a, b) / a
    } else {
        1.0 - ln_front.exp() * beta_continued_fraction(1.0 - x, b, a) / b
    }
}

fn beta_continued_fraction(x: f64, a: f64, b: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut c = 1.0;
    let mut d = 1.0 - (a + b) * x / (a + 1.0);
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=500 {
        let m = m as f64;
        let m2 = 2.0 * m;
        for num in [m * (b - m) * x / ((a + m2 - 1.0) * (a + m2)), -(a + m) * (a + b + m) * x / ((a + m2) * (a + m2 + 1.0))] {
            d = 1.0 + num * d;
            if d.abs() < TINY {
                d = TINY;
            }
            c = 1.0 + num / c;
            if c.abs() < TINY {
                c = TINY;
            }
            d = 1.0 / d;
            h *= d * c;
        }
        if (d * c - 1.0).abs() < 1e-16 {
            break;
        }
    }
    h
}

/// Terms of the high-probability value-error bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundDiagnostics {
    pub empirical_risk: f64,
    pub kl: f64,
    pub variance_term: f64,
    pub nu: f64,
    pub lambda_bar: f64,
    /// `R² / (1-γ)²` for reward bound `R`.
    pub b: f64,
    pub delta: f64,
    pub n: usize,
    pub rhs: f64,
}

/// Settings that are supplied rather than estimated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundSettings {
    pub nu: f64,
    pub lambda_bar: f64,
    pub reward_bound: f64,
    pub delta: f64,
}

impl Default for BoundSettings {
    fn default() -> Self {
        Self { nu: 1.0, lambda_bar: 1.0, reward_bound: 1.0, delta: 0.05 }
    }
}

pub fn loss_bound_b(reward_bound: f64, gamma: f64) -> f64 {
    reward_bound * reward_bound / ((1.0 - gamma) * (1.0 - gamma))
}

impl BoundDiagnostics {
    pub fn new(
        empirical_risk: f64,
        kl: f64,
        variance_term: f64,
        n: usize,
        settings: BoundSettings,
        gamma: f64,
    ) -> Result<Self> {
        let mut d = Self {
            empirical_risk,
            kl,
            variance_term,
            nu: settings.nu,
            lambda_bar: settings.lambda_bar,
            b: loss_bound_b(settings.reward_bound, gamma),
            delta: settings.delta,
            n,
            rhs: f64::NAN,
        };
        d.rhs = bound_rhs(&d, gamma)?;
        Ok(d)
    }
}

/// `(risk + ν λ̄ B² / (8n) + (kl - log δ)/ν - γ² var) / (1-γ)²`.
pub fn bound_rhs(d: &BoundDiagnostics, gamma: f64) -> Result<f64> {
    if !(d.delta > 0.0 && d.delta <= 1.0) {
        return Err(Error::invalid(format!("confidence level {} outside (0, 1]", d.delta)));
    }
    if d.n == 0 {
        return Err(Error::invalid("bound needs at least one datapoint"));
    }
    let fields = [d.empirical_risk, d.kl, d.variance_term, d.nu, d.lambda_bar, d.b, gamma];
    if fields.iter().any(|v| !v.is_finite()) {
        return Err(Error::non_finite("bound diagnostics"));
    }
    let concentration = d.nu * d.lambda_bar * d.b * d.b / (8.0 * d.n as f64);
    let complexity = (d.kl - d.delta.ln()) / d.nu;
    let num = d.empirical_risk + concentration + complexity - gamma * gamma * d.variance_term;
    Ok(num / ((1.0 - gamma) * (1.0 - gamma)))
}

/// A recorded state projection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VisitRow {
    pub step: u64,
    pub dim_a: f64,
    pub dim_b: f64,
}

/// Every `every`-th observation (1-based steps) projected on `dims`.
pub fn log_visits(observations: &[Vec<f64>], every: u64, dims: (usize, usize)) -> Result<Vec<VisitRow>> {
    let mut logger = VisitLogger::new(every, dims)?;
    for (i, obs) in observations.iter().enumerate() {
        logger.record(i as u64 + 1, obs)?;
    }
    Ok(logger.rows)
}

/// Streaming form of [`log_visits`].
#[derive(Debug, Clone)]
pub struct VisitLogger {
    pub every: u64,
    pub dims: (usize, usize),
    pub rows: Vec<VisitRow>,
}

impl VisitLogger {
    pub fn new(every: u64, dims: (usize, usize)) -> Result<Self> {
        if every == 0 {
            return Err(Error::invalid("visit logging interval must be positive"));
        }
        Ok(Self { every, dims, rows: Vec::new() })
    }

    pub fn record(&mut self, step: u64, obs: &[f64]) -> Result<()> {
        if !step.is_multiple_of(self.every) {
            return Ok(());
        }
        let (a, b) = self.dims;
        if a >= obs.len() || b >= obs.len() {
            return Err(Error::invalid(format!("visit dims ({a}, {b}) out of range for observation of size {}", obs.len())));
        }
        self.rows.push(VisitRow { step, dim_a: obs[a], dim_b: obs[b] });
        Ok(())
    }
}

/// One row of `train.csv`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainRecord {
    pub step: u64,
    /// Set on the step that ends an episode.
    pub episode_return: Option<f64>,
    pub loss_diversity: Option<f64>,
    pub loss_coherence: Option<f64>,
    pub loss_propagation: Option<f64>,
    pub alpha: Option<f64>,
    pub active_head: usize,
}

/// One row of `eval.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub step: u64,
    pub mean_return: f64,
    pub returns: Vec<f64>,
}

/// One row of `bound.csv`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundRecord {
    pub step: u64,
    pub diagnostics: BoundDiagnostics,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    Ok(csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path)?)
}

fn finish(mut w: csv::Writer<File>) -> Result<()> {
    w.flush()?;
    Ok(())
}

pub fn write_train_csv(path: &Path, rows: &[TrainRecord]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(TRAIN_HEADER)?;
    for r in rows {
        w.write_record([
            r.step.to_string(),
            opt(r.episode_return),
            opt(r.loss_diversity),
            opt(r.loss_coherence),
            opt(r.loss_propagation),
            opt(r.alpha),
            r.active_head.to_string(),
        ])?;
    }
    finish(w)
}

pub fn eval_header(episodes: usize) -> Vec<String> {
    let mut h = vec!["step".to_string(), "eval_return_mean".to_string()];
    h.extend((0..episodes).map(|e| format!("eval_return_{e}")));
    h
}

pub fn write_eval_csv(path: &Path, episodes: usize, rows: &[EvalRecord]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(eval_header(episodes))?;
    for r in rows {
        if r.returns.len() != episodes {
            return Err(Error::DimensionMismatch { expected: episodes, got: r.returns.len() });
        }
        let mut rec = vec![r.step.to_string(), r.mean_return.to_string()];
        rec.extend(r.returns.iter().map(|v| v.to_string()));
        w.write_record(rec)?;
    }
    finish(w)
}

/// Reads `eval.csv` into per-episode records, validating the header.
pub fn read_eval_csv(path: &Path) -> Result<Vec<EvalRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header = rdr.headers()?.clone();
    let episodes = header.len().saturating_sub(2);
    let expected = eval_header(episodes);
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::invalid(format!("{}: malformed eval.csv header", path.display())));
    }
    let parse = |s: &str| -> Result<f64> {
        s.parse::<f64>().map_err(|_| Error::invalid(format!("{}: bad number {s:?}", path.display())))
    };
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let step = rec[0].parse::<u64>().map_err(|_| Error::invalid(format!("{}: bad step {:?}", path.display(), &rec[0])))?;
        let mean_return = parse(&rec[1])?;
        let returns = rec.iter().skip(2).map(parse).collect::<Result<Vec<_>>>()?;
        rows.push(EvalRecord { step, mean_return, returns });
    }
    Ok(rows)
}

pub fn read_eval_curve(path: &Path) -> Result<EvalCurve> {
    EvalCurve::new(read_eval_csv(path)?.into_iter().map(|r| (r.step, r.mean_return)).collect())
}

pub fn write_visits_csv(path: &Path, rows: &[VisitRow]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(VISITS_HEADER)?;
    for r in rows {
        w.write_record([r.step.to_string(), r.dim_a.to_string(), r.dim_b.to_string()])?;
    }
    finish(w)
}

pub fn write_bound_csv(path: &Path, rows: &[BoundRecord]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(BOUND_HEADER)?;
    for r in rows {
        let d = &r.diagnostics;
        w.write_record([
            r.step.to_string(),
            d.empirical_risk.to_string(),
            d.kl.to_string(),
            d.variance_term.to_string(),
            d.rhs.to_string(),
        ])?;
    }
    finish(w)
}

/// Cross-seed statistics of one method.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: String,
    pub runs: usize,
    pub final_iqm: f64,
    pub final_q25: f64,
    pub final_q75: f64,
    pub aulc_iqm: f64,
}

/// Paired comparison of two methods over their common seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseTest {
    pub method_a: String,
    pub method_b: String,
    /// `None` when fewer than two seeds are shared.
    pub test: Option<TTest>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnalysisSummary {
    pub methods: Vec<MethodSummary>,
    pub pairwise: Vec<PairwiseTest>,
}

/// Curves grouped by method, each keyed by a seed label used for pairing.
pub type CurveGroups = BTreeMap<String, BTreeMap<String, EvalCurve>>;

pub fn summarize(groups: &CurveGroups) -> Result<AnalysisSummary> {
    let mut out = AnalysisSummary::default();
    for (method, runs) in groups {
        let finals = runs
            .values()
            .map(|c| c.final_return().ok_or_else(|| Error::invalid(format!("{method}: empty curve"))))
            .collect::<Result<Vec<_>>>()?;
        let aulcs = runs.values().map(aulc).collect::<Result<Vec<_>>>()?;
        out.methods.push(MethodSummary {
            method: method.clone(),
            runs: runs.len(),
            final_iqm: iqm(&finals)?,
            final_q25: nearest_rank(&finals, 0.25)?,
            final_q75: nearest_rank(&finals, 0.75)?,
            aulc_iqm: iqm(&aulcs)?,
        });
    }
    let names: Vec<&String> = groups.keys().collect();
    for (i, a) in names.iter().enumerate() {
        for b in &names[i + 1..] {
            let (ga, gb) = (&groups[*a], &groups[*b]);
            let (mut xa, mut xb) = (Vec::new(), Vec::new());
            for (seed, ca) in ga {
                if let (Some(cb), Some(fa)) = (gb.get(seed), ca.final_return()) {
                    if let Some(fb) = cb.final_return() {
                        xa.push(fa);
                        xb.push(fb);
                    }
                }
            }
            let test = if xa.len() >= 2 { Some(paired_ttest_onesided(&xa, &xb)?) } else { None };
            out.pairwise.push(PairwiseTest { method_a: (*a).clone(), method_b: (*b).clone(), test });
        }
    }
    Ok(out)
}

pub fn write_summary_csv(path: &Path, summary: &AnalysisSummary) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["method", "runs", "final_iqm", "final_q25", "final_q75", "aulc_iqm"])?;
    for m in &summary.methods {
        w.write_record([
            m.method.clone(),
            m.runs.to_string(),
            m.final_iqm.to_string(),
            m.final_q25.to_string(),
            m.final_q75.to_string(),
            m.aulc_iqm.to_string(),
        ])?;
    }
    finish(w)
}

pub fn write_pairwise_csv(path: &Path, summary: &AnalysisSummary) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["method_a", "method_b", "pairs", "t", "p_value", "degenerate"])?;
    for p in &summary.pairwise {
        let row = match p.test {
            Some(t) => [
                p.method_a.clone(),
                p.method_b.clone(),
                t.pairs.to_string(),
                opt(t.t),
                t.p_value.to_string(),
                t.degenerate.to_string(),
            ],
            None => [p.method_a.clone(), p.method_b.clone(), "0".into(), String::new(), String::new(), String::new()],
        };
        w.write_record(row)?;
    }
    finish(w)
}

/// Writes `text` to `path` with LF endings.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = File::create(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}
