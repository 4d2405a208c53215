//! Argument parsing and subcommand drivers for the `pbac` binary.
//!
//! Settings resolve in three layers: built-in defaults, then a `key=value`
//! config file, then command-line flags.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use pbac::agent::{train, TrainConfig};
use pbac::analysis::{
    aulc, iqm, read_eval_csv, read_eval_curve, summarize, write_pairwise_csv, write_summary_csv, write_text,
    AnalysisSummary, CurveGroups, EvalCurve,
};
use pbac::verify::{run_all, CheckOutcome};

#[derive(Parser, Debug)]
#[command(name = "pbac", version, about = "PAC-Bayesian actor-critic experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one agent on one environment and write its CSV logs.
    Train(RunFlags),
    /// Summarize the evaluation log of a finished run.
    Eval {
        #[command(flatten)]
        run: RunFlags,
        /// Run directory to read instead of the one implied by the flags.
        #[arg(long)]
        run_dir: Option<PathBuf>,
    },
    /// Run the exact oracle checks, gradient checks and hand-value test.
    Verify {
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 200)]
        oracle_cases: usize,
        #[arg(long, default_value_t = 100)]
        gradient_cases: usize,
    },
    /// Cross-seed statistics over eval.csv files or directories containing them.
    Analyze {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
}

/// Training flags. Values are kept as text and validated in one place so
/// config-file entries and flags share the same parser.
#[derive(Args, Debug, Default, Clone)]
struct RunFlags {
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    agent: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    steps: Option<String>,
    #[arg(long)]
    warmup: Option<String>,
    #[arg(long)]
    batch: Option<String>,
    #[arg(long)]
    replay_ratio: Option<String>,
    #[arg(long)]
    ensemble: Option<String>,
    #[arg(long)]
    gamma: Option<String>,
    #[arg(long)]
    tau: Option<String>,
    #[arg(long)]
    kappa: Option<String>,
    #[arg(long)]
    psr: Option<String>,
    #[arg(long)]
    prior_var: Option<String>,
    /// Learning rate of critics, actor and temperature.
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    eval_every: Option<String>,
    #[arg(long)]
    eval_episodes: Option<String>,
    #[arg(long)]
    out_dir: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    lambda_bar: Option<String>,
    #[arg(long)]
    delta: Option<String>,
    #[arg(long)]
    reward_bound: Option<String>,
    /// Comma-separated hidden widths, e.g. `256,256`.
    #[arg(long)]
    hidden: Option<String>,
    /// Scale of the randomized priors (bootdqnp).
    #[arg(long)]
    prior_scale: Option<String>,
    #[arg(long)]
    buffer: Option<String>,
    #[arg(long)]
    visit_every: Option<String>,
}

impl RunFlags {
    fn entries(&self) -> Vec<(&'static str, &Option<String>)> {
        vec![
            ("env", &self.env),
            ("agent", &self.agent),
            ("seed", &self.seed),
            ("steps", &self.steps),
            ("warmup", &self.warmup),
            ("batch", &self.batch),
            ("replay-ratio", &self.replay_ratio),
            ("ensemble", &self.ensemble),
            ("gamma", &self.gamma),
            ("tau", &self.tau),
            ("kappa", &self.kappa),
            ("psr", &self.psr),
            ("prior-var", &self.prior_var),
            ("lr", &self.lr),
            ("eval-every", &self.eval_every),
            ("eval-episodes", &self.eval_episodes),
            ("out-dir", &self.out_dir),
            ("lambda-bar", &self.lambda_bar),
            ("delta", &self.delta),
            ("reward-bound", &self.reward_bound),
            ("hidden", &self.hidden),
            ("prior-scale", &self.prior_scale),
            ("buffer", &self.buffer),
            ("visit-every", &self.visit_every),
        ]
    }
}

/// A fully resolved training run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub cfg: TrainConfig,
    pub out_dir: PathBuf,
}

impl RunSpec {
    pub fn run_dir(&self) -> PathBuf {
        self.cfg.run_dir(&self.out_dir)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CliCommand {
    Train(RunSpec),
    Eval { run: RunSpec, run_dir: Option<PathBuf> },
    Verify { out_dir: PathBuf, oracle_cases: usize, gradient_cases: usize },
    Analyze { inputs: Vec<PathBuf>, out_dir: PathBuf },
}

/// Outcome of parsing: a command, or text clap wants shown (help, version).
#[derive(Debug)]
pub enum Parsed {
    Command(CliCommand),
    Display(String),
}

/// Parses `argv` (including the program name).
pub fn parse_args<I, T>(argv: I) -> Result<Parsed>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => return Ok(Parsed::Display(e.to_string())),
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            bail!("{}", first.trim_start_matches("error: "));
        }
    };
    let cmd = match cli.command {
        Command::Train(flags) => CliCommand::Train(resolve(&flags)?),
        Command::Eval { run, run_dir } => CliCommand::Eval { run: resolve(&run)?, run_dir },
        Command::Verify { out_dir, oracle_cases, gradient_cases } => {
            CliCommand::Verify { out_dir, oracle_cases, gradient_cases }
        }
        Command::Analyze { inputs, out_dir } => CliCommand::Analyze { inputs, out_dir },
    };
    Ok(Parsed::Command(cmd))
}

fn resolve(flags: &RunFlags) -> Result<RunSpec> {
    let mut spec = RunSpec { cfg: TrainConfig::default(), out_dir: PathBuf::from("runs") };
    if let Some(path) = &flags.config {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        for (key, value) in parse_config(&text)? {
            apply_setting(&mut spec, &key, &value).with_context(|| format!("config {}", path.display()))?;
        }
    }
    for (key, value) in flags.entries() {
        if let Some(v) = value {
            apply_setting(&mut spec, key, v).with_context(|| format!("--{key}"))?;
        }
    }
    spec.cfg.validate().map_err(|e| anyhow!("{e}"))?;
    Ok(spec)
}

/// `key=value` lines; `#` starts a comment. Keys accept `_` for `-`.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| anyhow!("line {}: expected key=value", i + 1))?;
        out.push((k.trim().replace('_', "-"), v.trim().to_string()));
    }
    Ok(out)
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse::<T>().map_err(|_| anyhow!("invalid value '{value}' for {key}"))
}

fn apply_setting(spec: &mut RunSpec, key: &str, value: &str) -> Result<()> {
    let cfg = &mut spec.cfg;
    match key {
        "env" => cfg.env = value.parse().map_err(|e| anyhow!("{e}"))?,
        "agent" => cfg.agent = value.parse().map_err(|e| anyhow!("{e}"))?,
        "seed" => cfg.seed = num(key, value)?,
        "steps" => cfg.total_steps = num(key, value)?,
        "warmup" => cfg.warmup_steps = num(key, value)?,
        "batch" => cfg.batch_size = num(key, value)?,
        "replay-ratio" => cfg.replay_ratio = num(key, value)?,
        "ensemble" => cfg.ensemble_size = num(key, value)?,
        "gamma" => cfg.gamma = num(key, value)?,
        "tau" => cfg.tau = num(key, value)?,
        "kappa" => {
            let k: f64 = num(key, value)?;
            if !(k > 0.0 && k < 1.0) {
                bail!("kappa {k} outside (0, 1)");
            }
            cfg.kappa = k;
        }
        "psr" => cfg.psr = num(key, value)?,
        "prior-var" => cfg.sigma0_sq = num(key, value)?,
        "lr" => {
            let lr: f64 = num(key, value)?;
            cfg.critic_lr = lr;
            cfg.actor_lr = lr;
            cfg.alpha_lr = lr;
        }
        "eval-every" => cfg.eval_every = num(key, value)?,
        "eval-episodes" => cfg.eval_episodes = num(key, value)?,
        "out-dir" => spec.out_dir = PathBuf::from(value),
        "lambda-bar" => cfg.bound.lambda_bar = num(key, value)?,
        "delta" => cfg.bound.delta = num(key, value)?,
        "reward-bound" => cfg.bound.reward_bound = num(key, value)?,
        "hidden" => {
            cfg.hidden = value.split(',').map(|w| num(key, w.trim())).collect::<Result<Vec<usize>>>()?;
        }
        "prior-scale" => cfg.prior_scale = num(key, value)?,
        "buffer" => cfg.buffer_capacity = num(key, value)?,
        "visit-every" => cfg.visit_every = num(key, value)?,
        other => bail!("unknown setting '{other}'"),
    }
    Ok(())
}

/// Resolved settings as config-file text.
pub fn render_config(spec: &RunSpec) -> String {
    let c = &spec.cfg;
    let hidden: Vec<String> = c.hidden.iter().map(|h| h.to_string()).collect();
    let mut s = String::new();
    let pairs: [(&str, String); 24] = [
        ("env", c.env.to_string()),
        ("agent", c.agent.to_string()),
        ("seed", c.seed.to_string()),
        ("steps", c.total_steps.to_string()),
        ("warmup", c.warmup_steps.to_string()),
        ("batch", c.batch_size.to_string()),
        ("replay-ratio", c.replay_ratio.to_string()),
        ("ensemble", c.ensemble_size.to_string()),
        ("gamma", c.gamma.to_string()),
        ("tau", c.tau.to_string()),
        ("kappa", c.kappa.to_string()),
        ("psr", c.psr.to_string()),
        ("prior-var", c.sigma0_sq.to_string()),
        ("lr", c.critic_lr.to_string()),
        ("eval-every", c.eval_interval().to_string()),
        ("eval-episodes", c.eval_episodes.to_string()),
        ("out-dir", spec.out_dir.display().to_string()),
        ("lambda-bar", c.bound.lambda_bar.to_string()),
        ("delta", c.bound.delta.to_string()),
        ("reward-bound", c.bound.reward_bound.to_string()),
        ("hidden", hidden.join(",")),
        ("prior-scale", c.prior_scale.to_string()),
        ("buffer", c.buffer_capacity.to_string()),
        ("visit-every", c.visit_every.to_string()),
    ];
    for (k, v) in pairs {
        let _ = writeln!(s, "{k}={v}");
    }
    s
}

pub fn run_train(spec: &RunSpec) -> Result<PathBuf> {
    let run = train(&spec.cfg).map_err(|e| anyhow!("training failed: {e}"))?;
    let dir = spec.run_dir();
    run.log.write_csvs(&dir).with_context(|| format!("writing logs to {}", dir.display()))?;
    write_text(&dir.join("config.txt"), &render_config(spec))?;
    if let Some(last) = run.log.final_eval() {
        println!("{}: final eval return {} at step {}", dir.display(), last.mean_return, last.step);
    }
    Ok(dir)
}

/// Final return, AULC and the IQM of the final per-episode returns.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub final_step: u64,
    pub final_return: f64,
    pub final_episode_iqm: f64,
    pub aulc: f64,
}

pub fn run_eval(dir: &Path) -> Result<EvalSummary> {
    let path = dir.join("eval.csv");
    let rows = read_eval_csv(&path).map_err(|e| anyhow!("{e}"))?;
    let last = rows.last().ok_or_else(|| anyhow!("{} has no checkpoints", path.display()))?;
    let curve = EvalCurve::new(rows.iter().map(|r| (r.step, r.mean_return)).collect()).map_err(|e| anyhow!("{e}"))?;
    let summary = EvalSummary {
        final_step: last.step,
        final_return: last.mean_return,
        final_episode_iqm: iqm(&last.returns).map_err(|e| anyhow!("{e}"))?,
        aulc: aulc(&curve).map_err(|e| anyhow!("{e}"))?,
    };
    let text = format!(
        "final_step,final_return,final_episode_iqm,aulc\n{},{},{},{}\n",
        summary.final_step, summary.final_return, summary.final_episode_iqm, summary.aulc
    );
    write_text(&dir.join("eval_summary.csv"), &text)?;
    Ok(summary)
}

pub fn run_verify(out_dir: &Path, oracle_cases: usize, gradient_cases: usize) -> Result<Vec<CheckOutcome>> {
    let outcomes = run_all(oracle_cases, gradient_cases);
    fs::create_dir_all(out_dir)?;
    let mut text = String::from("check,pass,detail\n");
    for o in &outcomes {
        println!("{} {}: {}", if o.pass { "PASS" } else { "FAIL" }, o.name, o.detail);
        let _ = writeln!(text, "{},{},\"{}\"", o.name, o.pass, o.detail.replace('"', "'"));
    }
    write_text(&out_dir.join("verify_summary.csv"), &text)?;
    Ok(outcomes)
}

/// Method and seed labels of an `eval.csv` path.
///
/// Files laid out as `{env}/{agent}/seed_{k}/eval.csv` belong to method
/// `{env}/{agent}` with seed label `seed_{k}`. Any other file belongs to
/// the method named by its directory, with its file stem as seed label.
pub fn curve_labels(path: &Path) -> (String, String) {
    let name = |p: Option<&Path>| p.and_then(|p| p.file_name()).map(|s| s.to_string_lossy().into_owned());
    let parent = path.parent();
    match name(parent) {
        Some(seed) if seed.starts_with("seed_") => {
            let agent_dir = parent.and_then(Path::parent);
            let agent = name(agent_dir).unwrap_or_default();
            let env = name(agent_dir.and_then(Path::parent)).unwrap_or_default();
            let method = if env.is_empty() { agent } else { format!("{env}/{agent}") };
            (method, seed)
        }
        other => {
            let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            (other.unwrap_or_else(|| ".".into()), stem)
        }
    }
}

fn collect_inputs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for input in inputs {
        if input.is_dir() {
            for entry in walkdir::WalkDir::new(input).sort_by_file_name() {
                let entry = entry?;
                if entry.file_type().is_file() && entry.file_name() == "eval.csv" {
                    files.push(entry.into_path());
                }
            }
        } else if input.is_file() {
            files.push(input.clone());
        } else {
            bail!("{} does not exist", input.display());
        }
    }
    if files.is_empty() {
        bail!("no eval.csv files found");
    }
    Ok(files)
}

pub fn run_analyze(inputs: &[PathBuf], out_dir: &Path) -> Result<AnalysisSummary> {
    let mut groups: CurveGroups = BTreeMap::new();
    for file in collect_inputs(inputs)? {
        let curve = read_eval_curve(&file).map_err(|e| anyhow!("{e}"))?;
        let (method, seed) = curve_labels(&file);
        let runs = groups.entry(method.clone()).or_default();
        if runs.insert(seed.clone(), curve).is_some() {
            bail!("duplicate curve {method} {seed}");
        }
    }
    let summary = summarize(&groups).map_err(|e| anyhow!("{e}"))?;
    fs::create_dir_all(out_dir)?;
    write_summary_csv(&out_dir.join("summary.csv"), &summary).map_err(|e| anyhow!("{e}"))?;
    write_pairwise_csv(&out_dir.join("pairwise.csv"), &summary).map_err(|e| anyhow!("{e}"))?;
    for m in &summary.methods {
        println!(
            "{}: runs {} final IQM {} [{}, {}] AULC IQM {}",
            m.method, m.runs, m.final_iqm, m.final_q25, m.final_q75, m.aulc_iqm
        );
    }
    for p in &summary.pairwise {
        match p.test {
            Some(t) if t.degenerate => println!("{} > {}: p = {} (degenerate)", p.method_a, p.method_b, t.p_value),
            Some(t) => println!("{} > {}: p = {}", p.method_a, p.method_b, t.p_value),
            None => println!("{} > {}: no shared seeds", p.method_a, p.method_b),
        }
    }
    Ok(summary)
}

/// Executes a parsed command.
pub fn execute(cmd: &CliCommand) -> Result<()> {
    match cmd {
        CliCommand::Train(spec) => run_train(spec).map(|_| ()),
        CliCommand::Eval { run, run_dir } => {
            let dir = run_dir.clone().unwrap_or_else(|| run.run_dir());
            let s = run_eval(&dir)?;
            println!(
                "final step {} return {} episode IQM {} AULC {}",
                s.final_step, s.final_return, s.final_episode_iqm, s.aulc
            );
            Ok(())
        }
        CliCommand::Verify { out_dir, oracle_cases, gradient_cases } => {
            let outcomes = run_verify(out_dir, *oracle_cases, *gradient_cases)?;
            let failed = outcomes.iter().filter(|o| !o.pass).count();
            if failed > 0 {
                bail!("{failed} verification checks failed");
            }
            Ok(())
        }
        CliCommand::Analyze { inputs, out_dir } => run_analyze(inputs, out_dir).map(|_| ()),
    }
}
