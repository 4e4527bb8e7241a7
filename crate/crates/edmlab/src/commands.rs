//! Subcommand implementations behind the `edmlab` binary.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use edmlab_core::counterexamples::{
    example1_check, example2_check, example3_check, pseudo_gradient_identity_check, random_policy, standard_suite,
    theorem1_check, consistency_check, example2_sweep_check, CheckResult, THETA_EXPERT,
};
use edmlab_core::ebm::pseudo_state_dist_gauged;
use edmlab_core::mdp::{rollout, visitation};
use edmlab_core::objectives::{gradient_descent, Objective, PopulationSpec};
use edmlab_core::sampler::{
    fixture_energies, langevin_sample, langevin_tv, sample_categorical, SurrogateEnergy, DEFAULT_BINS,
    DEFAULT_CHAINS, DEFAULT_STEPS, DEFAULT_STEP_SIZE,
};
use edmlab_core::{CoupledPolicy, TabularMdp, VisitationMode};

use crate::formats::{
    check_report, pseudo_dist_json, read_energy, read_mdp, read_policy, samples_jsonl, state_dist_json,
    to_json_bytes, trace_csv, trajectories_to_jsonl, write_atomic, FormatError, LoadedPolicy,
};

#[derive(Debug, Parser)]
#[command(name = "edmlab", version, about = "Counterexample checks and experiments for energy-based imitation objectives")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the self-checking counterexample suite and write a JSON report.
    Check(CheckArgs),
    /// Gradient descent on the coupled two-state family; writes a CSV trace.
    Train(TrainArgs),
    /// State visitation of a policy in an MDP.
    Visitation(VisitationArgs),
    /// Seeded rollouts written as JSON Lines.
    Rollout(RolloutArgs),
    /// Langevin samples from a surrogate energy, or exact draws from a
    /// policy's pseudo-state distribution.
    Sample(SampleArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CheckName {
    Example1,
    Example2,
    Example2Sweep,
    Example3,
    Identity,
    Theorem1,
    Consistency,
}

#[derive(Debug, clap::Args)]
pub struct CheckArgs {
    /// Run a single check family.
    #[arg(long, value_enum)]
    pub only: Option<CheckName>,
    /// Coupling for `--only example3`; defaults to 0.25, 0.5, 1 and 2.
    #[arg(long, allow_hyphen_values = true)]
    pub k: Option<f64>,
    /// Report path; the report goes to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ObjectiveArg {
    Bc,
    Edm,
}

#[derive(Debug, clap::Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub objective: ObjectiveArg,
    #[arg(long, default_value_t = 0.5, allow_hyphen_values = true)]
    pub k: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub theta0: f64,
    #[arg(long, default_value_t = THETA_EXPERT, allow_hyphen_values = true)]
    pub theta_expert: f64,
    #[arg(long, default_value_t = 0.5, allow_hyphen_values = true)]
    pub lr: f64,
    #[arg(long, default_value_t = 5000)]
    pub steps: usize,
    /// `uniform`, `s1`, `s2` or a ratio `w1:w2`.
    #[arg(long, default_value = "uniform")]
    pub weights: String,
    /// CSV trace path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Discounted,
    Stationary,
}

impl From<ModeArg> for VisitationMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Discounted => VisitationMode::Discounted,
            ModeArg::Stationary => VisitationMode::Stationary,
        }
    }
}

#[derive(Debug, clap::Args)]
pub struct VisitationArgs {
    #[arg(long)]
    pub mdp: PathBuf,
    #[arg(long)]
    pub policy: PathBuf,
    #[arg(long, value_enum, default_value = "discounted")]
    pub mode: ModeArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct RolloutArgs {
    #[arg(long)]
    pub mdp: PathBuf,
    #[arg(long)]
    pub policy: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub episodes: usize,
    #[arg(long, default_value_t = 50)]
    pub horizon: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct SampleArgs {
    /// Energy JSON file or a built-in fixture name (single, symmetric, asymmetric).
    #[arg(long, conflicts_with = "policy", required_unless_present = "policy")]
    pub energy: Option<String>,
    /// Policy JSON; samples states from its pseudo-state distribution.
    #[arg(long)]
    pub policy: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_CHAINS)]
    pub n: usize,
    #[arg(long, default_value_t = DEFAULT_STEPS)]
    pub steps: usize,
    #[arg(long, default_value_t = DEFAULT_STEP_SIZE)]
    pub step_size: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    pub bins: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("{0}")]
    Core(edmlab_core::Error),
    #[error("check failed: {}", .0.join(", "))]
    ChecksFailed(Vec<String>),
    #[error("{0}")]
    Diverged(edmlab_core::Error),
}

impl From<edmlab_core::Error> for CliError {
    fn from(e: edmlab_core::Error) -> Self {
        match e {
            edmlab_core::Error::Divergence { .. } | edmlab_core::Error::NonFiniteState { .. } => CliError::Diverged(e),
            other => CliError::Core(other),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::ChecksFailed(_) => 1,
            CliError::Usage(_) | CliError::Format(_) | CliError::Core(_) => 2,
            CliError::Diverged(_) => 3,
        }
    }
}

pub fn main_with(cli: Cli) -> ExitCode {
    let mut stdout = std::io::stdout().lock();
    match run(cli, &mut stdout) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("edmlab: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

pub fn run(cli: Cli, stdout: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Check(a) => cmd_check(a, stdout),
        Command::Train(a) => cmd_train(a, stdout),
        Command::Visitation(a) => cmd_visitation(a, stdout),
        Command::Rollout(a) => cmd_rollout(a, stdout),
        Command::Sample(a) => cmd_sample(a, stdout),
    }
}

fn emit(out: Option<&Path>, bytes: &[u8], stdout: &mut dyn Write) -> Result<(), CliError> {
    match out {
        Some(p) => write_atomic(p, bytes)?,
        None => stdout.write_all(bytes).map_err(|e| CliError::Usage(format!("stdout: {e}")))?,
    }
    Ok(())
}

fn say(stdout: &mut dyn Write, line: String) {
    // A closed pipe is not worth failing a finished computation over.
    let _ = writeln!(stdout, "{line}");
}

fn run_checks(only: Option<CheckName>, k: Option<f64>) -> Result<Vec<CheckResult>, CliError> {
    if k.is_some() && only != Some(CheckName::Example3) {
        return Err(CliError::Usage("--k applies to --only example3".into()));
    }
    let Some(only) = only else {
        return Ok(standard_suite()?);
    };
    let checks = match only {
        CheckName::Example1 => [2, 5, 10].into_iter().map(|n| example1_check(n, 2)).collect::<Result<Vec<_>, _>>()?,
        CheckName::Example2 => (0..3u64)
            .map(|seed| {
                let policy = random_policy(3, 2, seed)?;
                let mdp = TabularMdp::random(3, 2, 0.9, 1000 + seed)?;
                let mut c = example2_check(&policy, &mdp, VisitationMode::Discounted)?;
                c.name = format!("example2_seed{seed}");
                Ok(c)
            })
            .collect::<Result<Vec<_>, edmlab_core::Error>>()?,
        CheckName::Example2Sweep => vec![example2_sweep_check(100)?],
        CheckName::Example3 => {
            let ks = match k {
                Some(k) if !k.is_finite() => return Err(CliError::Usage("--k must be finite".into())),
                Some(k) => vec![k],
                None => vec![0.25, 0.5, 1.0, 2.0],
            };
            ks.into_iter()
                .map(|k| {
                    let mut c = example3_check(k)?;
                    c.name = format!("example3_k{k}");
                    Ok(c)
                })
                .collect::<Result<Vec<_>, edmlab_core::Error>>()?
        }
        CheckName::Identity => vec![pseudo_gradient_identity_check()?],
        CheckName::Theorem1 => vec![theorem1_check()?],
        CheckName::Consistency => vec![consistency_check()?],
    };
    Ok(checks)
}

fn cmd_check(a: CheckArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let checks = run_checks(a.only, a.k)?;
    emit(a.out.as_deref(), &to_json_bytes(&check_report(&checks)), stdout)?;
    let failed: Vec<String> = checks.iter().filter(|c| !c.passed).map(|c| c.name.clone()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::ChecksFailed(failed))
    }
}

pub fn parse_weights(s: &str) -> Result<[f64; 2], CliError> {
    let w = match s {
        "uniform" => [0.5, 0.5],
        "s1" => [1.0, 0.0],
        "s2" => [0.0, 1.0],
        ratio => {
            let bad = || CliError::Usage(format!("--weights: expected uniform, s1, s2 or w1:w2, got {ratio:?}"));
            let (a, b) = ratio.split_once(':').ok_or_else(bad)?;
            let a: f64 = a.trim().parse().map_err(|_| bad())?;
            let b: f64 = b.trim().parse().map_err(|_| bad())?;
            if !(a >= 0.0 && b >= 0.0 && a.is_finite() && b.is_finite() && a + b > 0.0) {
                return Err(CliError::Usage(format!("--weights: need nonnegative finite weights with a positive sum, got {ratio:?}")));
            }
            [a / (a + b), b / (a + b)]
        }
    };
    Ok(w)
}

fn cmd_train(a: TrainArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    if !(a.lr > 0.0) || !a.lr.is_finite() {
        return Err(CliError::Usage(format!("--lr must be positive, got {}", a.lr)));
    }
    for (name, v) in [("--k", a.k), ("--theta0", a.theta0), ("--theta-expert", a.theta_expert)] {
        if !v.is_finite() {
            return Err(CliError::Usage(format!("{name} must be finite")));
        }
    }
    let weights = parse_weights(&a.weights)?;
    let spec = PopulationSpec::coupled(a.theta_expert, a.k, weights)?;
    let objective = match a.objective {
        ObjectiveArg::Bc => Objective::Bc,
        ObjectiveArg::Edm => Objective::Edm,
    };
    let trace = gradient_descent(objective, CoupledPolicy::new(a.theta0, a.k)?, a.lr, a.steps, &spec)?;
    if let Some(out) = &a.out {
        write_atomic(out, &trace_csv(&trace))?;
    }
    let last = trace.final_row();
    say(stdout, format!("final_theta {}", last.theta));
    say(stdout, format!("final_gradient {:e}", last.grad_total));
    say(stdout, format!("gap {}", (last.theta - a.theta_expert).abs()));
    Ok(())
}

fn load_pair(mdp: &Path, policy: &Path) -> Result<(TabularMdp, edmlab_core::SoftmaxPolicy), CliError> {
    let m = read_mdp(mdp)?;
    let p = read_policy(policy)?.to_softmax();
    if p.n_states() != m.n_states || p.n_actions() != m.n_actions {
        return Err(CliError::Usage(format!(
            "policy is {}x{} but the MDP is {}x{}",
            p.n_states(),
            p.n_actions(),
            m.n_states,
            m.n_actions
        )));
    }
    Ok((m, p))
}

fn cmd_visitation(a: VisitationArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let (m, p) = load_pair(&a.mdp, &a.policy)?;
    let d = visitation(&m, &p, a.mode.into())?;
    emit(a.out.as_deref(), &state_dist_json(&d), stdout)
}

fn cmd_rollout(a: RolloutArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let (m, p) = load_pair(&a.mdp, &a.policy)?;
    let trajs = rollout(&m, &p, a.episodes, a.horizon, a.seed)?;
    emit(a.out.as_deref(), &trajectories_to_jsonl(&trajs), stdout)
}

fn resolve_energy(spec: &str) -> Result<SurrogateEnergy, CliError> {
    if let Some((_, e)) = fixture_energies().into_iter().find(|(name, _)| *name == spec) {
        return Ok(e);
    }
    Ok(read_energy(Path::new(spec))?)
}

fn cmd_sample(a: SampleArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    if let Some(policy) = &a.policy {
        let p = match read_policy(policy)? {
            LoadedPolicy::Tabular(p) => p,
            LoadedPolicy::Coupled(c) => c.to_softmax(),
        };
        let dist = pseudo_state_dist_gauged(&p);
        let batch = sample_categorical(&dist, a.n, a.seed)?;
        match &a.out {
            Some(out) => {
                write_atomic(out, &samples_jsonl(&batch))?;
                stdout.write_all(&pseudo_dist_json(&dist)).map_err(|e| CliError::Usage(format!("stdout: {e}")))?;
            }
            None => emit(None, &samples_jsonl(&batch), stdout)?,
        }
        return Ok(());
    }
    let spec = a.energy.as_deref().expect("clap requires --energy without --policy");
    let e = resolve_energy(spec)?;
    let batch = langevin_sample(&e, a.n, a.steps, a.step_size, a.seed)?;
    let tv = langevin_tv(&e, &batch, a.bins)?;
    match &a.out {
        Some(out) => {
            write_atomic(out, &samples_jsonl(&batch))?;
            say(stdout, format!("tv {tv}"));
        }
        None => {
            emit(None, &samples_jsonl(&batch), stdout)?;
            eprintln!("tv {tv}");
        }
    }
    Ok(())
}
