//! On-disk formats.
//!
//! | artifact            | format                                                        |
//! |---------------------|---------------------------------------------------------------|
//! | MDP                 | JSON `{"n_states", "n_actions", "transitions", "initial", "gamma"}` |
//! | tabular policy      | JSON `{"logits": [[..]], "gauge": [..]}`                      |
//! | coupled policy      | JSON `{"theta": r, "k": r}`                                   |
//! | trajectories        | JSON Lines, `{"steps": [[s, a], ..]}` per line                |
//! | state distribution  | JSON `{"kind": "..", "probs": [..]}`                          |
//! | pseudo-state dist.  | JSON array                                                    |
//! | samples             | JSON Lines, one number per line                               |
//! | surrogate energy    | JSON `{"centers", "weights", "bandwidth", "lo", "hi"}`        |
//! | descent trace       | CSV `step,theta,bc_loss,edm_loss,grad_total`                  |
//! | check report        | JSON `{"checks": [{"name", "passed", "observed", "expected", ..}]}` |
//!
//! All writers go through [`write_atomic`].

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use edmlab_core::counterexamples::CheckResult;
use edmlab_core::ebm::PseudoStateDist;
use edmlab_core::mdp::DEFAULT_GAMMA;
use edmlab_core::objectives::DescentTrace;
use edmlab_core::sampler::{SampleBatch, SurrogateEnergy};
use edmlab_core::{CoupledPolicy, DistKind, SoftmaxPolicy, StateDist, TabularMdp, Trajectory};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: line {line}, column {column}: {message}")]
    Parse { path: PathBuf, line: usize, column: usize, message: String },
    #[error("{path}: {source}")]
    Invalid {
        path: PathBuf,
        #[source]
        source: edmlab_core::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FormatError + '_ {
    move |source| FormatError::Io { path: path.to_path_buf(), source }
}

fn parse_err(path: &Path, line_offset: usize, e: serde_json::Error) -> FormatError {
    FormatError::Parse {
        path: path.to_path_buf(),
        line: e.line() + line_offset,
        column: e.column(),
        message: strip_position(&e.to_string()).to_string(),
    }
}

/// serde_json appends " at line L column C"; the position is reported
/// separately, with the JSON Lines offset applied.
fn strip_position(msg: &str) -> &str {
    match msg.rfind(" at line ") {
        Some(i) => &msg[..i],
        None => msg,
    }
}

fn invalid(path: &Path) -> impl FnOnce(edmlab_core::Error) -> FormatError + '_ {
    move |source| FormatError::Invalid { path: path.to_path_buf(), source }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, FormatError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| parse_err(path, 0, e))
}

/// Writes `bytes` to a temporary file next to `path`, then renames it over
/// `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), FormatError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(path))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| FormatError::Io { path: path.to_path_buf(), source: e.error })?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MdpFile {
    pub n_states: usize,
    pub n_actions: usize,
    pub transitions: Vec<Vec<Vec<f64>>>,
    pub initial: Vec<f64>,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
}

fn default_gamma() -> f64 {
    DEFAULT_GAMMA
}

impl From<&TabularMdp> for MdpFile {
    fn from(m: &TabularMdp) -> Self {
        MdpFile {
            n_states: m.n_states,
            n_actions: m.n_actions,
            transitions: m.transitions.clone(),
            initial: m.initial.clone(),
            gamma: m.gamma,
        }
    }
}

pub fn read_mdp(path: &Path) -> Result<TabularMdp, FormatError> {
    let f: MdpFile = read_json(path)?;
    TabularMdp::new(f.n_states, f.n_actions, f.transitions, f.initial, f.gamma).map_err(invalid(path))
}

pub fn write_mdp(path: &Path, m: &TabularMdp) -> Result<(), FormatError> {
    write_atomic(path, &to_json_bytes(&MdpFile::from(m)))
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum PolicyFile {
    Tabular {
        logits: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        gauge: Option<Vec<f64>>,
    },
    Coupled {
        theta: f64,
        k: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum LoadedPolicy {
    Tabular(SoftmaxPolicy),
    Coupled(CoupledPolicy),
}

impl LoadedPolicy {
    /// Tabular view; the coupled family maps to its 2x2 logit table.
    pub fn to_softmax(&self) -> SoftmaxPolicy {
        match self {
            LoadedPolicy::Tabular(p) => p.clone(),
            LoadedPolicy::Coupled(c) => c.to_softmax(),
        }
    }
}

pub fn read_policy(path: &Path) -> Result<LoadedPolicy, FormatError> {
    match read_json::<PolicyFile>(path)? {
        PolicyFile::Tabular { logits, gauge } => {
            let n = logits.len();
            SoftmaxPolicy::with_gauge(logits, gauge.unwrap_or_else(|| vec![0.0; n]))
                .map(LoadedPolicy::Tabular)
                .map_err(invalid(path))
        }
        PolicyFile::Coupled { theta, k } => {
            CoupledPolicy::new(theta, k).map(LoadedPolicy::Coupled).map_err(invalid(path))
        }
    }
}

pub fn write_policy(path: &Path, p: &SoftmaxPolicy) -> Result<(), FormatError> {
    let file = PolicyFile::Tabular { logits: p.logits.clone(), gauge: Some(p.gauge.clone()) };
    write_atomic(path, &to_json_bytes(&file))
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct TrajectoryLine {
    pub steps: Vec<[usize; 2]>,
}

pub fn trajectories_to_jsonl(trajs: &[Trajectory]) -> Vec<u8> {
    let mut out = Vec::new();
    for t in trajs {
        let line = TrajectoryLine { steps: t.steps.iter().map(|&(s, a)| [s, a]).collect() };
        serde_json::to_writer(&mut out, &line).expect("trajectory serializes");
        out.push(b'\n');
    }
    out
}

/// Reads trajectories, checking indices against `mdp` when given. Blank
/// lines are skipped.
pub fn read_trajectories(path: &Path, mdp: Option<&TabularMdp>) -> Result<Vec<Trajectory>, FormatError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: TrajectoryLine = serde_json::from_str(&line).map_err(|e| parse_err(path, i, e))?;
        if let Some(m) = mdp {
            if let Some(&[s, a]) = parsed.steps.iter().find(|&&[s, a]| s >= m.n_states || a >= m.n_actions) {
                return Err(FormatError::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    column: 1,
                    message: format!("step ({s}, {a}) out of range for a {}x{} MDP", m.n_states, m.n_actions),
                });
            }
        }
        let steps: Vec<(usize, usize)> = parsed.steps.into_iter().map(|[s, a]| (s, a)).collect();
        out.push(Trajectory { horizon: steps.len(), steps });
    }
    Ok(out)
}

pub fn dist_kind_name(kind: DistKind) -> &'static str {
    match kind {
        DistKind::Discounted => "discounted",
        DistKind::Stationary => "stationary",
        DistKind::FiniteHorizon => "finite_horizon",
        DistKind::Exact => "exact",
        DistKind::Empirical => "empirical",
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StateDistFile {
    pub kind: String,
    pub probs: Vec<f64>,
}

pub fn state_dist_json(d: &StateDist) -> Vec<u8> {
    to_json_bytes(&StateDistFile { kind: dist_kind_name(d.kind).to_string(), probs: d.probs.clone() })
}

pub fn pseudo_dist_json(d: &PseudoStateDist) -> Vec<u8> {
    to_json_bytes(&d.probs)
}

pub fn samples_jsonl<T: Serialize>(batch: &SampleBatch<T>) -> Vec<u8> {
    let mut out = Vec::new();
    for v in &batch.values {
        serde_json::to_writer(&mut out, v).expect("sample serializes");
        out.push(b'\n');
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct EnergyFile {
    pub centers: Vec<f64>,
    pub weights: Vec<f64>,
    pub bandwidth: f64,
    pub lo: f64,
    pub hi: f64,
}

impl From<&SurrogateEnergy> for EnergyFile {
    fn from(e: &SurrogateEnergy) -> Self {
        EnergyFile {
            centers: e.centers.clone(),
            weights: e.weights.clone(),
            bandwidth: e.bandwidth,
            lo: e.lo,
            hi: e.hi,
        }
    }
}

pub fn read_energy(path: &Path) -> Result<SurrogateEnergy, FormatError> {
    let f: EnergyFile = read_json(path)?;
    SurrogateEnergy::new(f.centers, f.weights, f.bandwidth, f.lo, f.hi).map_err(invalid(path))
}

pub fn write_energy(path: &Path, e: &SurrogateEnergy) -> Result<(), FormatError> {
    write_atomic(path, &to_json_bytes(&EnergyFile::from(e)))
}

#[derive(Debug, Serialize)]
struct TraceRecord {
    step: usize,
    theta: f64,
    bc_loss: f64,
    edm_loss: f64,
    grad_total: f64,
}

pub fn trace_csv(trace: &DescentTrace) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &trace.rows {
        w.serialize(TraceRecord {
            step: r.step,
            theta: r.theta,
            bc_loss: r.bc_loss,
            edm_loss: r.edm_loss,
            grad_total: r.grad_total,
        })
        .expect("in-memory CSV write");
    }
    w.into_inner().expect("in-memory CSV flush")
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CheckRecord {
    pub name: String,
    pub passed: bool,
    pub observed: BTreeMap<String, f64>,
    pub expected: BTreeMap<String, f64>,
    pub tolerance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl From<&CheckResult> for CheckRecord {
    fn from(c: &CheckResult) -> Self {
        CheckRecord {
            name: c.name.clone(),
            passed: c.passed,
            observed: c.observed.clone(),
            expected: c.expected.clone(),
            tolerance: c.tolerance,
            note: c.note.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CheckReport {
    pub checks: Vec<CheckRecord>,
}

pub fn check_report(results: &[CheckResult]) -> CheckReport {
    CheckReport { checks: results.iter().map(CheckRecord::from).collect() }
}

pub fn to_json_bytes<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("value serializes");
    out.push(b'\n');
    out
}
