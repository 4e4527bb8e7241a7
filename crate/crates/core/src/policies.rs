//! Softmax policy families.
//!
//! [`SoftmaxPolicy`] is the tabular exponential family
//! `π(a|s) ∝ exp(f[s][a] + g[s])`. The per-state gauge `g` never changes the
//! policy but is kept as data so that constructions which depend on it (the
//! gauged pseudo-state distribution in [`crate::ebm`]) can be expressed.
//!
//! [`CoupledPolicy`] is the two-state, two-action family in which one scalar
//! `θ` sets `π(a2|s1) = σ(θ)` and `π(a2|s2) = σ(kθ)`.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::{exp, ln, logsumexp, sigmoid, softmax};
use crate::mdp::{DistKind, JointDist, Policy, Trajectory, ROW_TOL};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxPolicy {
    pub logits: Vec<Vec<f64>>,
    pub gauge: Vec<f64>,
}

/// Gradient of a scalar with respect to a [`SoftmaxPolicy`]'s parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxGrad {
    pub logits: Vec<Vec<f64>>,
    pub gauge: Vec<f64>,
}

impl SoftmaxGrad {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        SoftmaxGrad { logits: vec![vec![0.0; n_actions]; n_states], gauge: vec![0.0; n_states] }
    }

    pub fn flat_logits(&self) -> Vec<f64> {
        self.logits.iter().flatten().copied().collect()
    }
}

impl SoftmaxPolicy {
    /// Policy with the given logits and a zero gauge.
    pub fn new(logits: Vec<Vec<f64>>) -> Result<Self> {
        let n = logits.len();
        Self::with_gauge(logits, vec![0.0; n])
    }

    pub fn with_gauge(logits: Vec<Vec<f64>>, gauge: Vec<f64>) -> Result<Self> {
        let n_actions = logits.first().map_or(0, Vec::len);
        if logits.is_empty() || n_actions == 0 || logits.iter().any(|r| r.len() != n_actions) {
            return Err(Error::BadShape("logits must be a nonempty rectangular table"));
        }
        if gauge.len() != logits.len() {
            return Err(Error::DimensionMismatch {
                what: "gauge",
                expected: logits.len(),
                found: gauge.len(),
            });
        }
        if logits.iter().flatten().chain(&gauge).any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("logits and gauge must be finite"));
        }
        Ok(SoftmaxPolicy { logits, gauge })
    }

    /// Same logits, different gauge.
    pub fn regauged(&self, gauge: Vec<f64>) -> Result<Self> {
        Self::with_gauge(self.logits.clone(), gauge)
    }

    pub fn n_states(&self) -> usize {
        self.logits.len()
    }

    pub fn n_actions(&self) -> usize {
        self.logits[0].len()
    }

    pub fn gauge_is_zero(&self) -> bool {
        self.gauge.iter().all(|&g| g == 0.0)
    }

    fn shifted_row(&self, s: usize) -> Vec<f64> {
        let g = self.gauge[s];
        self.logits[s].iter().map(|&f| f + g).collect()
    }

    /// `softmax(f[s] + g[s])`.
    pub fn action_probs(&self, s: usize) -> Vec<f64> {
        softmax(&self.shifted_row(s))
    }

    /// `f[s][a] + g[s] - logsumexp_b(f[s][b] + g[s])`.
    pub fn log_prob(&self, s: usize, a: usize) -> f64 {
        let row = self.shifted_row(s);
        row[a] - logsumexp(&row)
    }

    /// `∂ log π(a|s) / ∂f[s'][a'] = [s'=s]([a'=a] - π(a'|s))`; the gauge
    /// gradient is identically zero.
    pub fn grad_log_prob(&self, s: usize, a: usize) -> SoftmaxGrad {
        let mut grad = SoftmaxGrad::zeros(self.n_states(), self.n_actions());
        let probs = self.action_probs(s);
        for (b, (g, p)) in grad.logits[s].iter_mut().zip(probs).enumerate() {
            *g = f64::from(u8::from(a == b)) - p;
        }
        grad
    }

    /// Uniform action distribution in every state.
    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        SoftmaxPolicy { logits: vec![vec![0.0; n_actions]; n_states], gauge: vec![0.0; n_states] }
    }
}

impl Policy for SoftmaxPolicy {
    fn n_states(&self) -> usize {
        SoftmaxPolicy::n_states(self)
    }
    fn n_actions(&self) -> usize {
        SoftmaxPolicy::n_actions(self)
    }
    fn action_probs(&self, s: usize) -> Vec<f64> {
        SoftmaxPolicy::action_probs(self, s)
    }
    fn log_prob(&self, s: usize, a: usize) -> f64 {
        SoftmaxPolicy::log_prob(self, s, a)
    }
}

/// A policy given directly by its probability table. Allows exact zeros,
/// which no finite-logit softmax can represent.
#[derive(Debug, Clone, PartialEq)]
pub struct TablePolicy {
    probs: Vec<Vec<f64>>,
}

impl TablePolicy {
    pub fn new(probs: Vec<Vec<f64>>) -> Result<Self> {
        let n_actions = probs.first().map_or(0, Vec::len);
        if probs.is_empty() || n_actions == 0 || probs.iter().any(|r| r.len() != n_actions) {
            return Err(Error::BadShape("policy table must be a nonempty rectangular matrix"));
        }
        for row in &probs {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > ROW_TOL {
                return Err(Error::InvalidDistribution("policy rows must be probability vectors"));
            }
        }
        Ok(TablePolicy { probs })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        TablePolicy { probs: vec![vec![1.0 / n_actions as f64; n_actions]; n_states] }
    }

    pub fn deterministic(n_actions: usize, actions: &[usize]) -> Result<Self> {
        let probs = actions
            .iter()
            .map(|&a| {
                if a >= n_actions {
                    return Err(Error::IndexOutOfRange { what: "action", index: a, bound: n_actions });
                }
                let mut row = vec![0.0; n_actions];
                row[a] = 1.0;
                Ok(row)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(probs)
    }

    pub fn from_policy<P: Policy + ?Sized>(pi: &P) -> Self {
        TablePolicy { probs: (0..pi.n_states()).map(|s| pi.action_probs(s)).collect() }
    }
}

impl Policy for TablePolicy {
    fn n_states(&self) -> usize {
        self.probs.len()
    }
    fn n_actions(&self) -> usize {
        self.probs[0].len()
    }
    fn action_probs(&self, s: usize) -> Vec<f64> {
        self.probs[s].clone()
    }
}

/// Two states, two actions, one parameter:
/// `π(a2|s1) = σ(θ)`, `π(a2|s2) = σ(kθ)`.
///
/// States and actions are 0-indexed, so `s1 = 0`, `a2 = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoupledPolicy {
    pub theta: f64,
    pub k: f64,
}

impl CoupledPolicy {
    pub fn new(theta: f64, k: f64) -> Result<Self> {
        if !theta.is_finite() || !k.is_finite() {
            return Err(Error::InvalidParameter("theta and k must be finite"));
        }
        Ok(CoupledPolicy { theta, k })
    }

    pub fn with_theta(self, theta: f64) -> Self {
        CoupledPolicy { theta, ..self }
    }

    /// Scale applied to `θ` in state `s`: 1 in s1, `k` in s2.
    pub fn scale(&self, s: usize) -> f64 {
        match s {
            0 => 1.0,
            1 => self.k,
            _ => panic!("coupled policy has two states, got state {s}"),
        }
    }

    /// The logit of `a2` in state `s`.
    pub fn logit(&self, s: usize) -> f64 {
        self.scale(s) * self.theta
    }

    pub fn prob_a2(&self, s: usize) -> f64 {
        sigmoid(self.logit(s))
    }

    pub fn log_prob(&self, s: usize, a: usize) -> f64 {
        let z = self.logit(s);
        match a {
            0 => log_sigmoid(-z),
            1 => log_sigmoid(z),
            _ => panic!("coupled policy has two actions, got action {a}"),
        }
    }

    pub fn to_softmax(&self) -> SoftmaxPolicy {
        coupled_to_softmax(self)
    }
}

impl Policy for CoupledPolicy {
    fn n_states(&self) -> usize {
        2
    }
    fn n_actions(&self) -> usize {
        2
    }
    fn action_probs(&self, s: usize) -> Vec<f64> {
        let p = self.prob_a2(s);
        vec![1.0 - p, p]
    }
    fn log_prob(&self, s: usize, a: usize) -> f64 {
        CoupledPolicy::log_prob(self, s, a)
    }
}

/// `log σ(x)` without cancellation in either tail.
pub(crate) fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -libm::log1p(exp(-x))
    } else {
        x - libm::log1p(exp(x))
    }
}

/// Tabular form of the coupled family: `f[s1] = (0, θ)`, `f[s2] = (0, kθ)`,
/// zero gauge.
pub fn coupled_to_softmax(c: &CoupledPolicy) -> SoftmaxPolicy {
    SoftmaxPolicy {
        logits: vec![vec![0.0, c.theta], vec![0.0, c.k * c.theta]],
        gauge: vec![0.0, 0.0],
    }
}

/// `d/dθ log π(a|s)` for the coupled family: `scale(s) ([a=a2] - σ(scale(s) θ))`.
pub fn coupled_grad_log_prob(c: &CoupledPolicy, s: usize, a: usize) -> f64 {
    assert!(a < 2, "coupled policy has two actions, got action {a}");
    let indicator = f64::from(u8::from(a == 1));
    c.scale(s) * (indicator - c.prob_a2(s))
}

/// Expert demonstrations: a list of `(state, action)` pairs or an empirical
/// probability matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum DemoDataset {
    Pairs(Vec<(usize, usize)>),
    Weights(Vec<Vec<f64>>),
}

impl DemoDataset {
    pub fn from_trajectories(trajectories: &[Trajectory]) -> Self {
        DemoDataset::Pairs(trajectories.iter().flat_map(|t| t.steps.iter().copied()).collect())
    }
}

/// Normalized `(state, action)` count matrix.
pub fn empirical_joint(d: &DemoDataset, n_states: usize, n_actions: usize) -> Result<JointDist> {
    match d {
        DemoDataset::Pairs(pairs) => {
            if pairs.is_empty() {
                return Err(Error::EmptyDataset);
            }
            let mut counts = vec![vec![0u64; n_actions]; n_states];
            for &(s, a) in pairs {
                if s >= n_states {
                    return Err(Error::IndexOutOfRange { what: "state", index: s, bound: n_states });
                }
                if a >= n_actions {
                    return Err(Error::IndexOutOfRange { what: "action", index: a, bound: n_actions });
                }
                counts[s][a] += 1;
            }
            let n = pairs.len() as f64;
            let probs = counts
                .into_iter()
                .map(|row| row.into_iter().map(|c| c as f64 / n).collect())
                .collect();
            JointDist::new(probs, DistKind::Empirical)
        }
        DemoDataset::Weights(w) => {
            if w.is_empty() {
                return Err(Error::EmptyDataset);
            }
            if w.len() != n_states || w.iter().any(|r| r.len() != n_actions) {
                return Err(Error::BadShape("dataset weights must be n_states x n_actions"));
            }
            let total: f64 = w.iter().flatten().sum();
            if (total - 1.0).abs() > ROW_TOL {
                return Err(Error::InvalidDistribution("dataset weights must sum to 1"));
            }
            JointDist::new(w.clone(), DistKind::Empirical)
        }
    }
}

/// Entropy-style helper: `-Σ_a π(a|s) log π(a|s)`.
pub fn conditional_entropy(probs: &[f64]) -> f64 {
    probs.iter().filter(|&&p| p > 0.0).map(|&p| -p * ln(p)).sum()
}
