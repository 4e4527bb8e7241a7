//! Finite MDPs, exact state and state-action visitation, and seeded rollouts.
//!
//! Two notions of the state visitation distribution `d_π` are provided, since
//! an undiscounted visitation is ambiguous:
//!
//! * the normalized discounted occupancy `(1-γ) Σ_t γ^t Pr(s_t = s)`, solved
//!   directly from `(I - γ P_πᵀ) x = (1-γ) μ`;
//! * the stationary distribution of `P_π`, found by power iteration on the
//!   lazy chain `½(I + P_πᵀ)` seeded at `μ`.
//!
//! A finite-horizon average is also available for completeness.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::math::{inverse_cdf, kahan_sum};
use crate::{Error, Result};

/// Tolerance on transition rows and the initial distribution.
pub const ROW_TOL: f64 = 1e-12;
/// Tolerance on the total mass of computed distributions.
pub const DIST_TOL: f64 = 1e-10;
/// Negative entries above this are floating-point dust and are clamped to 0.
pub const NEG_DUST: f64 = -1e-14;

pub const DEFAULT_GAMMA: f64 = 0.99;
pub const DENSE_SOLVE_MAX_STATES: usize = 200;
pub const STATIONARY_MAX_ITERS: usize = 100_000;
pub const STATIONARY_TOL: f64 = 1e-12;
const SOLVER_RESIDUAL_TOL: f64 = 1e-8;

/// Anything that assigns an action distribution to each state.
pub trait Policy {
    fn n_states(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn action_probs(&self, s: usize) -> Vec<f64>;

    fn log_prob(&self, s: usize, a: usize) -> f64 {
        crate::math::ln(self.action_probs(s)[a])
    }
}

impl<P: Policy + ?Sized> Policy for &P {
    fn n_states(&self) -> usize {
        (**self).n_states()
    }
    fn n_actions(&self) -> usize {
        (**self).n_actions()
    }
    fn action_probs(&self, s: usize) -> Vec<f64> {
        (**self).action_probs(s)
    }
    fn log_prob(&self, s: usize, a: usize) -> f64 {
        (**self).log_prob(s, a)
    }
}

/// A finite MDP without rewards. `transitions[s][a][s']` is `P(s' | s, a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub transitions: Vec<Vec<Vec<f64>>>,
    pub initial: Vec<f64>,
    pub gamma: f64,
}

impl TabularMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transitions: Vec<Vec<Vec<f64>>>,
        initial: Vec<f64>,
        gamma: f64,
    ) -> Result<Self> {
        let m = TabularMdp { n_states, n_actions, transitions, initial, gamma };
        validate_mdp(&m)?;
        Ok(m)
    }

    /// Every action keeps the agent where it is; the episode starts in `start`.
    pub fn self_loops(n_states: usize, n_actions: usize, start: usize) -> Result<Self> {
        if start >= n_states {
            return Err(Error::IndexOutOfRange { what: "start state", index: start, bound: n_states });
        }
        let transitions = (0..n_states)
            .map(|s| {
                let mut row = vec![0.0; n_states];
                row[s] = 1.0;
                vec![row; n_actions]
            })
            .collect();
        let mut initial = vec![0.0; n_states];
        initial[start] = 1.0;
        Self::new(n_states, n_actions, transitions, initial, DEFAULT_GAMMA)
    }

    /// Dense random MDP: each row and the initial distribution are
    /// normalized vectors of `U(0.05, 1)` draws, so every entry is positive.
    pub fn random(n_states: usize, n_actions: usize, gamma: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| -> Vec<f64> {
            let v: Vec<f64> = (0..n).map(|_| 0.05 + 0.95 * rng.random::<f64>()).collect();
            let z: f64 = v.iter().sum();
            v.into_iter().map(|x| x / z).collect()
        };
        let transitions = (0..n_states)
            .map(|_| (0..n_actions).map(|_| draw(n_states)).collect())
            .collect();
        let initial = draw(n_states);
        Self::new(n_states, n_actions, transitions, initial, gamma)
    }

    pub fn with_gamma(mut self, gamma: f64) -> Result<Self> {
        self.gamma = gamma;
        validate_mdp(&self)?;
        Ok(self)
    }

    fn check_policy<P: Policy + ?Sized>(&self, pi: &P) -> Result<()> {
        if pi.n_states() != self.n_states {
            return Err(Error::DimensionMismatch {
                what: "policy states",
                expected: self.n_states,
                found: pi.n_states(),
            });
        }
        if pi.n_actions() != self.n_actions {
            return Err(Error::DimensionMismatch {
                what: "policy actions",
                expected: self.n_actions,
                found: pi.n_actions(),
            });
        }
        Ok(())
    }
}

/// Checks shape, stochasticity of every `P[s][a][·]`, the initial
/// distribution and the discount range.
pub fn validate_mdp(m: &TabularMdp) -> Result<()> {
    if m.n_states == 0 {
        return Err(Error::BadShape("n_states must be positive"));
    }
    if m.n_actions == 0 {
        return Err(Error::BadShape("n_actions must be positive"));
    }
    if m.transitions.len() != m.n_states {
        return Err(Error::BadShape("transitions must have n_states entries"));
    }
    for (s, per_action) in m.transitions.iter().enumerate() {
        if per_action.len() != m.n_actions {
            return Err(Error::BadShape("transitions[s] must have n_actions rows"));
        }
        for (a, row) in per_action.iter().enumerate() {
            if row.len() != m.n_states {
                return Err(Error::BadShape("transition rows must have n_states entries"));
            }
            let sum = kahan_sum(row.iter().copied());
            let bad_entry = row.iter().any(|&p| !p.is_finite() || p < NEG_DUST);
            if bad_entry || (sum - 1.0).abs() > ROW_TOL {
                return Err(Error::RowNotStochastic { state: s, action: a, sum });
            }
        }
    }
    if m.initial.len() != m.n_states {
        return Err(Error::BadShape("initial must have n_states entries"));
    }
    if let Some(i) = m.initial.iter().position(|&p| !p.is_finite() || p < NEG_DUST) {
        return Err(Error::BadInitial { index: Some(i), sum: m.initial.iter().sum() });
    }
    let sum = kahan_sum(m.initial.iter().copied());
    if (sum - 1.0).abs() > ROW_TOL {
        return Err(Error::BadInitial { index: None, sum });
    }
    if !(0.0..1.0).contains(&m.gamma) {
        return Err(Error::InvalidParameter("gamma must lie in [0, 1)"));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DistKind {
    Discounted,
    Stationary,
    FiniteHorizon,
    Exact,
    Empirical,
}

/// Which reading of "the policy's state visitation" to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum VisitationMode {
    #[default]
    Discounted,
    Stationary,
}

fn clean_distribution(mut probs: Vec<f64>, what: &'static str) -> Result<Vec<f64>> {
    for p in probs.iter_mut() {
        if !p.is_finite() || *p < NEG_DUST {
            return Err(Error::InvalidDistribution(what));
        }
        if *p < 0.0 {
            *p = 0.0;
        }
    }
    let sum = kahan_sum(probs.iter().copied());
    if (sum - 1.0).abs() > DIST_TOL {
        return Err(Error::InvalidDistribution(what));
    }
    Ok(probs)
}

/// A probability vector over states.
#[derive(Debug, Clone, PartialEq)]
pub struct StateDist {
    pub probs: Vec<f64>,
    pub kind: DistKind,
}

impl StateDist {
    pub fn new(probs: Vec<f64>, kind: DistKind) -> Result<Self> {
        let probs = clean_distribution(probs, "state distribution must be nonnegative and sum to 1")?;
        Ok(StateDist { probs, kind })
    }

    pub fn uniform(n: usize) -> Self {
        StateDist { probs: vec![1.0 / n as f64; n], kind: DistKind::Exact }
    }

    pub fn singleton(n: usize, s: usize) -> Self {
        let mut probs = vec![0.0; n];
        probs[s] = 1.0;
        StateDist { probs, kind: DistKind::Exact }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// A probability matrix over `(state, action)`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointDist {
    pub probs: Vec<Vec<f64>>,
    pub kind: DistKind,
}

impl JointDist {
    pub fn new(probs: Vec<Vec<f64>>, kind: DistKind) -> Result<Self> {
        let n_actions = probs.first().map_or(0, Vec::len);
        if probs.is_empty() || n_actions == 0 || probs.iter().any(|r| r.len() != n_actions) {
            return Err(Error::BadShape("joint distribution must be a nonempty rectangular matrix"));
        }
        let flat = clean_distribution(
            probs.into_iter().flatten().collect(),
            "joint distribution must be nonnegative and sum to 1",
        )?;
        let probs = flat.chunks(n_actions).map(<[f64]>::to_vec).collect();
        Ok(JointDist { probs, kind })
    }

    pub fn n_states(&self) -> usize {
        self.probs.len()
    }

    pub fn n_actions(&self) -> usize {
        self.probs.first().map_or(0, Vec::len)
    }

    /// Marginal over states, `Σ_a probs[s][a]`.
    pub fn marginal(&self) -> StateDist {
        StateDist {
            probs: self.probs.iter().map(|row| row.iter().sum()).collect(),
            kind: self.kind,
        }
    }
}

/// An ordered list of `(state, action)` pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trajectory {
    pub steps: Vec<(usize, usize)>,
    pub horizon: usize,
}

/// `P_π[s][s'] = Σ_a π(a|s) P[s][a][s']`.
pub fn policy_transition_matrix<P: Policy + ?Sized>(m: &TabularMdp, pi: &P) -> Result<Vec<Vec<f64>>> {
    m.check_policy(pi)?;
    let mut out = vec![vec![0.0; m.n_states]; m.n_states];
    for (s, row) in out.iter_mut().enumerate() {
        let probs = pi.action_probs(s);
        for (a, &pa) in probs.iter().enumerate() {
            if pa == 0.0 {
                continue;
            }
            for (dst, &p) in row.iter_mut().zip(&m.transitions[s][a]) {
                *dst += pa * p;
            }
        }
    }
    Ok(out)
}

/// `y = Aᵀ x` for a square matrix stored by rows.
fn transpose_apply(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for (row, &xs) in a.iter().zip(x) {
        if xs == 0.0 {
            continue;
        }
        for (yj, &aij) in y.iter_mut().zip(row) {
            *yj += xs * aij;
        }
    }
    y
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        let (upper, lower) = a.split_at_mut(col + 1);
        let prow = &upper[col];
        for (offset, row) in lower.iter_mut().enumerate() {
            let factor = row[col] / prow[col];
            if factor == 0.0 {
                continue;
            }
            for (x, &p) in row[col..].iter_mut().zip(&prow[col..]) {
                *x -= factor * p;
            }
            b[col + 1 + offset] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let tail: f64 = a[i][i + 1..].iter().zip(&x[i + 1..]).map(|(p, q)| p * q).sum();
        x[i] = (b[i] - tail) / a[i][i];
    }
    Some(x)
}

fn finish(probs: Vec<f64>, kind: DistKind) -> Result<StateDist> {
    let z = kahan_sum(probs.iter().copied());
    StateDist::new(probs.into_iter().map(|p| p / z).collect(), kind)
}

/// Normalized discounted occupancy of `π` in `m`, using `m.gamma`.
pub fn visitation_discounted<P: Policy + ?Sized>(m: &TabularMdp, pi: &P) -> Result<StateDist> {
    if !(0.0..1.0).contains(&m.gamma) {
        return Err(Error::InvalidParameter("gamma must lie in [0, 1)"));
    }
    let p_pi = policy_transition_matrix(m, pi)?;
    let n = m.n_states;
    let gamma = m.gamma;
    let rhs: Vec<f64> = m.initial.iter().map(|&mu| (1.0 - gamma) * mu).collect();

    let x = if n <= DENSE_SOLVE_MAX_STATES {
        // A = I - γ P_πᵀ
        let a: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| f64::from(u8::from(i == j)) - gamma * p_pi[j][i]).collect())
            .collect();
        dense_solve(a, rhs.clone()).ok_or(Error::SolverFailure { residual: f64::INFINITY })?
    } else {
        // x = (1-γ)μ + γ P_πᵀ x is a γ-contraction in L1.
        let mut x = rhs.clone();
        for _ in 0..STATIONARY_MAX_ITERS {
            let next: Vec<f64> = transpose_apply(&p_pi, &x)
                .into_iter()
                .zip(&rhs)
                .map(|(y, r)| r + gamma * y)
                .collect();
            let delta: f64 = next.iter().zip(&x).map(|(a, b)| (a - b).abs()).sum();
            x = next;
            if delta < 1e-15 {
                break;
            }
        }
        x
    };

    let px = transpose_apply(&p_pi, &x);
    let residual = x
        .iter()
        .zip(&px)
        .zip(&rhs)
        .map(|((xi, pxi), ri)| (xi - gamma * pxi - ri).abs())
        .fold(0.0, f64::max);
    if !(residual <= SOLVER_RESIDUAL_TOL) {
        return Err(Error::SolverFailure { residual });
    }
    finish(x, DistKind::Discounted)
}

/// Stationary distribution of `P_π`, by power iteration on `½(I + P_πᵀ)`
/// seeded at the MDP's initial distribution.
///
/// For reducible chains the returned fixed point is the one reached from `μ`.
pub fn visitation_stationary<P: Policy + ?Sized>(m: &TabularMdp, pi: &P) -> Result<StateDist> {
    let p_pi = policy_transition_matrix(m, pi)?;
    let mut x = m.initial.clone();
    let mut residual = f64::INFINITY;
    for _ in 0..STATIONARY_MAX_ITERS {
        let px = transpose_apply(&p_pi, &x);
        let next: Vec<f64> = x.iter().zip(&px).map(|(a, b)| 0.5 * (a + b)).collect();
        residual = next.iter().zip(&x).map(|(a, b)| (a - b).abs()).sum();
        x = next;
        if residual < STATIONARY_TOL {
            return finish(x, DistKind::Stationary);
        }
    }
    Err(Error::NoConvergence { iterations: STATIONARY_MAX_ITERS, residual })
}

/// Average of `Pr(s_t = s)` over `t < horizon`.
pub fn visitation_finite_horizon<P: Policy + ?Sized>(
    m: &TabularMdp,
    pi: &P,
    horizon: usize,
) -> Result<StateDist> {
    if horizon == 0 {
        return Err(Error::InvalidParameter("horizon must be at least 1"));
    }
    let p_pi = policy_transition_matrix(m, pi)?;
    let mut x = m.initial.clone();
    let mut acc = vec![0.0; m.n_states];
    for t in 0..horizon {
        if t > 0 {
            x = transpose_apply(&p_pi, &x);
        }
        for (a, xi) in acc.iter_mut().zip(&x) {
            *a += xi;
        }
    }
    finish(acc, DistKind::FiniteHorizon)
}

pub fn visitation<P: Policy + ?Sized>(m: &TabularMdp, pi: &P, mode: VisitationMode) -> Result<StateDist> {
    match mode {
        VisitationMode::Discounted => visitation_discounted(m, pi),
        VisitationMode::Stationary => visitation_stationary(m, pi),
    }
}

/// `d(s, a) = d(s) π(a|s)`.
pub fn joint_visitation<P: Policy + ?Sized>(d: &StateDist, pi: &P) -> Result<JointDist> {
    if d.len() != pi.n_states() {
        return Err(Error::DimensionMismatch {
            what: "state distribution vs policy",
            expected: pi.n_states(),
            found: d.len(),
        });
    }
    let probs = d
        .probs
        .iter()
        .enumerate()
        .map(|(s, &ds)| pi.action_probs(s).into_iter().map(|pa| ds * pa).collect())
        .collect();
    JointDist::new(probs, d.kind)
}

/// `episodes` trajectories of length `horizon`: `s_0 ~ μ`, `a_t ~ π(·|s_t)`,
/// `s_{t+1} ~ P(·|s_t, a_t)`. Deterministic in `seed`.
pub fn rollout<P: Policy + ?Sized>(
    m: &TabularMdp,
    pi: &P,
    episodes: usize,
    horizon: usize,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    validate_mdp(m)?;
    m.check_policy(pi)?;
    if episodes == 0 || horizon == 0 {
        return Err(Error::InvalidParameter("episodes and horizon must be at least 1"));
    }
    let action_table: Vec<Vec<f64>> = (0..m.n_states).map(|s| pi.action_probs(s)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut steps = Vec::with_capacity(horizon);
        let mut s = inverse_cdf(&m.initial, rng.random());
        for t in 0..horizon {
            let a = inverse_cdf(&action_table[s], rng.random());
            steps.push((s, a));
            if t + 1 < horizon {
                s = inverse_cdf(&m.transitions[s][a], rng.random());
            }
        }
        out.push(Trajectory { steps, horizon });
    }
    Ok(out)
}

/// Total variation distance `½ Σ |p - q|`.
pub fn tv_distance(p: &StateDist, q: &StateDist) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch { what: "tv_distance", expected: p.len(), found: q.len() });
    }
    Ok(tv(&p.probs, &q.probs))
}

pub(crate) fn tv(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}
