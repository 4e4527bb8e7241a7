//! Behavioral cloning and energy-based distribution matching objectives.
//!
//! Both losses are expectations under an expert state-action distribution,
//! given either as demonstrations ([`DemoDataset`]) or exactly
//! ([`PopulationSpec`], the infinite-data limit):
//!
//! ```text
//! bc(θ)  = E[-log π_θ(a|s)]
//! edm(θ) = E[-log π_θ(a|s) - log p_θ(s)]
//! ```
//!
//! where `p_θ` is the pseudo-state distribution from [`crate::ebm`]. Every
//! gradient reported here is the gradient of the loss, so a negative value
//! means gradient descent increases the parameter.

use alloc::vec;
use alloc::vec::Vec;

use crate::ebm::{coupled_log_pseudo_grads, grad_log_pseudo, log_pseudo_state};
use crate::mdp::{JointDist, Policy, StateDist, ROW_TOL};
use crate::policies::{
    coupled_grad_log_prob, coupled_to_softmax, empirical_joint, CoupledPolicy, DemoDataset,
    SoftmaxPolicy, TablePolicy,
};
use crate::{Error, Result};

pub const FD_STEP: f64 = 1e-5;
/// Analytic and finite-difference gradients agree when
/// `|analytic - fd| <= max(GRAD_REL_TOL * |analytic|, GRAD_ABS_TOL)`.
pub const GRAD_REL_TOL: f64 = 1e-6;
pub const GRAD_ABS_TOL: f64 = 1e-8;
pub const DIVERGENCE_BOUND: f64 = 1e6;

/// The expert policy of a population objective.
#[derive(Debug, Clone, PartialEq)]
pub enum Expert {
    Tabular(TablePolicy),
    Coupled(CoupledPolicy),
}

impl Expert {
    fn as_policy(&self) -> &dyn Policy {
        match self {
            Expert::Tabular(p) => p,
            Expert::Coupled(c) => c,
        }
    }
}

/// Exact expert state-action distribution `w(s) π_E(a|s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationSpec {
    pub state_weights: Vec<f64>,
    pub expert: Expert,
}

impl PopulationSpec {
    pub fn new(state_weights: Vec<f64>, expert: Expert) -> Result<Self> {
        let n = expert.as_policy().n_states();
        if state_weights.len() != n {
            return Err(Error::DimensionMismatch {
                what: "state weights vs expert",
                expected: n,
                found: state_weights.len(),
            });
        }
        let sum: f64 = state_weights.iter().sum();
        if state_weights.iter().any(|&w| !(w >= 0.0)) || (sum - 1.0).abs() > ROW_TOL {
            return Err(Error::InvalidDistribution("state weights must be a probability vector"));
        }
        Ok(PopulationSpec { state_weights, expert })
    }

    /// Coupled expert `(θ_E, k)` with state weights `(w1, w2)`.
    pub fn coupled(theta_expert: f64, k: f64, weights: [f64; 2]) -> Result<Self> {
        Self::new(weights.to_vec(), Expert::Coupled(CoupledPolicy::new(theta_expert, k)?))
    }

    pub fn n_states(&self) -> usize {
        self.expert.as_policy().n_states()
    }

    pub fn n_actions(&self) -> usize {
        self.expert.as_policy().n_actions()
    }

    pub fn joint(&self) -> JointDist {
        let pi = self.expert.as_policy();
        JointDist {
            probs: self
                .state_weights
                .iter()
                .enumerate()
                .map(|(s, &w)| pi.action_probs(s).into_iter().map(|p| w * p).collect())
                .collect(),
            kind: crate::mdp::DistKind::Exact,
        }
    }
}

/// Source of the expectation in both losses.
pub trait ExpertData {
    fn expert_joint(&self, n_states: usize, n_actions: usize) -> Result<JointDist>;
}

impl ExpertData for DemoDataset {
    fn expert_joint(&self, n_states: usize, n_actions: usize) -> Result<JointDist> {
        empirical_joint(self, n_states, n_actions)
    }
}

impl ExpertData for PopulationSpec {
    fn expert_joint(&self, n_states: usize, n_actions: usize) -> Result<JointDist> {
        if self.n_states() != n_states || self.n_actions() != n_actions {
            return Err(Error::DimensionMismatch {
                what: "population spec vs policy",
                expected: n_states * n_actions,
                found: self.n_states() * self.n_actions(),
            });
        }
        Ok(self.joint())
    }
}

impl ExpertData for JointDist {
    fn expert_joint(&self, n_states: usize, n_actions: usize) -> Result<JointDist> {
        if self.n_states() != n_states || self.n_actions() != n_actions {
            return Err(Error::DimensionMismatch {
                what: "joint distribution vs policy",
                expected: n_states * n_actions,
                found: self.n_states() * self.n_actions(),
            });
        }
        Ok(self.clone())
    }
}

/// `Σ_{s,a} w(s,a) (-log π(a|s))`, skipping cells with zero weight.
fn bc_from_joint<P: Policy + ?Sized>(pi: &P, joint: &JointDist) -> f64 {
    let mut total = 0.0;
    for (s, row) in joint.probs.iter().enumerate() {
        for (a, &w) in row.iter().enumerate() {
            if w > 0.0 {
                total -= w * pi.log_prob(s, a);
            }
        }
    }
    total
}

/// `Σ_s w(s) (-log p(s))`.
fn state_term_from_joint(log_p: &[f64], marginal: &StateDist) -> f64 {
    let mut total = 0.0;
    for (&w, &lp) in marginal.probs.iter().zip(log_p) {
        if w > 0.0 {
            total -= w * lp;
        }
    }
    total
}

/// Behavioral cloning loss `E[-log π(a|s)]`.
pub fn bc_loss<P: Policy + ?Sized, D: ExpertData + ?Sized>(pi: &P, data: &D) -> Result<f64> {
    let joint = data.expert_joint(pi.n_states(), pi.n_actions())?;
    Ok(bc_from_joint(pi, &joint))
}

/// The two terms of the EDM loss and their sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdmLoss {
    pub bc: f64,
    pub state: f64,
    pub total: f64,
}

pub fn edm_loss_terms<D: ExpertData + ?Sized>(p: &SoftmaxPolicy, data: &D) -> Result<EdmLoss> {
    let joint = data.expert_joint(p.n_states(), p.n_actions())?;
    let log_p = log_pseudo_state(p)?;
    let bc = bc_from_joint(p, &joint);
    let state = state_term_from_joint(&log_p, &joint.marginal());
    Ok(EdmLoss { bc, state, total: bc + state })
}

/// EDM loss `E[-log π(a|s) - log p(s)]` with the ungauged pseudo-state model.
pub fn edm_loss<D: ExpertData + ?Sized>(p: &SoftmaxPolicy, data: &D) -> Result<f64> {
    edm_loss_terms(p, data).map(|l| l.total)
}

/// Per-term analytic gradients alongside a finite-difference check of the
/// total.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    pub bc_term: Vec<f64>,
    pub state_term: Vec<f64>,
    pub total: Vec<f64>,
    pub fd_total: Vec<f64>,
    /// `max_i |total_i - fd_i| / max(|total_i|, GRAD_ABS_TOL / GRAD_REL_TOL)`;
    /// below [`GRAD_REL_TOL`] exactly when every component passes.
    pub max_rel_err: f64,
}

impl GradientReport {
    fn build(bc_term: Vec<f64>, state_term: Vec<f64>, fd_total: Vec<f64>) -> Result<Self> {
        let total: Vec<f64> = bc_term.iter().zip(&state_term).map(|(a, b)| a + b).collect();
        let max_rel_err = gradient_rel_err(&total, &fd_total);
        if !(max_rel_err <= GRAD_REL_TOL) {
            return Err(Error::FdMismatch { max_rel_err });
        }
        Ok(GradientReport { bc_term, state_term, total, fd_total, max_rel_err })
    }
}

/// Largest componentwise error of `analytic` against `reference`, scaled so
/// that a value `<= GRAD_REL_TOL` means every component satisfies
/// `|a - r| <= max(GRAD_REL_TOL |a|, GRAD_ABS_TOL)`.
pub fn gradient_rel_err(analytic: &[f64], reference: &[f64]) -> f64 {
    let floor = GRAD_ABS_TOL / GRAD_REL_TOL;
    analytic
        .iter()
        .zip(reference)
        .map(|(a, r)| (a - r).abs() / a.abs().max(floor))
        .fold(0.0, f64::max)
}

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h`.
pub fn finite_diff<F>(f: F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidParameter("finite-difference step must be positive"));
    }
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let plus = f(&probe);
        probe[i] = x[i] - h;
        let minus = f(&probe);
        probe[i] = x[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFiniteEvaluation { index: i });
        }
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(grad)
}

fn check_coupling(c: &CoupledPolicy, spec: &PopulationSpec) -> Result<()> {
    if let Expert::Coupled(e) = &spec.expert {
        if e.k != c.k {
            return Err(Error::MismatchedCoupling { learner: c.k, expert: e.k });
        }
    }
    if spec.n_states() != 2 || spec.n_actions() != 2 {
        return Err(Error::DimensionMismatch {
            what: "coupled family needs a 2x2 expert",
            expected: 4,
            found: spec.n_states() * spec.n_actions(),
        });
    }
    Ok(())
}

/// `d/dθ` of the population BC loss for the coupled family:
/// `-Σ_s w(s) scale(s) (π_E(a2|s) - σ(scale(s) θ))`.
pub fn bc_population_gradient(c: &CoupledPolicy, spec: &PopulationSpec) -> Result<f64> {
    check_coupling(c, spec)?;
    Ok(bc_gradient_from_joint(c, &spec.joint()))
}

fn bc_gradient_from_joint(c: &CoupledPolicy, joint: &JointDist) -> f64 {
    let mut g = 0.0;
    for (s, row) in joint.probs.iter().enumerate() {
        for (a, &w) in row.iter().enumerate() {
            g -= w * coupled_grad_log_prob(c, s, a);
        }
    }
    g
}

/// `-Σ_s w(s) d/dθ log p(s)` for the coupled family.
fn coupled_state_gradient(c: &CoupledPolicy, marginal: &StateDist) -> f64 {
    let grads = coupled_log_pseudo_grads(c);
    -(marginal.probs[0] * grads[0] + marginal.probs[1] * grads[1])
}

/// Analytic `(bc_term, state_term)` of the coupled EDM gradient, without the
/// finite-difference check.
pub fn edm_population_gradient_terms(c: &CoupledPolicy, spec: &PopulationSpec) -> Result<(f64, f64)> {
    check_coupling(c, spec)?;
    let joint = spec.joint();
    Ok((bc_gradient_from_joint(c, &joint), coupled_state_gradient(c, &joint.marginal())))
}

/// Coupled EDM population gradient, split into its BC and pseudo-state terms
/// and checked against central differences of [`edm_loss`].
pub fn edm_population_gradient(c: &CoupledPolicy, spec: &PopulationSpec) -> Result<GradientReport> {
    let (bc, state) = edm_population_gradient_terms(c, spec)?;
    let joint = spec.joint();
    let fd = finite_diff(
        |t| {
            edm_loss(&coupled_to_softmax(&c.with_theta(t[0])), &joint).unwrap_or(f64::NAN)
        },
        &[c.theta],
        FD_STEP,
    )?;
    GradientReport::build(vec![bc], vec![state], fd)
}

/// Gradient of the EDM loss with respect to the flattened logits
/// (`f[0][0], f[0][1], …`) of a tabular policy.
pub fn edm_tabular_gradient<D: ExpertData + ?Sized>(p: &SoftmaxPolicy, data: &D) -> Result<GradientReport> {
    let (n_s, n_a) = (p.n_states(), p.n_actions());
    let joint = data.expert_joint(n_s, n_a)?;
    let marginal = joint.marginal();
    let pseudo_grads = grad_log_pseudo(p)?;

    let mut bc = vec![0.0; n_s * n_a];
    for (s, row) in joint.probs.iter().enumerate() {
        let pi = p.action_probs(s);
        for (a, &w) in row.iter().enumerate() {
            for (b, &pb) in pi.iter().enumerate() {
                bc[s * n_a + b] -= w * (f64::from(u8::from(a == b)) - pb);
            }
        }
    }
    let mut state = vec![0.0; n_s * n_a];
    for (g, &w) in pseudo_grads.iter().zip(&marginal.probs) {
        for (dst, x) in state.iter_mut().zip(g.flat_logits()) {
            *dst -= w * x;
        }
    }

    let unflatten = |x: &[f64]| -> SoftmaxPolicy {
        SoftmaxPolicy::new(x.chunks(n_a).map(<[f64]>::to_vec).collect())
            .unwrap_or_else(|_| SoftmaxPolicy::uniform(n_s, n_a))
    };
    let x: Vec<f64> = p.logits.iter().flatten().copied().collect();
    let fd = finite_diff(|x| edm_loss(&unflatten(x), &joint).unwrap_or(f64::NAN), &x, FD_STEP)?;
    GradientReport::build(bc, state, fd)
}

/// Gradient of the BC loss with respect to the flattened logits.
pub fn bc_tabular_gradient<D: ExpertData + ?Sized>(p: &SoftmaxPolicy, data: &D) -> Result<Vec<f64>> {
    let (n_s, n_a) = (p.n_states(), p.n_actions());
    let joint = data.expert_joint(n_s, n_a)?;
    let mut g = vec![0.0; n_s * n_a];
    for (s, row) in joint.probs.iter().enumerate() {
        for (a, &w) in row.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let grad = p.grad_log_prob(s, a);
            for (b, x) in grad.logits[s].iter().enumerate() {
                g[s * n_a + b] -= w * x;
            }
        }
    }
    Ok(g)
}

/// The state weighting `(w1, w2)` under which the EDM population gradient
/// vanishes at `c`'s own parameter, i.e. `w1 g1 + w2 g2 = 0` with `g` the
/// log-pseudo gradients. `None` when both gradients share a sign.
pub fn edm_balancing_weights(c: &CoupledPolicy) -> Option<[f64; 2]> {
    let [g1, g2] = coupled_log_pseudo_grads(c);
    if g1 * g2 >= 0.0 {
        return None;
    }
    let z = g2.abs() + g1.abs();
    Some([g2.abs() / z, g1.abs() / z])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Objective {
    Bc,
    Edm,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescentRow {
    pub step: usize,
    pub theta: f64,
    pub bc_loss: f64,
    pub edm_loss: f64,
    /// Loss gradient of the objective being descended, at `theta`.
    pub grad_total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescentTrace {
    pub objective: Objective,
    pub rows: Vec<DescentRow>,
}

impl DescentTrace {
    pub fn final_row(&self) -> &DescentRow {
        self.rows.last().expect("trace has at least the initial row")
    }

    pub fn final_theta(&self) -> f64 {
        self.final_row().theta
    }
}

/// Fixed-step gradient descent on the population objective for the coupled
/// family. Row `i` records the state after `i` updates; there are
/// `steps + 1` rows.
pub fn gradient_descent(
    objective: Objective,
    init: CoupledPolicy,
    lr: f64,
    steps: usize,
    spec: &PopulationSpec,
) -> Result<DescentTrace> {
    if !(lr > 0.0) || !lr.is_finite() {
        return Err(Error::InvalidParameter("learning rate must be positive and finite"));
    }
    if steps == 0 {
        return Err(Error::InvalidParameter("steps must be at least 1"));
    }
    check_coupling(&init, spec)?;
    let joint = spec.joint();
    let marginal = joint.marginal();

    let mut c = init;
    let mut rows = Vec::with_capacity(steps + 1);
    for step in 0..=steps {
        if !c.theta.is_finite() || c.theta.abs() > DIVERGENCE_BOUND {
            return Err(Error::Divergence { step, value: c.theta });
        }
        let bc_grad = bc_gradient_from_joint(&c, &joint);
        let grad = match objective {
            Objective::Bc => bc_grad,
            Objective::Edm => bc_grad + coupled_state_gradient(&c, &marginal),
        };
        let losses = edm_loss_terms(&coupled_to_softmax(&c), &joint)?;
        rows.push(DescentRow { step, theta: c.theta, bc_loss: losses.bc, edm_loss: losses.total, grad_total: grad });
        if step < steps {
            c = c.with_theta(c.theta - lr * grad);
        }
    }
    Ok(DescentTrace { objective, rows })
}
