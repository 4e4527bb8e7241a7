//! Energy-based pseudo-state distribution built from a policy's logits.
//!
//! With energy `E(s) = logsumexp_a f[s][a]`, the pseudo-state distribution is
//! `p(s) ∝ exp(-E(s))`. Including a per-state gauge gives
//! `p(s) ∝ exp(-g(s)) / Σ_a exp(f[s][a])`, which changes with `g` even though
//! the policy does not.
//!
//! Nothing here takes a [`crate::TabularMdp`]: the pseudo-state distribution
//! is a function of policy parameters alone.

use alloc::vec::Vec;

use crate::math::{exp, logsumexp};
use crate::mdp::{DistKind, JointDist, StateDist};
use crate::policies::{CoupledPolicy, SoftmaxGrad, SoftmaxPolicy};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyTable {
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoStateDist {
    pub probs: Vec<f64>,
    /// Gauge the distribution was computed under (all zeros for the plain
    /// energy model).
    pub gauge_used: Vec<f64>,
}

impl PseudoStateDist {
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn to_state_dist(&self) -> StateDist {
        StateDist { probs: self.probs.clone(), kind: DistKind::Exact }
    }
}

/// `E(s) = logsumexp_a f[s][a]` on the raw logits; the gauge is ignored.
pub fn energy(p: &SoftmaxPolicy) -> EnergyTable {
    EnergyTable { values: p.logits.iter().map(|row| logsumexp(row)).collect() }
}

fn normalize_log_weights(log_w: &[f64]) -> Vec<f64> {
    let z = logsumexp(log_w);
    log_w.iter().map(|&lw| lw - z).collect()
}

/// `log p(s)` for the ungauged energy model.
pub fn log_pseudo_state(p: &SoftmaxPolicy) -> Result<Vec<f64>> {
    if !p.gauge_is_zero() {
        return Err(Error::GaugeNotZero);
    }
    let neg_e: Vec<f64> = energy(p).values.into_iter().map(|e| -e).collect();
    Ok(normalize_log_weights(&neg_e))
}

/// `p(s) = exp(-E(s)) / Σ_s' exp(-E(s'))`.
///
/// Refuses policies with a nonzero gauge; use [`pseudo_state_dist_gauged`]
/// for those.
pub fn pseudo_state_dist(p: &SoftmaxPolicy) -> Result<PseudoStateDist> {
    let log_p = log_pseudo_state(p)?;
    Ok(PseudoStateDist { probs: log_p.into_iter().map(exp).collect(), gauge_used: p.gauge.clone() })
}

/// `p(s) ∝ exp(-g(s)) / Σ_a exp(f[s][a])`, computed in log space.
pub fn pseudo_state_dist_gauged(p: &SoftmaxPolicy) -> PseudoStateDist {
    let log_w: Vec<f64> = energy(p).values.iter().zip(&p.gauge).map(|(e, g)| -g - e).collect();
    PseudoStateDist {
        probs: normalize_log_weights(&log_w).into_iter().map(exp).collect(),
        gauge_used: p.gauge.clone(),
    }
}

/// `p(s, a) = π(a|s) p(s)`.
pub fn joint_model(p: &SoftmaxPolicy, d: &PseudoStateDist) -> Result<JointDist> {
    if d.len() != p.n_states() {
        return Err(Error::DimensionMismatch {
            what: "pseudo-state distribution vs policy",
            expected: p.n_states(),
            found: d.len(),
        });
    }
    let probs = d
        .probs
        .iter()
        .enumerate()
        .map(|(s, &ps)| p.action_probs(s).into_iter().map(|pa| ps * pa).collect())
        .collect();
    JointDist::new(probs, DistKind::Exact)
}

/// Gradient of `log p(s)` with respect to the logits, one entry per state `s`:
/// `∂ log p(s) / ∂f[s'][a'] = -[s'=s] π(a'|s) + p(s') π(a'|s')`.
pub fn grad_log_pseudo(p: &SoftmaxPolicy) -> Result<Vec<SoftmaxGrad>> {
    let pseudo = pseudo_state_dist(p)?;
    let n_s = p.n_states();
    let n_a = p.n_actions();
    let pi: Vec<Vec<f64>> = (0..n_s).map(|s| p.action_probs(s)).collect();
    // Shared normalizer term p(s') π(a'|s').
    let correction: Vec<Vec<f64>> = pseudo
        .probs
        .iter()
        .zip(&pi)
        .map(|(&ps, row)| row.iter().map(|&pa| ps * pa).collect())
        .collect();
    Ok((0..n_s)
        .map(|s| {
            let mut g = SoftmaxGrad::zeros(n_s, n_a);
            g.logits.clone_from(&correction);
            for (x, &pa) in g.logits[s].iter_mut().zip(&pi[s]) {
                *x -= pa;
            }
            g
        })
        .collect())
}

/// `k e^{kθ}/(1 + e^{kθ}) - (e^θ + k e^{kθ})/(2 + e^θ + e^{kθ})`.
///
/// This is `d/dθ log[(1 + e^{kθ}) / (2 + e^θ + e^{kθ})]`. For the energy model
/// of the coupled family that ratio is the pseudo-probability of s1, the
/// state whose logits are `(0, θ)`: `exp(-E(s1))` carries `1/(1 + e^θ)`, and
/// clearing denominators leaves `1 + e^{kθ}` on top. At `θ = 0` it equals
/// `(k - 1)/4`.
pub fn coupled_log_pseudo_grad(c: &CoupledPolicy) -> f64 {
    let (theta, k) = (c.theta, c.k);
    k * crate::math::sigmoid(k * theta) - shared_normalizer_term(theta, k)
}

/// `[d/dθ log p(s1), d/dθ log p(s2)]` for the energy model of the coupled
/// family. The first entry is [`coupled_log_pseudo_grad`]; the second swaps
/// the roles of the two states in its leading term,
/// `e^θ/(1 + e^θ) - (e^θ + k e^{kθ})/(2 + e^θ + e^{kθ})`.
pub fn coupled_log_pseudo_grads(c: &CoupledPolicy) -> [f64; 2] {
    let s1 = coupled_log_pseudo_grad(c);
    let s2 = crate::math::sigmoid(c.theta) - shared_normalizer_term(c.theta, c.k);
    [s1, s2]
}

/// `(e^θ + k e^{kθ}) / (2 + e^θ + e^{kθ})`, scaled by the largest exponent.
fn shared_normalizer_term(theta: f64, k: f64) -> f64 {
    let m = 0f64.max(theta).max(k * theta);
    let a = exp(theta - m);
    let b = exp(k * theta - m);
    (a + k * b) / (2.0 * exp(-m) + a + b)
}
