//! Sampling from pseudo-state distributions.
//!
//! Discrete pseudo-state distributions are sampled exactly by inverse CDF.
//! For a continuous stand-in, [`langevin_sample`] runs the unadjusted Langevin
//! algorithm on a Gaussian-mixture energy restricted to an interval, and
//! [`quadrature_density`] gives the binned ground truth it is measured
//! against.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::ebm::PseudoStateDist;
use crate::math::{exp, inverse_cdf, ln, logsumexp, sqrt};
use crate::mdp::tv;
use crate::{Error, Result};

pub const DEFAULT_STEP_SIZE: f64 = 0.01;
pub const DEFAULT_STEPS: usize = 2000;
pub const DEFAULT_CHAINS: usize = 20_000;
pub const DEFAULT_BINS: usize = 50;
/// Total trapezoid intervals used by [`quadrature_density`].
pub const QUADRATURE_INTERVALS: usize = 20_000;

/// `E(x) = -log Σ_j w_j exp(-(x - c_j)² / (2 b²))` on `[lo, hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateEnergy {
    pub centers: Vec<f64>,
    pub weights: Vec<f64>,
    pub bandwidth: f64,
    pub lo: f64,
    pub hi: f64,
}

impl SurrogateEnergy {
    pub fn new(centers: Vec<f64>, weights: Vec<f64>, bandwidth: f64, lo: f64, hi: f64) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::InvalidParameter("surrogate energy needs at least one center"));
        }
        if centers.len() != weights.len() {
            return Err(Error::DimensionMismatch {
                what: "surrogate weights",
                expected: centers.len(),
                found: weights.len(),
            });
        }
        if weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidParameter("surrogate weights must be positive"));
        }
        if centers.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidParameter("surrogate centers must be finite"));
        }
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(Error::InvalidParameter("bandwidth must be positive"));
        }
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidParameter("interval must satisfy lo < hi"));
        }
        Ok(SurrogateEnergy { centers, weights, bandwidth, lo, hi })
    }

    fn log_terms(&self, x: f64) -> Vec<f64> {
        let inv = 1.0 / (2.0 * self.bandwidth * self.bandwidth);
        self.centers
            .iter()
            .zip(&self.weights)
            .map(|(&c, &w)| ln(w) - (x - c) * (x - c) * inv)
            .collect()
    }

    pub fn energy(&self, x: f64) -> f64 {
        -logsumexp(&self.log_terms(x))
    }

    /// `E'(x) = Σ_j r_j(x) (x - c_j) / b²` with mixture responsibilities `r_j`.
    pub fn grad(&self, x: f64) -> f64 {
        // Hot path of the sampler: no allocation, and the weights enter
        // multiplicatively against the smallest quadratic.
        let inv = 1.0 / (2.0 * self.bandwidth * self.bandwidth);
        let q_min = self.centers.iter().map(|&c| (x - c) * (x - c)).fold(f64::INFINITY, f64::min) * inv;
        let (mut z, mut acc) = (0.0, 0.0);
        for (&c, &w) in self.centers.iter().zip(&self.weights) {
            let r = w * exp(q_min - (x - c) * (x - c) * inv);
            z += r;
            acc += r * (x - c);
        }
        acc / (z * self.bandwidth * self.bandwidth)
    }

    /// Unnormalized density `exp(-E(x))`.
    pub fn density(&self, x: f64) -> f64 {
        exp(-self.energy(x))
    }

    fn reflect(&self, mut x: f64) -> f64 {
        let width = self.hi - self.lo;
        // A single huge step can cross the interval several times.
        if (x - self.lo).abs() > 4.0 * width {
            let period = 2.0 * width;
            let r = libm::fmod(x - self.lo, period);
            x = self.lo + if r < 0.0 { r + period } else { r };
        }
        loop {
            if x < self.lo {
                x = 2.0 * self.lo - x;
            } else if x > self.hi {
                x = 2.0 * self.hi - x;
            } else {
                return x;
            }
        }
    }
}

/// The three energies the sampler is validated on: a standard Gaussian, a
/// symmetric two-mode mixture and an asymmetric one.
pub fn fixture_energies() -> [(&'static str, SurrogateEnergy); 3] {
    [
        ("single", SurrogateEnergy { centers: vec![0.0], weights: vec![1.0], bandwidth: 1.0, lo: -8.0, hi: 8.0 }),
        (
            "symmetric",
            SurrogateEnergy { centers: vec![-2.0, 2.0], weights: vec![1.0, 1.0], bandwidth: 1.0, lo: -8.0, hi: 8.0 },
        ),
        (
            "asymmetric",
            SurrogateEnergy { centers: vec![-1.5, 2.0], weights: vec![0.3, 0.7], bandwidth: 0.8, lo: -6.0, hi: 6.0 },
        ),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch<T> {
    pub values: Vec<T>,
    pub seed: u64,
    pub steps: usize,
    pub step_size: f64,
}

/// `n` exact draws from `p` by inverse CDF.
pub fn sample_categorical(p: &PseudoStateDist, n: usize, seed: u64) -> Result<SampleBatch<usize>> {
    if n == 0 {
        return Err(Error::InvalidParameter("sample count must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..n).map(|_| inverse_cdf(&p.probs, rng.random())).collect();
    Ok(SampleBatch { values, seed, steps: 0, step_size: 0.0 })
}

/// `n` independent unadjusted Langevin chains,
/// `x ← x - h E'(x) + sqrt(2h) ξ`, reflected into `[lo, hi]`.
///
/// Chain `i` is seeded with `seed + i` and starts from a uniform draw on the
/// interval; the batch holds each chain's final state.
pub fn langevin_sample(
    e: &SurrogateEnergy,
    n: usize,
    steps: usize,
    step_size: f64,
    seed: u64,
) -> Result<SampleBatch<f64>> {
    if n == 0 {
        return Err(Error::InvalidParameter("chain count must be at least 1"));
    }
    if steps == 0 {
        return Err(Error::InvalidParameter("steps must be at least 1"));
    }
    if !(step_size > 0.0) || !step_size.is_finite() {
        return Err(Error::InvalidParameter("step size must be positive"));
    }
    let noise = sqrt(2.0 * step_size);
    let mut values = Vec::with_capacity(n);
    for chain in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(chain as u64));
        let mut x = e.lo + (e.hi - e.lo) * rng.random::<f64>();
        for step in 0..steps {
            let xi: f64 = rng.sample(StandardNormal);
            x = x - step_size * e.grad(x) + noise * xi;
            if !x.is_finite() {
                return Err(Error::NonFiniteState { chain, step });
            }
            x = e.reflect(x);
        }
        values.push(x);
    }
    Ok(SampleBatch { values, seed, steps, step_size })
}

/// Probability of each of `bins` equal-width bins on `[lo, hi]` under
/// `exp(-E)`, by the trapezoid rule with `intervals_per_bin` sub-intervals.
pub fn quadrature_density_with(e: &SurrogateEnergy, bins: usize, intervals_per_bin: usize) -> Result<Vec<f64>> {
    if bins < 2 {
        return Err(Error::InvalidParameter("need at least 2 bins"));
    }
    if intervals_per_bin == 0 {
        return Err(Error::InvalidParameter("need at least 1 interval per bin"));
    }
    let total = bins * intervals_per_bin;
    let h = (e.hi - e.lo) / total as f64;
    let f: Vec<f64> = (0..=total).map(|i| e.density(e.lo + h * i as f64)).collect();
    let mass: Vec<f64> = (0..bins)
        .map(|b| {
            let seg = &f[b * intervals_per_bin..=(b + 1) * intervals_per_bin];
            let interior: f64 = seg[1..seg.len() - 1].iter().sum();
            h * (0.5 * (seg[0] + seg[seg.len() - 1]) + interior)
        })
        .collect();
    let z: f64 = mass.iter().sum();
    Ok(mass.into_iter().map(|m| m / z).collect())
}

/// [`quadrature_density_with`] using at least [`QUADRATURE_INTERVALS`]
/// intervals in total.
pub fn quadrature_density(e: &SurrogateEnergy, bins: usize) -> Result<Vec<f64>> {
    if bins < 2 {
        return Err(Error::InvalidParameter("need at least 2 bins"));
    }
    quadrature_density_with(e, bins, QUADRATURE_INTERVALS.div_ceil(bins))
}

/// Normalized histogram of `values` on `bins` equal-width bins of `[lo, hi]`.
pub fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let mut counts = vec![0usize; bins];
    let width = (hi - lo) / bins as f64;
    for &x in values {
        let idx = (((x - lo) / width) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    let n = values.len().max(1) as f64;
    counts.into_iter().map(|c| c as f64 / n).collect()
}

/// Total variation between the Langevin histogram and the quadrature density.
pub fn langevin_tv(e: &SurrogateEnergy, batch: &SampleBatch<f64>, bins: usize) -> Result<f64> {
    let truth = quadrature_density(e, bins)?;
    Ok(tv(&histogram(&batch.values, e.lo, e.hi, bins), &truth))
}

/// Sample mean and (population) variance.
pub fn mean_variance(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var)
}
