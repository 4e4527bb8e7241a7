//! Tabular imitation-learning numerics.
//!
//! Finite MDPs and their exact visitation distributions, softmax policy
//! families with an explicit per-state gauge, the energy-based pseudo-state
//! distribution built from a policy's own logits, behavioral-cloning and
//! energy-based distribution matching losses with analytic gradients, and a
//! set of self-checking counterexamples showing that the pseudo-state
//! distribution is unrelated to the policy's true visitation.
//!
//! The crate is `no_std` and only needs `alloc`. Transcendental functions come
//! from [`libm`] so results do not depend on the platform's C library.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod counterexamples;
pub mod ebm;
mod error;
pub mod math;
pub mod mdp;
pub mod objectives;
pub mod policies;
pub mod sampler;

pub use error::{Error, Result};
pub use mdp::{DistKind, JointDist, Policy, StateDist, TabularMdp, Trajectory, VisitationMode};
pub use policies::{CoupledPolicy, DemoDataset, SoftmaxPolicy, TablePolicy};
