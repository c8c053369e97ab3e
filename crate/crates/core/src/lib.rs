//! Off-policy actor-critic estimators on exactly solvable tabular MDPs.
//!
//! The crate is `no_std` (it needs `alloc`) and contains only pure
//! computation:
//!
//! * [`mdp`]: finite MDPs, tabular policies, exact policy evaluation,
//!   state distributions and seeded episode sampling.
//! * [`zoo`]: named, reproducible environments.
//! * [`estimators`]: importance-sampled and V-trace returns, the implied
//!   policy, the V-trace distortion factor and the on/off-policy mixture
//!   threshold.
//! * [`trust_region`]: behaviour relevance, per-state masks and the
//!   trust-region return estimators.
//! * [`learner`]: the tabular softmax actor-critic update.
//! * [`oracle`]: brute-force verifiers that share no numeric code with the
//!   estimators they check.
//!
//! Replay, threading, file formats and the command line live in the `laser`
//! crate.
#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

mod error;
mod linalg;
pub mod math;

pub mod estimators;
pub mod learner;
pub mod mdp;
pub mod oracle;
pub mod trust_region;
pub mod zoo;

pub use error::{Error, Result};
pub use estimators::{ClipConfig, ReturnEstimate};
pub use mdp::{Mdp, TabularPolicy, Trajectory, Transition};
pub use trust_region::{MaskedTrajectory, RelevanceConfig, RelevanceKind};
