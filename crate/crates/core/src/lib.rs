//! Optimistic clipped value iteration for infinite-horizon average-reward
//! reinforcement learning.
//!
//! Two learners are provided: [`tabular`] runs a discounted UCB-style value
//! iteration with span clipping on finite MDPs, and [`linear`] runs
//! least-squares clipped value iteration with determinant-doubling episodes
//! on linear MDPs. [`oracle`] holds exact solvers used for regret accounting,
//! [`envs`] seeded benchmark generators, and [`harness`] the experiment and
//! invariant-check runners behind the `clipvi` CLI.

pub mod checks;
pub mod covariance;
pub mod envs;
pub mod error;
pub mod format;
pub mod harness;
pub mod linear;
pub mod mdp;
pub mod oracle;
pub mod tabular;

pub use error::{Error, Result};
pub use mdp::{
    linear_to_tabular, tabular_to_onehot_linear, validate_linear, validate_tabular, AlgoConfig,
    ClipMode, LinearMdpEnv, RunRecord, TabularMdp, ValidationReport, Violation, ViolationKind,
};
pub use oracle::OracleSolution;
