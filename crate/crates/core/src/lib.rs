//! Tabular inverse reinforcement learning with state-weighted entropy
//! regularization.
//!
//! The crate solves entropy-regularized MDPs in which the per-step entropy
//! bonus at state `s` carries its own positive weight `mu(s)` acting as a
//! per-state temperature, learns reward and weight parameters from
//! demonstrations by exact-gradient maximum likelihood and by a tabular
//! adversarial loop, and evaluates the results on procedurally generated
//! gridworld and highway benchmarks.
//!
//! Module map:
//! - [`mdp`]: core MDP/policy/trajectory types, policy evaluation, occupancy,
//!   trajectory sampling.
//! - [`soft`]: the weighted soft Bellman operator, fixed-point solver, soft
//!   policies, and KL diagnostics.
//! - [`features`]: per-state feature maps and threshold discretization.
//! - [`likelihood`]: demonstration log-likelihood and its exact analytic
//!   gradients via a joint value/gradient fixed point.
//! - [`train`]: the two-phase maximum-likelihood trainer.
//! - [`envs`]: Objectworld and Highway generators, expert synthesis, and
//!   demonstration sampling.
//! - [`wairl`]: tabular weighted adversarial IRL.
//! - [`metrics`]: expected value difference, transfer evaluation, held-out
//!   log-likelihood, and trajectory matching scores.
//! - [`reference`]: independently coded scalar-loop paths used only for
//!   cross-checking the above.

pub mod envs;
pub mod error;
pub mod features;
pub mod likelihood;
pub mod linalg;
pub mod mdp;
pub mod metrics;
pub mod reference;
pub mod soft;
pub mod train;
pub mod wairl;

#[cfg(test)]
pub(crate) mod test_util;

pub use error::{Error, Result};
