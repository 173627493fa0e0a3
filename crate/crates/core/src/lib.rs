//! Value gradient flow for behavior-regularized reinforcement learning.
//!
//! Actions sampled from a learned reference (behavior) model are treated as
//! particles and pushed along a kernel-smoothed value gradient for a small,
//! fixed number of steps. The number of steps and the step size form a
//! transport budget that keeps the resulting implicit policy close to the
//! reference without any explicit divergence penalty.
//!
//! Module map:
//!
//! - [`autodiff`]: reverse-mode tape, MLPs, Adam.
//! - [`kernels`]: RBF kernel, median-heuristic bandwidth, kernel gradients, MMD.
//! - [`flow`]: the particle update, multi-step transport and the MMD budget bound.
//! - [`refmodel`]: conditional flow-matching model of the behavior distribution.
//! - [`critic`]: twin Q networks, particle-averaged TD targets, gradient network.
//! - [`agent`]: the end-to-end policy, best-of-N selection, rollouts and offline training.
//! - [`envs`]: toy bandit, point maze, chain MDP, datasets and analytic rewards.
//! - [`checkpoint`]: versioned binary checkpoints with a text manifest.
//! - [`rng`]: named random streams derived from one master seed.

pub mod agent;
pub mod autodiff;
pub mod checkpoint;
pub mod critic;
pub mod envs;
mod error;
pub mod flow;
pub mod kernels;
pub mod refmodel;
pub mod rng;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book;
