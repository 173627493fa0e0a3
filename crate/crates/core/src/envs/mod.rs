//! Toy environments, offline datasets and analytic rewards.

pub mod analytic;
pub mod bandit;
pub mod chain;
pub mod constants;
pub mod dataset;
pub mod maze;

pub use analytic::AnalyticReward;
pub use bandit::BimodalBandit;
pub use chain::ChainMdp;
pub use dataset::{DatasetManifest, OfflineDataset, TrajectoryInfo};
pub use maze::PointMaze;

use crate::error::Result;

/// Result of one environment step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub state: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

/// An episodic environment with continuous actions.
pub trait Env {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    /// Start a new episode; all randomness of the episode derives from `seed`.
    fn reset(&mut self, seed: u64) -> Vec<f64>;
    fn step(&mut self, action: &[f64]) -> Result<StepOutcome>;
    /// True if the episode is over before any action is taken.
    fn is_terminal(&self) -> bool {
        false
    }
    /// Whether the current episode reached its goal.
    fn success(&self) -> bool {
        false
    }
}
