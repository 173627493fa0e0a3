//! Three-state deterministic chain with action-independent rewards.
//!
//! States are one-hot vectors visited in order `0 -> 1 -> 2 -> end`; the
//! one-dimensional action has no effect, so every policy shares one Q table.

use rand::Rng;

use super::constants::{CHAIN_GAMMA, CHAIN_REWARDS};
use super::dataset::{DatasetBuilder, OfflineDataset};
use super::{Env, StepOutcome};
use crate::error::{Error, Result};
use crate::rng::SeedStreams;

pub const CHAIN_LEN: usize = 3;

#[derive(Clone, Debug, Default)]
pub struct ChainMdp {
    pos: usize,
}

pub fn one_hot(i: usize) -> Vec<f64> {
    let mut v = vec![0.0; CHAIN_LEN];
    v[i] = 1.0;
    v
}

impl ChainMdp {
    pub fn new() -> Self {
        Self::default()
    }

    /// Discounted return from each state under any policy.
    pub fn analytic_q(gamma: f64) -> [f64; CHAIN_LEN] {
        let mut q = [0.0; CHAIN_LEN];
        let mut next = 0.0;
        for i in (0..CHAIN_LEN).rev() {
            q[i] = CHAIN_REWARDS[i] + gamma * next;
            next = q[i];
        }
        q
    }

    pub fn default_gamma() -> f64 {
        CHAIN_GAMMA
    }
}

impl Env for ChainMdp {
    fn state_dim(&self) -> usize {
        CHAIN_LEN
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn reset(&mut self, _seed: u64) -> Vec<f64> {
        self.pos = 0;
        one_hot(0)
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        if self.pos >= CHAIN_LEN {
            return Err(Error::Env { step: self.pos, reason: "chain episode already finished".into() });
        }
        if action.len() != 1 {
            return Err(Error::Env { step: self.pos, reason: format!("expected a 1-d action, got {}", action.len()) });
        }
        let reward = CHAIN_REWARDS[self.pos];
        self.pos += 1;
        let done = self.pos == CHAIN_LEN;
        Ok(StepOutcome {
            state: one_hot(self.pos.min(CHAIN_LEN - 1)),
            reward,
            done,
        })
    }

    fn is_terminal(&self) -> bool {
        self.pos >= CHAIN_LEN
    }

    fn success(&self) -> bool {
        self.pos >= CHAIN_LEN
    }
}

/// `per_state` transitions out of every state with uniform random actions.
pub fn gen_chain_dataset(per_state: usize, seed: u64) -> Result<OfflineDataset> {
    if per_state == 0 {
        return Err(Error::usage("chain dataset needs at least one transition per state"));
    }
    let mut rng = SeedStreams::new(seed).stream("chain-data");
    let mut b = DatasetBuilder::new(CHAIN_LEN, 1);
    for _ in 0..per_state {
        for i in 0..CHAIN_LEN {
            let a = [rng.gen_range(-1.0..1.0)];
            let done = i + 1 == CHAIN_LEN;
            b.push(&one_hot(i), &a, CHAIN_REWARDS[i], &one_hot((i + 1).min(CHAIN_LEN - 1)), done);
        }
    }
    b.finish("chain", seed)
}
