//! Two-dimensional bandit with a high and a low Gaussian reward bump.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::constants::*;
use super::dataset::{DatasetBuilder, OfflineDataset};
use super::{Env, StepOutcome};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::flow::{ActionBox, ScoreOracle, ValueFunction};
use crate::rng::SeedStreams;

/// Single-step task with one dummy state `[0]`.
#[derive(Clone, Debug, Default)]
pub struct BimodalBandit {
    done: bool,
    last_reward: f64,
}

fn bump(a: &[f64], center: [f64; 2], height: f64) -> f64 {
    let d2 = (a[0] - center[0]).powi(2) + (a[1] - center[1]).powi(2);
    height * (-d2 / (2.0 * BANDIT_BUMP_SCALE * BANDIT_BUMP_SCALE)).exp()
}

impl BimodalBandit {
    pub const STATE: [f64; 1] = [0.0];

    pub fn new() -> Self {
        Self::default()
    }

    pub fn action_box() -> ActionBox {
        ActionBox {
            low: BANDIT_ACTION_LOW,
            high: BANDIT_ACTION_HIGH,
        }
    }

    /// Ground-truth reward; the only definition used anywhere.
    pub fn reward(a: &[f64]) -> f64 {
        bump(a, BANDIT_HIGH_CENTER, BANDIT_HIGH_HEIGHT) + bump(a, BANDIT_LOW_CENTER, BANDIT_LOW_HEIGHT)
    }

    pub fn reward_gradient(a: &[f64]) -> [f64; 2] {
        let inv = 1.0 / (BANDIT_BUMP_SCALE * BANDIT_BUMP_SCALE);
        let mut g = [0.0; 2];
        for (c, h) in [(BANDIT_HIGH_CENTER, BANDIT_HIGH_HEIGHT), (BANDIT_LOW_CENTER, BANDIT_LOW_HEIGHT)] {
            let b = bump(a, c, h);
            g[0] -= b * (a[0] - c[0]) * inv;
            g[1] -= b * (a[1] - c[1]) * inv;
        }
        g
    }

    /// Distance from `a` to the high-mode center.
    pub fn distance_to_high_mode(a: &[f64]) -> f64 {
        ((a[0] - BANDIT_HIGH_CENTER[0]).powi(2) + (a[1] - BANDIT_HIGH_CENTER[1]).powi(2)).sqrt()
    }
}

impl Env for BimodalBandit {
    fn state_dim(&self) -> usize {
        1
    }

    fn action_dim(&self) -> usize {
        2
    }

    fn reset(&mut self, _seed: u64) -> Vec<f64> {
        self.done = false;
        self.last_reward = 0.0;
        Self::STATE.to_vec()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::Env { step: 1, reason: "bandit episode already finished".into() });
        }
        if action.len() != 2 || action.iter().any(|v| !v.is_finite()) {
            return Err(Error::Env { step: 0, reason: format!("bad action {action:?}") });
        }
        self.done = true;
        self.last_reward = Self::reward(action);
        Ok(StepOutcome {
            state: Self::STATE.to_vec(),
            reward: self.last_reward,
            done: true,
        })
    }

    fn is_terminal(&self) -> bool {
        self.done
    }

    fn success(&self) -> bool {
        self.last_reward > BANDIT_LOW_HEIGHT + 1e-3
    }
}

/// The true reward as a value function.
#[derive(Clone, Copy, Debug, Default)]
pub struct BanditReward;

impl ScoreOracle for BanditReward {
    fn action_gradients(&self, _states: &Tensor, actions: &Tensor) -> Result<Tensor> {
        let data = (0..actions.rows()).flat_map(|i| BimodalBandit::reward_gradient(actions.row(i))).collect();
        Tensor::matrix(actions.rows(), 2, data)
    }
}

impl ValueFunction for BanditReward {
    fn values(&self, _states: &Tensor, actions: &Tensor) -> Result<Vec<f64>> {
        Ok((0..actions.rows()).map(|i| BimodalBandit::reward(actions.row(i))).collect())
    }
}

/// `n` single-step transitions with noiseless ground-truth rewards. Actions
/// come from the low mode or the ring around the high mode.
pub fn gen_bandit_dataset(n: usize, seed: u64) -> Result<OfflineDataset> {
    if n == 0 {
        return Err(Error::usage("bandit dataset needs n >= 1"));
    }
    let mut rng = SeedStreams::new(seed).stream("bandit-data");
    let noise = Normal::new(0.0, BANDIT_DATA_STD).expect("positive std");
    let bounds = BimodalBandit::action_box();
    let mut b = DatasetBuilder::new(1, 2);
    for _ in 0..n {
        let a = if rng.gen_bool(BANDIT_RING_SHARE) {
            let r = rng.gen_range(BANDIT_RING_INNER..=BANDIT_RING_OUTER);
            let theta = rng.gen_range(0.0..std::f64::consts::TAU);
            [
                bounds.clamp(BANDIT_HIGH_CENTER[0] + r * theta.cos()),
                bounds.clamp(BANDIT_HIGH_CENTER[1] + r * theta.sin()),
            ]
        } else {
            [
                bounds.clamp(BANDIT_LOW_CENTER[0] + noise.sample(&mut rng)),
                bounds.clamp(BANDIT_LOW_CENTER[1] + noise.sample(&mut rng)),
            ]
        };
        b.push(&BimodalBandit::STATE, &a, BimodalBandit::reward(&a), &BimodalBandit::STATE, true);
    }
    b.finish("bandit", seed)
}

/// Uniform actions on the box, for baselines.
pub fn uniform_actions<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Tensor {
    let data = (0..2 * n).map(|_| rng.gen_range(BANDIT_ACTION_LOW..BANDIT_ACTION_HIGH)).collect();
    Tensor::matrix(n, 2, data).expect("length matches")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn global_max_at_high_center() {
        let top = BimodalBandit::reward(&BANDIT_HIGH_CENTER);
        assert!(top > 1.0 - 1e-12 && top < 1.0001);
        assert!(BimodalBandit::reward(&BANDIT_LOW_CENTER) < top);
        // only the far tail of the low bump pulls here
        let g = BimodalBandit::reward_gradient(&BANDIT_HIGH_CENTER);
        assert!(g[0].abs() < 1e-5 && g[1].abs() < 1e-5);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let a = [0.1, -0.3];
        let g = BimodalBandit::reward_gradient(&a);
        let h = 1e-6;
        for k in 0..2 {
            let mut p = a;
            let mut m = a;
            p[k] += h;
            m[k] -= h;
            let fd = (BimodalBandit::reward(&p) - BimodalBandit::reward(&m)) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn single_transition_dataset() {
        let d = gen_bandit_dataset(1, 0).unwrap();
        assert_eq!(d.len(), 1);
        let a = d.actions.row(0);
        let near_low = a.iter().zip(BANDIT_LOW_CENTER).all(|(x, c)| (x - c).abs() < 4.0 * BANDIT_DATA_STD);
        let on_ring = BimodalBandit::distance_to_high_mode(a) >= BANDIT_RING_INNER - 1e-12;
        assert!(near_low || on_ring);
    }

    #[test]
    fn dataset_avoids_the_high_mode() {
        let d = gen_bandit_dataset(10_000, 1).unwrap();
        let near = (0..d.len()).filter(|&i| BimodalBandit::distance_to_high_mode(d.actions.row(i)) < BANDIT_RING_INNER).count();
        assert_eq!(near, 0);
        let best = d.rewards.iter().cloned().fold(f64::MIN, f64::max);
        assert!(best < BANDIT_LOW_HEIGHT + 1e-3);
    }

    #[test]
    fn episode_is_one_step() {
        let mut env = BimodalBandit::new();
        env.reset(0);
        let out = env.step(&BANDIT_HIGH_CENTER).unwrap();
        assert!(out.done && env.success());
        assert!(env.step(&[0.0, 0.0]).is_err());
    }
}
