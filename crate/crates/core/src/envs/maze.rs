//! Point maze on the unit square with one wall, and a stitching dataset.
//!
//! The wall runs from the left edge to `x = 0.7` at `y = 0.5`. The start is
//! below it and the goal above it, so every path goes around the right end.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::constants::*;
use super::dataset::{DatasetBuilder, OfflineDataset, TrajectoryInfo};
use super::{Env, StepOutcome};
use crate::error::{Error, Result};
use crate::flow::ActionBox;
use crate::rng::{SeedStreams, StreamRng};

#[derive(Clone, Debug)]
pub struct PointMaze {
    state: [f64; 2],
    rng: StreamRng,
    t: usize,
    reached: bool,
}

impl Default for PointMaze {
    fn default() -> Self {
        let mut m = PointMaze {
            state: MAZE_START,
            rng: SeedStreams::new(0).stream("maze-noise"),
            t: 0,
            reached: false,
        };
        m.reset(0);
        m
    }
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn on_segment(p: [f64; 2], q: [f64; 2], r: [f64; 2]) -> bool {
    r[0] >= p[0].min(q[0]) && r[0] <= p[0].max(q[0]) && r[1] >= p[1].min(q[1]) && r[1] <= p[1].max(q[1])
}

/// Closed-segment intersection test; touching counts.
fn segments_intersect(p1: [f64; 2], p2: [f64; 2], q1: [f64; 2], q2: [f64; 2]) -> bool {
    let d1 = cross(q1, q2, p1);
    let d2 = cross(q1, q2, p2);
    let d3 = cross(p1, p2, q1);
    let d4 = cross(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && on_segment(q1, q2, p1))
        || (d2 == 0.0 && on_segment(q1, q2, p2))
        || (d3 == 0.0 && on_segment(p1, p2, q1))
        || (d4 == 0.0 && on_segment(p1, p2, q2))
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

impl PointMaze {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn action_box() -> ActionBox {
        ActionBox::UNIT
    }

    pub fn state(&self) -> [f64; 2] {
        self.state
    }

    pub fn crosses_wall(from: [f64; 2], to: [f64; 2]) -> bool {
        MAZE_WALLS
            .iter()
            .any(|w| segments_intersect(from, to, [w[0], w[1]], [w[2], w[3]]))
    }

    pub fn in_goal(s: [f64; 2]) -> bool {
        dist(s, MAZE_GOAL) <= MAZE_GOAL_RADIUS
    }

    pub fn near_midpoint(s: [f64; 2]) -> bool {
        dist(s, MAZE_MIDPOINT) <= MAZE_MIDPOINT_RADIUS
    }

    pub fn in_start_region(s: [f64; 2]) -> bool {
        (s[0] - MAZE_START[0]).abs() <= MAZE_START_JITTER + 1e-12 && (s[1] - MAZE_START[1]).abs() <= MAZE_START_JITTER + 1e-12
    }

    /// Pure transition for a given noise draw: `(s', reward, done)`.
    pub fn transition(s: [f64; 2], a: &[f64], noise: [f64; 2]) -> ([f64; 2], f64, bool) {
        let a = [a[0].clamp(-1.0, 1.0), a[1].clamp(-1.0, 1.0)];
        let proposed = [
            (s[0] + MAZE_STEP_SCALE * a[0] + noise[0]).clamp(0.0, 1.0),
            (s[1] + MAZE_STEP_SCALE * a[1] + noise[1]).clamp(0.0, 1.0),
        ];
        let next = if Self::crosses_wall(s, proposed) { s } else { proposed };
        if Self::in_goal(next) {
            (next, 1.0, true)
        } else {
            (next, 0.0, false)
        }
    }

    /// Whether `s'` is reachable from `(s, a)` under some noise within six
    /// standard deviations.
    pub fn consistent(s: [f64; 2], a: &[f64], next: [f64; 2]) -> bool {
        if next == s {
            return true;
        }
        let tol = 6.0 * MAZE_NOISE_STD;
        (0..2).all(|k| {
            let mean = s[k] + MAZE_STEP_SCALE * a[k].clamp(-1.0, 1.0);
            let at_edge = next[k] == 0.0 || next[k] == 1.0;
            (next[k] - mean).abs() <= tol || at_edge
        }) && !Self::crosses_wall(s, next)
    }

    fn draw_noise(&mut self) -> [f64; 2] {
        let n = Normal::new(0.0, MAZE_NOISE_STD).expect("positive std");
        [n.sample(&mut self.rng), n.sample(&mut self.rng)]
    }
}

impl Env for PointMaze {
    fn state_dim(&self) -> usize {
        2
    }

    fn action_dim(&self) -> usize {
        2
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let streams = SeedStreams::new(seed);
        let mut r = streams.stream("maze-reset");
        self.state = [
            MAZE_START[0] + r.gen_range(-MAZE_START_JITTER..=MAZE_START_JITTER),
            MAZE_START[1] + r.gen_range(-MAZE_START_JITTER..=MAZE_START_JITTER),
        ];
        self.rng = streams.stream("maze-noise");
        self.t = 0;
        self.reached = false;
        self.state.to_vec()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        if action.len() != 2 || action.iter().any(|v| !v.is_finite()) {
            return Err(Error::Env { step: self.t, reason: format!("bad action {action:?}") });
        }
        if self.reached {
            return Err(Error::Env { step: self.t, reason: "episode already finished".into() });
        }
        let noise = self.draw_noise();
        let (next, reward, done) = Self::transition(self.state, action, noise);
        self.state = next;
        self.t += 1;
        self.reached = done;
        Ok(StepOutcome {
            state: next.to_vec(),
            reward,
            done,
        })
    }

    fn is_terminal(&self) -> bool {
        self.reached
    }

    fn success(&self) -> bool {
        self.reached
    }
}

/// Steering action toward `target`: lands on it when within reach,
/// otherwise heads for it at norm `MAZE_SPEED`.
fn steer(from: [f64; 2], to: [f64; 2]) -> [f64; 2] {
    let want = [(to[0] - from[0]) / MAZE_STEP_SCALE, (to[1] - from[1]) / MAZE_STEP_SCALE];
    let norm = (want[0] * want[0] + want[1] * want[1]).sqrt();
    let k = if norm > MAZE_SPEED { MAZE_SPEED / norm } else { 1.0 };
    [want[0] * k, want[1] * k]
}

/// Two trajectory families: start region -> midpoint -> dead end (family
/// "a"), and midpoint region -> goal (family "b", starting at the midpoint
/// or in `MAZE_B_START_BOX`).
/// No trajectory covers start to goal.
pub fn gen_maze_dataset(n_trajectories: usize, seed: u64) -> Result<OfflineDataset> {
    let n_mid = (n_trajectories as f64 * MAZE_B_MIDPOINT_FRACTION).round().max(1.0) as usize;
    let n_box = (n_trajectories as f64 * MAZE_B_BOX_FRACTION).round() as usize;
    if n_trajectories <= n_mid + n_box {
        return Err(Error::usage(format!("maze dataset needs more than {} trajectories", n_mid + n_box)));
    }
    let n_a = n_trajectories - n_mid - n_box;
    let streams = SeedStreams::new(seed);
    let mut init = streams.stream("maze-data-init");
    let mut policy = streams.stream("maze-data-policy");
    let mut dyn_noise = streams.stream("maze-data-dynamics");
    let noise = Normal::new(0.0, MAZE_NOISE_STD).expect("positive std");
    let act_noise = Normal::new(0.0, MAZE_ACTION_NOISE).expect("positive std");
    let mut b = DatasetBuilder::new(2, 2);

    for k in 0..n_trajectories {
        let family_a = k < n_a;
        let (mut s, legs): ([f64; 2], Vec<([f64; 2], usize)>) = if family_a {
            let s = [
                MAZE_START[0] + init.gen_range(-MAZE_START_JITTER..=MAZE_START_JITTER),
                MAZE_START[1] + init.gen_range(-MAZE_START_JITTER..=MAZE_START_JITTER),
            ];
            (s, vec![(MAZE_MIDPOINT, MAZE_A_MAX_STEPS), (MAZE_DEAD_END, MAZE_DEAD_END_STEPS)])
        } else {
            let s = if k < n_a + n_mid {
                [
                    MAZE_MIDPOINT[0] + init.gen_range(-MAZE_START_JITTER..=MAZE_START_JITTER),
                    MAZE_MIDPOINT[1] + init.gen_range(-MAZE_START_JITTER..=MAZE_START_JITTER),
                ]
            } else {
                let [x0, y0, x1, y1] = MAZE_B_START_BOX;
                [init.gen_range(x0..=x1), init.gen_range(y0..=y1)]
            };
            let mut legs = Vec::with_capacity(3);
            if s[0] < MAZE_CLEARANCE_X {
                legs.push((MAZE_CLEARANCE, MAZE_B_MAX_STEPS));
            }
            legs.push((MAZE_WAYPOINT, MAZE_B_MAX_STEPS));
            legs.push((MAZE_GOAL, MAZE_B_MAX_STEPS));
            (s, legs)
        };
        let origin = s;
        let start = b.len();
        'legs: for (leg, &(target, max_steps)) in legs.iter().enumerate() {
            let last = leg + 1 == legs.len();
            for _ in 0..max_steps {
                if !last && dist(s, target) < MAZE_WAYPOINT_TOL {
                    break;
                }
                let u = steer(s, target);
                let a = [
                    (u[0] + act_noise.sample(&mut policy)).clamp(-1.0, 1.0),
                    (u[1] + act_noise.sample(&mut policy)).clamp(-1.0, 1.0),
                ];
                let (next, r, done) = PointMaze::transition(s, &a, [noise.sample(&mut dyn_noise), noise.sample(&mut dyn_noise)]);
                b.push(&s, &a, r, &next, done);
                s = next;
                if done {
                    break 'legs;
                }
            }
        }
        b.trajectories.push(TrajectoryInfo {
            family: if family_a { "a".into() } else { "b".into() },
            start,
            len: b.len() - start,
            origin: origin.to_vec(),
            terminus: s.to_vec(),
        });
    }
    b.finish("maze", seed)
}

/// Every stored transition is consistent with the maze dynamics.
pub fn verify_dataset(d: &OfflineDataset) -> Result<()> {
    for i in 0..d.len() {
        let s = [d.states.get(i, 0), d.states.get(i, 1)];
        let ns = [d.next_states.get(i, 0), d.next_states.get(i, 1)];
        if !PointMaze::consistent(s, d.actions.row(i), ns) {
            return Err(Error::Format {
                path: "maze dataset".into(),
                reason: format!("row {i}: {s:?} -> {ns:?} not reachable"),
            });
        }
        let goal = PointMaze::in_goal(ns);
        if goal != (d.dones[i] == 1.0) || (d.rewards[i] == 1.0) != goal {
            return Err(Error::Format {
                path: "maze dataset".into(),
                reason: format!("row {i}: reward/done disagree with goal membership"),
            });
        }
    }
    Ok(())
}
