//! Frozen geometry and data-generation constants for the toy tasks.
//!
//! Rationale: the bandit needs a clearly better mode that the data never
//! visits. The data comes from two suboptimal regions, the low mode and a
//! ring around the high mode, so a reward model fit on it can only reveal
//! the high mode by interpolating into the unvisited hole of the ring. The maze needs a branch point where the
//! data mostly turns the wrong way: the first family runs from the start to
//! the midpoint and then drifts into a dead end, the second runs to the goal
//! from the midpoint (rarely) or from states above the first family's path
//! (often), so it is thin exactly where the first family branches off. Cloning follows the majority
//! at the branch, while a value that stitches the two families does not.

/// Bandit actions live in `[-1, 1]^2`.
pub const BANDIT_ACTION_LOW: f64 = -1.0;
pub const BANDIT_ACTION_HIGH: f64 = 1.0;
pub const BANDIT_HIGH_CENTER: [f64; 2] = [0.6, 0.6];
pub const BANDIT_HIGH_HEIGHT: f64 = 1.0;
pub const BANDIT_LOW_CENTER: [f64; 2] = [-0.6, -0.6];
pub const BANDIT_LOW_HEIGHT: f64 = 0.6;
/// Standard deviation of both Gaussian bumps.
pub const BANDIT_BUMP_SCALE: f64 = 0.3;
/// Spread of dataset actions around the low mode.
pub const BANDIT_DATA_STD: f64 = 0.15;
/// The rest of the data lies on a ring around the high mode, radius drawn
/// uniformly from `[INNER, OUTER]`. Its rewards are below the low mode's.
pub const BANDIT_RING_INNER: f64 = 0.4;
pub const BANDIT_RING_OUTER: f64 = 0.6;
pub const BANDIT_RING_SHARE: f64 = 0.5;

/// Maze states live in `[0, 1]^2`, actions in `[-1, 1]^2`.
pub const MAZE_STEP_SCALE: f64 = 0.1;
pub const MAZE_NOISE_STD: f64 = 0.01;
pub const MAZE_HORIZON: usize = 100;
pub const MAZE_GOAL: [f64; 2] = [0.15, 0.75];
pub const MAZE_GOAL_RADIUS: f64 = 0.1;
pub const MAZE_START: [f64; 2] = [0.15, 0.2];
/// Half-width of the uniform jitter around the start and family anchors.
pub const MAZE_START_JITTER: f64 = 0.03;
pub const MAZE_MIDPOINT: [f64; 2] = [0.85, 0.22];
pub const MAZE_MIDPOINT_RADIUS: f64 = 0.05;
/// The second family passes here on its way around the wall end.
pub const MAZE_WAYPOINT: [f64; 2] = [0.85, 0.62];
/// Where the first family drifts after the midpoint. No reward there.
pub const MAZE_DEAD_END: [f64; 2] = [0.92, 0.04];
/// Axis-aligned wall segments `[x0, y0, x1, y1]`.
pub const MAZE_WALLS: [[f64; 4]; 1] = [[0.0, 0.5, 0.7, 0.5]];

/// Both families steer toward their target at this action norm, slowing
/// down to land on it, with isotropic Gaussian action noise.
pub const MAZE_SPEED: f64 = 0.8;
pub const MAZE_ACTION_NOISE: f64 = 0.1;
/// A waypoint counts as reached within this distance.
pub const MAZE_WAYPOINT_TOL: f64 = 0.02;
pub const MAZE_A_MAX_STEPS: usize = 20;
pub const MAZE_DEAD_END_STEPS: usize = 10;
pub const MAZE_B_MAX_STEPS: usize = 30;
/// Shares of trajectories in the second family: a few start at the
/// midpoint itself (with the start jitter), the rest uniformly in a box
/// above the first family's path, reaching under the wall so the longer
/// route from there shows up in the data.
pub const MAZE_B_MIDPOINT_FRACTION: f64 = 0.01;
pub const MAZE_B_BOX_FRACTION: f64 = 0.26;
/// `[x0, y0, x1, y1]`
pub const MAZE_B_START_BOX: [f64; 4] = [0.55, 0.4, 0.95, 0.48];
/// Second-family starts left of this x first steer right to clear the wall end.
pub const MAZE_CLEARANCE_X: f64 = 0.78;
pub const MAZE_CLEARANCE: [f64; 2] = [0.8, 0.45];

/// Chain MDP: three one-hot states visited in order, action-independent rewards.
pub const CHAIN_REWARDS: [f64; 3] = [0.1, 0.2, 1.0];
pub const CHAIN_GAMMA: f64 = 0.9;
