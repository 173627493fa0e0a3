//! Particle transport along a kernel-smoothed value gradient.
//!
//! For particles `a_1..a_N` at one state the velocity at `x` is
//!
//! ```text
//! maxent:      phi(x) = 1/N sum_j [ k(a_j, x) grad R(a_j) / alpha + grad_{a_j} k(a_j, x) ]
//! w/o maxent:  phi(x) = 1/N sum_j   k(a_j, x) grad R(a_j)
//! ```
//!
//! and one step moves every particle by `epsilon * phi` (or an Adam step on
//! `-phi` with learning rate `epsilon`). Kernel weights and kernel gradients
//! are constants with respect to the score: only `grad R` is differentiated.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::kernels::{self, BandwidthPolicy};

/// Provides `grad_a R(s, a)` for row-aligned batches of states and actions.
pub trait ScoreOracle {
    fn action_gradients(&self, states: &Tensor, actions: &Tensor) -> Result<Tensor>;
}

/// A score oracle that can also report the value itself, for selection.
pub trait ValueFunction: ScoreOracle {
    fn values(&self, states: &Tensor, actions: &Tensor) -> Result<Vec<f64>>;
}

impl<T: ScoreOracle + ?Sized> ScoreOracle for &T {
    fn action_gradients(&self, states: &Tensor, actions: &Tensor) -> Result<Tensor> {
        (**self).action_gradients(states, actions)
    }
}

impl<T: ValueFunction + ?Sized> ValueFunction for &T {
    fn values(&self, states: &Tensor, actions: &Tensor) -> Result<Vec<f64>> {
        (**self).values(states, actions)
    }
}

/// Axis-aligned box `[low, high]^d` for actions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionBox {
    pub low: f64,
    pub high: f64,
}

impl ActionBox {
    pub const UNIT: ActionBox = ActionBox { low: -1.0, high: 1.0 };

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.low, self.high)
    }

    pub fn clamp_all(&self, values: &mut [f64]) {
        values.iter_mut().for_each(|v| *v = self.clamp(*v));
    }

    pub fn contains(&self, values: &[f64]) -> bool {
        values.iter().all(|&v| v >= self.low && v <= self.high)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParticleOptimizer {
    #[default]
    Plain,
    Adam,
}

/// The transport budget and how it is spent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    /// Flow steps used inside TD targets.
    pub l_train: usize,
    /// Flow steps used when acting.
    pub l_test: usize,
    pub epsilon: f64,
    /// Temperature; only read when `maxent` is set.
    pub alpha: f64,
    pub num_particles: usize,
    pub maxent: bool,
    pub bandwidth: BandwidthPolicy,
    pub optimizer: ParticleOptimizer,
    pub clip_bounds: Option<ActionBox>,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            l_train: 1,
            l_test: 1,
            epsilon: 0.05,
            alpha: 1.0,
            num_particles: 5,
            maxent: false,
            bandwidth: BandwidthPolicy::MedianHeuristic,
            optimizer: ParticleOptimizer::Plain,
            clip_bounds: Some(ActionBox::UNIT),
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::config("flow.epsilon", format!("must be > 0, got {}", self.epsilon)));
        }
        if self.maxent && !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::config("flow.alpha", format!("must be > 0 in maxent mode, got {}", self.alpha)));
        }
        if self.num_particles == 0 {
            return Err(Error::config("flow.num_particles", "must be >= 1"));
        }
        if let Some(b) = self.clip_bounds {
            if !(b.low < b.high) {
                return Err(Error::config("flow.clip_bounds", format!("low {} must be below high {}", b.low, b.high)));
            }
        }
        self.bandwidth.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

/// `N` particles in action space: the implicit policy at one state.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleSet {
    points: Tensor,
    step_count: usize,
    moments: Option<Moments>,
}

impl ParticleSet {
    pub fn new(points: Tensor) -> Result<Self> {
        if points.ndim() != 2 || points.cols() == 0 {
            return Err(Error::shape("ParticleSet::new", "[N, d]", format!("{:?}", points.shape())));
        }
        if points.rows() == 0 {
            return Err(Error::usage("a particle set needs at least one particle"));
        }
        if let Some(i) = points.first_non_finite() {
            return Err(Error::NonFinite {
                what: "particle",
                index: i / points.cols(),
            });
        }
        Ok(ParticleSet {
            points,
            step_count: 0,
            moments: None,
        })
    }

    pub fn points(&self) -> &Tensor {
        &self.points
    }

    pub fn into_points(self) -> Tensor {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.cols()
    }

    pub fn step_count(&self) -> usize {
        self.step_count
    }

    pub fn particle(&self, i: usize) -> &[f64] {
        self.points.row(i)
    }

    /// True once an Adam step has created per-particle moment estimates.
    pub fn has_optimizer_state(&self) -> bool {
        self.moments.is_some()
    }
}

/// Velocity of every particle given its precomputed score `grad R(a_j)`.
pub fn phi_from_scores(points: &Tensor, scores: &Tensor, cfg: &FlowConfig) -> Result<Tensor> {
    if scores.shape() != points.shape() {
        return Err(Error::shape("phi", format!("{:?}", points.shape()), format!("{:?}", scores.shape())));
    }
    if let Some(i) = scores.first_non_finite() {
        return Err(Error::NonFinite {
            what: "score",
            index: i / scores.cols(),
        });
    }
    let (n, d) = (points.rows(), points.cols());
    let inv_n = 1.0 / n as f64;
    let mut out = vec![0.0; n * d];

    if cfg.maxent {
        let (grad_k, k) = kernels::kernel_grad_wrt_source(points, points, cfg.bandwidth)?;
        let gk = grad_k.data();
        for i in 0..n {
            let o = &mut out[i * d..(i + 1) * d];
            for j in 0..n {
                let kji = k.get(j, i);
                let base = (j * n + i) * d;
                for c in 0..d {
                    o[c] += kji * scores.get(j, c) / cfg.alpha + gk[base + c];
                }
            }
            o.iter_mut().for_each(|v| *v *= inv_n);
        }
    } else {
        let k = kernels::rbf_kernel(points, points, cfg.bandwidth)?;
        for i in 0..n {
            let o = &mut out[i * d..(i + 1) * d];
            for j in 0..n {
                let kji = k.get(j, i);
                o.iter_mut().zip(scores.row(j)).for_each(|(v, s)| *v += kji * s);
            }
            o.iter_mut().for_each(|v| *v *= inv_n);
        }
    }
    Tensor::matrix(n, d, out)
}

/// Velocity of every particle at `state`.
pub fn phi(state: &[f64], particles: &ParticleSet, oracle: &dyn ScoreOracle, cfg: &FlowConfig) -> Result<Tensor> {
    let states = Tensor::repeat_row(state, particles.len());
    let scores = oracle.action_gradients(&states, particles.points())?;
    phi_from_scores(particles.points(), &scores, cfg)
}

fn apply_velocity(set: &mut ParticleSet, velocity: &Tensor, cfg: &FlowConfig) {
    match cfg.optimizer {
        ParticleOptimizer::Plain => {
            set.points
                .data_mut()
                .iter_mut()
                .zip(velocity.data())
                .for_each(|(p, v)| *p += cfg.epsilon * v);
        }
        ParticleOptimizer::Adam => {
            const B1: f64 = 0.9;
            const B2: f64 = 0.999;
            const EPS: f64 = 1e-8;
            let len = set.points.len();
            let mom = set.moments.get_or_insert_with(|| Moments {
                m: vec![0.0; len],
                v: vec![0.0; len],
                t: 0,
            });
            mom.t += 1;
            let bc1 = 1.0 - B1.powi(mom.t);
            let bc2 = 1.0 - B2.powi(mom.t);
            for (((p, &vel), m), v) in set
                .points
                .data_mut()
                .iter_mut()
                .zip(velocity.data())
                .zip(mom.m.iter_mut())
                .zip(mom.v.iter_mut())
            {
                // descent on -phi
                let g = -vel;
                *m = B1 * *m + (1.0 - B1) * g;
                *v = B2 * *v + (1.0 - B2) * g * g;
                *p -= cfg.epsilon * (*m / bc1) / ((*v / bc2).sqrt() + EPS);
            }
        }
    }
    if let Some(b) = cfg.clip_bounds {
        b.clamp_all(set.points.data_mut());
    }
    set.step_count += 1;
}

/// One flow step.
pub fn step(particles: &ParticleSet, state: &[f64], oracle: &dyn ScoreOracle, cfg: &FlowConfig) -> Result<ParticleSet> {
    let velocity = phi(state, particles, oracle, cfg)?;
    let mut next = particles.clone();
    apply_velocity(&mut next, &velocity, cfg);
    Ok(next)
}

/// Apply `steps` flow steps; `steps == 0` returns the input untouched.
pub fn transport(particles: &ParticleSet, state: &[f64], oracle: &dyn ScoreOracle, cfg: &FlowConfig, steps: usize) -> Result<ParticleSet> {
    let mut sets = vec![particles.clone()];
    let states = Tensor::from_rows(&[state])?;
    transport_batch(&mut sets, &states, oracle, cfg, steps, None)?;
    Ok(sets.pop().expect("one set in, one set out"))
}

/// Like [`transport`], recording every intermediate position.
pub fn transport_traced(
    particles: &ParticleSet,
    state: &[f64],
    oracle: &dyn ScoreOracle,
    cfg: &FlowConfig,
    steps: usize,
) -> Result<(ParticleSet, Trajectory)> {
    let mut sets = vec![particles.clone()];
    let states = Tensor::from_rows(&[state])?;
    let mut trace = Trajectory::default();
    transport_batch(&mut sets, &states, oracle, cfg, steps, Some(&mut trace))?;
    Ok((sets.pop().expect("one set in, one set out"), trace))
}

/// Transport many independent particle sets, one per row of `states`,
/// with a single oracle call per step. Only the first set is traced.
pub fn transport_batch(
    sets: &mut [ParticleSet],
    states: &Tensor,
    oracle: &dyn ScoreOracle,
    cfg: &FlowConfig,
    steps: usize,
    mut trace: Option<&mut Trajectory>,
) -> Result<()> {
    if sets.len() != states.rows() {
        return Err(Error::shape("transport_batch", format!("{} states", sets.len()), states.rows()));
    }
    if let Some(t) = trace.as_deref_mut() {
        if let Some(first) = sets.first() {
            t.record(first.step_count, first.points());
        }
    }
    if steps == 0 || sets.is_empty() {
        return Ok(());
    }
    let d = sets[0].dim();
    if sets.iter().any(|s| s.dim() != d) {
        return Err(Error::usage("particle sets in one batch must share the action dimension"));
    }
    let mut state_rows = Vec::new();
    for (g, set) in sets.iter().enumerate() {
        for _ in 0..set.len() {
            state_rows.extend_from_slice(states.row(g));
        }
    }
    let total: usize = sets.iter().map(ParticleSet::len).sum();
    let stacked_states = Tensor::matrix(total, states.cols(), state_rows)?;

    for _ in 0..steps {
        let mut stacked = Vec::with_capacity(total * d);
        for set in sets.iter() {
            stacked.extend_from_slice(set.points.data());
        }
        let actions = Tensor::matrix(total, d, stacked)?;
        let scores = oracle.action_gradients(&stacked_states, &actions)?;
        if scores.shape() != actions.shape() {
            return Err(Error::shape("score oracle", format!("{:?}", actions.shape()), format!("{:?}", scores.shape())));
        }
        let mut offset = 0;
        for set in sets.iter_mut() {
            let n = set.len();
            let s = scores.slice_rows(offset, offset + n);
            let velocity = phi_from_scores(&set.points, &s, cfg)?;
            apply_velocity(set, &velocity, cfg);
            offset += n;
        }
        if let Some(t) = trace.as_deref_mut() {
            t.record(sets[0].step_count, sets[0].points());
        }
    }
    Ok(())
}

/// Inputs of the MMD budget bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransportBudget {
    pub epsilon: f64,
    pub steps: usize,
    pub sigma: f64,
    pub alpha: f64,
    /// Lipschitz constant `c` of the value in the action (sup-norm of its gradient).
    pub lipschitz: f64,
}

/// Upper bound on the squared MMD between the initial particles and the
/// particles after `steps` maxent flow steps:
/// `2 eps L / (sigma sqrt(e)) * (c / alpha + 1 / (sigma sqrt(e)))`.
pub fn mmd_bound(budget: &TransportBudget) -> Result<f64> {
    for (name, v) in [
        ("epsilon", budget.epsilon),
        ("sigma", budget.sigma),
        ("alpha", budget.alpha),
        ("lipschitz", budget.lipschitz),
    ] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::usage(format!("mmd_bound: {name} must be positive, got {v}")));
        }
    }
    let kernel_lip = 1.0 / (budget.sigma * std::f64::consts::E.sqrt());
    let velocity_bound = budget.lipschitz / budget.alpha + kernel_lip;
    Ok(2.0 * budget.epsilon * budget.steps as f64 * kernel_lip * velocity_bound)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRow {
    pub step: usize,
    pub particle: usize,
    pub coords: Vec<f64>,
}

/// Per-step particle positions, dumpable as CSV `step,particle,x0,x1,...`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub rows: Vec<TrajectoryRow>,
}

impl Trajectory {
    pub fn record(&mut self, step: usize, points: &Tensor) {
        for i in 0..points.rows() {
            self.rows.push(TrajectoryRow {
                step,
                particle: i,
                coords: points.row(i).to_vec(),
            });
        }
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn num_particles(&self) -> usize {
        self.rows.iter().map(|r| r.particle + 1).max().unwrap_or(0)
    }

    /// Path of one particle in step order.
    pub fn path(&self, particle: usize) -> Vec<&[f64]> {
        let mut rows: Vec<&TrajectoryRow> = self.rows.iter().filter(|r| r.particle == particle).collect();
        rows.sort_by_key(|r| r.step);
        rows.into_iter().map(|r| r.coords.as_slice()).collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let dim = self.rows.first().map_or(0, |r| r.coords.len());
        write!(w, "step,particle")?;
        for c in 0..dim {
            write!(w, ",x{c}")?;
        }
        writeln!(w)?;
        for r in &self.rows {
            write!(w, "{},{}", r.step, r.particle)?;
            for v in &r.coords {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Parse CSV written by [`Trajectory::write_csv`]; `#` lines are skipped.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let bad = |reason: String| Error::Format {
            path: "trajectory csv".into(),
            reason,
        };
        let mut rows = Vec::new();
        let mut header_seen = false;
        for line in r.lines() {
            let line = line?;
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            if !header_seen {
                header_seen = true;
                continue;
            }
            let mut fields = line.split(',');
            let step = fields.next().and_then(|v| v.parse().ok()).ok_or_else(|| bad(format!("bad step in {line:?}")))?;
            let particle = fields.next().and_then(|v| v.parse().ok()).ok_or_else(|| bad(format!("bad particle in {line:?}")))?;
            let coords = fields
                .map(|v| v.parse::<f64>().map_err(|e| bad(format!("{e} in {line:?}"))))
                .collect::<Result<Vec<_>>>()?;
            rows.push(TrajectoryRow { step, particle, coords });
        }
        Ok(Trajectory { rows })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// grad R = a constant vector everywhere.
    struct ConstScore(Vec<f64>);

    impl ScoreOracle for ConstScore {
        fn action_gradients(&self, _s: &Tensor, actions: &Tensor) -> Result<Tensor> {
            Ok(Tensor::repeat_row(&self.0, actions.rows()))
        }
    }

    struct NanScore;

    impl ScoreOracle for NanScore {
        fn action_gradients(&self, _s: &Tensor, actions: &Tensor) -> Result<Tensor> {
            let mut t = Tensor::zeros(actions.shape());
            t.row_mut(actions.rows() - 1)[0] = f64::NAN;
            Ok(t)
        }
    }

    fn set(rows: &[&[f64]]) -> ParticleSet {
        ParticleSet::new(Tensor::from_rows(rows).unwrap()).unwrap()
    }

    fn plain(eps: f64) -> FlowConfig {
        FlowConfig {
            epsilon: eps,
            clip_bounds: None,
            ..FlowConfig::default()
        }
    }

    #[test]
    fn zero_velocity_is_a_fixed_point() {
        let p = set(&[&[0.1, 0.2], &[0.5, -0.3]]);
        let next = step(&p, &[0.0], &ConstScore(vec![0.0, 0.0]), &plain(0.3)).unwrap();
        assert_eq!(next.points(), p.points());
        assert_eq!(next.step_count(), 1);
    }

    #[test]
    fn single_plain_step_arithmetic() {
        let p = set(&[&[0.0, 0.0]]);
        let next = step(&p, &[0.0], &ConstScore(vec![1.0, 0.0]), &plain(0.1)).unwrap();
        assert_eq!(next.particle(0), &[0.1, 0.0]);
    }

    #[test]
    fn clipping_to_the_action_box() {
        let p = set(&[&[0.95, 0.0]]);
        let cfg = FlowConfig {
            epsilon: 0.1,
            clip_bounds: Some(ActionBox::UNIT),
            ..FlowConfig::default()
        };
        let next = step(&p, &[0.0], &ConstScore(vec![1.0, 1.0]), &cfg).unwrap();
        assert_eq!(next.particle(0), &[1.0, 0.1]);
    }

    #[test]
    fn zero_steps_returns_input() {
        let p = set(&[&[0.3], &[-0.2]]);
        let out = transport(&p, &[0.0], &ConstScore(vec![1.0]), &plain(0.5), 0).unwrap();
        assert_eq!(out, p);
    }

    #[test]
    fn single_particle_modes() {
        let p = set(&[&[0.4, -0.4]]);
        let score = ConstScore(vec![0.7, -1.1]);
        let v = phi(&[0.0], &p, &score, &plain(1.0)).unwrap();
        assert_eq!(v.data(), &[0.7, -1.1]);
        let cfg = FlowConfig {
            maxent: true,
            alpha: 0.5,
            ..plain(1.0)
        };
        let v = phi(&[0.0], &p, &score, &cfg).unwrap();
        assert_eq!(v.data(), &[1.4, -2.2]);
    }

    #[test]
    fn non_finite_score_names_the_particle() {
        let p = set(&[&[0.0], &[1.0], &[2.0]]);
        let err = step(&p, &[0.0], &NanScore, &plain(0.1)).unwrap_err();
        assert!(matches!(err, Error::NonFinite { what: "score", index: 2 }));
    }

    #[test]
    fn adam_particles_keep_moments() {
        let p = set(&[&[0.0]]);
        let cfg = FlowConfig {
            optimizer: ParticleOptimizer::Adam,
            ..plain(0.1)
        };
        let next = step(&p, &[0.0], &ConstScore(vec![2.0]), &cfg).unwrap();
        assert!(next.has_optimizer_state());
        assert!((next.particle(0)[0] - 0.1).abs() < 1e-6);
    }

    #[test]
    fn bound_examples() {
        let b = TransportBudget {
            epsilon: 0.05,
            steps: 1,
            sigma: 1.0,
            alpha: 1.0,
            lipschitz: 1.0,
        };
        let v = mmd_bound(&b).unwrap();
        let r = 1.0 / std::f64::consts::E.sqrt();
        assert!((v - 0.1 * r * (1.0 + r)).abs() < 1e-15);
        assert!((v - 0.09744).abs() < 1e-5);
        assert_eq!(mmd_bound(&TransportBudget { steps: 0, ..b }).unwrap(), 0.0);
        assert_eq!(mmd_bound(&TransportBudget { steps: 2, ..b }).unwrap(), 2.0 * v);
        assert!(mmd_bound(&TransportBudget { sigma: 0.0, ..b }).is_err());
        assert!(mmd_bound(&TransportBudget { alpha: -1.0, ..b }).is_err());
    }

    #[test]
    fn trajectory_csv_round_trip() {
        let p = set(&[&[0.0, 0.0], &[1.0, 1.0]]);
        let (_, trace) = transport_traced(&p, &[0.0], &ConstScore(vec![1.0, 0.5]), &plain(0.25), 2).unwrap();
        assert_eq!(trace.rows.len(), 6);
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let back = Trajectory::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, trace);
        assert_eq!(back.path(1).len(), 3);
    }

    #[test]
    fn config_validation() {
        assert!(FlowConfig { epsilon: 0.0, ..FlowConfig::default() }.validate().is_err());
        assert!(FlowConfig { maxent: true, alpha: 0.0, ..FlowConfig::default() }.validate().is_err());
        assert!(FlowConfig { maxent: false, alpha: 0.0, ..FlowConfig::default() }.validate().is_ok());
        assert!(FlowConfig { num_particles: 0, ..FlowConfig::default() }.validate().is_err());
    }
}
