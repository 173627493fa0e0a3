//! Twin Q networks with target copies, particle-averaged TD targets, soft
//! target updates and the distilled action-gradient network.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, Adam, Graph, Mlp, MlpSpec, Tensor, Var};
use crate::error::{Error, Result};
use crate::flow::{self, FlowConfig, ParticleSet, ScoreOracle, ValueFunction};
use crate::refmodel::FlowMatchModel;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Min,
    #[default]
    Mean,
}

impl Aggregation {
    pub fn apply(self, q1: f64, q2: f64) -> f64 {
        match self {
            Aggregation::Min => q1.min(q2),
            Aggregation::Mean => 0.5 * (q1 + q2),
        }
    }
}

/// Which pair of critics to read.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Nets {
    Online,
    Target,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriticConfig {
    pub hidden_dims: Vec<usize>,
    pub activation: Activation,
    pub gamma: f64,
    pub tau: f64,
    pub lr: f64,
    /// Aggregation of the twin target critics in the TD target and at selection.
    pub aggregation: Aggregation,
    /// Aggregation used for the transport score.
    pub score_aggregation: Aggregation,
}

impl Default for CriticConfig {
    fn default() -> Self {
        CriticConfig {
            hidden_dims: vec![64, 64, 64],
            activation: Activation::Gelu,
            gamma: 0.99,
            tau: 5e-3,
            lr: 3e-4,
            aggregation: Aggregation::Mean,
            score_aggregation: Aggregation::Mean,
        }
    }
}

impl CriticConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::config("critic.gamma", format!("must lie in [0, 1), got {}", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::config("critic.tau", format!("must lie in [0, 1], got {}", self.tau)));
        }
        if !(self.lr > 0.0) {
            return Err(Error::config("critic.lr", format!("must be > 0, got {}", self.lr)));
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::config("critic.hidden_dims", "layer sizes must be >= 1"));
        }
        Ok(())
    }
}

/// A minibatch of transitions, row-aligned.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub states: Tensor,
    pub actions: Tensor,
    pub rewards: Vec<f64>,
    pub next_states: Tensor,
    pub dones: Vec<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.rewards.len();
        for (name, rows) in [
            ("states", self.states.rows()),
            ("actions", self.actions.rows()),
            ("next_states", self.next_states.rows()),
            ("dones", self.dones.len()),
        ] {
            if rows != n {
                return Err(Error::shape("batch", format!("{n} rows"), format!("{rows} {name}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValueModel {
    pub q1: Mlp,
    pub q2: Mlp,
    pub q1_target: Mlp,
    pub q2_target: Mlp,
    pub aggregation: Aggregation,
    pub score_aggregation: Aggregation,
    pub gamma: f64,
    pub tau: f64,
    state_dim: usize,
    action_dim: usize,
}

fn concat(states: &Tensor, actions: &Tensor) -> Result<Tensor> {
    if states.rows() != actions.rows() {
        return Err(Error::shape("critic input", format!("{} rows", states.rows()), actions.rows()));
    }
    let (ds, da) = (states.cols(), actions.cols());
    let mut data = Vec::with_capacity(states.rows() * (ds + da));
    for i in 0..states.rows() {
        data.extend_from_slice(states.row(i));
        data.extend_from_slice(actions.row(i));
    }
    Tensor::matrix(states.rows(), ds + da, data)
}

impl ValueModel {
    /// Fresh critics; target copies start equal to the online nets.
    pub fn new<R: Rng + ?Sized>(state_dim: usize, action_dim: usize, cfg: &CriticConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let spec = MlpSpec::new(state_dim + action_dim, cfg.hidden_dims.clone(), 1, cfg.activation)?;
        let q1 = Mlp::init(spec.clone(), rng)?;
        let q2 = Mlp::init(spec, rng)?;
        Self::from_nets(q1.clone(), q2.clone(), q1, q2, state_dim, action_dim, cfg)
    }

    pub fn from_nets(q1: Mlp, q2: Mlp, q1_target: Mlp, q2_target: Mlp, state_dim: usize, action_dim: usize, cfg: &CriticConfig) -> Result<Self> {
        for net in [&q1, &q2, &q1_target, &q2_target] {
            if net.spec().input_dim != state_dim + action_dim || net.spec().output_dim != 1 {
                return Err(Error::shape("ValueModel", format!("{} -> 1", state_dim + action_dim), format!("{:?}", net.spec())));
            }
        }
        Ok(ValueModel {
            q1,
            q2,
            q1_target,
            q2_target,
            aggregation: cfg.aggregation,
            score_aggregation: cfg.score_aggregation,
            gamma: cfg.gamma,
            tau: cfg.tau,
            state_dim,
            action_dim,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn pair(&self, nets: Nets) -> (&Mlp, &Mlp) {
        match nets {
            Nets::Online => (&self.q1, &self.q2),
            Nets::Target => (&self.q1_target, &self.q2_target),
        }
    }

    /// `(Q1, Q2)` for each row.
    pub fn q_values(&self, nets: Nets, states: &Tensor, actions: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
        let x = concat(states, actions)?;
        let (a, b) = self.pair(nets);
        Ok((a.forward(&x)?.into_data(), b.forward(&x)?.into_data()))
    }

    pub fn aggregated(&self, nets: Nets, agg: Aggregation, states: &Tensor, actions: &Tensor) -> Result<Vec<f64>> {
        let (q1, q2) = self.q_values(nets, states, actions)?;
        Ok(q1.iter().zip(&q2).map(|(&a, &b)| agg.apply(a, b)).collect())
    }

    /// `grad_a agg(Q1, Q2)(s, a)` for each row, through the tape.
    pub fn action_grad(&self, nets: Nets, agg: Aggregation, states: &Tensor, actions: &Tensor) -> Result<Tensor> {
        if actions.cols() != self.action_dim || states.cols() != self.state_dim {
            return Err(Error::shape(
                "action_grad",
                format!("[n, {}] / [n, {}]", self.state_dim, self.action_dim),
                format!("{:?} / {:?}", states.shape(), actions.shape()),
            ));
        }
        let (n1, n2) = self.pair(nets);
        let mut g = Graph::new();
        let p1 = n1.bind(&mut g, false);
        let p2 = n2.bind(&mut g, false);
        let s = g.constant(states.clone());
        let a = g.input(actions.clone());
        let x = g.concat_cols(s, a)?;
        let q1 = n1.forward_on(&mut g, &p1, x)?;
        let q2 = n2.forward_on(&mut g, &p2, x)?;
        let q = aggregate_on(&mut g, agg, q1, q2)?;
        // rows are independent, so the gradient of the sum is the per-row gradient
        let total = g.sum(q)?;
        Ok(g.grad(total, &[a])?.remove(0))
    }

    /// `1/2 mean (Q1 - y)^2 + 1/2 mean (Q2 - y)^2` and its gradients for
    /// `(q1 params, q2 params)`.
    pub fn critic_loss(&self, states: &Tensor, actions: &Tensor, targets: &[f64]) -> Result<(f64, Vec<Tensor>, Vec<Tensor>)> {
        let n = targets.len();
        if n == 0 || states.rows() != n {
            return Err(Error::shape("critic_loss", format!("{} rows", states.rows()), n));
        }
        let x = concat(states, actions)?;
        let mut g = Graph::new();
        let p1 = self.q1.bind(&mut g, true);
        let p2 = self.q2.bind(&mut g, true);
        let xv = g.constant(x);
        let y = g.constant(Tensor::matrix(n, 1, targets.to_vec())?);
        let q1 = self.q1.forward_on(&mut g, &p1, xv)?;
        let q2 = self.q2.forward_on(&mut g, &p2, xv)?;
        let d1 = g.sub(q1, y)?;
        let d2 = g.sub(q2, y)?;
        let s1 = g.square(d1)?;
        let s2 = g.square(d2)?;
        let both = g.add(s1, s2)?;
        let total = g.sum(both)?;
        let loss = g.scale(total, 0.5 / n as f64)?;
        let mut params = p1.clone();
        params.extend_from_slice(&p2);
        let mut grads = g.grad(loss, &params)?;
        let g2 = grads.split_off(p1.len());
        Ok((g.value(loss)?.item(), grads, g2))
    }

    /// One Adam step on both critics against fixed targets; returns the pre-step loss.
    pub fn critic_update(&mut self, opt: &mut CriticOptimizer, batch: &Batch, targets: &[f64]) -> Result<f64> {
        let (loss, g1, g2) = self.critic_loss(&batch.states, &batch.actions, targets)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite { what: "critic loss", index: 0 });
        }
        opt.q1.step(self.q1.params_mut(), &g1)?;
        opt.q2.step(self.q2.params_mut(), &g2)?;
        Ok(loss)
    }

    /// `theta_target <- (1 - tau) theta_target + tau theta`.
    pub fn soft_update(&mut self) {
        let tau = self.tau;
        for (online, target) in [(&self.q1, &mut self.q1_target), (&self.q2, &mut self.q2_target)] {
            for (p, t) in online.params().iter().zip(target.params_mut()) {
                t.data_mut().iter_mut().zip(p.data()).for_each(|(t, &p)| *t = (1.0 - tau) * *t + tau * p);
            }
        }
    }

    /// Euclidean distance between online and target parameters.
    pub fn target_drift(&self) -> f64 {
        let mut sq = 0.0;
        for (online, target) in [(&self.q1, &self.q1_target), (&self.q2, &self.q2_target)] {
            for (p, t) in online.params().iter().zip(target.params()) {
                sq += p.data().iter().zip(t.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            }
        }
        sq.sqrt()
    }

    /// Score and value view of one critic pair.
    pub fn view(&self, nets: Nets, score: Aggregation, select: Aggregation) -> CriticView<'_> {
        CriticView {
            model: self,
            nets,
            score,
            select,
        }
    }
}

fn aggregate_on(g: &mut Graph, agg: Aggregation, q1: Var, q2: Var) -> Result<Var> {
    match agg {
        Aggregation::Min => g.minimum(q1, q2),
        Aggregation::Mean => {
            let s = g.add(q1, q2)?;
            g.scale(s, 0.5)
        }
    }
}

/// Adam state for both online critics.
#[derive(Clone, Debug)]
pub struct CriticOptimizer {
    pub q1: Adam,
    pub q2: Adam,
}

impl CriticOptimizer {
    pub fn new(lr: f64) -> Self {
        CriticOptimizer {
            q1: Adam::new(lr),
            q2: Adam::new(lr),
        }
    }
}

/// A [`ValueModel`] seen as a transport score (`score` aggregation) and a
/// selection value (`select` aggregation).
#[derive(Clone, Copy, Debug)]
pub struct CriticView<'a> {
    pub model: &'a ValueModel,
    pub nets: Nets,
    pub score: Aggregation,
    pub select: Aggregation,
}

impl ScoreOracle for CriticView<'_> {
    fn action_gradients(&self, states: &Tensor, actions: &Tensor) -> Result<Tensor> {
        self.model.action_grad(self.nets, self.score, states, actions)
    }
}

impl ValueFunction for CriticView<'_> {
    fn values(&self, states: &Tensor, actions: &Tensor) -> Result<Vec<f64>> {
        self.model.aggregated(self.nets, self.select, states, actions)
    }
}

/// `y = r + gamma (1 - done) mean_i agg(Q1_t, Q2_t)(s', a_i)` with the `a_i`
/// drawn from the reference model at `s'` and transported `flow.l_train`
/// steps under the target critics' score.
pub fn td_target<R: Rng + ?Sized>(
    model: &ValueModel,
    refmodel: &FlowMatchModel,
    flow_cfg: &FlowConfig,
    batch: &Batch,
    rng: &mut R,
) -> Result<Vec<f64>> {
    batch.validate()?;
    let b = batch.len();
    let n = flow_cfg.num_particles;
    let d = model.action_dim();
    let samples = refmodel.sample_rows(&batch.next_states, n, rng)?;
    let mut sets = (0..b)
        .map(|i| ParticleSet::new(samples.slice_rows(i * n, (i + 1) * n)))
        .collect::<Result<Vec<_>>>()?;
    let view = model.view(Nets::Target, model.score_aggregation, model.aggregation);
    flow::transport_batch(&mut sets, &batch.next_states, &view, flow_cfg, flow_cfg.l_train, None)?;

    let mut actions = Vec::with_capacity(b * n * d);
    let mut states = Vec::with_capacity(b * n * model.state_dim());
    for (i, set) in sets.iter().enumerate() {
        actions.extend_from_slice(set.points().data());
        for _ in 0..n {
            states.extend_from_slice(batch.next_states.row(i));
        }
    }
    let actions = Tensor::matrix(b * n, d, actions)?;
    let states = Tensor::matrix(b * n, model.state_dim(), states)?;
    let q = model.aggregated(Nets::Target, model.aggregation, &states, &actions)?;

    let mut y = Vec::with_capacity(b);
    for i in 0..b {
        let bootstrap = q[i * n..(i + 1) * n].iter().sum::<f64>() / n as f64;
        let v = batch.rewards[i] + model.gamma * (1.0 - batch.dones[i]) * bootstrap;
        if !v.is_finite() {
            return Err(Error::NonFinite { what: "td target", index: i });
        }
        y.push(v);
    }
    Ok(y)
}

/// Regression net `f(s, a) ~ grad_a Q(s, a)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientNet {
    pub net: Mlp,
    state_dim: usize,
    action_dim: usize,
}

impl GradientNet {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, action_dim: usize, hidden: Vec<usize>, activation: Activation, rng: &mut R) -> Result<Self> {
        let spec = MlpSpec::new(state_dim + action_dim, hidden, action_dim, activation)?;
        Self::from_net(Mlp::init(spec, rng)?, state_dim, action_dim)
    }

    pub fn from_net(net: Mlp, state_dim: usize, action_dim: usize) -> Result<Self> {
        if net.spec().input_dim != state_dim + action_dim || net.spec().output_dim != action_dim {
            return Err(Error::shape(
                "GradientNet",
                format!("{} -> {action_dim}", state_dim + action_dim),
                format!("{:?}", net.spec()),
            ));
        }
        Ok(GradientNet { net, state_dim, action_dim })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn predict(&self, states: &Tensor, actions: &Tensor) -> Result<Tensor> {
        self.net.forward(&concat(states, actions)?)
    }

    /// `mean_rows |f(s, a) - target|^2` and its parameter gradients.
    pub fn distill_loss(&self, states: &Tensor, actions: &Tensor, target: &Tensor) -> Result<(f64, Vec<Tensor>)> {
        let n = states.rows();
        if n == 0 {
            return Err(Error::usage("distill on an empty batch"));
        }
        let mut g = Graph::new();
        let p = self.net.bind(&mut g, true);
        let x = g.constant(concat(states, actions)?);
        let f = self.net.forward_on(&mut g, &p, x)?;
        let t = g.constant(target.clone());
        let d = g.sub(f, t)?;
        let sq = g.square(d)?;
        let total = g.sum(sq)?;
        let loss = g.scale(total, 1.0 / n as f64)?;
        let grads = g.grad(loss, &p)?;
        Ok((g.value(loss)?.item(), grads))
    }

    /// One regression step toward the online critics' aggregated action
    /// gradient; returns the pre-step loss.
    pub fn distill(&mut self, opt: &mut Adam, model: &ValueModel, states: &Tensor, actions: &Tensor) -> Result<f64> {
        let target = model.action_grad(Nets::Online, model.score_aggregation, states, actions)?;
        self.distill_toward(opt, states, actions, &target)
    }

    pub fn distill_toward(&mut self, opt: &mut Adam, states: &Tensor, actions: &Tensor, target: &Tensor) -> Result<f64> {
        let (loss, grads) = self.distill_loss(states, actions, target)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite { what: "gradient-net loss", index: 0 });
        }
        opt.step(self.net.params_mut(), &grads)?;
        Ok(loss)
    }
}

impl ScoreOracle for GradientNet {
    fn action_gradients(&self, states: &Tensor, actions: &Tensor) -> Result<Tensor> {
        self.predict(states, actions)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_cfg() -> CriticConfig {
        CriticConfig {
            hidden_dims: vec![8, 8],
            ..CriticConfig::default()
        }
    }

    fn model(seed: u64) -> ValueModel {
        ValueModel::new(2, 2, &small_cfg(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn batch(n: usize, seed: u64) -> Batch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = |r, c| Tensor::matrix(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        Batch {
            states: m(n, 2),
            actions: m(n, 2),
            next_states: m(n, 2),
            rewards: vec![1.0; n],
            dones: vec![0.0; n],
        }
    }

    #[test]
    fn min_never_exceeds_mean() {
        let m = model(1);
        let b = batch(50, 2);
        let lo = m.aggregated(Nets::Online, Aggregation::Min, &b.states, &b.actions).unwrap();
        let mid = m.aggregated(Nets::Online, Aggregation::Mean, &b.states, &b.actions).unwrap();
        assert!(lo.iter().zip(&mid).all(|(a, b)| a <= b));
    }

    #[test]
    fn soft_update_extremes() {
        let mut m = model(3);
        m.q1 = model(4).q1;
        let before = m.q1_target.clone();
        m.tau = 0.0;
        m.soft_update();
        assert_eq!(m.q1_target, before);
        m.tau = 1.0;
        m.soft_update();
        assert_eq!(m.q1_target, m.q1);
        assert_eq!(m.target_drift(), 0.0);
    }

    #[test]
    fn loss_is_half_mean_squared_residuals() {
        let m = model(5);
        let b = batch(7, 6);
        let y: Vec<f64> = (0..7).map(|i| i as f64 * 0.1).collect();
        let (loss, _, _) = m.critic_loss(&b.states, &b.actions, &y).unwrap();
        let (q1, q2) = m.q_values(Nets::Online, &b.states, &b.actions).unwrap();
        let direct: f64 = (0..7).map(|i| 0.5 * (q1[i] - y[i]).powi(2) + 0.5 * (q2[i] - y[i]).powi(2)).sum::<f64>() / 7.0;
        assert!((loss - direct).abs() < 1e-14);
    }

    #[test]
    fn terminal_transitions_ignore_the_bootstrap() {
        let m = model(7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let r = FlowMatchModel::new(2, 2, &Default::default(), None, &mut rng).unwrap();
        let mut b = batch(4, 9);
        b.dones = vec![1.0; 4];
        let y = td_target(&m, &r, &FlowConfig::default(), &b, &mut rng).unwrap();
        assert_eq!(y, vec![1.0; 4]);
    }

    #[test]
    fn critic_update_moves_toward_targets() {
        let mut m = model(10);
        let mut opt = CriticOptimizer::new(1e-2);
        let b = batch(1, 11);
        let losses: Vec<f64> = (0..10).map(|_| m.critic_update(&mut opt, &b, &[2.0]).unwrap()).collect();
        assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
    }

    #[test]
    fn target_params_get_no_gradient_from_the_loss() {
        // the loss only binds online parameters; targets enter through y as plain numbers
        let m = model(12);
        let b = batch(3, 13);
        let (_, g1, g2) = m.critic_loss(&b.states, &b.actions, &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(g1.len(), m.q1.params().len());
        assert_eq!(g2.len(), m.q2.params().len());
    }
}
