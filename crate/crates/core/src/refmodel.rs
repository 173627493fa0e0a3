//! Conditional flow-matching model of the behavior distribution.
//!
//! A velocity net `v(s, x_t, t)` is regressed onto `a - x0` along the straight
//! path `x_t = (1 - t) x0 + t a` from Gaussian noise `x0` to a data action `a`.
//! Sampling integrates the learned field from `t = 0` to `t = 1` with Euler
//! steps and clips the result to the action box.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, Adam, Graph, Mlp, MlpSpec, Tensor};
use crate::error::{Error, Result};
use crate::flow::ActionBox;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefModelConfig {
    pub hidden_dims: Vec<usize>,
    pub activation: Activation,
    pub integration_steps: usize,
    pub lr: f64,
}

impl Default for RefModelConfig {
    fn default() -> Self {
        RefModelConfig {
            hidden_dims: vec![64, 64],
            activation: Activation::Gelu,
            integration_steps: 10,
            lr: 3e-4,
        }
    }
}

impl RefModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.integration_steps == 0 {
            return Err(Error::config("refmodel.integration_steps", "must be >= 1"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::config("refmodel.lr", format!("must be > 0, got {}", self.lr)));
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::config("refmodel.hidden_dims", "layer sizes must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowMatchModel {
    net: Mlp,
    state_dim: usize,
    action_dim: usize,
    integration_steps: usize,
    bounds: Option<ActionBox>,
}

impl FlowMatchModel {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        cfg: &RefModelConfig,
        bounds: Option<ActionBox>,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let spec = MlpSpec::new(state_dim + action_dim + 1, cfg.hidden_dims.clone(), action_dim, cfg.activation)?;
        Self::from_net(Mlp::init(spec, rng)?, state_dim, action_dim, cfg.integration_steps, bounds)
    }

    pub fn from_net(net: Mlp, state_dim: usize, action_dim: usize, integration_steps: usize, bounds: Option<ActionBox>) -> Result<Self> {
        let spec = net.spec();
        if spec.input_dim != state_dim + action_dim + 1 || spec.output_dim != action_dim {
            return Err(Error::shape(
                "FlowMatchModel",
                format!("net {} -> {}", state_dim + action_dim + 1, action_dim),
                format!("net {} -> {}", spec.input_dim, spec.output_dim),
            ));
        }
        if integration_steps == 0 {
            return Err(Error::config("refmodel.integration_steps", "must be >= 1"));
        }
        Ok(FlowMatchModel {
            net,
            state_dim,
            action_dim,
            integration_steps,
            bounds,
        })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn integration_steps(&self) -> usize {
        self.integration_steps
    }

    pub fn bounds(&self) -> Option<ActionBox> {
        self.bounds
    }

    fn net_input(&self, states: &Tensor, x: &Tensor, t: &[f64]) -> Result<Tensor> {
        let n = x.rows();
        if states.rows() != n || t.len() != n || states.cols() != self.state_dim || x.cols() != self.action_dim {
            return Err(Error::shape(
                "refmodel input",
                format!("[{n}, {}] states, [{n}, {}] actions, {n} times", self.state_dim, self.action_dim),
                format!("{:?}, {:?}, {}", states.shape(), x.shape(), t.len()),
            ));
        }
        let width = self.state_dim + self.action_dim + 1;
        let mut data = Vec::with_capacity(n * width);
        for i in 0..n {
            data.extend_from_slice(states.row(i));
            data.extend_from_slice(x.row(i));
            data.push(t[i]);
        }
        Tensor::matrix(n, width, data)
    }

    /// Velocity field at `(s, x_t, t)`, row by row.
    pub fn velocity(&self, states: &Tensor, x: &Tensor, t: &[f64]) -> Result<Tensor> {
        self.net.forward(&self.net_input(states, x, t)?)
    }

    /// Loss and parameter gradients for explicitly supplied `t` and `x0`.
    pub fn fm_loss_with_noise(&self, states: &Tensor, actions: &Tensor, t: &[f64], x0: &Tensor) -> Result<(f64, Vec<Tensor>)> {
        if x0.shape() != actions.shape() {
            return Err(Error::shape("fm_loss", format!("{:?}", actions.shape()), format!("{:?}", x0.shape())));
        }
        let n = actions.rows();
        if n == 0 {
            return Err(Error::usage("fm_loss on an empty batch"));
        }
        let mut xt = Vec::with_capacity(actions.len());
        let mut target = Vec::with_capacity(actions.len());
        for i in 0..n {
            for (a, z) in actions.row(i).iter().zip(x0.row(i)) {
                xt.push((1.0 - t[i]) * z + t[i] * a);
                target.push(a - z);
            }
        }
        let xt = Tensor::matrix(n, self.action_dim, xt)?;
        let target = Tensor::matrix(n, self.action_dim, target)?;
        let input = self.net_input(states, &xt, t)?;

        let mut g = Graph::new();
        let params = self.net.bind(&mut g, true);
        let x = g.constant(input);
        let v = self.net.forward_on(&mut g, &params, x)?;
        let tgt = g.constant(target);
        let diff = g.sub(v, tgt)?;
        let sq = g.square(diff)?;
        let total = g.sum(sq)?;
        let loss = g.scale(total, 1.0 / n as f64)?;
        let grads = g.grad(loss, &params)?;
        Ok((g.value(loss)?.item(), grads))
    }

    /// Draw `t ~ U[0, 1]` and `x0 ~ N(0, I)` per row, then evaluate the loss.
    pub fn fm_loss<R: Rng + ?Sized>(&self, states: &Tensor, actions: &Tensor, rng: &mut R) -> Result<(f64, Vec<Tensor>)> {
        let n = actions.rows();
        let t: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let x0 = standard_normal(n, self.action_dim, rng);
        self.fm_loss_with_noise(states, actions, &t, &x0)
    }

    /// One Adam step on the flow-matching loss; returns the pre-step loss.
    pub fn train_step<R: Rng + ?Sized>(&mut self, opt: &mut Adam, states: &Tensor, actions: &Tensor, rng: &mut R) -> Result<f64> {
        let (loss, grads) = self.fm_loss(states, actions, rng)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite { what: "flow-matching loss", index: 0 });
        }
        opt.step(self.net.params_mut(), &grads)?;
        Ok(loss)
    }

    /// Euler-integrate from the given starting noise, one row per sample.
    pub fn integrate(&self, states: &Tensor, x0: Tensor) -> Result<Tensor> {
        let n = x0.rows();
        let dt = 1.0 / self.integration_steps as f64;
        let mut x = x0;
        for k in 0..self.integration_steps {
            let t = vec![k as f64 * dt; n];
            let v = self.velocity(states, &x, &t)?;
            x.data_mut().iter_mut().zip(v.data()).for_each(|(xi, vi)| *xi += dt * vi);
        }
        if let Some(b) = self.bounds {
            b.clamp_all(x.data_mut());
        }
        Ok(x)
    }

    /// `n` actions at one state.
    pub fn sample<R: Rng + ?Sized>(&self, state: &[f64], n: usize, rng: &mut R) -> Result<Tensor> {
        self.sample_rows(&Tensor::from_rows(&[state])?, n, rng)
    }

    /// `n` actions for every row of `states`, grouped by state: rows
    /// `b * n .. (b + 1) * n` belong to `states.row(b)`.
    pub fn sample_rows<R: Rng + ?Sized>(&self, states: &Tensor, n: usize, rng: &mut R) -> Result<Tensor> {
        if states.ndim() != 2 || states.cols() != self.state_dim {
            return Err(Error::shape("refmodel sample", format!("[B, {}]", self.state_dim), format!("{:?}", states.shape())));
        }
        let b = states.rows();
        let mut rep = Vec::with_capacity(b * n * self.state_dim);
        for i in 0..b {
            for _ in 0..n {
                rep.extend_from_slice(states.row(i));
            }
        }
        let rep = Tensor::matrix(b * n, self.state_dim, rep)?;
        let x0 = standard_normal(b * n, self.action_dim, rng);
        self.integrate(&rep, x0)
    }
}

/// `[rows, cols]` of independent standard normal draws.
pub fn standard_normal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::matrix(rows, cols, data).expect("length matches")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_model(bounds: Option<ActionBox>, steps: usize) -> FlowMatchModel {
        let spec = MlpSpec::new(4, vec![8], 2, Activation::Gelu).unwrap();
        FlowMatchModel::from_net(Mlp::zeros(spec).unwrap(), 1, 2, steps, bounds).unwrap()
    }

    #[test]
    fn zero_net_samples_are_clipped_noise() {
        let m = zero_model(Some(ActionBox::UNIT), 10);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let got = m.sample(&[0.3], 50, &mut rng).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let noise = standard_normal(50, 2, &mut rng);
        let expected = noise.map(|v| v.clamp(-1.0, 1.0));
        assert_eq!(got, expected);
    }

    #[test]
    fn one_euler_step_with_constant_velocity() {
        // zero weights, bias c on the output layer
        let spec = MlpSpec::new(4, vec![3], 2, Activation::Relu).unwrap();
        let mut net = Mlp::zeros(spec).unwrap();
        net.params_mut()[3] = Tensor::vector(vec![0.5, -0.25]);
        let m = FlowMatchModel::from_net(net, 1, 2, 1, None).unwrap();
        let x0 = Tensor::matrix(1, 2, vec![0.1, 0.2]).unwrap();
        let out = m.integrate(&Tensor::matrix(1, 1, vec![0.0]).unwrap(), x0).unwrap();
        assert!((out.data()[0] - 0.6).abs() < 1e-15 && (out.data()[1] + 0.05).abs() < 1e-15);
    }

    #[test]
    fn zero_net_loss_is_target_second_moment() {
        let m = zero_model(None, 10);
        let s = Tensor::matrix(2, 1, vec![0.0, 1.0]).unwrap();
        let a = Tensor::matrix(2, 2, vec![0.5, -0.5, 0.2, 0.1]).unwrap();
        let x0 = Tensor::matrix(2, 2, vec![0.1, 0.3, -1.0, 0.0]).unwrap();
        let (loss, _) = m.fm_loss_with_noise(&s, &a, &[0.3, 0.9], &x0).unwrap();
        let expected = ((0.4f64).powi(2) + 0.8f64.powi(2) + 1.2f64.powi(2) + 0.1f64.powi(2)) / 2.0;
        assert!((loss - expected).abs() < 1e-15);
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = FlowMatchModel::new(2, 2, &RefModelConfig::default(), Some(ActionBox::UNIT), &mut rng).unwrap();
        let s = Tensor::matrix(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let a = m.sample_rows(&s, 3, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = m.sample_rows(&s, 3, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.shape(), &[6, 2]);
        assert!(ActionBox::UNIT.contains(a.data()));
    }

    #[test]
    fn training_reduces_loss_on_a_point_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = RefModelConfig {
            lr: 3e-3,
            ..RefModelConfig::default()
        };
        let mut m = FlowMatchModel::new(1, 1, &cfg, None, &mut rng).unwrap();
        let mut opt = Adam::new(cfg.lr);
        let s = Tensor::zeros(&[64, 1]);
        let a = Tensor::full(&[64, 1], 0.5);
        let first: f64 = (0..20).map(|_| m.train_step(&mut opt, &s, &a, &mut rng).unwrap()).sum::<f64>() / 20.0;
        for _ in 0..400 {
            m.train_step(&mut opt, &s, &a, &mut rng).unwrap();
        }
        let last: f64 = (0..20).map(|_| m.train_step(&mut opt, &s, &a, &mut rng).unwrap()).sum::<f64>() / 20.0;
        assert!(last < 0.5 * first, "{first} -> {last}");
    }
}
