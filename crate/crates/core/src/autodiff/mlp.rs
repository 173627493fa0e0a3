use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::ops::{self, Activation};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Shape of a fully connected network: `input -> hidden... -> output`,
/// with the activation after every hidden layer and a linear head.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    #[serde(default)]
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, output_dim: usize, activation: Activation) -> Result<Self> {
        let spec = MlpSpec {
            input_dim,
            hidden_dims,
            output_dim,
            activation,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::config("mlp", format!("all layer sizes must be >= 1, got {self:?}")));
        }
        Ok(())
    }

    /// `(d_in, d_out)` for every affine layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 1);
        let mut d_in = self.input_dim;
        for &h in &self.hidden_dims {
            dims.push((d_in, h));
            d_in = h;
        }
        dims.push((d_in, self.output_dim));
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| (i + 1) * o).sum()
    }

    /// Expected tensor shapes, in `[w0, b0, w1, b1, ...]` order.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.layer_dims()
            .into_iter()
            .flat_map(|(i, o)| [vec![i, o], vec![o]])
            .collect()
    }
}

/// An [`MlpSpec`] together with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    params: Vec<Tensor>,
}

impl Mlp {
    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases.
    pub fn init<R: Rng + ?Sized>(spec: MlpSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut params = Vec::new();
        for (d_in, d_out) in spec.layer_dims() {
            let bound = 1.0 / (d_in as f64).sqrt();
            let w = (0..d_in * d_out).map(|_| rng.gen_range(-bound..bound)).collect();
            let b = (0..d_out).map(|_| rng.gen_range(-bound..bound)).collect();
            params.push(Tensor::matrix(d_in, d_out, w)?);
            params.push(Tensor::vector(b));
        }
        Ok(Mlp { spec, params })
    }

    pub fn zeros(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let params = spec.param_shapes().iter().map(|s| Tensor::zeros(s)).collect();
        Ok(Mlp { spec, params })
    }

    pub fn from_params(spec: MlpSpec, params: Vec<Tensor>) -> Result<Self> {
        spec.validate()?;
        let shapes = spec.param_shapes();
        if shapes.len() != params.len() {
            return Err(Error::shape("Mlp::from_params", format!("{} tensors", shapes.len()), params.len()));
        }
        for (s, p) in shapes.iter().zip(&params) {
            if s.as_slice() != p.shape() {
                return Err(Error::shape("Mlp::from_params", format!("{s:?}"), format!("{:?}", p.shape())));
            }
        }
        Ok(Mlp { spec, params })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        forward(&self.spec, &self.params, input)
    }

    /// Record the parameters on `g`, as inputs when `trainable` and as
    /// constants otherwise.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| if trainable { g.input(p.clone()) } else { g.constant(p.clone()) })
            .collect()
    }

    pub fn forward_on(&self, g: &mut Graph, params: &[Var], x: Var) -> Result<Var> {
        forward_on(&self.spec, g, params, x)
    }
}

/// Tape-free forward pass.
pub fn forward(spec: &MlpSpec, params: &[Tensor], input: &Tensor) -> Result<Tensor> {
    if input.ndim() != 2 || input.cols() != spec.input_dim {
        return Err(Error::shape("mlp forward", format!("[n, {}]", spec.input_dim), format!("{:?}", input.shape())));
    }
    let n = input.rows();
    let dims = spec.layer_dims();
    if params.len() != 2 * dims.len() {
        return Err(Error::shape("mlp forward", format!("{} parameter tensors", 2 * dims.len()), params.len()));
    }
    let mut h = input.data().to_vec();
    for (l, &(d_in, d_out)) in dims.iter().enumerate() {
        let (w, b) = (&params[2 * l], &params[2 * l + 1]);
        if w.shape() != [d_in, d_out] || b.len() != d_out {
            return Err(Error::shape("mlp forward", format!("[{d_in}, {d_out}]"), format!("{:?}", w.shape())));
        }
        h = ops::affine(&h, n, d_in, w.data(), b.data());
        if l + 1 < dims.len() {
            h.iter_mut().for_each(|v| *v = spec.activation.apply(*v));
        }
    }
    Tensor::matrix(n, spec.output_dim, h)
}

/// Taped forward pass over parameters already recorded on `g`.
pub fn forward_on(spec: &MlpSpec, g: &mut Graph, params: &[Var], x: Var) -> Result<Var> {
    let dims = spec.layer_dims();
    if params.len() != 2 * dims.len() {
        return Err(Error::shape("mlp forward", format!("{} parameter vars", 2 * dims.len()), params.len()));
    }
    let xv = g.value(x)?;
    if xv.ndim() != 2 || xv.cols() != spec.input_dim {
        return Err(Error::shape("mlp forward", format!("[n, {}]", spec.input_dim), format!("{:?}", xv.shape())));
    }
    let mut h = x;
    for l in 0..dims.len() {
        h = g.affine(h, params[2 * l], params[2 * l + 1])?;
        if l + 1 < dims.len() {
            h = g.activation(h, spec.activation)?;
        }
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn param_count_matches_layer_formula() {
        let spec = MlpSpec::new(4, vec![64, 64, 64], 1, Activation::Gelu).unwrap();
        assert_eq!(spec.param_count(), 5 * 64 + 65 * 64 + 65 * 64 + 65);
        let mlp = Mlp::init(spec.clone(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let total: usize = mlp.params().iter().map(Tensor::len).sum();
        assert_eq!(total, spec.param_count());
    }

    #[test]
    fn zero_dims_rejected() {
        assert!(MlpSpec::new(0, vec![4], 1, Activation::Relu).is_err());
        assert!(MlpSpec::new(2, vec![4, 0], 1, Activation::Relu).is_err());
    }

    #[test]
    fn zero_network_outputs_zero() {
        let spec = MlpSpec::new(3, vec![5, 5], 2, Activation::Gelu).unwrap();
        let mlp = Mlp::zeros(spec).unwrap();
        let x = Tensor::matrix(2, 3, vec![1.0, -2.0, 0.5, 3.0, 0.1, -0.7]).unwrap();
        let y = mlp.forward(&x).unwrap();
        assert_eq!(y.shape(), &[2, 2]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_linear_layer() {
        let spec = MlpSpec::new(3, vec![], 3, Activation::Relu).unwrap();
        let mut eye = vec![0.0; 9];
        for i in 0..3 {
            eye[i * 3 + i] = 1.0;
        }
        let mlp = Mlp::from_params(spec, vec![Tensor::matrix(3, 3, eye).unwrap(), Tensor::zeros(&[3])]).unwrap();
        let x = Tensor::matrix(1, 3, vec![0.25, -1.5, 7.0]).unwrap();
        assert_eq!(mlp.forward(&x).unwrap().data(), x.data());
    }

    #[test]
    fn wrong_input_width_is_a_dimension_error() {
        let spec = MlpSpec::new(3, vec![4], 1, Activation::Tanh).unwrap();
        let mlp = Mlp::zeros(spec).unwrap();
        let x = Tensor::zeros(&[2, 2]);
        assert!(matches!(mlp.forward(&x), Err(Error::Shape { .. })));
    }

    #[test]
    fn taped_and_plain_forward_agree() {
        let spec = MlpSpec::new(3, vec![8, 8], 2, Activation::Gelu).unwrap();
        let mlp = Mlp::init(spec, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let x = Tensor::matrix(2, 3, vec![0.1, 0.2, 0.3, -0.4, 0.5, -0.6]).unwrap();
        let plain = mlp.forward(&x).unwrap();
        let mut g = Graph::new();
        let p = mlp.bind(&mut g, false);
        let xv = g.constant(x);
        let y = mlp.forward_on(&mut g, &p, xv).unwrap();
        assert_eq!(g.value(y).unwrap(), &plain);
    }
}
