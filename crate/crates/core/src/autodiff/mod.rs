//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Graph`] records operations as they are evaluated; [`Graph::grad`]
//! sweeps the record once in reverse to produce gradients of a scalar with
//! respect to any recorded inputs. The operation set is exactly what the
//! crate's small MLPs, losses and kernel checks need.

mod adam;
pub mod check;
mod graph;
pub mod mlp;
mod ops;
mod tensor;

pub use adam::Adam;
pub use graph::{Graph, Var};
pub use mlp::{Mlp, MlpSpec};
pub use ops::Activation;
pub use tensor::Tensor;
