//! Closed-form rewards with a known Lipschitz constant, for bound checks.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::flow::{ActionBox, ScoreOracle, ValueFunction};

/// A state-independent reward `R(a)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnalyticReward {
    /// `R(a) = w . a`.
    Linear { w: Vec<f64> },
    /// `R(a) = -|a - m|^2` on a box.
    Quadratic { center: Vec<f64>, bounds: ActionBox },
}

impl AnalyticReward {
    pub fn linear(w: Vec<f64>) -> Result<Self> {
        let r = AnalyticReward::Linear { w };
        r.validate()?;
        Ok(r)
    }

    pub fn quadratic(center: Vec<f64>, bounds: ActionBox) -> Result<Self> {
        let r = AnalyticReward::Quadratic { center, bounds };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        let v = match self {
            AnalyticReward::Linear { w } => w,
            AnalyticReward::Quadratic { center, bounds } => {
                if !(bounds.low < bounds.high) {
                    return Err(Error::usage("quadratic reward needs low < high"));
                }
                center
            }
        };
        if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
            return Err(Error::usage("analytic reward parameters must be finite and non-empty"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            AnalyticReward::Linear { w } => w.len(),
            AnalyticReward::Quadratic { center, .. } => center.len(),
        }
    }

    /// Largest absolute partial derivative over the domain.
    pub fn lipschitz(&self) -> f64 {
        match self {
            AnalyticReward::Linear { w } => w.iter().fold(0.0, |m, x| m.max(x.abs())),
            AnalyticReward::Quadratic { center, bounds } => center
                .iter()
                .map(|m| 2.0 * (bounds.low - m).abs().max((bounds.high - m).abs()))
                .fold(0.0, f64::max),
        }
    }

    pub fn value(&self, a: &[f64]) -> f64 {
        match self {
            AnalyticReward::Linear { w } => w.iter().zip(a).map(|(w, a)| w * a).sum(),
            AnalyticReward::Quadratic { center, .. } => -center.iter().zip(a).map(|(m, a)| (a - m) * (a - m)).sum::<f64>(),
        }
    }

    pub fn gradient(&self, a: &[f64]) -> Vec<f64> {
        match self {
            AnalyticReward::Linear { w } => w.clone(),
            AnalyticReward::Quadratic { center, .. } => center.iter().zip(a).map(|(m, a)| -2.0 * (a - m)).collect(),
        }
    }

    fn check(&self, actions: &Tensor) -> Result<()> {
        if actions.ndim() != 2 || actions.cols() != self.dim() {
            return Err(Error::shape("analytic reward", format!("[n, {}]", self.dim()), format!("{:?}", actions.shape())));
        }
        Ok(())
    }
}

impl ScoreOracle for AnalyticReward {
    fn action_gradients(&self, _states: &Tensor, actions: &Tensor) -> Result<Tensor> {
        self.check(actions)?;
        let data = (0..actions.rows()).flat_map(|i| self.gradient(actions.row(i))).collect();
        Tensor::matrix(actions.rows(), actions.cols(), data)
    }
}

impl ValueFunction for AnalyticReward {
    fn values(&self, _states: &Tensor, actions: &Tensor) -> Result<Vec<f64>> {
        self.check(actions)?;
        Ok((0..actions.rows()).map(|i| self.value(actions.row(i))).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_constant_gradient() {
        let r = AnalyticReward::linear(vec![1.0, 0.0]).unwrap();
        assert_eq!(r.lipschitz(), 1.0);
        assert_eq!(r.gradient(&[0.3, -0.9]), vec![1.0, 0.0]);
    }

    #[test]
    fn quadratic_boundary_derivative() {
        let r = AnalyticReward::quadratic(vec![0.0, 0.0], ActionBox::UNIT).unwrap();
        assert_eq!(r.lipschitz(), 2.0);
        assert_eq!(r.gradient(&[1.0, -0.5]), vec![-2.0, 1.0]);
    }

    #[test]
    fn bad_parameters_rejected() {
        assert!(AnalyticReward::linear(vec![f64::NAN]).is_err());
        assert!(AnalyticReward::linear(vec![]).is_err());
    }
}
