//! RBF kernel machinery: bandwidth selection, kernel matrices, the kernel
//! gradient that acts as the repulsive force between particles, and the
//! (biased, V-statistic) squared MMD.
//!
//! All point sets are `[n, d]` matrices. The kernel is
//! `k(x, y) = exp(-gamma * |x - y|^2)` with `gamma = 1 / (1e-6 + 2 sigma^2)`.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Added to `2 sigma^2` in the kernel exponent's denominator.
pub const GAMMA_GUARD: f64 = 1e-6;
/// Floor applied to the median-heuristic bandwidth squared.
pub const BANDWIDTH_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthPolicy {
    /// `sigma^2 = median(all squared distances) / (2 ln(n + 1))`, per point set.
    #[default]
    MedianHeuristic,
    Fixed(f64),
}

impl BandwidthPolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            BandwidthPolicy::Fixed(s) if !(s > 0.0 && s.is_finite()) => {
                Err(Error::config("bandwidth", format!("fixed sigma must be positive, got {s}")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KernelMatrix {
    /// `[n, m]`, entry `(i, j)` is `k(x_i, y_j)`.
    pub values: Tensor,
    pub sigma: f64,
}

impl KernelMatrix {
    pub fn gamma(&self) -> f64 {
        gamma(self.sigma)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values.get(i, j)
    }
}

pub fn gamma(sigma: f64) -> f64 {
    1.0 / (GAMMA_GUARD + 2.0 * sigma * sigma)
}

fn check_points(x: &Tensor, name: &'static str) -> Result<()> {
    if x.ndim() != 2 || x.cols() == 0 {
        return Err(Error::shape(name, "[n, d] with d >= 1", format!("{:?}", x.shape())));
    }
    if x.rows() == 0 {
        return Err(Error::usage(format!("{name}: empty point set")));
    }
    if let Some(i) = x.first_non_finite() {
        return Err(Error::NonFinite {
            what: "kernel input",
            index: i / x.cols(),
        });
    }
    Ok(())
}

/// Pairwise squared Euclidean distances, `[n, m]`.
///
/// Differences are formed explicitly, so coincident points give exactly 0.
pub fn squared_distances(x: &Tensor, y: &Tensor) -> Result<Tensor> {
    check_points(x, "squared_distances")?;
    check_points(y, "squared_distances")?;
    if x.cols() != y.cols() {
        return Err(Error::shape("squared_distances", x.cols(), y.cols()));
    }
    let (n, m) = (x.rows(), y.rows());
    let mut out = Vec::with_capacity(n * m);
    for i in 0..n {
        let xi = x.row(i);
        for j in 0..m {
            out.push(xi.iter().zip(y.row(j)).map(|(a, b)| (a - b) * (a - b)).sum());
        }
    }
    Tensor::matrix(n, m, out)
}

/// Median of all entries; the mean of the two middle values for even counts.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median-heuristic bandwidth from a full squared-distance matrix whose
/// source set has `n_source` points. Zero-distance entries count.
pub fn median_heuristic_sigma(sq_dists: &Tensor, n_source: usize) -> f64 {
    let h = median(sq_dists.data()) / (2.0 * (n_source as f64 + 1.0).ln());
    h.max(BANDWIDTH_FLOOR).sqrt()
}

fn resolve_sigma(sq: &Tensor, n_source: usize, policy: BandwidthPolicy) -> Result<f64> {
    policy.validate()?;
    Ok(match policy {
        BandwidthPolicy::MedianHeuristic => median_heuristic_sigma(sq, n_source),
        BandwidthPolicy::Fixed(s) => s,
    })
}

/// Kernel matrix between the rows of `x` and the rows of `y`.
pub fn rbf_kernel(x: &Tensor, y: &Tensor, policy: BandwidthPolicy) -> Result<KernelMatrix> {
    let sq = squared_distances(x, y)?;
    let sigma = resolve_sigma(&sq, x.rows(), policy)?;
    let g = gamma(sigma);
    Ok(KernelMatrix {
        values: sq.map(|d| (-g * d).exp()),
        sigma,
    })
}

/// Gradient of `k(a_j, x_i)` with respect to the source point `a_j`.
///
/// `sources` holds the `a_j`, `targets` the `x_i`. Returns a `[n, m, d]`
/// tensor with `G[j, i, :] = 2 gamma k(a_j, x_i) (x_i - a_j)`, alongside the
/// kernel matrix it was built from. The bandwidth is a constant here even
/// under the median heuristic.
pub fn kernel_grad_wrt_source(sources: &Tensor, targets: &Tensor, policy: BandwidthPolicy) -> Result<(Tensor, KernelMatrix)> {
    let k = rbf_kernel(sources, targets, policy)?;
    let two_gamma = 2.0 * k.gamma();
    let (n, m, d) = (sources.rows(), targets.rows(), sources.cols());
    let mut out = Vec::with_capacity(n * m * d);
    for j in 0..n {
        let a = sources.row(j);
        for i in 0..m {
            let kji = k.get(j, i);
            out.extend(targets.row(i).iter().zip(a).map(|(x, a)| two_gamma * kji * (x - a)));
        }
    }
    Ok((Tensor::new(vec![n, m, d], out)?, k))
}

/// Squared MMD between two point sets under a fixed bandwidth:
/// `mean k(x, x') + mean k(y, y') - 2 mean k(x, y)`, diagonals included.
pub fn mmd_squared(x: &Tensor, y: &Tensor, sigma: f64) -> Result<f64> {
    let policy = BandwidthPolicy::Fixed(sigma);
    let mean = |a: &Tensor, b: &Tensor| -> Result<f64> {
        let k = rbf_kernel(a, b, policy)?;
        Ok(k.values.data().iter().sum::<f64>() / k.values.len() as f64)
    };
    Ok(mean(x, x)? + mean(y, y)? - 2.0 * mean(x, y)?)
}
