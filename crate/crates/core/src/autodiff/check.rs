//! Central finite differences, for checking tape gradients.

use super::Tensor;

/// Default step for [`central_difference`]. Small enough that the `O(h²)`
/// truncation error sits far below a `1e-4` relative tolerance, large enough
/// that cancellation in `f64` stays around `1e-10`.
pub const STEP: f64 = 1e-5;

/// `(f(x + h e_k) - f(x - h e_k)) / 2h` for every entry of every tensor in `x`.
/// `x` is restored before returning.
pub fn central_difference(x: &mut [Tensor], h: f64, mut f: impl FnMut(&[Tensor]) -> f64) -> Vec<Tensor> {
    let mut out: Vec<Tensor> = x.iter().map(|t| Tensor::zeros(t.shape())).collect();
    for i in 0..x.len() {
        for k in 0..x[i].len() {
            let orig = x[i].data()[k];
            x[i].data_mut()[k] = orig + h;
            let up = f(x);
            x[i].data_mut()[k] = orig - h;
            let down = f(x);
            x[i].data_mut()[k] = orig;
            out[i].data_mut()[k] = (up - down) / (2.0 * h);
        }
    }
    out
}

/// `|a - b| / max(|a|, |b|, floor)` over all entries taken as one vector.
/// The floor keeps near-zero gradients from turning rounding noise into a
/// large ratio.
pub fn relative_error(a: &[Tensor], b: &[Tensor], floor: f64) -> f64 {
    let flat = |t: &[Tensor]| t.iter().flat_map(|x| x.data().iter().copied()).collect::<Vec<f64>>();
    let (a, b) = (flat(a), flat(b));
    assert_eq!(a.len(), b.len(), "gradient lists differ in size");
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    diff / norm(&a).max(norm(&b)).max(floor)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_derivative() {
        let mut x = vec![Tensor::vector(vec![0.5, -2.0])];
        let g = central_difference(&mut x, STEP, |x| x[0].data().iter().map(|v| v.powi(3)).sum());
        assert!((g[0].data()[0] - 0.75).abs() < 1e-9);
        assert!((g[0].data()[1] - 12.0).abs() < 1e-8);
        assert_eq!(x[0].data(), &[0.5, -2.0]);
    }

    #[test]
    fn relative_error_is_scale_free() {
        let a = [Tensor::vector(vec![1.0, 0.0])];
        let b = [Tensor::vector(vec![1.0, 1e-3])];
        let e = relative_error(&a, &b, 1e-12);
        let a2 = [Tensor::vector(vec![1e3, 0.0])];
        let b2 = [Tensor::vector(vec![1e3, 1.0])];
        assert!((e - relative_error(&a2, &b2, 1e-12)).abs() < 1e-15);
    }
}
