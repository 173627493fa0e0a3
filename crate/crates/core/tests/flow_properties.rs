//! Flow and kernel invariants, with a loop-by-loop reimplementation of the
//! particle update as the reference.

use proptest::prelude::*;
use rand::Rng;

use vgf::autodiff::Tensor;
use vgf::envs::AnalyticReward;
use vgf::flow::{self, ActionBox, FlowConfig, ParticleOptimizer, ParticleSet, ScoreOracle, TransportBudget};
use vgf::kernels::{self, BandwidthPolicy};
use vgf::rng::SeedStreams;
use vgf::Result;

/// Reference velocity on plain nested vectors.
fn oracle_phi(x: &[Vec<f64>], score: &[Vec<f64>], sigma: Option<f64>, maxent: bool, alpha: f64) -> Vec<Vec<f64>> {
    let n = x.len();
    let d = x[0].len();
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>();
    let sigma = sigma.unwrap_or_else(|| {
        let mut all: Vec<f64> = x.iter().flat_map(|a| x.iter().map(move |b| sq(a, b))).collect();
        all.sort_by(f64::total_cmp);
        let m = all.len();
        let med = if m % 2 == 1 { all[m / 2] } else { (all[m / 2 - 1] + all[m / 2]) / 2.0 };
        (med / (2.0 * ((n + 1) as f64).ln())).max(1e-12).sqrt()
    });
    let gamma = 1.0 / (1e-6 + 2.0 * sigma * sigma);
    let mut out = vec![vec![0.0; d]; n];
    for i in 0..n {
        for j in 0..n {
            let k = (-gamma * sq(&x[j], &x[i])).exp();
            for c in 0..d {
                if maxent {
                    out[i][c] += k * score[j][c] / alpha + 2.0 * gamma * k * (x[i][c] - x[j][c]);
                } else {
                    out[i][c] += k * score[j][c];
                }
            }
        }
        out[i].iter_mut().for_each(|v| *v /= n as f64);
    }
    out
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

fn random_points(seed: u64, n: usize, d: usize, scale: f64) -> Tensor {
    let mut r = SeedStreams::new(seed).stream("points");
    Tensor::matrix(n, d, (0..n * d).map(|_| r.gen_range(-scale..scale)).collect()).unwrap()
}

fn cfg(maxent: bool, bandwidth: BandwidthPolicy, alpha: f64) -> FlowConfig {
    FlowConfig {
        maxent,
        bandwidth,
        alpha,
        clip_bounds: None,
        ..FlowConfig::default()
    }
}

/// Reward with two bumps on the line, at -1 (height 0.5) and +1 (height 1).
struct Bimodal1d;

impl Bimodal1d {
    fn grad(a: f64) -> f64 {
        let bump = |c: f64, h: f64| -h * (a - c) / 0.09 * (-(a - c).powi(2) / 0.18).exp();
        bump(-1.0, 0.5) + bump(1.0, 1.0)
    }
}

impl ScoreOracle for Bimodal1d {
    fn action_gradients(&self, _: &Tensor, actions: &Tensor) -> Result<Tensor> {
        Ok(actions.map(Self::grad))
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn phi_matches_the_reference(seed in any::<u64>(), n in 1usize..8, d in 1usize..4, maxent in any::<bool>(),
                                 fixed in prop::option::of(0.2f64..2.0), alpha in 0.05f64..2.0) {
        let x = random_points(seed, n, d, 1.5);
        let s = random_points(seed ^ 7, n, d, 2.0);
        let bw = fixed.map_or(BandwidthPolicy::MedianHeuristic, BandwidthPolicy::Fixed);
        let got = flow::phi_from_scores(&x, &s, &cfg(maxent, bw, alpha)).unwrap();
        let want = oracle_phi(&rows(&x), &rows(&s), fixed, maxent, alpha);
        for (g, w) in rows(&got).iter().zip(&want) {
            for (a, b) in g.iter().zip(w) {
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn phi_is_permutation_equivariant(seed in any::<u64>(), n in 2usize..8, maxent in any::<bool>()) {
        let x = random_points(seed, n, 2, 1.0);
        let s = random_points(seed ^ 3, n, 2, 1.0);
        let perm: Vec<usize> = (0..n).rev().collect();
        let permute = |t: &Tensor| Tensor::from_rows(&perm.iter().map(|&i| t.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
        let c = cfg(maxent, BandwidthPolicy::MedianHeuristic, 0.5);
        let a = flow::phi_from_scores(&x, &s, &c).unwrap();
        let b = flow::phi_from_scores(&permute(&x), &permute(&s), &c).unwrap();
        let pa = permute(&a);
        for (u, v) in pa.data().iter().zip(b.data()) {
            prop_assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn single_particle_without_maxent_is_gradient_ascent(x0 in -1.0f64..1.0, y0 in -1.0f64..1.0, eps in 0.001f64..0.2, steps in 0usize..8) {
        let reward = AnalyticReward::quadratic(vec![0.3, -0.2], ActionBox::UNIT).unwrap();
        let c = FlowConfig { epsilon: eps, num_particles: 1, ..cfg(false, BandwidthPolicy::MedianHeuristic, 1.0) };
        let set = ParticleSet::new(Tensor::from_rows(&[[x0, y0]]).unwrap()).unwrap();
        let out = flow::transport(&set, &[0.0], &reward, &c, steps).unwrap();
        let mut p = vec![x0, y0];
        for _ in 0..steps {
            let g = reward.gradient(&p);
            p.iter_mut().zip(&g).for_each(|(v, gv)| *v += eps * gv);
        }
        prop_assert_eq!(out.particle(0), p.as_slice());
    }

    #[test]
    fn transport_budget_bound_holds(seed in any::<u64>(), n in 2usize..12, steps in 1usize..10, eps in 0.001f64..0.1,
                                    alpha in 0.1f64..2.0, sigma in 0.3f64..2.0, c in 0.1f64..1.5) {
        let x0 = random_points(seed, n, 2, 2.0);
        let reward = AnalyticReward::linear(vec![c, -c / 2.0]).unwrap();
        let fc = FlowConfig { epsilon: eps, num_particles: n, optimizer: ParticleOptimizer::Plain, ..cfg(true, BandwidthPolicy::Fixed(sigma), alpha) };
        let xl = flow::transport(&ParticleSet::new(x0.clone()).unwrap(), &[0.0], &reward, &fc, steps).unwrap();
        let mmd2 = kernels::mmd_squared(&x0, xl.points(), sigma).unwrap();
        let bound = flow::mmd_bound(&TransportBudget { epsilon: eps, steps, sigma, alpha, lipschitz: reward.lipschitz() }).unwrap();
        prop_assert!(mmd2 <= bound, "{mmd2} > {bound}");
    }

    #[test]
    fn mmd_is_symmetric_and_nonnegative(seed in any::<u64>(), n in 1usize..8, m in 1usize..8, sigma in 0.1f64..3.0) {
        let x = random_points(seed, n, 2, 1.0);
        let y = random_points(seed ^ 11, m, 2, 1.0);
        let a = kernels::mmd_squared(&x, &y, sigma).unwrap();
        let b = kernels::mmd_squared(&y, &x, sigma).unwrap();
        prop_assert!((a - b).abs() < 1e-14);
        prop_assert!(a >= -1e-14);
        prop_assert!(kernels::mmd_squared(&x, &x, sigma).unwrap().abs() <= 1e-12);
    }

    #[test]
    fn kernel_gradient_matches_finite_differences(seed in any::<u64>(), sigma in 0.3f64..2.0) {
        let src = random_points(seed, 3, 2, 1.0);
        let tgt = random_points(seed ^ 5, 4, 2, 1.0);
        let (g, _) = kernels::kernel_grad_wrt_source(&src, &tgt, BandwidthPolicy::Fixed(sigma)).unwrap();
        let k = |a: &[f64], b: &[f64]| (-kernels::gamma(sigma) * a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>()).exp();
        let h = 1e-6;
        for j in 0..3 {
            for i in 0..4 {
                for c in 0..2 {
                    let mut up = src.row(j).to_vec();
                    let mut down = up.clone();
                    up[c] += h;
                    down[c] -= h;
                    let fd = (k(&up, tgt.row(i)) - k(&down, tgt.row(i))) / (2.0 * h);
                    prop_assert!((g.data()[(j * 4 + i) * 2 + c] - fd).abs() < 1e-8);
                }
            }
        }
    }
}

#[test]
fn bimodal_trace_matches_the_reference() {
    let x0 = vec![vec![-1.4], vec![-0.6], vec![-0.1], vec![0.4], vec![1.3]];
    let c = FlowConfig { epsilon: 0.05, alpha: 0.5, ..cfg(true, BandwidthPolicy::MedianHeuristic, 0.5) };
    let (out, trace) = flow::transport_traced(&ParticleSet::new(Tensor::from_rows(&x0).unwrap()).unwrap(), &[0.0], &Bimodal1d, &c, 5).unwrap();
    let mut x = x0;
    for _ in 0..5 {
        let s: Vec<Vec<f64>> = x.iter().map(|p| vec![Bimodal1d::grad(p[0])]).collect();
        let v = oracle_phi(&x, &s, None, true, 0.5);
        x.iter_mut().zip(&v).for_each(|(p, vi)| p[0] += 0.05 * vi[0]);
    }
    for (i, p) in x.iter().enumerate() {
        assert!((out.particle(i)[0] - p[0]).abs() < 1e-12, "particle {i}: {} vs {}", out.particle(i)[0], p[0]);
    }
    assert_eq!(trace.num_particles(), 5);
    assert_eq!(trace.path(0).len(), 6);
}

#[test]
fn zero_steps_leave_reference_samples_untouched() {
    let x = random_points(9, 6, 2, 1.0);
    let set = ParticleSet::new(x.clone()).unwrap();
    let out = flow::transport(&set, &[0.0], &AnalyticReward::linear(vec![1.0, 1.0]).unwrap(), &FlowConfig::default(), 0).unwrap();
    assert_eq!(out.points(), &x);
}
