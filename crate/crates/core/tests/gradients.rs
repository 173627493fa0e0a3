//! Tape gradients against central finite differences, op by op and for
//! every loss the crate trains.

use proptest::prelude::*;
use rand::Rng;

use vgf::autodiff::check::{central_difference, relative_error, STEP};
use vgf::autodiff::{Activation, Graph, Mlp, MlpSpec, Tensor, Var};
use vgf::critic::{Aggregation, CriticConfig, GradientNet, Nets, ValueModel};
use vgf::refmodel::{standard_normal, FlowMatchModel};
use vgf::rng::{SeedStreams, StreamRng};

const TOL: f64 = 1e-4;

fn rng(seed: u64) -> StreamRng {
    SeedStreams::new(seed).stream("gradcheck")
}

fn uniform(r: &mut StreamRng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.gen_range(lo..hi)).collect()).unwrap()
}

/// Contract the op output with fixed weights so every entry of the
/// Jacobian contributes to the checked gradient.
fn contract(g: &mut Graph, out: Var) -> Var {
    let shape = g.value(out).unwrap().shape().to_vec();
    let n: usize = shape.iter().product();
    let w = Tensor::new(shape, (0..n).map(|k| (1.3 * k as f64 + 0.7).sin()).collect()).unwrap();
    let w = g.constant(w);
    let prod = g.mul(out, w).unwrap();
    g.sum(prod).unwrap()
}

fn op_error(inputs: Vec<Tensor>, build: impl Fn(&mut Graph, &[Var]) -> Var) -> f64 {
    let eval = |xs: &[Tensor]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|x| g.input(x.clone())).collect();
        let out = build(&mut g, &vars);
        let loss = contract(&mut g, out);
        (g, vars, loss)
    };
    let (g, vars, loss) = eval(&inputs);
    let tape = g.grad(loss, &vars).unwrap();
    let mut xs = inputs;
    let fd = central_difference(&mut xs, STEP, |xs| {
        let (g, _, loss) = eval(xs);
        g.value(loss).unwrap().item()
    });
    relative_error(&tape, &fd, 1e-8)
}

fn away_from_ties(a: &Tensor, b: &Tensor, gap: f64) -> Tensor {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| if (x - y).abs() >= gap { y } else if y >= x { x + gap } else { x - gap })
        .collect();
    Tensor::new(b.shape().to_vec(), data).unwrap()
}

fn dims() -> impl Strategy<Value = (usize, usize, usize, u64)> {
    (1usize..5, 1usize..5, 1usize..5, any::<u64>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn matmul_and_affine((n, k, m, seed) in dims()) {
        let mut r = rng(seed);
        let a = uniform(&mut r, &[n, k], -2.0, 2.0);
        let b = uniform(&mut r, &[k, m], -2.0, 2.0);
        let bias = uniform(&mut r, &[m], -2.0, 2.0);
        prop_assert!(op_error(vec![a.clone(), b.clone()], |g, v| g.matmul(v[0], v[1]).unwrap()) < TOL);
        prop_assert!(op_error(vec![a, b, bias], |g, v| g.affine(v[0], v[1], v[2]).unwrap()) < TOL);
    }

    #[test]
    fn elementwise_binary((n, m, _, seed) in dims()) {
        let mut r = rng(seed);
        let a = uniform(&mut r, &[n, m], -2.0, 2.0);
        let b = uniform(&mut r, &[n, m], -2.0, 2.0);
        let ins = vec![a, b];
        prop_assert!(op_error(ins.clone(), |g, v| g.add(v[0], v[1]).unwrap()) < TOL);
        prop_assert!(op_error(ins.clone(), |g, v| g.sub(v[0], v[1]).unwrap()) < TOL);
        prop_assert!(op_error(ins.clone(), |g, v| g.mul(v[0], v[1]).unwrap()) < TOL);
        prop_assert!(op_error(ins.clone(), |g, v| g.concat_cols(v[0], v[1]).unwrap()) < TOL);
        // minimum has a kink at ties; a central difference straddling one
        // measures the average slope, so keep pairs well clear of it
        let apart = away_from_ties(&ins[0], &ins[1], 1e-3);
        prop_assert!(op_error(vec![ins[0].clone(), apart], |g, v| g.minimum(v[0], v[1]).unwrap()) < TOL);
    }

    #[test]
    fn broadcasts((n, m, _, seed) in dims()) {
        let mut r = rng(seed);
        let a = uniform(&mut r, &[n, m], -2.0, 2.0);
        let row = uniform(&mut r, &[m], -2.0, 2.0);
        let col = uniform(&mut r, &[n, 1], -2.0, 2.0);
        prop_assert!(op_error(vec![a.clone(), row], |g, v| g.add_row(v[0], v[1]).unwrap()) < TOL);
        prop_assert!(op_error(vec![a.clone(), col], |g, v| g.mul_col(v[0], v[1]).unwrap()) < TOL);
        prop_assert!(op_error(vec![a], |g, v| g.sum_cols(v[0]).unwrap()) < TOL);
    }

    #[test]
    fn unary((n, m, _, seed) in dims(), c in -3.0f64..3.0) {
        let mut r = rng(seed);
        let a = uniform(&mut r, &[n, m], -2.0, 2.0);
        let one = || vec![a.clone()];
        prop_assert!(op_error(one(), |g, v| g.scale(v[0], c).unwrap()) < TOL);
        prop_assert!(op_error(one(), |g, v| g.neg(v[0]).unwrap()) < TOL);
        prop_assert!(op_error(one(), |g, v| g.add_scalar(v[0], c).unwrap()) < TOL);
        prop_assert!(op_error(one(), |g, v| g.square(v[0]).unwrap()) < TOL);
        prop_assert!(op_error(one(), |g, v| g.exp(v[0]).unwrap()) < TOL);
        prop_assert!(op_error(one(), |g, v| g.mean(v[0]).unwrap()) < TOL);
        prop_assert!(op_error(one(), |g, v| g.sum(v[0]).unwrap()) < TOL);
        for act in [Activation::Gelu, Activation::Tanh] {
            prop_assert!(op_error(one(), |g, v| g.activation(v[0], act).unwrap()) < TOL);
        }
        let off_kink = away_from_ties(&Tensor::zeros(&[n, m]), &a, 1e-3);
        prop_assert!(op_error(vec![off_kink], |g, v| g.activation(v[0], Activation::Relu).unwrap()) < TOL);
    }

    #[test]
    fn mlp_parameters_and_input((d_in, h, d_out, seed) in dims()) {
        let mut r = rng(seed);
        let spec = MlpSpec::new(d_in, vec![h + 2, h + 1], d_out, Activation::Gelu).unwrap();
        let net = Mlp::init(spec.clone(), &mut r).unwrap();
        let x = uniform(&mut r, &[3, d_in], -1.5, 1.5);
        let mut ins = net.params().to_vec();
        ins.push(x);
        let err = op_error(ins, |g, v| {
            let (params, x) = v.split_at(v.len() - 1);
            vgf::autodiff::mlp::forward_on(&spec, g, params, x[0]).unwrap()
        });
        prop_assert!(err < TOL, "{err}");
    }
}

fn small_critic(seed: u64, agg: Aggregation) -> ValueModel {
    let cfg = CriticConfig {
        hidden_dims: vec![8, 8],
        aggregation: agg,
        score_aggregation: agg,
        ..CriticConfig::default()
    };
    ValueModel::new(3, 2, &cfg, &mut rng(seed)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn critic_loss_parameters(seed in any::<u64>()) {
        let model = small_critic(seed, Aggregation::Mean);
        let mut r = rng(seed ^ 1);
        let s = uniform(&mut r, &[6, 3], -1.0, 1.0);
        let a = uniform(&mut r, &[6, 2], -1.0, 1.0);
        let y: Vec<f64> = (0..6).map(|_| r.gen_range(-1.0..1.0)).collect();
        let (_, g1, g2) = model.critic_loss(&s, &a, &y).unwrap();
        let mut params: Vec<Tensor> = model.q1.params().iter().chain(model.q2.params()).cloned().collect();
        let n1 = model.q1.params().len();
        let fd = central_difference(&mut params, STEP, |p| {
            let mut m = model.clone();
            m.q1.params_mut().clone_from_slice(&p[..n1]);
            m.q2.params_mut().clone_from_slice(&p[n1..]);
            m.critic_loss(&s, &a, &y).unwrap().0
        });
        let tape: Vec<Tensor> = g1.into_iter().chain(g2).collect();
        prop_assert!(relative_error(&tape, &fd, 1e-8) < TOL);
    }

    #[test]
    fn action_gradient_of_the_critic(seed in any::<u64>(), min in any::<bool>()) {
        let agg = if min { Aggregation::Min } else { Aggregation::Mean };
        let model = small_critic(seed, agg);
        let mut r = rng(seed ^ 2);
        let s = uniform(&mut r, &[5, 3], -1.0, 1.0);
        let a = uniform(&mut r, &[5, 2], -1.0, 1.0);
        if min {
            // min(q1, q2) = mean - |q1 - q2| / 2; the check is meaningless at a tie
            let mean = model.aggregated(Nets::Online, Aggregation::Mean, &s, &a).unwrap();
            let lo = model.aggregated(Nets::Online, Aggregation::Min, &s, &a).unwrap();
            prop_assume!(mean.iter().zip(&lo).all(|(m, l)| 2.0 * (m - l) > 1e-3));
        }
        let tape = model.action_grad(Nets::Online, agg, &s, &a).unwrap();
        let mut x = vec![a];
        let fd = central_difference(&mut x, STEP, |x| model.aggregated(Nets::Online, agg, &s, &x[0]).unwrap().iter().sum());
        prop_assert!(relative_error(&[tape], &fd, 1e-8) < TOL);
    }

    #[test]
    fn flow_matching_loss_parameters(seed in any::<u64>()) {
        let mut r = rng(seed);
        let spec = MlpSpec::new(3 + 2 + 1, vec![8, 8], 2, Activation::Gelu).unwrap();
        let model = FlowMatchModel::from_net(Mlp::init(spec, &mut r).unwrap(), 3, 2, 4, None).unwrap();
        let s = uniform(&mut r, &[6, 3], -1.0, 1.0);
        let a = uniform(&mut r, &[6, 2], -1.0, 1.0);
        let t: Vec<f64> = (0..6).map(|_| r.gen::<f64>()).collect();
        let x0 = standard_normal(6, 2, &mut r);
        let (_, tape) = model.fm_loss_with_noise(&s, &a, &t, &x0).unwrap();
        let mut params = model.net().params().to_vec();
        let fd = central_difference(&mut params, STEP, |p| {
            let mut m = model.clone();
            m.net_mut().params_mut().clone_from_slice(p);
            m.fm_loss_with_noise(&s, &a, &t, &x0).unwrap().0
        });
        prop_assert!(relative_error(&tape, &fd, 1e-8) < TOL);
    }

    #[test]
    fn gradient_net_regression_parameters(seed in any::<u64>()) {
        let mut r = rng(seed);
        let net = GradientNet::new(3, 2, vec![8, 8], Activation::Gelu, &mut r).unwrap();
        let s = uniform(&mut r, &[6, 3], -1.0, 1.0);
        let a = uniform(&mut r, &[6, 2], -1.0, 1.0);
        let target = uniform(&mut r, &[6, 2], -1.0, 1.0);
        let (_, tape) = net.distill_loss(&s, &a, &target).unwrap();
        let mut params = net.net.params().to_vec();
        let fd = central_difference(&mut params, STEP, |p| {
            let mut m = net.clone();
            m.net.params_mut().clone_from_slice(p);
            m.distill_loss(&s, &a, &target).unwrap().0
        });
        prop_assert!(relative_error(&tape, &fd, 1e-8) < TOL);
    }
}
