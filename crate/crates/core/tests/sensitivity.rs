mod common;

use common::{assert_close, central_diff, close, mlp, random_tensor, terminal_loss};
use neurode::nn::Layer;
use neurode::odeint::{solve_states, DepthSpan, Method, SolverConfig, ValueSystem, VectorField};
use neurode::sensitivity::{
    grad_adjoint, grad_adjoint_integral, grad_backprop, IntegralLoss, Kinetic, MseLoss, Objective, SquaredNorm,
    WeightedSum,
};
use neurode::tensor::{peak_nodes, reset_peak_nodes};
use neurode::{Result, Tensor, Var};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

/// `f(s, z) = θ·z`.
struct Scalar(f64);

impl VectorField for Scalar {
    fn num_params(&self) -> usize {
        1
    }

    fn params(&self) -> Tensor {
        Tensor::vector(vec![self.0])
    }

    fn eval<'t>(&self, theta: Var<'t>, _: f64, z: Var<'t>) -> Result<Var<'t>> {
        z.mul(theta)
    }
}

/// A layer with its parameters exposed as a field.
struct Net(Layer);

impl VectorField for Net {
    fn num_params(&self) -> usize {
        self.0.param_count()
    }

    fn params(&self) -> Tensor {
        self.0.flatten_params()
    }

    fn eval<'t>(&self, theta: Var<'t>, s: f64, z: Var<'t>) -> Result<Var<'t>> {
        self.0.forward(&mut neurode::nn::ParamCursor::new(theta), s, z)
    }
}

fn rk4() -> SolverConfig {
    SolverConfig::fixed(Method::Rk4, 1e-3)
}

#[test]
fn exponential_gradient_closed_form() {
    let z0 = Tensor::matrix(1, 1, vec![1.0]).unwrap();
    for theta in [0.0, 0.5, -0.8] {
        let field = Scalar(theta);
        let loss = WeightedSum(Tensor::ones(vec![1, 1]));
        let bp = grad_backprop(&field, &z0, &DepthSpan::default(), &rk4(), Objective::terminal(&loss)).unwrap();
        let adj = grad_adjoint(&field, &z0, &DepthSpan::default(), &rk4(), &loss).unwrap();
        for g in [bp, adj] {
            assert!((g.theta.item() - theta.exp()).abs() < 1e-5, "θ={theta}: {}", g.theta.item());
            assert!((g.z0.item() - theta.exp()).abs() < 1e-5);
            assert!((g.loss - theta.exp()).abs() < 1e-9);
        }
    }
}

/// `f ≡ 0`, whatever its three parameters.
struct Zero;

impl VectorField for Zero {
    fn num_params(&self) -> usize {
        3
    }

    fn params(&self) -> Tensor {
        Tensor::vector(vec![0.5, -1.0, 2.0])
    }

    fn eval<'t>(&self, _: Var<'t>, _: f64, z: Var<'t>) -> Result<Var<'t>> {
        Ok(z.tape().constant(Tensor::zeros(z.shape())))
    }
}

#[test]
fn loss_ignoring_dynamics_has_zero_parameter_gradient() {
    let z0 = Tensor::matrix(2, 1, vec![1.0, 2.0]).unwrap();
    let w = Tensor::matrix(2, 1, vec![3.0, -1.0]).unwrap();
    let loss = WeightedSum(w.clone());
    let bp = grad_backprop(&Zero, &z0, &DepthSpan::default(), &rk4(), Objective::terminal(&loss)).unwrap();
    let adj = grad_adjoint(&Zero, &z0, &DepthSpan::default(), &SolverConfig::default(), &loss).unwrap();
    for g in [bp, adj] {
        assert_eq!(g.theta.data(), &[0.0, 0.0, 0.0]);
        assert_eq!(g.z0, w);
        assert_eq!(g.loss, 1.0);
    }
}

#[test]
fn random_models_agree_with_finite_differences_and_each_other() {
    let mut rng = StdRng::seed_from_u64(2024);
    let span = DepthSpan::default();
    let cfg = rk4();
    for model in 0..20 {
        let d = rng.random_range(1..=4);
        let h = rng.random_range(3..=12);
        let net = Net(mlp(d, h, &mut rng));
        assert!(net.num_params() <= 500);
        let z0 = random_tensor(&[3, d], 1.0, &mut rng);
        let target = random_tensor(&[3, d], 1.0, &mut rng);
        let loss = MseLoss(target);

        let bp = grad_backprop(&net, &z0, &span, &cfg, Objective::terminal(&loss)).unwrap();
        let adj = grad_adjoint(&net, &z0, &span, &cfg, &loss).unwrap();
        assert_close(&adj.theta, &bp.theta, 1e-3, 1e-8, &format!("model {model} θ"));
        assert_close(&adj.z0, &bp.z0, 1e-3, 1e-8, &format!("model {model} z0"));

        let theta = net.params();
        for _ in 0..10 {
            let i = rng.random_range(0..theta.numel());
            let fd = central_diff(&theta, i, 1e-5, |t| terminal_loss(&net, t, &z0, &span, &cfg, &loss));
            assert!(close(bp.theta.data()[i], fd, 1e-3, 1e-8), "model {model} backprop θ[{i}]: {} vs {fd}", bp.theta.data()[i]);
            assert!(close(adj.theta.data()[i], fd, 1e-3, 1e-8), "model {model} adjoint θ[{i}]: {} vs {fd}", adj.theta.data()[i]);
        }
    }
}

#[test]
fn adjoint_memory_is_flat_in_step_count() {
    let mut rng = StdRng::seed_from_u64(5);
    let net = Net(mlp(2, 16, &mut rng));
    let z0 = random_tensor(&[4, 2], 1.0, &mut rng);
    let loss = MseLoss(Tensor::zeros(vec![4, 2]));
    let mut peaks = Vec::new();
    for h in [1e-2, 1e-3] {
        reset_peak_nodes();
        let before = peak_nodes();
        grad_adjoint(&net, &z0, &DepthSpan::default(), &SolverConfig::fixed(Method::Rk4, h), &loss).unwrap();
        peaks.push(peak_nodes() - before);
    }
    assert!(peaks[0].abs_diff(peaks[1]) <= 1, "{peaks:?}");

    // backprop keeps every step
    let mut bp = Vec::new();
    for h in [1e-2, 1e-3] {
        reset_peak_nodes();
        let before = peak_nodes();
        grad_backprop(&net, &z0, &DepthSpan::default(), &SolverConfig::fixed(Method::Rk4, h), Objective::terminal(&loss))
            .unwrap();
        bp.push(peak_nodes() - before);
    }
    assert!(bp[1] > 5 * bp[0], "{bp:?}");
}

#[test]
fn integral_loss_closed_form_and_finite_differences() {
    let z0 = Tensor::matrix(1, 1, vec![1.0]).unwrap();
    let il = IntegralLoss::new(SquaredNorm);
    for theta in [0.5f64, 1.0] {
        let closed = ((2.0 * theta).exp() - 1.0) / (2.0 * theta);
        let dclosed = central_diff(&Tensor::vector(vec![theta]), 0, 1e-6, |t| {
            let th = t.item();
            ((2.0 * th).exp() - 1.0) / (2.0 * th)
        });
        let g = grad_adjoint_integral(&Scalar(theta), &z0, &DepthSpan::default(), &rk4(), &il, None).unwrap();
        assert!(close(g.loss, closed, 1e-8, 0.0), "{} vs {closed}", g.loss);
        assert!(close(g.theta.item(), dclosed, 1e-3, 0.0), "{} vs {dclosed}", g.theta.item());

        // backprop differentiates its own trapezoid quadrature
        let bp = grad_backprop(&Scalar(theta), &z0, &DepthSpan::default(), &rk4(), Objective::integral(&il)).unwrap();
        let fd = central_diff(&Tensor::vector(vec![theta]), 0, 1e-6, |t| {
            grad_backprop(&Scalar(t.item()), &z0, &DepthSpan::default(), &rk4(), Objective::integral(&il))
                .unwrap()
                .loss
        });
        assert!(close(bp.theta.item(), fd, 1e-4, 0.0), "{} vs {fd}", bp.theta.item());
    }
}

#[test]
fn zero_integrand_reduces_to_terminal_adjoint() {
    let mut rng = StdRng::seed_from_u64(8);
    let net = Net(mlp(2, 6, &mut rng));
    let z0 = random_tensor(&[2, 2], 1.0, &mut rng);
    let loss = MseLoss(Tensor::ones(vec![2, 2]));
    let il = IntegralLoss::new(SquaredNorm).weight(0.0);
    let cfg = rk4();
    let plain = grad_adjoint(&net, &z0, &DepthSpan::default(), &cfg, &loss).unwrap();
    let with = grad_adjoint_integral(&net, &z0, &DepthSpan::default(), &cfg, &il, Some(&loss)).unwrap();
    assert_eq!(plain.theta, with.theta);
    assert_eq!(plain.z0, with.z0);
    assert_eq!(plain.loss, with.loss);
}

#[test]
fn kinetic_integral_adjoint_matches_backprop() {
    let mut rng = StdRng::seed_from_u64(13);
    let net = Net(mlp(2, 8, &mut rng));
    let z0 = random_tensor(&[3, 2], 1.0, &mut rng);
    let il = IntegralLoss::new(Kinetic).weight(0.1);
    let cfg = rk4();
    let adj = grad_adjoint_integral(&net, &z0, &DepthSpan::default(), &cfg, &il, None).unwrap();
    let bp = grad_backprop(&net, &z0, &DepthSpan::default(), &cfg, Objective::integral(&il)).unwrap();
    assert!(close(adj.loss, bp.loss, 1e-6, 0.0));
    assert_close(&adj.theta, &bp.theta, 1e-3, 1e-8, "kinetic θ");
    assert_close(&adj.z0, &bp.z0, 1e-3, 1e-8, "kinetic z0");
}

#[test]
fn scaling_the_loss_scales_the_gradient() {
    let mut rng = StdRng::seed_from_u64(21);
    let net = Net(mlp(2, 5, &mut rng));
    let z0 = random_tensor(&[2, 2], 1.0, &mut rng);
    let w = random_tensor(&[2, 2], 1.0, &mut rng);
    let cfg = SolverConfig::fixed(Method::Rk4, 0.05);
    for alpha in [0.25, 4.0, -2.0] {
        let a = WeightedSum(w.clone());
        let b = WeightedSum(w.scale(alpha));
        let ga = grad_adjoint(&net, &z0, &DepthSpan::default(), &cfg, &a).unwrap();
        let gb = grad_adjoint(&net, &z0, &DepthSpan::default(), &cfg, &b).unwrap();
        // power-of-two factors commute exactly with every rounding step
        assert_eq!(gb.theta, ga.theta.scale(alpha));
        let pa = grad_backprop(&net, &z0, &DepthSpan::default(), &cfg, Objective::terminal(&a)).unwrap();
        let pb = grad_backprop(&net, &z0, &DepthSpan::default(), &cfg, Objective::terminal(&b)).unwrap();
        assert_eq!(pb.theta, pa.theta.scale(alpha));
    }
}

#[test]
fn adaptive_backprop_matches_adjoint_loosely() {
    let mut rng = StdRng::seed_from_u64(34);
    let net = Net(mlp(2, 8, &mut rng));
    let z0 = random_tensor(&[3, 2], 1.0, &mut rng);
    let loss = MseLoss(Tensor::zeros(vec![3, 2]));
    let cfg = SolverConfig::dopri5(1e-8, 1e-8);
    let bp = grad_backprop(&net, &z0, &DepthSpan::default(), &cfg, Objective::terminal(&loss)).unwrap();
    let adj = grad_adjoint(&net, &z0, &DepthSpan::default(), &cfg, &loss).unwrap();
    assert_close(&adj.theta, &bp.theta, 1e-4, 1e-7, "dopri5 θ");
    assert!(adj.backward_stats.nfe > 0);
}

#[test]
fn forward_nfe_is_reported() {
    let z0 = Tensor::matrix(1, 1, vec![1.0]).unwrap();
    let cfg = SolverConfig::fixed(Method::Rk4, 0.1);
    let g = grad_adjoint(&Scalar(0.3), &z0, &DepthSpan::default(), &cfg, &WeightedSum(Tensor::ones(vec![1, 1]))).unwrap();
    assert_eq!(g.forward_stats.nfe, 40);
    assert_eq!(g.backward_stats.nfe, 40);
    let (_, st) = solve_states(
        &mut ValueSystem::new(&Scalar(0.3), &Tensor::vector(vec![0.3])),
        z0,
        &[0.0, 1.0],
        &cfg,
        &mut |_, _| Ok(()),
    )
    .unwrap();
    assert_eq!(st, g.forward_stats);
}
