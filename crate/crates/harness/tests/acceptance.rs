//! Release acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero when any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use neurode::models::{
    divergence_exact, divergence_hutchinson, gaussian_log_density, Cnf, DEFunc, Divergence, EnergyField, NeuralODE,
};
use neurode::nn::{FourierBasis, Layer, Linear};
use neurode::odeint::{solve, DepthSpan, Method, SolverConfig, ValueSystem, VectorField};
use neurode::sensitivity::{grad_adjoint, grad_adjoint_integral, grad_backprop, IntegralLoss, MseLoss, Objective, SquaredNorm, TerminalLoss};
use neurode::tensor::{peak_nodes, reset_peak_nodes};
use neurode::{Result, Tape, Tensor, Var};
use neurode_harness::{train, ExperimentConfig, TrainOptions};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

type Outcome = std::result::Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn random_tensor<R: Rng>(shape: &[usize], scale: f64, rng: &mut R) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

fn mlp<R: Rng>(d: usize, h: usize, rng: &mut R) -> Layer {
    Layer::Sequential(vec![
        Layer::DepthCat,
        Layer::linear(d + 1, h, rng),
        Layer::Tanh,
        Layer::linear(h, d, rng),
    ])
}

fn energy_net<R: Rng>(width: usize, hidden: usize, rng: &mut R) -> Layer {
    Layer::Sequential(vec![Layer::linear(width, hidden, rng), Layer::Tanh, Layer::linear(hidden, 1, rng)])
}

fn fixed_linear(weight: Tensor) -> Layer {
    let out = weight.shape()[0];
    Layer::Linear(Linear::from_parts(weight, Tensor::zeros(vec![out])).unwrap())
}

fn central_diff(x: &Tensor, i: usize, eps: f64, f: impl Fn(&Tensor) -> f64) -> f64 {
    let (mut plus, mut minus) = (x.clone(), x.clone());
    plus.data_mut()[i] += eps;
    minus.data_mut()[i] -= eps;
    (f(&plus) - f(&minus)) / (2.0 * eps)
}

fn close(a: f64, b: f64, rtol: f64, floor: f64) -> bool {
    (a - b).abs() <= rtol * b.abs() + floor
}

fn e<T: std::fmt::Display>(err: T) -> String {
    err.to_string()
}

fn api_contract() -> Outcome {
    let mut rng = StdRng::seed_from_u64(0);
    let model = NeuralODE::new(DEFunc::new(mlp(2, 64, &mut rng)));
    ensure!(model.num_parameters() == 386, "num_parameters = {}", model.num_parameters());
    let s = &model.solver;
    ensure!(
        s.method == Method::Dopri5 && s.rtol == 1e-4 && s.atol == 1e-4,
        "solver defaults {:?} rtol {} atol {}",
        s.method,
        s.rtol,
        s.atol
    );
    ensure!(model.span.s0 == 0.0 && model.span.s1 == 1.0, "span {:?}", model.span);
    let x = random_tensor(&[128, 2], 1.0, &mut rng);
    let out = model.forward(&x).map_err(e)?;
    ensure!(out.shape() == [128, 2], "forward shape {:?}", out.shape());
    let traj = model
        .trajectory(&x, &DepthSpan::linspace(0.0, 1.0, 50).map_err(e)?.depths())
        .map_err(e)?;
    ensure!(traj.points.shape() == [50, 128, 2], "trajectory shape {:?}", traj.points.shape());
    Ok("386 parameters, [128×2] → [128×2], trajectory [50×128×2], dopri5 1e-4/1e-4 on [0, 1]".into())
}

fn endpoint_error(method: Method, h: f64) -> f64 {
    let z0 = Tensor::matrix(1, 1, vec![1.0]).unwrap();
    let mut growth = |_: f64, z: &Tensor| -> Result<Tensor> { Ok(z.clone()) };
    let out = solve(&mut growth, &z0, &DepthSpan::default(), &SolverConfig::fixed(method, h)).unwrap();
    (out.last().item() - std::f64::consts::E).abs()
}

fn slope(method: Method, steps: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = steps.iter().map(|&h| (h.ln(), endpoint_error(method, h).ln())).collect();
    let n = pts.len() as f64;
    let (mx, my) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x / n, b + y / n));
    let num: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = pts.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    num / den
}

fn solver_orders() -> Outcome {
    let euler = slope(Method::Euler, &[1e-1, 5e-2, 2.5e-2, 1.25e-2, 6.25e-3]);
    let rk4 = slope(Method::Rk4, &[0.5, 0.25, 0.125, 0.0625]);
    ensure!((euler - 1.0).abs() <= 0.2, "euler slope {euler:.3}");
    ensure!((rk4 - 4.0).abs() <= 0.3, "rk4 slope {rk4:.3}");
    let mut rotation = |_: f64, z: &Tensor| -> Result<Tensor> {
        let d = z.data();
        Tensor::matrix(1, 2, vec![-d[1], d[0]])
    };
    let z0 = Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap();
    let span = DepthSpan::new(0.0, std::f64::consts::FRAC_PI_2).map_err(e)?;
    let end = solve(&mut rotation, &z0, &span, &SolverConfig::default()).map_err(e)?.last();
    let err = end.data()[0].abs().max((end.data()[1] - 1.0).abs());
    ensure!(err < 1e-3, "dopri5 rotation error {err:e}");
    Ok(format!("euler {euler:.3}, rk4 {rk4:.3}, dopri5 quarter-turn error {err:.1e}"))
}

fn terminal_value(field: &DEFunc, theta: &Tensor, z0: &Tensor, cfg: &SolverConfig, loss: &dyn TerminalLoss) -> f64 {
    let z1 = solve(&mut ValueSystem::new(field, theta), z0, &DepthSpan::default(), cfg).unwrap().last();
    let tape = Tape::new();
    loss.eval(tape.constant(z1), None).unwrap().item()
}

fn gradient_correctness() -> Outcome {
    let mut rng = StdRng::seed_from_u64(2024);
    let cfg = SolverConfig::fixed(Method::Rk4, 1e-3);
    let span = DepthSpan::default();
    let (models, coords) = (20, 10);
    let mut worst: f64 = 0.0;
    for m in 0..models {
        let d = rng.random_range(1..=4);
        let h = rng.random_range(3..=12);
        let field = DEFunc::new(mlp(d, h, &mut rng));
        ensure!(field.num_params() <= 500, "model {m} has {} parameters", field.num_params());
        let z0 = random_tensor(&[3, d], 1.0, &mut rng);
        let loss = MseLoss(random_tensor(&[3, d], 1.0, &mut rng));
        let bp = grad_backprop(&field, &z0, &span, &cfg, Objective::terminal(&loss)).map_err(e)?;
        let adj = grad_adjoint(&field, &z0, &span, &cfg, &loss).map_err(e)?;
        for (a, b) in adj.theta.data().iter().zip(bp.theta.data()) {
            ensure!(close(*a, *b, 1e-3, 1e-8), "model {m}: adjoint {a} vs backprop {b}");
        }
        let theta = field.params();
        for _ in 0..coords {
            let i = rng.random_range(0..theta.numel());
            let fd = central_diff(&theta, i, 1e-5, |t| terminal_value(&field, t, &z0, &cfg, &loss));
            for (name, g) in [("backprop", &bp), ("adjoint", &adj)] {
                let v = g.theta.data()[i];
                ensure!(close(v, fd, 1e-3, 1e-8), "model {m} {name} θ[{i}]: {v} vs FD {fd}");
                if fd.abs() > 1e-6 {
                    worst = worst.max((v - fd).abs() / fd.abs());
                }
            }
        }
    }
    Ok(format!(
        "{models} models × {coords} coordinates, worst relative error vs FD {worst:.1e} (floor 1e-8)"
    ))
}

fn adjoint_memory() -> Outcome {
    let mut rng = StdRng::seed_from_u64(5);
    let field = DEFunc::new(mlp(2, 16, &mut rng));
    let z0 = random_tensor(&[4, 2], 1.0, &mut rng);
    let loss = MseLoss(Tensor::zeros(vec![4, 2]));
    let mut peaks = Vec::new();
    for h in [1e-2, 1e-3] {
        reset_peak_nodes();
        let before = peak_nodes();
        grad_adjoint(&field, &z0, &DepthSpan::default(), &SolverConfig::fixed(Method::Rk4, h), &loss).map_err(e)?;
        peaks.push(peak_nodes() - before);
    }
    ensure!(peaks[0].abs_diff(peaks[1]) <= 1, "peak retained nodes {peaks:?} for 100 vs 1000 steps");
    Ok(format!("peak retained nodes {} at 100 steps, {} at 1000 steps", peaks[0], peaks[1]))
}

/// `f(s, z) = θ·z`.
struct ScalarGrowth(f64);

impl VectorField for ScalarGrowth {
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

fn integral_adjoint() -> Outcome {
    // z = e^{θs}, so ∫₀¹ z² ds = (e^{2θ} − 1)/(2θ)
    let closed = |th: f64| ((2.0 * th).exp() - 1.0) / (2.0 * th);
    let z0 = Tensor::matrix(1, 1, vec![1.0]).unwrap();
    let il = IntegralLoss::new(SquaredNorm);
    let cfg = SolverConfig::fixed(Method::Rk4, 1e-3);
    let mut parts = Vec::new();
    for theta in [0.5f64, 1.0] {
        let fd = central_diff(&Tensor::vector(vec![theta]), 0, 1e-6, |t| closed(t.item()));
        let g = grad_adjoint_integral(&ScalarGrowth(theta), &z0, &DepthSpan::default(), &cfg, &il, None).map_err(e)?;
        ensure!(close(g.loss, closed(theta), 1e-6, 0.0), "θ={theta}: loss {} vs {}", g.loss, closed(theta));
        ensure!(close(g.theta.item(), fd, 1e-3, 0.0), "θ={theta}: dℓ/dθ {} vs FD {fd}", g.theta.item());
        parts.push(format!("θ={theta}: {:.6} vs {fd:.6}", g.theta.item()));
    }
    Ok(parts.join(", "))
}

fn energy_models() -> Outcome {
    let mut rng = StdRng::seed_from_u64(6);
    let mut worst_drift: f64 = 0.0;
    for n in [1, 2, 3] {
        let net = energy_net(2 * n, 16, &mut rng);
        let model = NeuralODE::new(DEFunc::energy(EnergyField::hamiltonian(net.clone())));
        let x = random_tensor(&[4, 2 * n], 1.0, &mut rng);
        let traj = model
            .trajectory(&x, &DepthSpan::linspace(0.0, 10.0, 41).map_err(e)?.depths())
            .map_err(e)?;
        let h0 = net.eval(0.0, &x).map_err(e)?;
        for i in 0..traj.len() {
            let h = net.eval(0.0, &traj.at(i).map_err(e)?).map_err(e)?;
            for (a, b) in h.data().iter().zip(h0.data()) {
                let tol = 1e-4 * b.abs() + 1e-4;
                worst_drift = worst_drift.max((a - b).abs() / tol);
                ensure!((a - b).abs() <= 100.0 * tol, "n={n}: energy drift {:e}", (a - b).abs());
            }
        }
    }

    let net = energy_net(3, 16, &mut rng);
    let model = NeuralODE::new(DEFunc::energy(EnergyField::stable(net.clone())));
    let x = random_tensor(&[5, 3], 2.0, &mut rng);
    let traj = model
        .trajectory(&x, &DepthSpan::linspace(0.0, 5.0, 26).map_err(e)?.depths())
        .map_err(e)?;
    let mut prev = net.eval(0.0, &x).map_err(e)?;
    for i in 1..traj.len() {
        let cur = net.eval(0.0, &traj.at(i).map_err(e)?).map_err(e)?;
        for (a, b) in cur.data().iter().zip(prev.data()) {
            ensure!(*a <= b + 10.0 * (1e-4 * b.abs() + 1e-4), "stable energy rose from {b} to {a}");
        }
        prev = cur;
    }

    // L = ½q̇² − ½q²
    let lag = Layer::Sequential(vec![
        Layer::Square,
        fixed_linear(Tensor::matrix(1, 2, vec![-0.5, 0.5]).unwrap()),
    ]);
    let model = NeuralODE::new(DEFunc::energy(EnergyField::lagrangian(lag)));
    let depths = DepthSpan::linspace(0.0, 10.0, 21).map_err(e)?.depths();
    let traj = model
        .trajectory(&Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap(), &depths)
        .map_err(e)?;
    let mut worst_cos: f64 = 0.0;
    for (i, s) in depths.iter().enumerate() {
        worst_cos = worst_cos.max((traj.at(i).map_err(e)?.data()[0] - s.cos()).abs());
    }
    ensure!(worst_cos < 1e-3, "Lagrangian oscillator off cos(s) by {worst_cos:e}");
    Ok(format!(
        "worst Hamiltonian drift {worst_drift:.2}× tolerance, stable descent holds, Lagrangian error {worst_cos:.1e}"
    ))
}

fn flow_1d<R: Rng>(rng: &mut R) -> Cnf {
    let net = Layer::Sequential(vec![Layer::DepthCat, Layer::linear(2, 16, rng), Layer::Tanh, Layer::linear(16, 1, rng)]);
    Cnf::new(NeuralODE::new(DEFunc::new(net).with_divergence(Divergence::Exact))).unwrap()
}

/// `w ⊙ tanh(z)`: a field with diagonal Jacobian.
fn elementwise<'t>(v: Var<'t>) -> Result<Var<'t>> {
    v.tanh().mul(v.tape().constant(Tensor::vector(vec![0.3, -1.7, 2.5, 0.01])))
}

fn cnf_checks() -> Outcome {
    let mut rng = StdRng::seed_from_u64(9);

    let zero = Cnf::new(NeuralODE::new(
        DEFunc::new(fixed_linear(Tensor::zeros(vec![3, 3]))).with_divergence(Divergence::Exact),
    ))
    .map_err(e)?;
    let x = random_tensor(&[6, 3], 2.0, &mut rng);
    ensure!(
        zero.log_prob(&x, &mut rng).map_err(e)? == gaussian_log_density(&x).map_err(e)?,
        "zero field changed the base density"
    );

    let cnf = flow_1d(&mut rng);
    let grid: Vec<f64> = (0..=2000).map(|i| -10.0 + 0.01 * f64::from(i)).collect();
    let lp = cnf
        .log_prob(&Tensor::matrix(grid.len(), 1, grid).unwrap(), &mut rng)
        .map_err(e)?;
    let mass: f64 = lp.data().iter().map(|v| v.exp() * 0.01).sum();
    ensure!((mass - 1.0).abs() < 1e-2, "1-D density integrates to {mass}");

    let a = random_tensor(&[8, 8], 1.0, &mut rng);
    let trace: f64 = (0..8).map(|i| a.data()[i * 9]).sum();
    let at = a.transpose().map_err(e)?;
    let z = random_tensor(&[1, 8], 1.0, &mut rng);
    let n = 10_000;
    let draws = (0..n)
        .map(|_| divergence_hutchinson(|v| v.matmul(v.tape().constant(at.clone())), &z, 1, &mut rng).map(|t| t.item()))
        .collect::<Result<Vec<f64>>>()
        .map_err(e)?;
    let mean = draws.iter().sum::<f64>() / n as f64;
    let se = (draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / ((n - 1) * n) as f64).sqrt();
    let z_score = (mean - trace).abs() / se;
    ensure!(z_score <= 4.0, "Hutchinson mean {mean} vs trace {trace}: {z_score:.2} standard errors");

    // diagonal Jacobian: εᵢ² = 1 makes a single probe exact
    let zd = random_tensor(&[5, 4], 1.5, &mut rng);
    let exact = divergence_exact(elementwise, &zd).map_err(e)?;
    for _ in 0..20 {
        let est = divergence_hutchinson(elementwise, &zd, 1, &mut rng).map_err(e)?;
        ensure!(est == exact, "single-probe estimate {est:?} differs from trace {exact:?}");
    }
    Ok(format!(
        "base density exact, 1-D mass {mass:.5}, Hutchinson {z_score:.2} SE from trace, diagonal single-probe bit-exact"
    ))
}

fn composition_matrix() -> Outcome {
    let mut rng = StdRng::seed_from_u64(15);
    let x = random_tensor(&[4, 2], 1.0, &mut rng);
    let basis = FourierBasis::new(3, 0.0, 1.0);
    let gal = |rng: &mut StdRng, d_in: usize, d_out: usize| {
        Layer::Sequential(vec![
            Layer::gal_linear(d_in, 8, basis.clone(), rng),
            Layer::Tanh,
            Layer::gal_linear(8, d_out, basis.clone(), rng),
        ])
    };
    let lag = Layer::Sequential(vec![Layer::Square, fixed_linear(Tensor::matrix(1, 2, vec![-0.5, 0.5]).unwrap())]);
    let top = |rng: &mut StdRng| Layer::Sequential(vec![Layer::linear(4, 8, rng), Layer::Tanh, Layer::linear(8, 2, rng)]);
    let plain: Vec<(&str, DEFunc)> = vec![
        ("vanilla", DEFunc::new(mlp(2, 8, &mut rng))),
        ("depth-cat", DEFunc::new(mlp(2, 8, &mut rng))),
        ("augmented", DEFunc::new(mlp(5, 8, &mut rng)).with_augment_dims(3)),
        ("galerkin", DEFunc::new(gal(&mut rng, 2, 2))),
        ("galerkin+augmented", DEFunc::new(gal(&mut rng, 4, 4)).with_augment_dims(2)),
        ("second-order", DEFunc::new(energy_net(2, 8, &mut rng)).with_order(2)),
        ("second-order+augmented", DEFunc::new(top(&mut rng)).with_order(2).with_augment_dims(2)),
        ("hamiltonian", DEFunc::energy(EnergyField::hamiltonian(energy_net(2, 8, &mut rng)))),
        (
            "hamiltonian+augmented",
            DEFunc::energy(EnergyField::hamiltonian(energy_net(4, 8, &mut rng))).with_augment_dims(2),
        ),
        ("galerkin+hamiltonian", DEFunc::energy(EnergyField::hamiltonian(gal(&mut rng, 2, 1)))),
        ("lagrangian", DEFunc::energy(EnergyField::lagrangian(lag))),
        ("stable", DEFunc::energy(EnergyField::stable(energy_net(2, 8, &mut rng)))),
        ("galerkin+stable", DEFunc::energy(EnergyField::stable(gal(&mut rng, 2, 1)))),
    ];
    let flows: Vec<(&str, DEFunc)> = vec![
        ("cnf", DEFunc::new(mlp(2, 8, &mut rng)).with_divergence(Divergence::Exact)),
        ("ffjord", DEFunc::new(mlp(2, 8, &mut rng)).with_divergence(Divergence::Hutchinson { samples: 1 })),
        ("augmented cnf", DEFunc::new(mlp(4, 8, &mut rng)).with_augment_dims(2).with_divergence(Divergence::Exact)),
        ("galerkin cnf", DEFunc::new(gal(&mut rng, 2, 2)).with_divergence(Divergence::Exact)),
        (
            "hamiltonian cnf",
            DEFunc::energy(EnergyField::hamiltonian(energy_net(2, 8, &mut rng))).with_divergence(Divergence::Exact),
        ),
        (
            "galerkin+hamiltonian ffjord",
            DEFunc::energy(EnergyField::hamiltonian(gal(&mut rng, 2, 1)))
                .with_divergence(Divergence::Hutchinson { samples: 2 }),
        ),
    ];
    let total = plain.len() + flows.len();
    for (name, f) in plain {
        let out = NeuralODE::new(f).forward(&x).map_err(|err| format!("{name}: {err}"))?;
        ensure!(out.is_finite(), "{name}: non-finite output");
    }
    for (name, f) in flows {
        let cnf = Cnf::new(NeuralODE::new(f)).map_err(|err| format!("{name}: {err}"))?;
        let lp = cnf.log_prob(&x, &mut rng).map_err(|err| format!("{name}: {err}"))?;
        ensure!(lp.is_finite(), "{name}: non-finite log-density");
    }
    Ok(format!("{total} combinations completed a forward pass"))
}

fn desk_training() -> Outcome {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let moons = ExperimentConfig::load(configs.join("moons.json")).map_err(e)?;
    ensure!(moons.optimizer.steps <= 2000, "moons config trains for {} steps", moons.optimizer.steps);
    let r = train(&moons, &TrainOptions::default()).map_err(e)?;
    let acc = r.metrics.as_ref().and_then(|m| m.accuracy).ok_or("moons run reported no accuracy")?;
    ensure!(acc >= 0.95, "moons accuracy {acc} after {} steps", r.steps_completed);

    let density = ExperimentConfig::load(configs.join("gaussians.json")).map_err(e)?;
    let r = train(&density, &TrainOptions::default()).map_err(e)?;
    let head = &r.losses[..r.losses.len().min(201)];
    ensure!(head.len() == 201, "density run produced {} losses", head.len());
    if let Some(i) = (1..head.len()).find(|&i| head[i] >= head[i - 1]) {
        return Err(format!("density NLL rose at step {i}: {} → {}", head[i - 1], head[i]));
    }
    Ok(format!(
        "moons accuracy {acc:.3} in {} steps; density NLL {:.3} → {:.3}, strictly decreasing over 200 steps",
        moons.optimizer.steps,
        head[0],
        head[200]
    ))
}

struct Criterion {
    id: u8,
    name: &'static str,
    budget: Duration,
    check: fn() -> Outcome,
}

fn main() {
    let criteria = [
        Criterion { id: 1, name: "API contract", budget: Duration::from_secs(10), check: api_contract },
        Criterion { id: 2, name: "solver orders", budget: Duration::from_secs(30), check: solver_orders },
        Criterion { id: 3, name: "gradient correctness", budget: Duration::from_secs(300), check: gradient_correctness },
        Criterion { id: 4, name: "adjoint memory", budget: Duration::from_secs(60), check: adjoint_memory },
        Criterion { id: 5, name: "integral-loss adjoint", budget: Duration::from_secs(60), check: integral_adjoint },
        Criterion { id: 6, name: "energy models", budget: Duration::from_secs(120), check: energy_models },
        Criterion { id: 7, name: "CNF", budget: Duration::from_secs(180), check: cnf_checks },
        Criterion { id: 8, name: "composition matrix", budget: Duration::from_secs(60), check: composition_matrix },
        Criterion { id: 9, name: "desk-scale training", budget: Duration::from_secs(600), check: desk_training },
    ];
    // keep panic messages inside the report lines
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(c.check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > c.budget => Err(format!("{detail}; over the {:?} budget", c.budget)),
            other => other,
        };
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} {}. {} ({:.2}s): {detail}", c.id, c.name, elapsed.as_secs_f64());
        if c.id == 5 {
            println!(
                "NOTE 5. reference value is the integral itself, (e^(2θ)−1)/(2θ); the expression (e^(2θ)−1)/2 \
                 agrees with it only at θ=1 and has a different derivative"
            );
        }
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
