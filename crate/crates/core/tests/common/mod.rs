#![allow(dead_code)]

use neurode::nn::Layer;
use neurode::odeint::{solve, DepthSpan, SolverConfig, ValueSystem, VectorField};
use neurode::sensitivity::TerminalLoss;
use neurode::{Tape, Tensor};
use rand::Rng;

/// DepthCat → Linear(d+1, h) → Tanh → Linear(h, d).
pub fn mlp<R: Rng>(d: usize, h: usize, rng: &mut R) -> Layer {
    Layer::Sequential(vec![
        Layer::DepthCat,
        Layer::linear(d + 1, h, rng),
        Layer::Tanh,
        Layer::linear(h, d, rng),
    ])
}

pub fn random_tensor<R: Rng>(shape: &[usize], scale: f64, rng: &mut R) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

/// Terminal loss value after a plain forward solve with parameters `theta`.
pub fn terminal_loss<F: VectorField + ?Sized>(
    field: &F,
    theta: &Tensor,
    z0: &Tensor,
    span: &DepthSpan,
    cfg: &SolverConfig,
    loss: &dyn TerminalLoss,
) -> f64 {
    let z1 = solve(&mut ValueSystem::new(field, theta), z0, span, cfg).unwrap().last();
    let tape = Tape::new();
    let aux = loss.aux_params().map(|a| tape.constant(a));
    loss.eval(tape.constant(z1), aux).unwrap().item()
}

/// Central difference of `f` along coordinate `i` of `x`.
pub fn central_diff(x: &Tensor, i: usize, eps: f64, f: impl Fn(&Tensor) -> f64) -> f64 {
    let mut plus = x.clone();
    plus.data_mut()[i] += eps;
    let mut minus = x.clone();
    minus.data_mut()[i] -= eps;
    (f(&plus) - f(&minus)) / (2.0 * eps)
}

/// `|a − b| ≤ rtol·|b| + floor`.
pub fn close(a: f64, b: f64, rtol: f64, floor: f64) -> bool {
    (a - b).abs() <= rtol * b.abs() + floor
}

pub fn assert_close(a: &Tensor, b: &Tensor, rtol: f64, floor: f64, what: &str) {
    assert_eq!(a.shape(), b.shape(), "{what}: shapes differ");
    for (i, (x, y)) in a.data().iter().zip(b.data()).enumerate() {
        assert!(close(*x, *y, rtol, floor), "{what}[{i}]: {x} vs {y}");
    }
}
