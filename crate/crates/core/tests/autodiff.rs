mod common;

use common::{central_diff, close};
use neurode::error::Error;
use neurode::tensor::{hessian, hvp, grad};
use neurode::{Result, Tape, Tensor, Var};
use proptest::prelude::*;

fn mixed<'t>(x: Var<'t>) -> Result<Var<'t>> {
    // touches most elementwise ops and a reduction
    let a = x.tanh().mul(x.sigmoid())?;
    let b = x.square().offset(1.0).ln();
    let c = x.softplus().div(x.exp().offset(2.0))?;
    Ok(a.add(b)?.sub(c)?.sum())
}

fn value(x: &Tensor) -> f64 {
    let tape = Tape::new();
    mixed(tape.constant(x.clone())).unwrap().item()
}

#[test]
fn elementwise_gradients_match_finite_differences() {
    let x = Tensor::matrix(2, 3, vec![0.3, -1.2, 2.0, 0.0, 0.7, -0.4]).unwrap();
    let g = grad(&x, mixed).unwrap();
    for i in 0..x.numel() {
        let fd = central_diff(&x, i, 1e-6, value);
        assert!(close(g.data()[i], fd, 1e-6, 1e-8), "coord {i}: {} vs {fd}", g.data()[i]);
    }
}

#[test]
fn matmul_and_broadcast_gradients() {
    let w = Tensor::matrix(3, 2, vec![0.5, -1.0, 2.0, 0.1, -0.3, 0.8]).unwrap();
    let b = Tensor::vector(vec![0.2, -0.6]);
    let x = Tensor::matrix(4, 3, (0..12).map(|i| 0.1 * f64::from(i) - 0.5).collect()).unwrap();
    let f = |wv: &Tensor| {
        let tape = Tape::new();
        let y = tape.constant(x.clone()).matmul(tape.constant(wv.clone())).unwrap();
        y.add(tape.constant(b.clone())).unwrap().tanh().sum().item()
    };
    let tape = Tape::new();
    let wv = tape.leaf(w.clone());
    let y = tape.constant(x.clone()).matmul(wv).unwrap();
    let l = y.add(tape.constant(b.clone())).unwrap().tanh().sum();
    let g = tape.grad(l, &[wv], false).unwrap()[0].value();
    for i in 0..w.numel() {
        let fd = central_diff(&w, i, 1e-6, f);
        assert!(close(g.data()[i], fd, 1e-6, 1e-9), "w[{i}]");
    }
}

#[test]
fn hessian_of_quartic() {
    // f = Σ xᵢ⁴ / 12 + x₀x₁ → H = diag(xᵢ²) + offdiag(1)
    let x = Tensor::vector(vec![1.5, -2.0]);
    let h = hessian(&x, |v| {
        let q = v.square().square().sum().scale(1.0 / 12.0);
        let a = v.segment(0, Vec::<usize>::new())?;
        let b = v.segment(1, Vec::<usize>::new())?;
        q.add(a.mul(b)?)
    })
    .unwrap();
    let want = [2.25, 1.0, 1.0, 4.0];
    for (a, b) in h.data().iter().zip(want) {
        assert!((a - b).abs() < 1e-12, "{h:?}");
    }
    let hv = hvp(&x, &Tensor::vector(vec![1.0, 1.0]), |v| Ok(v.square().square().sum().scale(1.0 / 12.0))).unwrap();
    assert!((hv.data()[0] - 2.25).abs() < 1e-12 && (hv.data()[1] - 4.0).abs() < 1e-12);
}

#[test]
fn nesting_cap_is_enforced() {
    let tape = Tape::new();
    let x = tape.leaf(Tensor::scalar(0.4));
    let y = x.tanh().mul(x).unwrap();
    let g1 = tape.grad(y, &[x], true).unwrap()[0];
    let g2 = tape.grad(g1, &[x], false).unwrap()[0];
    assert!(g2.item().is_finite());
    assert!(matches!(tape.grad(g1, &[x], true), Err(Error::NestingTooDeep { requested: 3, max: 2 })));
}

#[test]
fn depth_counts_only_the_swept_path() {
    let tape = Tape::new();
    let x = tape.leaf(Tensor::scalar(0.7));
    let g1 = tape.grad(x.square().mul(x).unwrap(), &[x], true).unwrap()[0];
    // ordinary ops on a gradient are first-order with respect to that gradient
    let u = g1.tanh();
    let du = tape.grad(u, &[g1], true).unwrap()[0];
    assert!((du.item() - (1.0 - (3.0f64 * 0.49).tanh().powi(2))).abs() < 1e-12);
    // but reaching back to x passes through the recorded backward of g1
    assert!(tape.grad(u, &[x], false).unwrap()[0].item().is_finite());
    assert!(matches!(tape.grad(u, &[x], true), Err(Error::NestingTooDeep { requested: 3, .. })));
}

#[test]
fn non_scalar_root_rejected() {
    let tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
    assert!(matches!(tape.grad(x.tanh(), &[x], false), Err(Error::NonScalarRoot { .. })));
}

#[test]
fn unreachable_input_gets_zero_gradient() {
    let tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
    let y = tape.leaf(Tensor::scalar(3.0));
    let g = tape.grad(y.square(), &[x, y], false).unwrap();
    assert_eq!(g[0].value().data(), &[0.0, 0.0]);
    assert_eq!(g[1].item(), 6.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gradient_is_linear_in_the_loss(
        data in prop::collection::vec(-2.0f64..2.0, 6),
        alpha in -3.0f64..3.0,
        beta in -3.0f64..3.0,
    ) {
        let x = Tensor::matrix(2, 3, data).unwrap();
        let g1 = grad(&x, mixed).unwrap();
        let g2 = grad(&x, |v| Ok(v.tanh().square().sum())).unwrap();
        let combined = grad(&x, |v| {
            let a = mixed(v)?.scale(alpha);
            let b = v.tanh().square().sum().scale(beta);
            a.add(b)
        }).unwrap();
        let want = g1.scale(alpha).add(&g2.scale(beta)).unwrap();
        for (a, b) in combined.data().iter().zip(want.data()) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn power_of_two_scaling_is_exact(data in prop::collection::vec(-2.0f64..2.0, 4), k in -4i32..4) {
        let x = Tensor::vector(data);
        let c = 2f64.powi(k);
        let g = grad(&x, mixed).unwrap();
        let gs = grad(&x, |v| Ok(mixed(v)?.scale(c))).unwrap();
        prop_assert_eq!(gs, g.scale(c));
    }

    #[test]
    fn row_broadcast_gradient_sums_over_batch(rows in 1usize..5, data in prop::collection::vec(-1.0f64..1.0, 3)) {
        let tape = Tape::new();
        let b = tape.leaf(Tensor::vector(data));
        let x = tape.constant(Tensor::ones(vec![rows, 3]));
        let g = tape.grad(x.add(b).unwrap().sum(), &[b], false).unwrap()[0].value();
        prop_assert!(g.data().iter().all(|&v| v == rows as f64));
    }
}
