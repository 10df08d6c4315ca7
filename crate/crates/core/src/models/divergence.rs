//! Trace of the Jacobian `∂f/∂z`, row by row.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Widest state the exact divergence accepts.
pub const MAX_EXACT_DIM: usize = 64;

fn check_pair(op: &'static str, f: Var<'_>, x: Var<'_>) -> Result<(usize, usize)> {
    let (fs, xs) = (f.shape(), x.shape());
    match (&fs[..], &xs[..]) {
        ([b, d], [b2, d2]) if b == b2 && d == d2 => Ok((*b, *d)),
        _ => Err(Error::ShapeMismatch { op, lhs: fs, rhs: xs }),
    }
}

/// `Σᵢ ∂fᵢ/∂xᵢ` per row, `[B]`, from one reverse pass per dimension.
///
/// `f` must have been computed from `x` with rows independent of each other.
/// With `create_graph` the result is differentiable once more.
pub fn exact_divergence<'t>(f: Var<'t>, x: Var<'t>, create_graph: bool) -> Result<Var<'t>> {
    let (batch, dim) = check_pair("exact_divergence", f, x)?;
    if dim > MAX_EXACT_DIM {
        return Err(Error::DivergenceTooWide {
            dim,
            max: MAX_EXACT_DIM,
        });
    }
    let tape = f.tape();
    let mut total = tape.constant(Tensor::zeros(vec![batch, 1]));
    for i in 0..dim {
        let g = tape.grad(f.narrow_cols(i, 1)?.sum(), &[x], create_graph)?[0];
        total = total.add(g.narrow_cols(i, 1)?)?;
    }
    total.reshape(vec![batch])
}

/// Hutchinson estimate `(1/n) Σⱼ εⱼᵀ (∂f/∂x) εⱼ` per row, `[B]`, for noise
/// `[n×B×d]`. One reverse pass per sample.
pub fn hutchinson_divergence<'t>(f: Var<'t>, x: Var<'t>, noise: &Tensor, create_graph: bool) -> Result<Var<'t>> {
    let (batch, dim) = check_pair("hutchinson_divergence", f, x)?;
    let n = match *noise.shape() {
        [n, b, d] if n > 0 && b == batch && d == dim => n,
        _ => {
            return Err(Error::ShapeMismatch {
                op: "hutchinson_divergence",
                lhs: noise.shape().to_vec(),
                rhs: vec![batch, dim],
            })
        }
    };
    let tape = f.tape();
    let mut total = tape.constant(Tensor::zeros(vec![batch]));
    for j in 0..n {
        let eps = tape.constant(noise.index(j)?);
        let vjp = tape.grad(f.mul(eps)?.sum(), &[x], create_graph)?[0];
        total = total.add(vjp.mul(eps)?.sum_axis(1)?)?;
    }
    Ok(total.scale(1.0 / n as f64))
}

/// Uniform ±1 entries.
pub fn rademacher<R: Rng + ?Sized>(shape: impl Into<Vec<usize>>, rng: &mut R) -> Tensor {
    let shape = shape.into();
    let n = shape.iter().product();
    let data = (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
    Tensor::new(shape, data).expect("length matches shape")
}

/// Exact divergence of a plain function at `z`.
pub fn divergence_exact<F>(f: F, z: &Tensor) -> Result<Tensor>
where
    F: for<'t> Fn(Var<'t>) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let x = tape.leaf(z.clone());
    Ok(exact_divergence(f(x)?, x, false)?.value())
}

/// Hutchinson estimate for a plain function at `z` with `samples` fresh
/// Rademacher draws.
pub fn divergence_hutchinson<F, R>(f: F, z: &Tensor, samples: usize, rng: &mut R) -> Result<Tensor>
where
    F: for<'t> Fn(Var<'t>) -> Result<Var<'t>>,
    R: Rng + ?Sized,
{
    if samples == 0 {
        return Err(Error::InvalidArgument("Hutchinson estimator needs at least one sample".into()));
    }
    let mut shape = vec![samples];
    shape.extend_from_slice(z.shape());
    let noise = rademacher(shape, rng);
    let tape = Tape::new();
    let x = tape.leaf(z.clone());
    Ok(hutchinson_divergence(f(x)?, x, &noise, false)?.value())
}
