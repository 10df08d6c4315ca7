use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Gradient of a scalar function at `x`.
pub fn grad<F>(x: &Tensor, f: F) -> Result<Tensor>
where
    F: for<'t> Fn(Var<'t>) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let y = f(xv)?;
    Ok(tape.grad(y, &[xv], false)?[0].value())
}

/// Full second derivative of a scalar function, over the flattened input.
///
/// Returns an `[n×n]` matrix for an input with `n` elements. Meant for small `n`:
/// one reverse pass per row.
pub fn hessian<F>(x: &Tensor, f: F) -> Result<Tensor>
where
    F: for<'t> Fn(Var<'t>) -> Result<Var<'t>>,
{
    let n = x.numel();
    let tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let y = f(xv)?;
    let g = tape.grad(y, &[xv], true)?[0].reshape(vec![n])?;
    let mut data = Vec::with_capacity(n * n);
    for i in 0..n {
        let gi = g.segment(i, Vec::<usize>::new())?;
        let row = tape.grad(gi, &[xv], false)?[0].value();
        data.extend_from_slice(row.data());
    }
    Tensor::new(vec![n, n], data)
}

/// Hessian-vector product `∇²f(x)·v`.
pub fn hvp<F>(x: &Tensor, v: &Tensor, f: F) -> Result<Tensor>
where
    F: for<'t> Fn(Var<'t>) -> Result<Var<'t>>,
{
    if x.shape() != v.shape() {
        return Err(Error::ShapeMismatch {
            op: "hvp",
            lhs: x.shape().to_vec(),
            rhs: v.shape().to_vec(),
        });
    }
    let tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let y = f(xv)?;
    let g = tape.grad(y, &[xv], true)?[0];
    let gv = g.mul(tape.constant(v.clone()))?.sum();
    Ok(tape.grad(gv, &[xv], false)?[0].value())
}
