//! Reverse sweep. Every backward rule is written with recorded ops, so the
//! same code yields plain gradients (recording off) or differentiable ones.

use super::tape::{Op, Tape, Var, MAX_GRAD_ORDER};
use super::Tensor;
use crate::error::{Error, Result};

pub(crate) fn grad<'t>(
    tape: &'t Tape,
    root: Var<'t>,
    wrt: &[Var<'t>],
    create_graph: bool,
) -> Result<Vec<Var<'t>>> {
    if !std::ptr::eq(root.tape(), tape) || wrt.iter().any(|w| !std::ptr::eq(w.tape(), tape)) {
        return Err(Error::ForeignTape);
    }
    let root_shape = root.shape();
    if root_shape.iter().product::<usize>() != 1 {
        return Err(Error::NonScalarRoot { shape: root_shape });
    }
    let zeros = |w: &Var<'t>| tape.constant(Tensor::zeros(w.shape()));
    let lo = match wrt.iter().map(Var::id).min() {
        Some(lo) if lo <= root.id() && root.requires_grad() => lo,
        _ => {
            check_depth(root.order(), create_graph)?;
            return Ok(wrt.iter().map(zeros).collect());
        }
    };
    let hi = root.id();

    // nodes on some path from a `wrt` node up to the root
    let mut relevant = vec![false; hi - lo + 1];
    let mut traversed_order = 0;
    let ops: Vec<Op> = {
        let nodes = tape.nodes.borrow();
        for w in wrt {
            if w.id() <= hi {
                relevant[w.id() - lo] = true;
            }
        }
        for i in lo..=hi {
            if relevant[i - lo] || !nodes[i].requires_grad {
                continue;
            }
            let mut hit = false;
            nodes[i].op.for_each_input(|j| hit |= j >= lo && relevant[j - lo]);
            relevant[i - lo] = hit;
        }
        // of those, the ones the sweep actually passes through also reach the root
        let mut on_path = vec![false; hi - lo + 1];
        on_path[hi - lo] = true;
        for i in (lo..=hi).rev() {
            if !(on_path[i - lo] && relevant[i - lo]) {
                continue;
            }
            let mut feeds = false;
            nodes[i].op.for_each_input(|j| {
                if j >= lo {
                    on_path[j - lo] = true;
                    feeds |= relevant[j - lo];
                }
            });
            // a `wrt` endpoint's own rule never runs
            if feeds {
                traversed_order = traversed_order.max(nodes[i].order);
            }
        }
        (lo..=hi).map(|i| nodes[i].op.clone()).collect()
    };

    let requested = check_depth(traversed_order, create_graph)?;
    let _mode = tape.mode(create_graph, if create_graph { requested } else { 0 });
    let mut grads: Vec<Option<Var<'t>>> = vec![None; hi - lo + 1];
    grads[hi - lo] = Some(tape.constant(Tensor::ones(root_shape)));

    for i in (lo..=hi).rev() {
        if !relevant[i - lo] {
            continue;
        }
        let Some(g) = grads[i - lo] else { continue };
        let out = tape.var(i);
        let mut accumulate = |j: usize, contrib: Var<'t>| -> Result<()> {
            if j < lo || !relevant[j - lo] {
                return Ok(());
            }
            let slot = &mut grads[j - lo];
            *slot = Some(match *slot {
                Some(prev) => prev.add(contrib)?,
                None => contrib,
            });
            Ok(())
        };
        let wants = |j: usize| j >= lo && relevant[j - lo];
        backward_rule(tape, &ops[i - lo], out, g, &wants, &mut accumulate)?;
    }

    Ok(wrt
        .iter()
        .map(|w| match w.id().checked_sub(lo).and_then(|k| grads.get(k).copied().flatten()) {
            Some(g) => g,
            None => zeros(w),
        })
        .collect())
}

/// Sweeping through nodes made at level `order` differentiates to level
/// `order + 1`; a differentiable result could go one level deeper still.
fn check_depth(order: u8, create_graph: bool) -> Result<u8> {
    let requested = order + 1;
    let deepest = requested + u8::from(create_graph);
    if deepest > MAX_GRAD_ORDER {
        return Err(Error::NestingTooDeep {
            requested: deepest,
            max: MAX_GRAD_ORDER,
        });
    }
    Ok(requested)
}

fn backward_rule<'t>(
    tape: &'t Tape,
    op: &Op,
    out: Var<'t>,
    g: Var<'t>,
    wants: &dyn Fn(usize) -> bool,
    acc: &mut dyn FnMut(usize, Var<'t>) -> Result<()>,
) -> Result<()> {
    let v = |i: usize| tape.var(i);
    match *op {
        Op::Leaf | Op::Const => {}
        Op::Add(a, b) => {
            if wants(a) {
                acc(a, g.sum_to(&v(a).shape())?)?;
            }
            if wants(b) {
                acc(b, g.sum_to(&v(b).shape())?)?;
            }
        }
        Op::Sub(a, b) => {
            if wants(a) {
                acc(a, g.sum_to(&v(a).shape())?)?;
            }
            if wants(b) {
                acc(b, g.neg().sum_to(&v(b).shape())?)?;
            }
        }
        Op::Mul(a, b) => {
            if wants(a) {
                acc(a, g.mul(v(b))?.sum_to(&v(a).shape())?)?;
            }
            if wants(b) {
                acc(b, g.mul(v(a))?.sum_to(&v(b).shape())?)?;
            }
        }
        Op::Div(a, b) => {
            if wants(a) {
                acc(a, g.div(v(b))?.sum_to(&v(a).shape())?)?;
            }
            if wants(b) {
                // d(a/b)/db = -(a/b)/b
                let gb = g.mul(out)?.div(v(b))?.neg();
                acc(b, gb.sum_to(&v(b).shape())?)?;
            }
        }
        Op::Neg(a) => acc(a, g.neg())?,
        Op::Tanh(a) => acc(a, g.mul(out.square().neg().offset(1.0))?)?,
        Op::Softplus(a) => acc(a, g.mul(v(a).sigmoid())?)?,
        Op::Sigmoid(a) => acc(a, g.mul(out.mul(out.neg().offset(1.0))?)?)?,
        Op::Exp(a) => acc(a, g.mul(out)?)?,
        Op::Ln(a) => acc(a, g.div(v(a))?)?,
        Op::Square(a) => acc(a, g.mul(v(a).scale(2.0))?)?,
        Op::Scale(a, c) => acc(a, g.scale(c))?,
        Op::Offset(a) => acc(a, g)?,
        Op::MatMul(a, b) => {
            if wants(a) {
                acc(a, g.matmul(v(b).t()?)?)?;
            }
            if wants(b) {
                acc(b, v(a).t()?.matmul(g)?)?;
            }
        }
        Op::Transpose(a) => acc(a, g.t()?)?,
        Op::Reshape(a) => acc(a, g.reshape(v(a).shape())?)?,
        Op::SumAll(a) => acc(a, g.fill(v(a).shape())?)?,
        Op::SumAxis(a, axis) => {
            let n = v(a).shape()[axis];
            acc(a, g.expand(axis, n)?)?
        }
        Op::Expand { input, axis } => acc(input, g.sum_axis(axis)?)?,
        Op::Fill(a) => acc(a, g.sum().reshape(v(a).shape())?)?,
        Op::ConcatCols(ref inputs) => {
            let mut start = 0;
            for &i in inputs {
                let len = v(i).shape()[1];
                if wants(i) {
                    acc(i, g.narrow_cols(start, len)?)?;
                }
                start += len;
            }
        }
        Op::NarrowCols { input, start } => {
            let total = v(input).shape()[1];
            acc(input, g.pad_cols(start, total)?)?
        }
        Op::PadCols { input, start } => {
            let len = v(input).shape()[1];
            acc(input, g.narrow_cols(start, len)?)?
        }
        Op::Segment { input, offset } => {
            let len = v(input).numel();
            acc(input, g.embed(offset, len)?)?
        }
        Op::Embed { input, offset } => acc(input, g.segment(offset, v(input).shape())?)?,
        Op::LinComb(ref terms) => {
            for &(c, i) in terms {
                if wants(i) {
                    acc(i, g.scale(c))?;
                }
            }
        }
    }
    Ok(())
}
