use std::cell::{Cell, RefCell};
use std::fmt;

use super::{broadcast, dims2, matmul_raw, sigmoid, softplus, zip_broadcast, Tensor};
use crate::error::{Error, Result};

/// Deepest supported derivative order (gradients of gradients).
pub const MAX_GRAD_ORDER: u8 = 2;

thread_local! {
    static LIVE_NODES: Cell<usize> = const { Cell::new(0) };
    static PEAK_NODES: Cell<usize> = const { Cell::new(0) };
}

/// Nodes currently held by all tapes alive on this thread.
pub fn live_nodes() -> usize {
    LIVE_NODES.with(Cell::get)
}

/// High-water mark of [`live_nodes`] since the last [`reset_peak_nodes`].
pub fn peak_nodes() -> usize {
    PEAK_NODES.with(Cell::get)
}

pub fn reset_peak_nodes() {
    PEAK_NODES.with(|p| p.set(live_nodes()));
}

fn count_push() {
    let live = LIVE_NODES.with(|l| {
        let v = l.get() + 1;
        l.set(v);
        v
    });
    PEAK_NODES.with(|p| p.set(p.get().max(live)));
}

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    Const,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Tanh(usize),
    Softplus(usize),
    Sigmoid(usize),
    Exp(usize),
    Ln(usize),
    Square(usize),
    Scale(usize, f64),
    Offset(usize),
    MatMul(usize, usize),
    Transpose(usize),
    Reshape(usize),
    SumAll(usize),
    SumAxis(usize, usize),
    Expand { input: usize, axis: usize },
    Fill(usize),
    ConcatCols(Vec<usize>),
    NarrowCols { input: usize, start: usize },
    PadCols { input: usize, start: usize },
    Segment { input: usize, offset: usize },
    Embed { input: usize, offset: usize },
    LinComb(Vec<(f64, usize)>),
}

impl Op {
    pub(crate) fn for_each_input(&self, mut f: impl FnMut(usize)) {
        use Op::*;
        match self {
            Leaf | Const => {}
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | MatMul(a, b) => {
                f(*a);
                f(*b);
            }
            Neg(a) | Tanh(a) | Softplus(a) | Sigmoid(a) | Exp(a) | Ln(a) | Square(a)
            | Scale(a, _) | Offset(a) | Transpose(a) | Reshape(a) | SumAll(a)
            | SumAxis(a, _) | Fill(a) => f(*a),
            Expand { input, .. }
            | NarrowCols { input, .. }
            | PadCols { input, .. }
            | Segment { input, .. }
            | Embed { input, .. } => f(*input),
            ConcatCols(ins) => ins.iter().copied().for_each(f),
            LinComb(terms) => terms.iter().for_each(|(_, i)| f(*i)),
        }
    }
}

pub(crate) struct Node {
    pub(crate) value: Tensor,
    pub(crate) op: Op,
    pub(crate) requires_grad: bool,
    pub(crate) order: u8,
}

/// Append-only record of a forward computation.
///
/// A tape is single-owner: [`Var`] handles borrow it, and it is neither `Send`
/// nor `Sync`. Independent tapes may live on independent threads.
pub struct Tape {
    pub(crate) nodes: RefCell<Vec<Node>>,
    grad_enabled: Cell<bool>,
    order_floor: Cell<u8>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("len", &self.len()).finish()
    }
}

impl Drop for Tape {
    fn drop(&mut self) {
        let n = self.nodes.get_mut().len();
        LIVE_NODES.with(|l| l.set(l.get().saturating_sub(n)));
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

pub(crate) struct ModeGuard<'t> {
    tape: &'t Tape,
    grad_enabled: bool,
    order_floor: u8,
}

impl Drop for ModeGuard<'_> {
    fn drop(&mut self) {
        self.tape.grad_enabled.set(self.grad_enabled);
        self.tape.order_floor.set(self.order_floor);
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            grad_enabled: Cell::new(true),
            order_floor: Cell::new(0),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Differentiable input.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push_raw(value, Op::Leaf, true, 0)
    }

    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push_raw(value, Op::Const, false, 0)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    /// Leaf when `requires_grad`, constant otherwise.
    pub fn input(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        if requires_grad {
            self.leaf(value)
        } else {
            self.constant(value)
        }
    }

    /// Runs `f` with recording switched off: everything it creates is constant.
    pub fn no_grad<R>(&self, f: impl FnOnce() -> R) -> R {
        let _guard = self.mode(false, self.order_floor.get());
        f()
    }

    pub(crate) fn mode(&self, grad_enabled: bool, order_floor: u8) -> ModeGuard<'_> {
        let guard = ModeGuard {
            tape: self,
            grad_enabled: self.grad_enabled.get(),
            order_floor: self.order_floor.get(),
        };
        self.grad_enabled.set(grad_enabled);
        self.order_floor.set(order_floor);
        guard
    }

    pub(crate) fn var(&self, id: usize) -> Var<'_> {
        Var { tape: self, id }
    }

    fn push_raw(&self, value: Tensor, op: Op, requires_grad: bool, order: u8) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
            order,
        });
        count_push();
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Records the result of an op. Nodes that cannot reach a differentiable
    /// input are stored as constants.
    fn push(&self, value: Tensor, op: Op) -> Var<'_> {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            let mut rg = false;
            op.for_each_input(|i| rg |= nodes[i].requires_grad);
            rg && self.grad_enabled.get()
        };
        if requires_grad {
            self.push_raw(value, op, true, self.order_floor.get())
        } else {
            self.push_raw(value, Op::Const, false, 0)
        }
    }

    pub(crate) fn with_value<R>(&self, id: usize, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.nodes.borrow()[id].value)
    }

    fn unary(&self, id: usize, op: Op, f: impl Fn(f64) -> f64) -> Var<'_> {
        let value = self.with_value(id, |t| t.map(f));
        self.push(value, op)
    }

    fn check_same(&self, other: &Tape) -> Result<()> {
        if std::ptr::eq(self, other) {
            Ok(())
        } else {
            Err(Error::ForeignTape)
        }
    }

    fn binary(
        &self,
        name: &'static str,
        a: usize,
        b: usize,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var<'_>> {
        let value = {
            let nodes = self.nodes.borrow();
            zip_broadcast(name, &nodes[a].value, &nodes[b].value, f)?
        };
        Ok(self.push(value, op))
    }

    /// Concatenates rank-2 variables along the column axis.
    pub fn concat_cols<'t>(&'t self, parts: &[Var<'t>]) -> Result<Var<'t>> {
        for p in parts {
            self.check_same(p.tape)?;
        }
        let value = {
            let nodes = self.nodes.borrow();
            let refs: Vec<&Tensor> = parts.iter().map(|p| &nodes[p.id].value).collect();
            Tensor::concat_cols(&refs)?
        };
        Ok(self.push(value, Op::ConcatCols(parts.iter().map(|p| p.id).collect())))
    }

    /// `Σ cᵢ·varsᵢ` over identically shaped variables, recorded as one node.
    pub fn lincomb<'t>(&'t self, terms: &[(f64, Var<'t>)]) -> Result<Var<'t>> {
        let (c0, first) = terms
            .first()
            .ok_or_else(|| Error::InvalidArgument("lincomb of nothing".into()))?;
        for (_, v) in terms {
            self.check_same(v.tape)?;
        }
        let value = {
            let nodes = self.nodes.borrow();
            let mut out = nodes[first.id].value.scale(*c0);
            let rest: Vec<(f64, &Tensor)> = terms[1..]
                .iter()
                .map(|(c, v)| (*c, &nodes[v.id].value))
                .collect();
            out = out.lincomb(&rest)?;
            out
        };
        Ok(self.push(
            value,
            Op::LinComb(terms.iter().map(|(c, v)| (*c, v.id)).collect()),
        ))
    }

    /// Gradients of a scalar `root` with respect to `wrt`.
    ///
    /// With `create_graph` the returned variables are themselves recorded and
    /// can be differentiated again, up to [`MAX_GRAD_ORDER`].
    pub fn grad<'t>(
        &'t self,
        root: Var<'t>,
        wrt: &[Var<'t>],
        create_graph: bool,
    ) -> Result<Vec<Var<'t>>> {
        super::backward::grad(self, root, wrt, create_graph)
    }

    /// Gradient of `root` with respect to every differentiable leaf reachable from it.
    pub fn backward<'t>(&'t self, root: Var<'t>) -> Result<Grads> {
        let leaves: Vec<Var<'t>> = {
            let nodes = self.nodes.borrow();
            (0..=root.id)
                .filter(|&i| matches!(nodes[i].op, Op::Leaf))
                .map(|i| self.var(i))
                .collect()
        };
        let grads = self.grad(root, &leaves, false)?;
        Ok(Grads {
            entries: leaves
                .iter()
                .zip(grads)
                .map(|(l, g)| (l.id, g.value()))
                .collect(),
        })
    }
}

/// Leaf gradients from [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Grads {
    entries: Vec<(usize, Tensor)>,
}

impl Grads {
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.entries
            .iter()
            .find(|(id, _)| *id == var.id)
            .map(|(_, t)| t)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Tensor {
        self.tape.with_value(self.id, Tensor::clone)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.with_value(self.id, |t| t.shape().to_vec())
    }

    pub fn numel(&self) -> usize {
        self.tape.with_value(self.id, Tensor::numel)
    }

    pub fn item(&self) -> f64 {
        self.tape.with_value(self.id, Tensor::item)
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Level of the backward sweep that recorded this node (0 for forward ops,
    /// even when their inputs came out of a gradient).
    pub fn order(&self) -> u8 {
        self.tape.nodes.borrow()[self.id].order
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.tape.check_same(other.tape)?;
        self.tape
            .binary("add", self.id, other.id, Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.tape.check_same(other.tape)?;
        self.tape
            .binary("sub", self.id, other.id, Op::Sub(self.id, other.id), |a, b| a - b)
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.tape.check_same(other.tape)?;
        self.tape
            .binary("mul", self.id, other.id, Op::Mul(self.id, other.id), |a, b| a * b)
    }

    pub fn div(self, other: Var<'t>) -> Result<Var<'t>> {
        self.tape.check_same(other.tape)?;
        self.tape
            .binary("div", self.id, other.id, Op::Div(self.id, other.id), |a, b| a / b)
    }

    pub fn neg(self) -> Var<'t> {
        self.tape.unary(self.id, Op::Neg(self.id), |x| -x)
    }

    pub fn tanh(self) -> Var<'t> {
        self.tape.unary(self.id, Op::Tanh(self.id), f64::tanh)
    }

    pub fn softplus(self) -> Var<'t> {
        self.tape.unary(self.id, Op::Softplus(self.id), softplus)
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.tape.unary(self.id, Op::Sigmoid(self.id), sigmoid)
    }

    pub fn exp(self) -> Var<'t> {
        self.tape.unary(self.id, Op::Exp(self.id), f64::exp)
    }

    pub fn ln(self) -> Var<'t> {
        self.tape.unary(self.id, Op::Ln(self.id), f64::ln)
    }

    pub fn square(self) -> Var<'t> {
        self.tape.unary(self.id, Op::Square(self.id), |x| x * x)
    }

    /// `c·self`
    pub fn scale(self, c: f64) -> Var<'t> {
        self.tape.unary(self.id, Op::Scale(self.id, c), move |x| c * x)
    }

    /// `self + c`
    pub fn offset(self, c: f64) -> Var<'t> {
        self.tape.unary(self.id, Op::Offset(self.id), move |x| x + c)
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.tape.check_same(other.tape)?;
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            let (m, k) = dims2("matmul", a)?;
            let (k2, n) = dims2("matmul", b)?;
            if k != k2 {
                return Err(Error::ShapeMismatch {
                    op: "matmul",
                    lhs: a.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
            Tensor::new(vec![m, n], matmul_raw(a.data(), b.data(), m, k, n))?
        };
        Ok(self.tape.push(value, Op::MatMul(self.id, other.id)))
    }

    /// Transpose of a rank-2 variable.
    pub fn t(self) -> Result<Var<'t>> {
        let value = self.tape.with_value(self.id, Tensor::transpose)?;
        Ok(self.tape.push(value, Op::Transpose(self.id)))
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Var<'t>> {
        let value = self.tape.with_value(self.id, |t| t.reshape(shape))?;
        Ok(self.tape.push(value, Op::Reshape(self.id)))
    }

    /// Sum of all elements (rank-0 result).
    pub fn sum(self) -> Var<'t> {
        let value = self.tape.with_value(self.id, |t| Tensor::scalar(t.sum()));
        self.tape.push(value, Op::SumAll(self.id))
    }

    pub fn sum_axis(self, axis: usize) -> Result<Var<'t>> {
        let value = self.tape.with_value(self.id, |t| t.sum_axis(axis))?;
        Ok(self.tape.push(value, Op::SumAxis(self.id, axis)))
    }

    pub fn mean(self) -> Result<Var<'t>> {
        let n = self.numel();
        if n == 0 {
            return Err(Error::EmptyReduction { shape: self.shape() });
        }
        Ok(self.sum().scale(1.0 / n as f64))
    }

    pub fn mean_axis(self, axis: usize) -> Result<Var<'t>> {
        let shape = self.shape();
        let n = *shape.get(axis).ok_or(Error::AxisOutOfRange {
            op: "mean_axis",
            axis,
            shape: shape.clone(),
        })?;
        if n == 0 {
            return Err(Error::EmptyReduction { shape });
        }
        Ok(self.sum_axis(axis)?.scale(1.0 / n as f64))
    }

    /// Inserts an axis of extent `n` at `axis`, repeating values.
    pub fn expand(self, axis: usize, n: usize) -> Result<Var<'t>> {
        let value = self.tape.with_value(self.id, |t| t.expand_axis(axis, n))?;
        Ok(self.tape.push(value, Op::Expand { input: self.id, axis }))
    }

    /// Broadcasts a one-element variable to `shape`.
    pub fn fill(self, shape: impl Into<Vec<usize>>) -> Result<Var<'t>> {
        let shape = shape.into();
        let value = self.tape.with_value(self.id, |t| {
            if t.numel() != 1 {
                return Err(Error::ShapeMismatch {
                    op: "fill",
                    lhs: t.shape().to_vec(),
                    rhs: shape.clone(),
                });
            }
            Ok(Tensor::full(shape.clone(), t.item()))
        })?;
        Ok(self.tape.push(value, Op::Fill(self.id)))
    }

    pub fn narrow_cols(self, start: usize, len: usize) -> Result<Var<'t>> {
        let value = self.tape.with_value(self.id, |t| t.narrow_cols(start, len))?;
        Ok(self.tape.push(value, Op::NarrowCols { input: self.id, start }))
    }

    pub fn pad_cols(self, start: usize, total: usize) -> Result<Var<'t>> {
        let value = self.tape.with_value(self.id, |t| t.pad_cols(start, total))?;
        Ok(self.tape.push(value, Op::PadCols { input: self.id, start }))
    }

    /// Contiguous run of a rank-1 variable, reshaped to `shape`.
    pub fn segment(self, offset: usize, shape: impl Into<Vec<usize>>) -> Result<Var<'t>> {
        let shape = shape.into();
        let value = self.tape.with_value(self.id, |t| {
            let n: usize = shape.iter().product();
            if t.rank() != 1 || offset + n > t.numel() {
                return Err(Error::ShapeMismatch {
                    op: "segment",
                    lhs: t.shape().to_vec(),
                    rhs: shape.clone(),
                });
            }
            Tensor::new(shape.clone(), t.data()[offset..offset + n].to_vec())
        })?;
        Ok(self.tape.push(value, Op::Segment { input: self.id, offset }))
    }

    /// Flattens `self` into a zero vector of length `len` starting at `offset`.
    pub fn embed(self, offset: usize, len: usize) -> Result<Var<'t>> {
        let value = self.tape.with_value(self.id, |t| {
            if offset + t.numel() > len {
                return Err(Error::ShapeMismatch {
                    op: "embed",
                    lhs: t.shape().to_vec(),
                    rhs: vec![len],
                });
            }
            let mut data = vec![0.0; len];
            data[offset..offset + t.numel()].copy_from_slice(t.data());
            Ok(Tensor::vector(data))
        })?;
        Ok(self.tape.push(value, Op::Embed { input: self.id, offset }))
    }

    /// Reduces a gradient of this variable's broadcast shape back to `target`.
    pub(crate) fn sum_to(self, target: &[usize]) -> Result<Var<'t>> {
        let shape = self.shape();
        if shape == target {
            return Ok(self);
        }
        if target.iter().product::<usize>() == 1 {
            return self.sum().reshape(target.to_vec());
        }
        // only the batch axis can have been broadcast
        let (_, _, mode) = broadcast("sum_to", &shape, target)?;
        debug_assert_eq!(mode, super::Bcast::Row);
        let reduced = self.sum_axis(0)?;
        if reduced.shape() == target {
            Ok(reduced)
        } else {
            reduced.reshape(target.to_vec())
        }
    }
}
