//! Dense `f64` tensors with a batch-leading layout, plus a define-by-run tape
//! for reverse-mode differentiation.
//!
//! [`Tensor`] is a plain value: shape and a contiguous row-major buffer. It is
//! `Send` and carries no graph state. Differentiable computation happens on a
//! [`Tape`], whose handles ([`Var`]) refer to recorded nodes.
//!
//! Binary elementwise operations broadcast in two ways only: a scalar operand
//! (one element) against anything, and an operand without the leading batch
//! axis (or with batch extent 1) against a batched one.

mod backward;
mod higher;
mod tape;

pub use higher::{grad, hessian, hvp};
pub use tape::{live_nodes, peak_nodes, reset_peak_nodes, Grads, Tape, Var, MAX_GRAD_ORDER};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::DataLength {
                shape,
                expected,
                got: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f64) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![value; n],
        }
    }

    /// Rank-0 tensor.
    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    /// Rank-1 tensor.
    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(Error::ShapeMismatch {
                    op: "from_rows",
                    lhs: vec![cols],
                    rhs: vec![row.len()],
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(vec![rows.len(), cols], data)
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(vec![n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// First element; the value of a scalar.
    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        if n != self.numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape.clone(),
                rhs: shape,
            });
        }
        Ok(Self {
            shape,
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    pub fn add(&self, other: &Tensor) -> Result<Self> {
        zip_broadcast("add", self, other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Self> {
        zip_broadcast("sub", self, other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Self> {
        zip_broadcast("mul", self, other, |a, b| a * b)
    }

    /// `self + Σ cᵢ·termsᵢ`, all operands of identical shape.
    pub fn lincomb(&self, terms: &[(f64, &Tensor)]) -> Result<Self> {
        let mut out = self.clone();
        for (c, t) in terms {
            if t.shape != self.shape {
                return Err(Error::ShapeMismatch {
                    op: "lincomb",
                    lhs: self.shape.clone(),
                    rhs: t.shape.clone(),
                });
            }
            if *c == 0.0 {
                continue;
            }
            for (o, v) in out.data.iter_mut().zip(&t.data) {
                *o += c * v;
            }
        }
        Ok(out)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op: "dot",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Self> {
        let (m, k) = dims2("matmul", self)?;
        let (k2, n) = dims2("matmul", other)?;
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        Ok(Self {
            shape: vec![m, n],
            data: matmul_raw(&self.data, &other.data, m, k, n),
        })
    }

    pub fn transpose(&self) -> Result<Self> {
        let (m, n) = dims2("transpose", self)?;
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = self.data[i * n + j];
            }
        }
        Ok(Self {
            shape: vec![n, m],
            data,
        })
    }

    /// Row `i` of a rank-2 tensor.
    pub fn row(&self, i: usize) -> Result<&[f64]> {
        let (m, n) = dims2("row", self)?;
        if i >= m {
            return Err(Error::AxisOutOfRange {
                op: "row",
                axis: i,
                shape: self.shape.clone(),
            });
        }
        Ok(&self.data[i * n..(i + 1) * n])
    }

    /// Columns `start..start+len` of a rank-2 tensor.
    pub fn narrow_cols(&self, start: usize, len: usize) -> Result<Self> {
        let (m, n) = dims2("narrow_cols", self)?;
        if start + len > n {
            return Err(Error::AxisOutOfRange {
                op: "narrow_cols",
                axis: start + len,
                shape: self.shape.clone(),
            });
        }
        let mut data = Vec::with_capacity(m * len);
        for i in 0..m {
            data.extend_from_slice(&self.data[i * n + start..i * n + start + len]);
        }
        Ok(Self {
            shape: vec![m, len],
            data,
        })
    }

    /// Places the columns of `self` at `start` inside a zero matrix with `total` columns.
    pub fn pad_cols(&self, start: usize, total: usize) -> Result<Self> {
        let (m, n) = dims2("pad_cols", self)?;
        if start + n > total {
            return Err(Error::AxisOutOfRange {
                op: "pad_cols",
                axis: start + n,
                shape: self.shape.clone(),
            });
        }
        let mut data = vec![0.0; m * total];
        for i in 0..m {
            data[i * total + start..i * total + start + n]
                .copy_from_slice(&self.data[i * n..(i + 1) * n]);
        }
        Ok(Self {
            shape: vec![m, total],
            data,
        })
    }

    /// Concatenates rank-2 tensors along the column axis.
    pub fn concat_cols(parts: &[&Tensor]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat_cols of nothing".into()))?;
        let (m, _) = dims2("concat_cols", first)?;
        let mut total = 0;
        for p in parts {
            let (pm, pn) = dims2("concat_cols", p)?;
            if pm != m {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    lhs: first.shape.clone(),
                    rhs: p.shape.clone(),
                });
            }
            total += pn;
        }
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for p in parts {
                let n = p.shape[1];
                data.extend_from_slice(&p.data[i * n..(i + 1) * n]);
            }
        }
        Ok(Self {
            shape: vec![m, total],
            data,
        })
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(parts: &[Tensor]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("stack of nothing".into()))?;
        let mut data = Vec::with_capacity(parts.len() * first.numel());
        for p in parts {
            if p.shape != first.shape {
                return Err(Error::ShapeMismatch {
                    op: "stack",
                    lhs: first.shape.clone(),
                    rhs: p.shape.clone(),
                });
            }
            data.extend_from_slice(&p.data);
        }
        let mut shape = vec![parts.len()];
        shape.extend_from_slice(&first.shape);
        Ok(Self { shape, data })
    }

    /// Slice `index` along the leading axis.
    pub fn index(&self, index: usize) -> Result<Self> {
        let lead = *self.shape.first().ok_or(Error::Rank {
            op: "index",
            expected: 1,
            shape: self.shape.clone(),
        })?;
        if index >= lead {
            return Err(Error::AxisOutOfRange {
                op: "index",
                axis: index,
                shape: self.shape.clone(),
            });
        }
        let inner: usize = self.shape[1..].iter().product();
        Ok(Self {
            shape: self.shape[1..].to_vec(),
            data: self.data[index * inner..(index + 1) * inner].to_vec(),
        })
    }

    /// Selects rows of a rank-2 tensor.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let (m, n) = dims2("select_rows", self)?;
        let mut data = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            if r >= m {
                return Err(Error::AxisOutOfRange {
                    op: "select_rows",
                    axis: r,
                    shape: self.shape.clone(),
                });
            }
            data.extend_from_slice(&self.data[r * n..(r + 1) * n]);
        }
        Ok(Self {
            shape: vec![rows.len(), n],
            data,
        })
    }

    /// Sum over one axis, collapsing it.
    pub fn sum_axis(&self, axis: usize) -> Result<Self> {
        if axis >= self.rank() {
            return Err(Error::AxisOutOfRange {
                op: "sum_axis",
                axis,
                shape: self.shape.clone(),
            });
        }
        let (outer, n, inner) = split_axis(&self.shape, axis);
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..n {
                let src = &self.data[(o * n + k) * inner..(o * n + k + 1) * inner];
                for (d, s) in data[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let mut shape = self.shape.clone();
        shape.remove(axis);
        Ok(Self { shape, data })
    }

    /// Inserts an axis of extent `n` at `axis`, repeating values along it.
    pub fn expand_axis(&self, axis: usize, n: usize) -> Result<Self> {
        if axis > self.rank() {
            return Err(Error::AxisOutOfRange {
                op: "expand_axis",
                axis,
                shape: self.shape.clone(),
            });
        }
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis..].iter().product();
        let mut data = Vec::with_capacity(outer * n * inner);
        for o in 0..outer {
            let src = &self.data[o * inner..(o + 1) * inner];
            for _ in 0..n {
                data.extend_from_slice(src);
            }
        }
        let mut shape = self.shape.clone();
        shape.insert(axis, n);
        Ok(Self { shape, data })
    }
}

pub(crate) fn dims2(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape.as_slice() {
        [m, n] => Ok((*m, *n)),
        _ => Err(Error::Rank {
            op,
            expected: 2,
            shape: t.shape.clone(),
        }),
    }
}

/// (outer, extent, inner) element counts around `axis`.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            for (cj, bj) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *cj += aip * bj;
            }
        }
    }
    c
}

/// How one operand of a binary op maps onto the output.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Bcast {
    Full,
    /// One element, repeated everywhere.
    Scalar,
    /// One batch row, repeated along the leading axis.
    Row,
}

pub(crate) fn broadcast(
    op: &'static str,
    a: &[usize],
    b: &[usize],
) -> Result<(Vec<usize>, Bcast, Bcast)> {
    let numel = |s: &[usize]| s.iter().product::<usize>();
    // operand `x` is a row of batched `y`
    let row_of = |x: &[usize], y: &[usize]| {
        !y.is_empty()
            && (x == &y[1..] || (x.len() == y.len() && x[0] == 1 && x[1..] == y[1..]))
    };
    if a == b {
        Ok((a.to_vec(), Bcast::Full, Bcast::Full))
    } else if numel(b) == 1 && b.len() <= a.len() {
        Ok((a.to_vec(), Bcast::Full, Bcast::Scalar))
    } else if numel(a) == 1 && a.len() <= b.len() {
        Ok((b.to_vec(), Bcast::Scalar, Bcast::Full))
    } else if row_of(b, a) {
        Ok((a.to_vec(), Bcast::Full, Bcast::Row))
    } else if row_of(a, b) {
        Ok((b.to_vec(), Bcast::Row, Bcast::Full))
    } else {
        Err(Error::ShapeMismatch {
            op,
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        })
    }
}

pub(crate) fn zip_broadcast(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor> {
    let (shape, ba, bb) = broadcast(op, &a.shape, &b.shape)?;
    let n: usize = shape.iter().product();
    let at = |x: &Tensor, mode: Bcast, i: usize| match mode {
        Bcast::Full => x.data[i],
        Bcast::Scalar => x.data[0],
        Bcast::Row => x.data[i % x.data.len()],
    };
    let data = if ba == Bcast::Full && bb == Bcast::Full {
        a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect()
    } else {
        (0..n).map(|i| f(at(a, ba, i), at(b, bb, i))).collect()
    };
    Ok(Tensor { shape, data })
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
