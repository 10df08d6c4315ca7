//! Vector fields derived from a learned scalar: Hamiltonian, Lagrangian and
//! gradient-descent ("stable") dynamics.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Layer, ParamCursor};
use crate::tensor::{Tape, Tensor, Var};

/// Mass matrices worse conditioned than this are treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnergyKind {
    /// `(∂H/∂p, −∂H/∂q)` for a state `(q, p)`.
    Hamiltonian,
    /// `(q̇, q̈)` from the Euler–Lagrange equations of `L(q, q̇)`.
    Lagrangian,
    /// `−∇E(z)`.
    Stable,
}

#[derive(Clone, Debug)]
pub struct EnergyField {
    pub kind: EnergyKind,
    /// Maps a state row to one scalar.
    pub net: Layer,
}

impl EnergyField {
    pub fn new(kind: EnergyKind, net: Layer) -> Self {
        Self { kind, net }
    }

    pub fn hamiltonian(net: Layer) -> Self {
        Self::new(EnergyKind::Hamiltonian, net)
    }

    pub fn lagrangian(net: Layer) -> Self {
        Self::new(EnergyKind::Lagrangian, net)
    }

    pub fn stable(net: Layer) -> Self {
        Self::new(EnergyKind::Stable, net)
    }

    /// The scalar net on `x`, `[B×1]`.
    pub fn energy<'t>(&self, theta: Var<'t>, s: f64, x: Var<'t>) -> Result<Var<'t>> {
        let e = self.net.forward(&mut ParamCursor::new(theta), s, x)?;
        let shape = e.shape();
        if shape.len() != 2 || shape[1] != 1 {
            return Err(Error::ShapeMismatch {
                op: "energy net output",
                lhs: shape,
                rhs: vec![x.shape()[0], 1],
            });
        }
        Ok(e)
    }

    /// Plain-value energy per row, `[B]`.
    pub fn energy_values(&self, s: f64, x: &Tensor) -> Result<Tensor> {
        let e = self.net.eval(s, x)?;
        let b = e.shape()[0];
        e.reshape(vec![b])
    }

    /// The derived vector field at `x` with parameters `theta`.
    ///
    /// Hamiltonian and stable fields are differentiable in `theta` and `x`.
    /// The Lagrangian field already uses second derivatives of the net and is
    /// evaluated on values only.
    pub fn eval<'t>(&self, theta: Var<'t>, s: f64, x: Var<'t>) -> Result<Var<'t>> {
        match self.kind {
            EnergyKind::Hamiltonian => {
                let half = even_half("hamiltonian field", &x.shape())?;
                let g = self.energy_gradient(theta, s, x)?;
                let dq = g.narrow_cols(half, half)?;
                let dp = g.narrow_cols(0, half)?.neg();
                x.tape().concat_cols(&[dq, dp])
            }
            EnergyKind::Stable => Ok(self.energy_gradient(theta, s, x)?.neg()),
            EnergyKind::Lagrangian => {
                if theta.requires_grad() || x.requires_grad() {
                    return Err(Error::Unsupported(
                        "the Lagrangian field is evaluated on values only and cannot be differentiated".into(),
                    ));
                }
                let out = lagrangian_values(&self.net, &theta.value(), s, &x.value())?;
                Ok(x.tape().constant(out))
            }
        }
    }

    /// `∂E/∂x`, itself differentiable.
    fn energy_gradient<'t>(&self, theta: Var<'t>, s: f64, x: Var<'t>) -> Result<Var<'t>> {
        let tape = x.tape();
        // differentiate with respect to a leaf when the state itself is constant
        let xin = if x.requires_grad() { x } else { tape.leaf(x.value()) };
        let e = self.energy(theta, s, xin)?.sum();
        Ok(tape.grad(e, &[xin], true)?[0])
    }
}

fn even_half(op: &str, shape: &[usize]) -> Result<usize> {
    match *shape {
        [_, w] if w % 2 == 0 && w > 0 => Ok(w / 2),
        _ => Err(Error::InvalidArgument(format!(
            "{op} needs an even, non-zero state width, got shape {shape:?}"
        ))),
    }
}

/// `(q̇, q̈)` with `q̈ = M⁻¹(∂L/∂q − (∂²L/∂q̇∂q)·q̇)` and `M = ∂²L/∂q̇²`.
fn lagrangian_values(net: &Layer, theta: &Tensor, s: f64, x: &Tensor) -> Result<Tensor> {
    let n = even_half("lagrangian field", x.shape())?;
    let batch = x.shape()[0];
    let tape = Tape::new();
    let th = tape.constant(theta.clone());
    let xv = tape.leaf(x.clone());
    let l = net.forward(&mut ParamCursor::new(th), s, xv)?.sum();
    let g = tape.grad(l, &[xv], true)?[0];
    // second derivatives: row j holds ∂(∂L/∂q̇_j)/∂x for every batch element
    let mut hess = Vec::with_capacity(n);
    for j in 0..n {
        let gj = g.narrow_cols(n + j, 1)?.sum();
        hess.push(tape.grad(gj, &[xv], false)?[0].value());
    }
    let grad = g.value();

    let mut out = Vec::with_capacity(batch * 2 * n);
    for b in 0..batch {
        let row = x.row(b)?;
        let qdot = &row[n..];
        let mass = DMatrix::from_fn(n, n, |j, k| hess[j].row(b).expect("row in range")[n + k]);
        let mixed = DMatrix::from_fn(n, n, |j, k| hess[j].row(b).expect("row in range")[k]);
        let dl_dq = DVector::from_column_slice(&grad.row(b)?[..n]);
        let rhs = dl_dq - mixed * DVector::from_column_slice(qdot);

        let sv = mass.clone().singular_values();
        let (hi, lo) = (sv.max(), sv.min());
        let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        if !(condition <= MAX_CONDITION) {
            return Err(Error::SingularMassMatrix { index: b, condition });
        }
        let qddot = mass
            .lu()
            .solve(&rhs)
            .ok_or(Error::SingularMassMatrix { index: b, condition })?;
        out.extend_from_slice(qdot);
        out.extend(qddot.iter());
    }
    Tensor::new(vec![batch, 2 * n], out)
}

impl fmt::Display for EnergyField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_indented(f, 0)
    }
}

impl EnergyField {
    pub(crate) fn fmt_indented(&self, f: &mut fmt::Formatter<'_>, indent: usize) -> fmt::Result {
        let name = match self.kind {
            EnergyKind::Hamiltonian => "HamiltonianField",
            EnergyKind::Lagrangian => "LagrangianField",
            EnergyKind::Stable => "StableField",
        };
        writeln!(f, "{name}(")?;
        write!(f, "{:w$}(net): ", "", w = indent + 2)?;
        self.net.fmt_indented(f, indent + 2)?;
        write!(f, "\n{:w$})", "", w = indent)
    }
}
