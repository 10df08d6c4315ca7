//! Loss gradients through an ODE solve.
//!
//! [`grad_backprop`] records every solver stage on one tape and differentiates
//! the discrete computation exactly; memory grows with the number of steps.
//! [`grad_adjoint`] re-integrates the state backwards together with the
//! adjoint and the parameter gradient, building a small throwaway tape per
//! right-hand-side evaluation, so memory does not depend on the step count.
//!
//! With an adaptive solver, backprop treats the accepted step sizes as
//! constants.

mod loss;

use serde::{Deserialize, Serialize};

pub use loss::{
    FnIntegrand, FnLoss, Integrand, IntegralLoss, Kinetic, MseLoss, Objective, Reduction, SquaredNorm, SumLoss,
    TerminalLoss, WeightedSum,
};

use crate::error::{Error, Result};
use crate::odeint::{solve_states, DepthSpan, SolveStats, SolverConfig, System, TapeSystem, ValueSystem, VectorField};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sensitivity {
    /// Backpropagation through the solver.
    #[default]
    Autograd,
    Adjoint,
}

#[derive(Clone, Debug)]
pub struct Gradients {
    pub loss: f64,
    /// Flattened, matching [`VectorField::params`].
    pub theta: Tensor,
    pub z0: Tensor,
    /// Gradient of the terminal loss's own parameters.
    pub aux: Option<Tensor>,
    pub forward_stats: SolveStats,
    /// Zero for backprop.
    pub backward_stats: SolveStats,
}

/// Dispatches on `method`.
pub fn gradients(
    method: Sensitivity,
    field: &dyn VectorField,
    z0: &Tensor,
    span: &DepthSpan,
    cfg: &SolverConfig,
    objective: Objective<'_>,
) -> Result<Gradients> {
    match method {
        Sensitivity::Autograd => grad_backprop(field, z0, span, cfg, objective),
        Sensitivity::Adjoint => grad_adjoint_objective(field, z0, span, cfg, objective),
    }
}

fn check_state(z0: &Tensor) -> Result<(usize, usize)> {
    match *z0.shape() {
        [b, d] => Ok((b, d)),
        _ => Err(Error::Rank {
            op: "sensitivity",
            expected: 2,
            shape: z0.shape().to_vec(),
        }),
    }
}

/// Differentiates the discretized forward solve. Integral losses use the
/// trapezoidal rule on the accepted solver steps.
pub fn grad_backprop(
    field: &dyn VectorField,
    z0: &Tensor,
    span: &DepthSpan,
    cfg: &SolverConfig,
    objective: Objective<'_>,
) -> Result<Gradients> {
    objective.check()?;
    check_state(z0)?;
    let tape = Tape::new();
    let theta = tape.leaf(field.params());
    let z0v = tape.leaf(z0.clone());
    let mut sys = TapeSystem::new(field, theta);

    let mut integral: Option<Var<'_>> = None;
    let mut prev: Option<(f64, Var<'_>)> = None;
    let observe = &mut |s: f64, z: &_| -> Result<()> {
        let Some(il) = objective.integral else {
            return Ok(());
        };
        let l = il.density(field, theta, s, *z)?;
        if let Some((s_prev, l_prev)) = prev {
            let piece = tape.lincomb(&[(0.5 * (s - s_prev), l_prev), (0.5 * (s - s_prev), l)])?;
            integral = Some(match integral {
                Some(acc) => acc.add(piece)?,
                None => piece,
            });
        }
        prev = Some((s, l));
        Ok(())
    };
    let (states, stats) = solve_states(&mut sys, z0v, &[span.s0, span.s1], cfg, observe)?;
    let z1 = states[1];

    let aux = objective
        .terminal
        .and_then(|t| t.aux_params())
        .map(|a| tape.leaf(a));
    let mut total = match objective.terminal {
        Some(t) => Some(t.eval(z1, aux)?),
        None => None,
    };
    if let Some(i) = integral {
        total = Some(match total {
            Some(t) => t.add(i)?,
            None => i,
        });
    }
    // an integral over a single point is empty
    let total = total.unwrap_or_else(|| tape.scalar(0.0));

    let mut wrt = vec![theta, z0v];
    wrt.extend(aux);
    let grads = tape.grad(total, &wrt, false)?;
    Ok(Gradients {
        loss: total.item(),
        theta: grads[0].value(),
        z0: grads[1].value(),
        aux: grads.get(2).map(Var::value),
        forward_stats: stats,
        backward_stats: SolveStats::default(),
    })
}

/// Adjoint gradient of a terminal loss.
pub fn grad_adjoint(
    field: &dyn VectorField,
    z0: &Tensor,
    span: &DepthSpan,
    cfg: &SolverConfig,
    loss: &dyn TerminalLoss,
) -> Result<Gradients> {
    grad_adjoint_objective(field, z0, span, cfg, Objective::terminal(loss))
}

/// Adjoint gradient of an integral loss, plus an optional terminal loss.
pub fn grad_adjoint_integral(
    field: &dyn VectorField,
    z0: &Tensor,
    span: &DepthSpan,
    cfg: &SolverConfig,
    integral: &IntegralLoss,
    terminal: Option<&dyn TerminalLoss>,
) -> Result<Gradients> {
    let objective = Objective {
        terminal,
        integral: Some(integral),
    };
    grad_adjoint_objective(field, z0, span, cfg, objective)
}

/// Adjoint gradient of any objective.
pub fn grad_adjoint_objective(
    field: &dyn VectorField,
    z0: &Tensor,
    span: &DepthSpan,
    cfg: &SolverConfig,
    objective: Objective<'_>,
) -> Result<Gradients> {
    objective.check()?;
    let (batch, dim) = check_state(z0)?;
    let theta = field.params();
    let depths = [span.s0, span.s1];
    let noop = &mut |_: f64, _: &Tensor| Ok(());

    // forward: the integral rides along as one accumulator column per row
    let (z1, integral_value, forward_stats) = match objective.integral {
        Some(il) => {
            let aug = WithIntegral { field, loss: il };
            let start = z0.pad_cols(0, dim + 1)?;
            let (states, stats) = solve_states(&mut ValueSystem::new(&aug, &theta), start, &depths, cfg, noop)?;
            let end = &states[1];
            let per_row = end.narrow_cols(dim, 1)?;
            let tape = Tape::new();
            let value = il.reduce(tape.constant(per_row.reshape(vec![batch])?))?.item();
            (end.narrow_cols(0, dim)?, value, stats)
        }
        None => {
            let (states, stats) = solve_states(&mut ValueSystem::new(field, &theta), z0.clone(), &depths, cfg, noop)?;
            (states[1].clone(), 0.0, stats)
        }
    };

    let (terminal_value, a1, aux) = match objective.terminal {
        Some(t) => {
            let tape = Tape::new();
            let z1v = tape.leaf(z1.clone());
            let aux = t.aux_params().map(|a| tape.leaf(a));
            let l = t.eval(z1v, aux)?;
            let mut wrt = vec![z1v];
            wrt.extend(aux);
            let g = tape.grad(l, &wrt, false)?;
            (l.item(), g[0].value(), g.get(1).map(Var::value))
        }
        None => (0.0, Tensor::zeros(vec![batch, dim]), None),
    };

    let start = AdjointState {
        z: z1,
        a: a1,
        g_theta: Tensor::zeros(vec![theta.numel()]),
    };
    let mut sys = AdjointSystem {
        field,
        theta: &theta,
        integral: objective.integral,
        s1: span.s1,
        batch,
        dim,
    };
    let (states, backward_stats) = solve_states(&mut sys, start.pack(), &[0.0, span.s1 - span.s0], cfg, noop)
        .map_err(|e| Error::BackwardSolve(Box::new(e)))?;
    let end = AdjointState::unpack(&states[1], batch, dim, theta.numel())?;

    Ok(Gradients {
        loss: terminal_value + integral_value,
        theta: end.g_theta,
        z0: end.a,
        aux,
        forward_stats,
        backward_stats,
    })
}

/// State of the backward pass: the re-integrated state, the adjoint
/// `a = ∂L/∂z`, and the accumulated parameter gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct AdjointState {
    pub z: Tensor,
    pub a: Tensor,
    pub g_theta: Tensor,
}

impl AdjointState {
    /// Flattens into one rank-1 tensor `[z, a, g_theta]`.
    pub fn pack(&self) -> Tensor {
        let mut data = Vec::with_capacity(self.z.numel() + self.a.numel() + self.g_theta.numel());
        data.extend_from_slice(self.z.data());
        data.extend_from_slice(self.a.data());
        data.extend_from_slice(self.g_theta.data());
        Tensor::vector(data)
    }

    pub fn unpack(packed: &Tensor, batch: usize, dim: usize, params: usize) -> Result<Self> {
        let n = batch * dim;
        if packed.numel() != 2 * n + params {
            return Err(Error::DataLength {
                shape: vec![2 * n + params],
                expected: 2 * n + params,
                got: packed.numel(),
            });
        }
        let d = packed.data();
        Ok(Self {
            z: Tensor::new(vec![batch, dim], d[..n].to_vec())?,
            a: Tensor::new(vec![batch, dim], d[n..2 * n].to_vec())?,
            g_theta: Tensor::vector(d[2 * n..].to_vec()),
        })
    }
}

/// Backward dynamics in reversed depth `σ = s1 − s`:
/// `dz/dσ = −f`, `da/dσ = ∂(aᵀf + l)/∂z`, `dg/dσ = ∂(aᵀf + l)/∂θ`.
struct AdjointSystem<'a> {
    field: &'a dyn VectorField,
    theta: &'a Tensor,
    integral: Option<&'a IntegralLoss>,
    s1: f64,
    batch: usize,
    dim: usize,
}

impl System<Tensor> for AdjointSystem<'_> {
    fn rhs(&mut self, sigma: f64, y: &Tensor) -> Result<Tensor> {
        let st = AdjointState::unpack(y, self.batch, self.dim, self.theta.numel())?;
        let s = self.s1 - sigma;
        let tape = Tape::new();
        let theta = tape.leaf(self.theta.clone());
        let z = tape.leaf(st.z);
        let f = self.field.eval(theta, s, z)?;
        let mut h = f.mul(tape.constant(st.a))?.sum();
        if let Some(il) = self.integral {
            h = h.add(il.density(self.field, theta, s, z)?)?;
        }
        let g = tape.grad(h, &[z, theta], false)?;
        Ok(AdjointState {
            z: f.value().scale(-1.0),
            a: g[0].value(),
            g_theta: g[1].value(),
        }
        .pack())
    }
}

/// The field with one extra column per row integrating the loss integrand.
struct WithIntegral<'a> {
    field: &'a dyn VectorField,
    loss: &'a IntegralLoss,
}

impl VectorField for WithIntegral<'_> {
    fn num_params(&self) -> usize {
        self.field.num_params()
    }

    fn params(&self) -> Tensor {
        self.field.params()
    }

    fn eval<'t>(&self, theta: Var<'t>, s: f64, z: Var<'t>) -> Result<Var<'t>> {
        let shape = z.shape();
        let (batch, width) = (shape[0], shape[1]);
        let x = z.narrow_cols(0, width - 1)?;
        let f = self.field.eval(theta, s, x)?;
        let l = self.loss.per_row(self.field, theta, s, x)?.reshape(vec![batch, 1])?;
        z.tape().concat_cols(&[f, l])
    }

    fn error_columns(&self, width: usize) -> Option<usize> {
        let inner = width - 1;
        Some(self.field.error_columns(inner).unwrap_or(inner).min(inner))
    }
}
