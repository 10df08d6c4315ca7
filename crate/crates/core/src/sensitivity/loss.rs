use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::odeint::VectorField;
use crate::tensor::{Tensor, Var};

/// A scalar loss on the terminal state, optionally with its own parameters
/// (a readout head, say) whose gradient is reported alongside.
pub trait TerminalLoss {
    fn aux_params(&self) -> Option<Tensor> {
        None
    }

    /// Scalar loss. `aux` is bound iff [`TerminalLoss::aux_params`] is `Some`.
    fn eval<'t>(&self, z1: Var<'t>, aux: Option<Var<'t>>) -> Result<Var<'t>>;
}

/// `Σ z(s1)`.
pub struct SumLoss;

impl TerminalLoss for SumLoss {
    fn eval<'t>(&self, z1: Var<'t>, _: Option<Var<'t>>) -> Result<Var<'t>> {
        Ok(z1.sum())
    }
}

/// `Σ w ⊙ z(s1)`; a fixed linear functional.
pub struct WeightedSum(pub Tensor);

impl TerminalLoss for WeightedSum {
    fn eval<'t>(&self, z1: Var<'t>, _: Option<Var<'t>>) -> Result<Var<'t>> {
        Ok(z1.mul(z1.tape().constant(self.0.clone()))?.sum())
    }
}

/// Mean squared error against a target.
pub struct MseLoss(pub Tensor);

impl TerminalLoss for MseLoss {
    fn eval<'t>(&self, z1: Var<'t>, _: Option<Var<'t>>) -> Result<Var<'t>> {
        z1.sub(z1.tape().constant(self.0.clone()))?.square().mean()
    }
}

/// Any closure over the terminal state.
pub struct FnLoss<F>(pub F);

impl<F> FnLoss<F>
where
    F: for<'t> Fn(Var<'t>) -> Result<Var<'t>>,
{
    /// Pins the closure's signature so it is generic over tape lifetimes.
    pub fn new(f: F) -> Self {
        Self(f)
    }
}

impl<F> TerminalLoss for FnLoss<F>
where
    F: for<'t> Fn(Var<'t>) -> Result<Var<'t>>,
{
    fn eval<'t>(&self, z1: Var<'t>, _: Option<Var<'t>>) -> Result<Var<'t>> {
        (self.0)(z1)
    }
}

/// Running cost `l(θ, z, s)`, one value per batch element.
pub trait Integrand {
    /// Returns `[B]`.
    fn eval<'t>(&self, field: &dyn VectorField, theta: Var<'t>, s: f64, z: Var<'t>) -> Result<Var<'t>>;
}

/// `‖z‖²` per row.
pub struct SquaredNorm;

impl Integrand for SquaredNorm {
    fn eval<'t>(&self, _: &dyn VectorField, _: Var<'t>, _: f64, z: Var<'t>) -> Result<Var<'t>> {
        z.square().sum_axis(1)
    }
}

/// Kinetic energy `‖f(s, z)‖²` per row.
pub struct Kinetic;

impl Integrand for Kinetic {
    fn eval<'t>(&self, field: &dyn VectorField, theta: Var<'t>, s: f64, z: Var<'t>) -> Result<Var<'t>> {
        field.eval(theta, s, z)?.square().sum_axis(1)
    }
}

/// Any closure over the depth and state.
pub struct FnIntegrand<F>(pub F);

impl<F> FnIntegrand<F>
where
    F: for<'t> Fn(f64, Var<'t>) -> Result<Var<'t>>,
{
    pub fn new(f: F) -> Self {
        Self(f)
    }
}

impl<F> Integrand for FnIntegrand<F>
where
    F: for<'t> Fn(f64, Var<'t>) -> Result<Var<'t>>,
{
    fn eval<'t>(&self, _: &dyn VectorField, _: Var<'t>, s: f64, z: Var<'t>) -> Result<Var<'t>> {
        (self.0)(s, z)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    #[default]
    Mean,
    Sum,
}

/// `weight · reduce_b ∫ l_b(θ, z(s), s) ds` over the whole depth span.
pub struct IntegralLoss {
    pub integrand: Box<dyn Integrand>,
    pub weight: f64,
    pub reduction: Reduction,
}

impl IntegralLoss {
    pub fn new(integrand: impl Integrand + 'static) -> Self {
        Self {
            integrand: Box::new(integrand),
            weight: 1.0,
            reduction: Reduction::Mean,
        }
    }

    pub fn weight(mut self, weight: f64) -> Self {
        self.weight = weight;
        self
    }

    pub fn reduction(mut self, reduction: Reduction) -> Self {
        self.reduction = reduction;
        self
    }

    /// `l` per batch element, as `[B]`.
    pub(crate) fn per_row<'t>(
        &self,
        field: &dyn VectorField,
        theta: Var<'t>,
        s: f64,
        z: Var<'t>,
    ) -> Result<Var<'t>> {
        let l = self.integrand.eval(field, theta, s, z)?;
        let batch = z.shape()[0];
        if l.shape() != [batch] {
            return Err(Error::ShapeMismatch {
                op: "integrand",
                lhs: l.shape(),
                rhs: vec![batch],
            });
        }
        Ok(l)
    }

    /// Weighted batch reduction of per-row values.
    pub(crate) fn reduce<'t>(&self, per_row: Var<'t>) -> Result<Var<'t>> {
        let r = match self.reduction {
            Reduction::Mean => per_row.mean()?,
            Reduction::Sum => per_row.sum(),
        };
        Ok(r.scale(self.weight))
    }

    /// Weighted, reduced integrand at one depth.
    pub(crate) fn density<'t>(
        &self,
        field: &dyn VectorField,
        theta: Var<'t>,
        s: f64,
        z: Var<'t>,
    ) -> Result<Var<'t>> {
        self.reduce(self.per_row(field, theta, s, z)?)
    }
}

/// What to differentiate: a terminal loss, an integral loss, or their sum.
#[derive(Clone, Copy, Default)]
pub struct Objective<'a> {
    pub terminal: Option<&'a dyn TerminalLoss>,
    pub integral: Option<&'a IntegralLoss>,
}

impl<'a> Objective<'a> {
    pub fn terminal(loss: &'a dyn TerminalLoss) -> Self {
        Self {
            terminal: Some(loss),
            integral: None,
        }
    }

    pub fn integral(loss: &'a IntegralLoss) -> Self {
        Self {
            terminal: None,
            integral: Some(loss),
        }
    }

    pub fn with_integral(mut self, loss: Option<&'a IntegralLoss>) -> Self {
        self.integral = loss;
        self
    }

    pub(crate) fn check(&self) -> Result<()> {
        if self.terminal.is_none() && self.integral.is_none() {
            return Err(Error::InvalidArgument("objective has neither a terminal nor an integral loss".into()));
        }
        Ok(())
    }
}
