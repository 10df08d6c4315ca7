//! Continuous-depth models: the field wrapper [`DEFunc`], [`NeuralODE`] and
//! continuous normalizing flows ([`Cnf`]).

mod cnf;
pub mod divergence;
mod energy;
mod neural_ode;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use cnf::{gaussian_log_density, Cnf, NllLoss};
pub use divergence::{divergence_exact, divergence_hutchinson, exact_divergence, hutchinson_divergence, rademacher};
pub use energy::{EnergyField, EnergyKind, MAX_CONDITION};
pub use neural_ode::NeuralODE;

use crate::error::{Error, Result};
use crate::nn::{checkpoint, Layer, ParamCursor};
use crate::odeint::VectorField;
use crate::tensor::{Tensor, Var};

/// The learned part of a [`DEFunc`].
#[derive(Clone, Debug)]
pub enum Field {
    Net(Layer),
    Energy(EnergyField),
}

impl Field {
    pub fn layer(&self) -> &Layer {
        match self {
            Field::Net(l) => l,
            Field::Energy(e) => &e.net,
        }
    }

    pub fn layer_mut(&mut self) -> &mut Layer {
        match self {
            Field::Net(l) => l,
            Field::Energy(e) => &mut e.net,
        }
    }

    fn eval<'t>(&self, theta: Var<'t>, s: f64, x: Var<'t>) -> Result<Var<'t>> {
        match self {
            Field::Net(l) => l.forward(&mut ParamCursor::new(theta), s, x),
            Field::Energy(e) => e.eval(theta, s, x),
        }
    }
}

/// How the divergence of the field is accumulated alongside the state.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode")]
pub enum Divergence {
    #[default]
    None,
    Exact,
    /// Rademacher probes, drawn once per solve.
    Hutchinson { samples: usize },
}

impl Divergence {
    pub fn is_active(self) -> bool {
        self != Divergence::None
    }
}

/// Wraps a field into solver dynamics.
///
/// Solver state layout per row: data columns, then `augment_dims` zero-initialized
/// columns, then one divergence accumulator when divergence is active. With
/// `order = k` the first two parts are read as `k` equal blocks
/// `(x₁, …, x_k)` with `dxᵢ/ds = xᵢ₊₁` and `dx_k/ds = field(s, x₁, …, x_k)`.
#[derive(Clone, Debug)]
pub struct DEFunc {
    pub field: Field,
    pub order: usize,
    pub augment_dims: usize,
    pub divergence: Divergence,
}

impl DEFunc {
    pub fn new(net: Layer) -> Self {
        Self::from_field(Field::Net(net))
    }

    pub fn energy(field: EnergyField) -> Self {
        Self::from_field(Field::Energy(field))
    }

    fn from_field(field: Field) -> Self {
        Self {
            field,
            order: 1,
            augment_dims: 0,
            divergence: Divergence::None,
        }
    }

    pub fn with_order(mut self, order: usize) -> Self {
        self.order = order;
        self
    }

    pub fn with_augment_dims(mut self, dims: usize) -> Self {
        self.augment_dims = dims;
        self
    }

    pub fn with_divergence(mut self, divergence: Divergence) -> Self {
        self.divergence = divergence;
        self
    }

    pub fn param_count(&self) -> usize {
        self.field.layer().param_count()
    }

    pub fn set_params(&mut self, theta: &Tensor) -> Result<()> {
        self.field.layer_mut().unflatten_params(theta)
    }

    pub fn records(&self, prefix: &str) -> Vec<checkpoint::ParamRecord> {
        checkpoint::records(self.field.layer(), prefix)
    }

    pub fn load_records(&mut self, prefix: &str, recs: &[checkpoint::ParamRecord]) -> Result<()> {
        checkpoint::load_into(self.field.layer_mut(), prefix, recs)
    }

    /// Dynamic columns (data plus augmentation) for `input_dim` data columns.
    pub fn dynamic_dim(&self, input_dim: usize) -> usize {
        input_dim + self.augment_dims
    }

    /// Full solver-state width for `input_dim` data columns.
    pub fn state_width(&self, input_dim: usize) -> usize {
        self.dynamic_dim(input_dim) + usize::from(self.divergence.is_active())
    }

    fn validate_width(&self, dynamic: usize) -> Result<()> {
        if self.order == 0 {
            return Err(Error::InvalidArgument("order must be at least 1".into()));
        }
        if dynamic % self.order != 0 {
            return Err(Error::InvalidArgument(format!(
                "state dimension {dynamic} is not divisible by order {}",
                self.order
            )));
        }
        if let Divergence::Hutchinson { samples: 0 } = self.divergence {
            return Err(Error::InvalidArgument("Hutchinson estimator needs at least one sample".into()));
        }
        Ok(())
    }

    /// Initial solver state for data `x` `[B×d]`: zero augmentation and accumulator appended.
    pub fn pack(&self, x: &Tensor) -> Result<Tensor> {
        let (_, d) = crate::tensor::dims2("pack", x)?;
        if !x.is_finite() {
            return Err(Error::InvalidArgument("input holds non-finite values".into()));
        }
        self.validate_width(self.dynamic_dim(d))?;
        x.pad_cols(0, self.state_width(d))
    }

    /// Drops the divergence accumulator, keeping data and augmented columns.
    pub fn strip(&self, z: &Tensor) -> Result<Tensor> {
        if !self.divergence.is_active() {
            return Ok(z.clone());
        }
        let (_, w) = crate::tensor::dims2("strip", z)?;
        z.narrow_cols(0, w - 1)
    }

    /// `dx/ds` on the dynamic columns only (no divergence).
    pub fn dynamics<'t>(&self, theta: Var<'t>, s: f64, x: Var<'t>) -> Result<Var<'t>> {
        let shape = x.shape();
        let width = *shape.get(1).ok_or(Error::Rank {
            op: "DEFunc",
            expected: 2,
            shape: shape.clone(),
        })?;
        self.validate_width(width)?;
        higher_order_field(x, self.order, |x| self.field.eval(theta, s, x))
    }

    /// Full right-hand side; `noise` is required for the Hutchinson estimator.
    pub fn eval_with_noise<'t>(&self, theta: Var<'t>, s: f64, z: Var<'t>, noise: Option<&Tensor>) -> Result<Var<'t>> {
        if !self.divergence.is_active() {
            return self.dynamics(theta, s, z);
        }
        let tape = z.tape();
        let (batch, width) = match z.shape()[..] {
            [b, w] if w >= 2 => (b, w),
            ref shape => {
                return Err(Error::Rank {
                    op: "DEFunc",
                    expected: 2,
                    shape: shape.to_vec(),
                })
            }
        };
        let create_graph = theta.requires_grad() || z.requires_grad();
        let x = z.narrow_cols(0, width - 1)?;
        // the divergence needs a differentiable state even on plain values
        let x = if x.requires_grad() { x } else { tape.leaf(x.value()) };
        let f = self.dynamics(theta, s, x)?;
        let div = match self.divergence {
            Divergence::Exact => exact_divergence(f, x, create_graph)?,
            Divergence::Hutchinson { samples } => {
                let noise = noise.ok_or_else(|| {
                    Error::InvalidArgument("Hutchinson divergence needs probe noise for the solve".into())
                })?;
                if noise.shape().first() != Some(&samples) {
                    return Err(Error::ShapeMismatch {
                        op: "hutchinson noise",
                        lhs: noise.shape().to_vec(),
                        rhs: vec![samples, batch, width - 1],
                    });
                }
                hutchinson_divergence(f, x, noise, create_graph)?
            }
            Divergence::None => unreachable!("checked above"),
        };
        tape.concat_cols(&[f, div.reshape(vec![batch, 1])?.neg()])
    }

    /// This field with Hutchinson probes fixed for one solve.
    pub fn with_noise<'a>(&'a self, noise: Option<&'a Tensor>) -> NoisyField<'a> {
        NoisyField { defunc: self, noise }
    }
}

impl VectorField for DEFunc {
    fn num_params(&self) -> usize {
        self.param_count()
    }

    fn params(&self) -> Tensor {
        self.field.layer().flatten_params()
    }

    fn eval<'t>(&self, theta: Var<'t>, s: f64, z: Var<'t>) -> Result<Var<'t>> {
        self.eval_with_noise(theta, s, z, None)
    }

    fn error_columns(&self, width: usize) -> Option<usize> {
        self.divergence.is_active().then(|| width.saturating_sub(1))
    }
}

/// A [`DEFunc`] with its probe noise bound.
#[derive(Clone, Copy)]
pub struct NoisyField<'a> {
    pub defunc: &'a DEFunc,
    pub noise: Option<&'a Tensor>,
}

impl VectorField for NoisyField<'_> {
    fn num_params(&self) -> usize {
        self.defunc.param_count()
    }

    fn params(&self) -> Tensor {
        self.defunc.params()
    }

    fn eval<'t>(&self, theta: Var<'t>, s: f64, z: Var<'t>) -> Result<Var<'t>> {
        self.defunc.eval_with_noise(theta, s, z, self.noise)
    }

    fn error_columns(&self, width: usize) -> Option<usize> {
        self.defunc.error_columns(width)
    }
}

impl fmt::Display for DEFunc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "DEFunc(")?;
        write!(f, "  (m): ")?;
        match &self.field {
            Field::Net(l) => l.fmt_indented(f, 2)?,
            Field::Energy(e) => e.fmt_indented(f, 2)?,
        }
        write!(f, "\n)")
    }
}

/// First-order form of a `k`-th order system: for `x = (x₁, …, x_k)`,
/// returns `(x₂, …, x_k, top(x))` where `top` yields one block.
pub fn higher_order_field<'t, F>(x: Var<'t>, k: usize, top: F) -> Result<Var<'t>>
where
    F: FnOnce(Var<'t>) -> Result<Var<'t>>,
{
    if k == 1 {
        return top(x);
    }
    let shape = x.shape();
    let width = shape[1];
    if k == 0 || width % k != 0 {
        return Err(Error::InvalidArgument(format!(
            "state dimension {width} is not divisible by order {k}"
        )));
    }
    let block = width / k;
    let last = top(x)?;
    let expected = vec![shape[0], block];
    if last.shape() != expected {
        return Err(Error::ShapeMismatch {
            op: "higher-order field output",
            lhs: last.shape(),
            rhs: expected,
        });
    }
    let mut parts = Vec::with_capacity(k);
    parts.push(x.narrow_cols(block, width - block)?);
    parts.push(last);
    x.tape().concat_cols(&parts)
}

/// Splits `[B×(k·d)]` into its `k` blocks `(x₁, …, x_k)`.
pub fn higher_order_unpack(x: &Tensor, k: usize) -> Result<Vec<Tensor>> {
    let (_, width) = crate::tensor::dims2("higher_order_unpack", x)?;
    if k == 0 || width % k != 0 {
        return Err(Error::InvalidArgument(format!(
            "state dimension {width} is not divisible by order {k}"
        )));
    }
    let block = width / k;
    (0..k).map(|i| x.narrow_cols(i * block, block)).collect()
}

/// Inverse of [`higher_order_unpack`].
pub fn higher_order_pack(blocks: &[Tensor]) -> Result<Tensor> {
    let refs: Vec<&Tensor> = blocks.iter().collect();
    Tensor::concat_cols(&refs)
}
