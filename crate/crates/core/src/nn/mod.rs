//! Layers that parametrize vector fields.
//!
//! Parameters live inside the layers but forward passes read them from a flat
//! parameter vector bound on a tape (see [`ParamCursor`]). The flat ordering is
//! registration order, depth-first through containers, and is what
//! [`Layer::flatten_params`] produces.

mod basis;
pub mod checkpoint;

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use basis::FourierBasis;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Reads consecutive parameter tensors out of a flat parameter variable.
pub struct ParamCursor<'t> {
    theta: Var<'t>,
    offset: usize,
}

impl<'t> ParamCursor<'t> {
    pub fn new(theta: Var<'t>) -> Self {
        Self { theta, offset: 0 }
    }

    pub fn take(&mut self, shape: &[usize]) -> Result<Var<'t>> {
        let v = self.theta.segment(self.offset, shape.to_vec())?;
        self.offset += shape.iter().product::<usize>();
        Ok(v)
    }

    pub fn offset(&self) -> usize {
        self.offset
    }

    pub fn tape(&self) -> &'t Tape {
        self.theta.tape()
    }
}

/// Affine map `x·Wᵀ + b` with `W: [out×in]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    /// Weights and bias drawn from `U(−1/√in, 1/√in)`.
    pub fn new<R: Rng + ?Sized>(in_features: usize, out_features: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_features as f64).sqrt();
        let mut draw = |n: usize| (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
        Self {
            in_features,
            out_features,
            weight: Tensor::new(vec![out_features, in_features], draw(in_features * out_features))
                .expect("shape matches"),
            bias: Tensor::vector(draw(out_features)),
        }
    }

    pub fn from_parts(weight: Tensor, bias: Tensor) -> Result<Self> {
        let (out_features, in_features) = match weight.shape() {
            [o, i] => (*o, *i),
            s => {
                return Err(Error::Rank {
                    op: "Linear",
                    expected: 2,
                    shape: s.to_vec(),
                })
            }
        };
        if bias.shape() != [out_features] {
            return Err(Error::ShapeMismatch {
                op: "Linear",
                lhs: weight.shape().to_vec(),
                rhs: bias.shape().to_vec(),
            });
        }
        Ok(Self {
            in_features,
            out_features,
            weight,
            bias,
        })
    }

    fn forward<'t>(&self, params: &mut ParamCursor<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let w = params.take(self.weight.shape())?;
        let b = params.take(self.bias.shape())?;
        check_features("Linear", &x.shape(), self.in_features)?;
        x.matmul(w.t()?)?.add(b)
    }
}

/// Linear layer whose weight and bias are Fourier expansions in depth:
/// `W(s) = Σₖ Cₖ·ψₖ(s)`, `b(s) = Σₖ cₖ·ψₖ(s)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GalLinear {
    pub in_features: usize,
    pub out_features: usize,
    pub basis: FourierBasis,
    /// `[K × out·in]`, row `k` is `Cₖ` flattened.
    pub weight_coeffs: Tensor,
    /// `[K × out]`.
    pub bias_coeffs: Tensor,
}

impl GalLinear {
    /// Constant term initialized like [`Linear`]; higher harmonics start at zero.
    pub fn new<R: Rng + ?Sized>(
        in_features: usize,
        out_features: usize,
        basis: FourierBasis,
        rng: &mut R,
    ) -> Self {
        let k = basis.len();
        let base = Linear::new(in_features, out_features, rng);
        let mut weight_coeffs = Tensor::zeros(vec![k, in_features * out_features]);
        weight_coeffs.data_mut()[..in_features * out_features]
            .copy_from_slice(base.weight.data());
        let mut bias_coeffs = Tensor::zeros(vec![k, out_features]);
        bias_coeffs.data_mut()[..out_features].copy_from_slice(base.bias.data());
        Self {
            in_features,
            out_features,
            basis,
            weight_coeffs,
            bias_coeffs,
        }
    }

    /// `W(s)` as a plain `[out×in]` tensor.
    pub fn weight_at(&self, s: f64) -> Tensor {
        let psi = Tensor::matrix(1, self.basis.len(), self.basis.eval(s)).expect("basis row");
        psi.matmul(&self.weight_coeffs)
            .and_then(|w| w.reshape(vec![self.out_features, self.in_features]))
            .expect("coefficient shapes")
    }

    fn forward<'t>(&self, params: &mut ParamCursor<'t>, s: f64, x: Var<'t>) -> Result<Var<'t>> {
        let cw = params.take(self.weight_coeffs.shape())?;
        let cb = params.take(self.bias_coeffs.shape())?;
        check_features("GalLinear", &x.shape(), self.in_features)?;
        let tape = params.tape();
        let psi = tape.constant(Tensor::matrix(1, self.basis.len(), self.basis.eval(s))?);
        let w = psi
            .matmul(cw)?
            .reshape(vec![self.out_features, self.in_features])?;
        let b = psi.matmul(cb)?;
        x.matmul(w.t()?)?.add(b)
    }
}

fn check_features(op: &'static str, shape: &[usize], expected: usize) -> Result<()> {
    match shape {
        [_, n] if *n == expected => Ok(()),
        [_, _] => Err(Error::ShapeMismatch {
            op,
            lhs: shape.to_vec(),
            rhs: vec![expected],
        }),
        _ => Err(Error::Rank {
            op,
            expected: 2,
            shape: shape.to_vec(),
        }),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Layer {
    Linear(Linear),
    Tanh,
    Softplus,
    /// Elementwise `x²`; builds quadratic energies.
    Square,
    /// Appends the depth `s` as a trailing column.
    DepthCat,
    GalLinear(GalLinear),
    Sequential(Vec<Layer>),
}

impl Layer {
    pub fn linear<R: Rng + ?Sized>(in_features: usize, out_features: usize, rng: &mut R) -> Self {
        Layer::Linear(Linear::new(in_features, out_features, rng))
    }

    pub fn gal_linear<R: Rng + ?Sized>(
        in_features: usize,
        out_features: usize,
        basis: FourierBasis,
        rng: &mut R,
    ) -> Self {
        Layer::GalLinear(GalLinear::new(in_features, out_features, basis, rng))
    }

    pub fn param_count(&self) -> usize {
        self.parameters().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Named parameters in flattening order.
    pub fn parameters(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.collect_params("", &mut out);
        out
    }

    fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        match self {
            Layer::Linear(l) => {
                out.push((format!("{prefix}weight"), &l.weight));
                out.push((format!("{prefix}bias"), &l.bias));
            }
            Layer::GalLinear(g) => {
                out.push((format!("{prefix}weight_coeffs"), &g.weight_coeffs));
                out.push((format!("{prefix}bias_coeffs"), &g.bias_coeffs));
            }
            Layer::Sequential(layers) => {
                for (i, l) in layers.iter().enumerate() {
                    l.collect_params(&format!("{prefix}{i}."), out);
                }
            }
            Layer::Tanh | Layer::Softplus | Layer::Square | Layer::DepthCat => {}
        }
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Linear(l) => vec![&mut l.weight, &mut l.bias],
            Layer::GalLinear(g) => vec![&mut g.weight_coeffs, &mut g.bias_coeffs],
            Layer::Sequential(layers) => layers.iter_mut().flat_map(Layer::parameters_mut).collect(),
            Layer::Tanh | Layer::Softplus | Layer::Square | Layer::DepthCat => Vec::new(),
        }
    }

    /// All parameters concatenated into one rank-1 tensor.
    pub fn flatten_params(&self) -> Tensor {
        let mut data = Vec::with_capacity(self.param_count());
        for (_, t) in self.parameters() {
            data.extend_from_slice(t.data());
        }
        Tensor::vector(data)
    }

    /// Inverse of [`Layer::flatten_params`].
    pub fn unflatten_params(&mut self, theta: &Tensor) -> Result<()> {
        let expected = self.param_count();
        if theta.numel() != expected {
            return Err(Error::ParamLength {
                expected,
                got: theta.numel(),
            });
        }
        let mut offset = 0;
        for p in self.parameters_mut() {
            let n = p.numel();
            p.data_mut().copy_from_slice(&theta.data()[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Forward pass reading parameters from `params`. Depth-aware layers use `s`.
    pub fn forward<'t>(&self, params: &mut ParamCursor<'t>, s: f64, x: Var<'t>) -> Result<Var<'t>> {
        match self {
            Layer::Linear(l) => l.forward(params, x),
            Layer::GalLinear(g) => g.forward(params, s, x),
            Layer::Tanh => Ok(x.tanh()),
            Layer::Softplus => Ok(x.softplus()),
            Layer::Square => Ok(x.square()),
            Layer::DepthCat => depth_cat(s, x),
            Layer::Sequential(layers) => {
                let mut h = x;
                for (index, layer) in layers.iter().enumerate() {
                    h = layer.forward(params, s, h).map_err(|e| Error::Layer {
                        index,
                        source: Box::new(e),
                    })?;
                }
                Ok(h)
            }
        }
    }

    /// Binds this layer's own parameters on `x`'s tape and runs the forward pass.
    pub fn apply<'t>(&self, s: f64, x: Var<'t>, requires_grad: bool) -> Result<Var<'t>> {
        let theta = x.tape().input(self.flatten_params(), requires_grad);
        self.forward(&mut ParamCursor::new(theta), s, x)
    }

    /// Plain-value forward pass.
    pub fn eval(&self, s: f64, x: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let xv = tape.constant(x.clone());
        Ok(self.apply(s, xv, false)?.value())
    }
}

/// `[z | s]`: the depth appended as a constant trailing column.
pub fn depth_cat<'t>(s: f64, z: Var<'t>) -> Result<Var<'t>> {
    let shape = z.shape();
    let [batch, _] = shape[..] else {
        return Err(Error::Rank {
            op: "DepthCat",
            expected: 2,
            shape,
        });
    };
    let col = z.tape().constant(Tensor::full(vec![batch, 1], s));
    z.tape().concat_cols(&[z, col])
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_indented(f, 0)
    }
}

impl Layer {
    pub(crate) fn fmt_indented(&self, f: &mut fmt::Formatter<'_>, indent: usize) -> fmt::Result {
        match self {
            Layer::Linear(l) => write!(
                f,
                "Linear(in_features={}, out_features={}, bias=True)",
                l.in_features, l.out_features
            ),
            Layer::GalLinear(g) => write!(
                f,
                "GalLinear(in_features={}, out_features={}, n_terms={})",
                g.in_features, g.out_features, g.basis.n_terms
            ),
            Layer::Tanh => write!(f, "Tanh()"),
            Layer::Softplus => write!(f, "Softplus()"),
            Layer::Square => write!(f, "Square()"),
            Layer::DepthCat => write!(f, "DepthCat()"),
            Layer::Sequential(layers) => {
                writeln!(f, "Sequential(")?;
                for (i, l) in layers.iter().enumerate() {
                    write!(f, "{:width$}({i}): ", "", width = indent + 2)?;
                    l.fmt_indented(f, indent + 2)?;
                    writeln!(f)?;
                }
                write!(f, "{:width$})", "", width = indent)
            }
        }
    }
}
