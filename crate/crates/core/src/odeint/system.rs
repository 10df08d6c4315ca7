use crate::error::Result;
use crate::tensor::{Tape, Tensor, Var};

/// A solver state: plain values, or variables recorded on a tape.
pub trait OdeState: Clone {
    /// `self + Σ cᵢ·termsᵢ`
    fn lincomb(&self, terms: &[(f64, &Self)]) -> Result<Self>;

    fn to_tensor(&self) -> Tensor;
}

impl OdeState for Tensor {
    fn lincomb(&self, terms: &[(f64, &Self)]) -> Result<Self> {
        Tensor::lincomb(self, terms)
    }

    fn to_tensor(&self) -> Tensor {
        self.clone()
    }
}

impl<'t> OdeState for Var<'t> {
    fn lincomb(&self, terms: &[(f64, &Self)]) -> Result<Self> {
        let mut all = Vec::with_capacity(terms.len() + 1);
        all.push((1.0, *self));
        all.extend(terms.iter().filter(|(c, _)| *c != 0.0).map(|(c, v)| (*c, **v)));
        self.tape().lincomb(&all)
    }

    fn to_tensor(&self) -> Tensor {
        self.value()
    }
}

/// Right-hand side seen by the solvers.
pub trait System<S> {
    fn rhs(&mut self, s: f64, z: &S) -> Result<S>;

    /// Leading columns of a `[B×W]` state that enter the adaptive error norm.
    /// `None` uses every element.
    fn error_columns(&self, _width: usize) -> Option<usize> {
        None
    }
}

impl<S, F> System<S> for F
where
    F: FnMut(f64, &S) -> Result<S>,
{
    fn rhs(&mut self, s: f64, z: &S) -> Result<S> {
        self(s, z)
    }
}

/// A depth-indexed field `f(s, z; θ)` with a flat parameter vector.
pub trait VectorField {
    fn num_params(&self) -> usize;

    /// Current parameters, flattened.
    fn params(&self) -> Tensor;

    /// Evaluates the field on `z`'s tape with parameters `theta`.
    fn eval<'t>(&self, theta: Var<'t>, s: f64, z: Var<'t>) -> Result<Var<'t>>;

    /// See [`System::error_columns`].
    fn error_columns(&self, _width: usize) -> Option<usize> {
        None
    }
}

impl<F: VectorField + ?Sized> VectorField for &F {
    fn num_params(&self) -> usize {
        (**self).num_params()
    }

    fn params(&self) -> Tensor {
        (**self).params()
    }

    fn eval<'t>(&self, theta: Var<'t>, s: f64, z: Var<'t>) -> Result<Var<'t>> {
        (**self).eval(theta, s, z)
    }

    fn error_columns(&self, width: usize) -> Option<usize> {
        (**self).error_columns(width)
    }
}

/// Evaluates a [`VectorField`] on plain values, one throwaway tape per call.
pub struct ValueSystem<'a, F: ?Sized> {
    pub field: &'a F,
    pub theta: &'a Tensor,
}

impl<'a, F: VectorField + ?Sized> ValueSystem<'a, F> {
    pub fn new(field: &'a F, theta: &'a Tensor) -> Self {
        Self { field, theta }
    }
}

impl<F: VectorField + ?Sized> System<Tensor> for ValueSystem<'_, F> {
    fn rhs(&mut self, s: f64, z: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let theta = tape.constant(self.theta.clone());
        let zv = tape.constant(z.clone());
        Ok(self.field.eval(theta, s, zv)?.value())
    }

    fn error_columns(&self, width: usize) -> Option<usize> {
        self.field.error_columns(width)
    }
}

/// Evaluates a [`VectorField`] on tape variables, recording every step.
pub struct TapeSystem<'a, 't, F: ?Sized> {
    pub field: &'a F,
    pub theta: Var<'t>,
}

impl<'a, 't, F: VectorField + ?Sized> TapeSystem<'a, 't, F> {
    pub fn new(field: &'a F, theta: Var<'t>) -> Self {
        Self { field, theta }
    }
}

impl<'t, F: VectorField + ?Sized> System<Var<'t>> for TapeSystem<'_, 't, F> {
    fn rhs(&mut self, s: f64, z: &Var<'t>) -> Result<Var<'t>> {
        self.field.eval(self.theta, s, *z)
    }

    fn error_columns(&self, width: usize) -> Option<usize> {
        self.field.error_columns(width)
    }
}
