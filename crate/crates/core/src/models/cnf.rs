use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

use super::{rademacher, Divergence, NeuralODE};
use crate::error::{Error, Result};
use crate::odeint::solve_states;
use crate::sensitivity::{Gradients, TerminalLoss};
use crate::tensor::{Tape, Tensor, Var};

/// `log N(z; 0, I)` per row, `[B]`.
pub fn gaussian_log_density(z: &Tensor) -> Result<Tensor> {
    let (_, d) = crate::tensor::dims2("gaussian_log_density", z)?;
    let c = 0.5 * d as f64 * (2.0 * PI).ln();
    Ok(Tensor::vector(
        z.data()
            .chunks(d.max(1))
            .map(|row| -0.5 * row.iter().map(|v| v * v).sum::<f64>() - c)
            .collect(),
    ))
}

/// Continuous normalizing flow: integrates data to a standard normal base
/// over the model's span, with the log-density change in the last column.
///
/// `log p(x) = log N(z(s1)) − Δ(s1)` where `dΔ/ds = −div f`, `Δ(s0) = 0`.
pub struct Cnf {
    pub ode: NeuralODE,
}

impl Cnf {
    pub fn new(ode: NeuralODE) -> Result<Self> {
        if !ode.defunc.divergence.is_active() {
            return Err(Error::InvalidArgument("a CNF needs a divergence mode".into()));
        }
        if ode.defunc.order != 1 {
            return Err(Error::Unsupported("CNFs over higher-order dynamics".into()));
        }
        Ok(Self { ode })
    }

    /// Probe noise for one solve over a batch of `batch` rows with `dim` data
    /// columns, or `None` for the exact divergence.
    pub fn draw_noise<R: Rng + ?Sized>(&self, batch: usize, dim: usize, rng: &mut R) -> Option<Tensor> {
        match self.ode.defunc.divergence {
            Divergence::Hutchinson { samples } => {
                Some(rademacher(vec![samples, batch, self.ode.defunc.dynamic_dim(dim)], rng))
            }
            _ => None,
        }
    }

    /// `log p(x)` per row, `[B]`.
    pub fn log_prob<R: Rng + ?Sized>(&self, x: &Tensor, rng: &mut R) -> Result<Tensor> {
        let (b, d) = crate::tensor::dims2("log_prob", x)?;
        let noise = self.draw_noise(b, d, rng);
        self.log_prob_with_noise(x, noise.as_ref())
    }

    pub fn log_prob_with_noise(&self, x: &Tensor, noise: Option<&Tensor>) -> Result<Tensor> {
        let (z, _) = self.ode.solve_packed(x, noise)?;
        let w = z.shape()[1];
        let base = gaussian_log_density(&z.narrow_cols(0, w - 1)?)?;
        let delta = z.narrow_cols(w - 1, 1)?;
        let lp = base.sub(&delta.reshape(vec![z.shape()[0]])?)?;
        let bad: Vec<usize> = (0..lp.numel()).filter(|&i| !lp.data()[i].is_finite()).collect();
        if !bad.is_empty() {
            return Err(Error::NonFiniteLogProb { indices: bad });
        }
        Ok(lp)
    }

    /// Gradients of the mean negative log-likelihood of `x`.
    pub fn nll_gradients<R: Rng + ?Sized>(&self, x: &Tensor, rng: &mut R) -> Result<Gradients> {
        let (b, d) = crate::tensor::dims2("nll_gradients", x)?;
        let noise = self.draw_noise(b, d, rng);
        self.ode.gradients(x, Some(&NllLoss), noise.as_ref())
    }

    /// `n` draws pushed from the base distribution back through the flow.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, dim: usize, rng: &mut R) -> Result<Tensor> {
        let width = self.ode.defunc.dynamic_dim(dim);
        let data = (0..n * width).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let z1 = Tensor::new(vec![n, width], data)?;
        self.invert(&z1)
    }

    /// Integrates base-space points back to data space.
    pub fn invert(&self, z1: &Tensor) -> Result<Tensor> {
        let defunc = &self.ode.defunc;
        let theta = defunc.field.layer().flatten_params();
        let span = &self.ode.span;
        // reversed depth σ = s1 − s
        let mut reverse = |sigma: f64, z: &Tensor| -> Result<Tensor> {
            let tape = Tape::new();
            let th = tape.constant(theta.clone());
            let zv = tape.constant(z.clone());
            Ok(defunc.dynamics(th, span.s1 - sigma, zv)?.value().scale(-1.0))
        };
        let (mut states, _) = solve_states(
            &mut reverse,
            z1.clone(),
            &[0.0, span.s1 - span.s0],
            &self.ode.solver,
            &mut |_, _| Ok(()),
        )?;
        Ok(states.pop().expect("two depths"))
    }
}

/// Mean negative log-likelihood from a terminal CNF state `[z | Δ]`.
pub struct NllLoss;

impl TerminalLoss for NllLoss {
    fn eval<'t>(&self, z1: Var<'t>, _: Option<Var<'t>>) -> Result<Var<'t>> {
        let shape = z1.shape();
        let w = shape[1];
        let d = (w - 1) as f64;
        let z = z1.narrow_cols(0, w - 1)?;
        let delta = z1.narrow_cols(w - 1, 1)?;
        // −log p = ½‖z‖² + (d/2) log 2π + Δ
        let per_row = z.square().sum_axis(1)?.scale(0.5).add(delta.reshape(vec![shape[0]])?)?;
        Ok(per_row.mean()?.offset(0.5 * d * (2.0 * PI).ln()))
    }
}
