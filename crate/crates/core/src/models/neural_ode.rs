use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde_json::json;

use super::DEFunc;
use crate::error::{Error, Result};
use crate::odeint::{solve_states, trajectory_eval, DepthSpan, SolveStats, SolverConfig, Trajectory, ValueSystem, VectorField};
use crate::sensitivity::{self, Gradients, IntegralLoss, Objective, Sensitivity, TerminalLoss};
use crate::tensor::Tensor;

/// A [`DEFunc`] integrated over a depth span.
///
/// Counts every field evaluation made on its behalf, forward and backward,
/// failed solves included.
pub struct NeuralODE {
    pub defunc: DEFunc,
    pub span: DepthSpan,
    pub solver: SolverConfig,
    pub sensitivity: Sensitivity,
    /// Regularizer added to every gradient computation.
    pub integral: Option<IntegralLoss>,
    nfe: AtomicUsize,
}

impl NeuralODE {
    pub fn new(defunc: DEFunc) -> Self {
        Self {
            defunc,
            span: DepthSpan::default(),
            solver: SolverConfig::default(),
            sensitivity: Sensitivity::default(),
            integral: None,
            nfe: AtomicUsize::new(0),
        }
    }

    pub fn with_span(mut self, span: DepthSpan) -> Self {
        self.span = span;
        self
    }

    pub fn with_solver(mut self, solver: SolverConfig) -> Self {
        self.solver = solver;
        self
    }

    pub fn with_sensitivity(mut self, sensitivity: Sensitivity) -> Self {
        self.sensitivity = sensitivity;
        self
    }

    pub fn with_integral(mut self, integral: Option<IntegralLoss>) -> Self {
        self.integral = integral;
        self
    }

    pub fn num_parameters(&self) -> usize {
        self.defunc.param_count()
    }

    /// Cumulative field evaluations.
    pub fn nfe(&self) -> usize {
        self.nfe.load(Ordering::Relaxed)
    }

    pub fn reset_nfe(&self) {
        self.nfe.store(0, Ordering::Relaxed);
    }

    fn count(&self, stats: &SolveStats) {
        self.nfe.fetch_add(stats.nfe, Ordering::Relaxed);
    }

    fn counted<T>(&self, r: Result<T>) -> Result<T> {
        if let Err(e) = &r {
            if let Some(st) = e.solve_stats() {
                self.count(st);
            }
        }
        r
    }

    /// Terminal solver state for `x`, including the divergence accumulator.
    pub fn solve_packed(&self, x: &Tensor, noise: Option<&Tensor>) -> Result<(Tensor, SolveStats)> {
        let z0 = self.defunc.pack(x)?;
        let theta = self.defunc.params();
        let field = self.defunc.with_noise(noise);
        let r = solve_states(
            &mut ValueSystem::new(&field, &theta),
            z0,
            &[self.span.s0, self.span.s1],
            &self.solver,
            &mut |_, _| Ok(()),
        );
        let (mut states, stats) = self.counted(r)?;
        self.count(&stats);
        Ok((states.pop().expect("two depths"), stats))
    }

    /// State at the end of the span: `[B×(d + augment_dims)]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if let super::Divergence::Hutchinson { .. } = self.defunc.divergence {
            return Err(Error::InvalidArgument(
                "a Hutchinson divergence needs probe noise; use solve_packed".into(),
            ));
        }
        let (z, _) = self.solve_packed(x, None)?;
        self.defunc.strip(&z)
    }

    /// States at `eval_points`: `[L×B×(d + augment_dims)]`. The first point is
    /// the start of integration.
    pub fn trajectory(&self, x: &Tensor, eval_points: &[f64]) -> Result<Trajectory> {
        let z0 = self.defunc.pack(x)?;
        let theta = self.defunc.params();
        let r = trajectory_eval(&mut ValueSystem::new(&self.defunc, &theta), &z0, eval_points, &self.solver);
        let mut traj = self.counted(r)?;
        self.count(&traj.stats);
        if self.defunc.divergence.is_active() {
            let slices = (0..traj.len())
                .map(|i| self.defunc.strip(&traj.at(i)?))
                .collect::<Result<Vec<_>>>()?;
            traj.points = Tensor::stack(&slices)?;
        }
        Ok(traj)
    }

    /// Gradients of `terminal` (on the full terminal solver state) plus the
    /// model's integral loss. `Gradients::z0` covers the data columns of `x`.
    pub fn gradients(
        &self,
        x: &Tensor,
        terminal: Option<&dyn TerminalLoss>,
        noise: Option<&Tensor>,
    ) -> Result<Gradients> {
        let z0 = self.defunc.pack(x)?;
        let field = self.defunc.with_noise(noise);
        let objective = Objective {
            terminal,
            integral: self.integral.as_ref(),
        };
        let r = sensitivity::gradients(self.sensitivity, &field, &z0, &self.span, &self.solver, objective);
        let mut g = self.counted(r)?;
        self.count(&g.forward_stats);
        self.count(&g.backward_stats);
        g.z0 = g.z0.narrow_cols(0, x.shape()[1])?;
        Ok(g)
    }

    /// Machine-readable form of the [`fmt::Display`] summary.
    pub fn summary_json(&self) -> serde_json::Value {
        json!({
            "order": self.defunc.order,
            "solver": self.solver.method.to_string(),
            "integration_interval": [self.span.s0, self.span.s1],
            "tolerances": {"relative": self.solver.rtol, "absolute": self.solver.atol},
            "num_parameters": self.num_parameters(),
            "nfe": self.nfe(),
            "sensitivity": self.sensitivity,
            "augment_dims": self.defunc.augment_dims,
            "divergence": self.defunc.divergence,
            "integral_loss": self.integral.as_ref().map(|i| json!({"weight": i.weight, "reduction": i.reduction})),
        })
    }
}

impl VectorField for NeuralODE {
    fn num_params(&self) -> usize {
        self.defunc.num_params()
    }

    fn params(&self) -> Tensor {
        self.defunc.params()
    }

    fn eval<'t>(&self, theta: crate::tensor::Var<'t>, s: f64, z: crate::tensor::Var<'t>) -> Result<crate::tensor::Var<'t>> {
        self.defunc.eval(theta, s, z)
    }

    fn error_columns(&self, width: usize) -> Option<usize> {
        self.defunc.error_columns(width)
    }
}

impl fmt::Display for NeuralODE {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Neural DE:")?;
        writeln!(f, "\t- order: {}", self.defunc.order)?;
        writeln!(f, "\t- solver: {}", self.solver.method)?;
        writeln!(f, "\t- integration interval: {:?} to {:?}", self.span.s0, self.span.s1)?;
        writeln!(
            f,
            "\t- tolerances: relative {:?} absolute {:?}",
            self.solver.rtol, self.solver.atol
        )?;
        writeln!(f, "\t- num_parameters: {}", self.num_parameters())?;
        writeln!(f, "\t- NFE: {:.1}", self.nfe() as f64)?;
        writeln!(f)?;
        match &self.integral {
            Some(i) => writeln!(f, "Integral loss: weight {:?}, reduction {:?}", i.weight, i.reduction)?,
            None => writeln!(f, "Integral loss: None")?,
        }
        writeln!(f)?;
        writeln!(f, "DEFunc:")?;
        write!(f, " {}", self.defunc)
    }
}
