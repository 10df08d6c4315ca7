//! Batched explicit Runge–Kutta solvers.
//!
//! Fixed-step Euler and RK4 split every segment into `⌈len/h⌉` uniform steps.
//! Dormand–Prince 5(4) adapts its step from the embedded error estimate and
//! reuses the last stage of an accepted step as the first stage of the next,
//! so a solve costs `1 + 6·(accepted + rejected)` evaluations.
//!
//! Evaluation points are reached by integrating segment to segment; the
//! adaptive step size and the reused stage carry across segment boundaries.

mod control;
pub mod dump;
mod system;
mod tableau;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use control::{adapt_step, decide, error_ratio, StepDecision};
pub use system::{OdeState, System, TapeSystem, ValueSystem, VectorField};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthSpan {
    pub s0: f64,
    pub s1: f64,
    pub eval_points: Option<Vec<f64>>,
}

impl Default for DepthSpan {
    fn default() -> Self {
        Self {
            s0: 0.0,
            s1: 1.0,
            eval_points: None,
        }
    }
}

impl DepthSpan {
    pub fn new(s0: f64, s1: f64) -> Result<Self> {
        if !(s1 > s0) || !s0.is_finite() || !s1.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "depth span requires s1 > s0, got [{s0}, {s1}]"
            )));
        }
        Ok(Self {
            s0,
            s1,
            eval_points: None,
        })
    }

    /// Span `[first, last]` of strictly increasing evaluation points.
    /// A single point gives a degenerate span.
    pub fn from_points(points: Vec<f64>) -> Result<Self> {
        check_points(&points)?;
        Ok(Self {
            s0: points[0],
            s1: *points.last().expect("non-empty"),
            eval_points: Some(points),
        })
    }

    pub fn linspace(s0: f64, s1: f64, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidArgument(format!(
                "linspace needs at least 2 points, got {n}"
            )));
        }
        let step = (s1 - s0) / (n - 1) as f64;
        let mut points: Vec<f64> = (0..n).map(|i| s0 + step * i as f64).collect();
        points[n - 1] = s1;
        let mut span = Self::new(s0, s1)?;
        span.eval_points = Some(points);
        Ok(span)
    }

    pub fn length(&self) -> f64 {
        self.s1 - self.s0
    }

    /// Depths the solution is reported at.
    pub fn depths(&self) -> Vec<f64> {
        match &self.eval_points {
            Some(p) => p.clone(),
            None => vec![self.s0, self.s1],
        }
    }
}

fn check_points(points: &[f64]) -> Result<()> {
    if points.is_empty() {
        return Err(Error::InvalidArgument("no evaluation points".into()));
    }
    if points.iter().any(|p| !p.is_finite()) || points.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument(
            "evaluation points must be finite and strictly increasing".into(),
        ));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Euler,
    Rk4,
    Dopri5,
}

impl Method {
    pub fn is_adaptive(self) -> bool {
        self == Method::Dopri5
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Euler => "euler",
            Method::Rk4 => "rk4",
            Method::Dopri5 => "dopri5",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub method: Method,
    pub rtol: f64,
    pub atol: f64,
    /// Initial step for dopri5, the step for fixed solvers.
    /// Defaults to 1% of the integration length.
    pub h_init: Option<f64>,
    pub h_min: f64,
    pub h_max: Option<f64>,
    pub max_steps: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            method: Method::Dopri5,
            rtol: 1e-4,
            atol: 1e-4,
            h_init: None,
            h_min: 1e-12,
            h_max: None,
            max_steps: 10_000,
        }
    }
}

impl SolverConfig {
    pub fn fixed(method: Method, h: f64) -> Self {
        Self {
            method,
            h_init: Some(h),
            ..Self::default()
        }
    }

    pub fn dopri5(rtol: f64, atol: f64) -> Self {
        Self {
            rtol,
            atol,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            return bad(format!(
                "tolerances must be positive (rtol {}, atol {})",
                self.rtol, self.atol
            ));
        }
        let h_max = self.h_max.unwrap_or(f64::INFINITY);
        if !(self.h_min > 0.0 && self.h_min <= h_max) {
            return bad(format!("need 0 < h_min <= h_max, got {} and {h_max}", self.h_min));
        }
        if let Some(h) = self.h_init {
            if !(h >= self.h_min && h <= h_max) {
                return bad(format!(
                    "h_init {h} outside [h_min, h_max] = [{}, {h_max}]",
                    self.h_min
                ));
            }
        }
        if self.max_steps == 0 {
            return bad("max_steps must be positive".into());
        }
        Ok(())
    }

    fn initial_step(&self, length: f64) -> f64 {
        let h = self.h_init.unwrap_or(0.01 * length);
        h.clamp(self.h_min, self.h_max.unwrap_or(f64::INFINITY))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolveStats {
    pub nfe: usize,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
}

impl SolveStats {
    pub fn merge(&mut self, other: &SolveStats) {
        self.nfe += other.nfe;
        self.accepted_steps += other.accepted_steps;
        self.rejected_steps += other.rejected_steps;
    }
}

/// Solution samples `[length × batch × dim]` at `depths`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub points: Tensor,
    pub depths: Vec<f64>,
    pub stats: SolveStats,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.depths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.depths.is_empty()
    }

    pub fn at(&self, i: usize) -> Result<Tensor> {
        self.points.index(i)
    }

    /// State at the last depth.
    pub fn last(&self) -> Tensor {
        self.points
            .index(self.len() - 1)
            .expect("trajectory is never empty")
    }
}

/// Result of one Dormand–Prince step.
pub struct Dopri5Step<S> {
    /// Fifth-order solution.
    pub z_next: S,
    /// Fifth- minus fourth-order solution.
    pub err: Tensor,
    /// `f(s, z)`, reusable when the step is retried.
    pub k_first: S,
    /// `f(s + h, z_next)`, the first stage of the following step.
    pub k_last: S,
}

/// One Dormand–Prince 5(4) step. Pass the previous step's `k_last` as `k1` to
/// reuse it; otherwise `f(s, z)` is evaluated here.
pub fn dopri5_step<S: OdeState, Sys: System<S> + ?Sized>(
    sys: &mut Sys,
    s: f64,
    z: &S,
    k1: Option<&S>,
    h: f64,
) -> Result<Dopri5Step<S>> {
    let mut k: Vec<S> = Vec::with_capacity(7);
    k.push(match k1 {
        Some(k1) => k1.clone(),
        None => sys.rhs(s, z)?,
    });
    for (stage, row) in tableau::A.iter().enumerate() {
        let terms: Vec<(f64, &S)> = row.iter().zip(&k).map(|(a, ki)| (h * a, ki)).collect();
        let zi = z.lincomb(&terms)?;
        let ki = sys.rhs(s + tableau::C[stage + 1] * h, &zi)?;
        if stage == 5 {
            // the last row of A holds the fifth-order weights
            let err = error_estimate(&k, &ki, h)?;
            return Ok(Dopri5Step {
                z_next: zi,
                err,
                k_first: k.swap_remove(0),
                k_last: ki,
            });
        }
        k.push(ki);
    }
    unreachable!("tableau has six rows")
}

fn error_estimate<S: OdeState>(k: &[S], k7: &S, h: f64) -> Result<Tensor> {
    let last = k7.to_tensor();
    let mut err = last.scale(h * tableau::E[6]);
    for (ki, e) in k.iter().zip(&tableau::E) {
        if *e != 0.0 {
            err = err.lincomb(&[(h * e, &ki.to_tensor())])?;
        }
    }
    Ok(err)
}

fn rk4_step<S: OdeState, Sys: System<S> + ?Sized>(sys: &mut Sys, s: f64, z: &S, h: f64) -> Result<S> {
    let k1 = sys.rhs(s, z)?;
    let k2 = sys.rhs(s + 0.5 * h, &z.lincomb(&[(0.5 * h, &k1)])?)?;
    let k3 = sys.rhs(s + 0.5 * h, &z.lincomb(&[(0.5 * h, &k2)])?)?;
    let k4 = sys.rhs(s + h, &z.lincomb(&[(h, &k3)])?)?;
    z.lincomb(&[(h / 6.0, &k1), (h / 3.0, &k2), (h / 3.0, &k3), (h / 6.0, &k4)])
}

/// Counts right-hand-side evaluations.
struct Counting<'a, Sys: ?Sized> {
    inner: &'a mut Sys,
    nfe: usize,
}

impl<S, Sys: System<S> + ?Sized> System<S> for Counting<'_, Sys> {
    fn rhs(&mut self, s: f64, z: &S) -> Result<S> {
        self.nfe += 1;
        self.inner.rhs(s, z)
    }

    fn error_columns(&self, width: usize) -> Option<usize> {
        self.inner.error_columns(width)
    }
}

/// Integrates from `depths[0]` through every depth, returning the state at each.
///
/// `observer` sees the initial state and the state after every accepted step;
/// integral quadratures hook in there.
pub fn solve_states<S, Sys>(
    sys: &mut Sys,
    z0: S,
    depths: &[f64],
    cfg: &SolverConfig,
    observer: &mut dyn FnMut(f64, &S) -> Result<()>,
) -> Result<(Vec<S>, SolveStats)>
where
    S: OdeState,
    Sys: System<S> + ?Sized,
{
    cfg.validate()?;
    check_points(depths)?;
    let mut sys = Counting { inner: sys, nfe: 0 };
    let mut stats = SolveStats::default();
    let s_start = depths[0];
    let z0_value = z0.to_tensor();
    if !z0_value.is_finite() {
        return Err(Error::NonFinite { depth: s_start, stats });
    }
    let columns = match z0_value.shape() {
        [_, w] => sys.error_columns(*w),
        _ => None,
    };

    observer(s_start, &z0)?;
    let mut out = Vec::with_capacity(depths.len());
    out.push(z0.clone());
    let mut s = s_start;
    let mut z = z0;
    let mut h = cfg.initial_step(depths[depths.len() - 1] - s_start);
    let mut k1: Option<S> = None;
    let mut z_value = z0_value;

    for &target in &depths[1..] {
        match cfg.method {
            Method::Euler | Method::Rk4 => {
                let len = target - s;
                let n = ((len / h) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
                let dh = len / n as f64;
                let seg_start = s;
                for i in 0..n {
                    if stats.accepted_steps >= cfg.max_steps {
                        stats.nfe = sys.nfe;
                        return Err(Error::MaxStepsExceeded {
                            max_steps: cfg.max_steps,
                            depth: s,
                            stats,
                        });
                    }
                    z = match cfg.method {
                        Method::Euler => {
                            let f = sys.rhs(s, &z)?;
                            z.lincomb(&[(dh, &f)])?
                        }
                        _ => rk4_step(&mut sys, s, &z, dh)?,
                    };
                    s = if i + 1 == n {
                        target
                    } else {
                        seg_start + dh * (i + 1) as f64
                    };
                    stats.accepted_steps += 1;
                    if !z.to_tensor().is_finite() {
                        stats.nfe = sys.nfe;
                        return Err(Error::NonFinite { depth: s, stats });
                    }
                    observer(s, &z)?;
                }
            }
            Method::Dopri5 => {
                while s < target {
                    if stats.accepted_steps + stats.rejected_steps >= cfg.max_steps {
                        stats.nfe = sys.nfe;
                        return Err(Error::MaxStepsExceeded {
                            max_steps: cfg.max_steps,
                            depth: s,
                            stats,
                        });
                    }
                    let lands = s + h >= target || target - (s + h) <= 1e-12 * (1.0 + target.abs());
                    let h_try = if lands { target - s } else { h };
                    let step = dopri5_step(&mut sys, s, &z, k1.as_ref(), h_try)?;
                    let next_value = step.z_next.to_tensor();
                    if !next_value.is_finite() {
                        stats.nfe = sys.nfe;
                        return Err(Error::NonFinite {
                            depth: s + h_try,
                            stats,
                        });
                    }
                    let ratio = error_ratio(&step.err, &z_value, &next_value, cfg, columns);
                    let decision = decide(ratio, h_try, cfg);
                    if decision.accept {
                        stats.accepted_steps += 1;
                        s = if lands { target } else { s + h_try };
                        z = step.z_next;
                        z_value = next_value;
                        k1 = Some(step.k_last);
                        observer(s, &z)?;
                    } else {
                        stats.rejected_steps += 1;
                        k1 = Some(step.k_first);
                    }
                    h = decision.h_new;
                }
            }
        }
        out.push(z.clone());
    }
    stats.nfe = sys.nfe;
    Ok((out, stats))
}

/// Solves on `span`, reporting the state at `span.depths()`.
pub fn solve<Sys: System<Tensor> + ?Sized>(
    sys: &mut Sys,
    z0: &Tensor,
    span: &DepthSpan,
    cfg: &SolverConfig,
) -> Result<Trajectory> {
    trajectory_eval(sys, z0, &span.depths(), cfg)
}

/// Solution at every point of `eval_points`, starting from `z0` at the first.
pub fn trajectory_eval<Sys: System<Tensor> + ?Sized>(
    sys: &mut Sys,
    z0: &Tensor,
    eval_points: &[f64],
    cfg: &SolverConfig,
) -> Result<Trajectory> {
    let (states, stats) = solve_states(sys, z0.clone(), eval_points, cfg, &mut |_, _| Ok(()))?;
    Ok(Trajectory {
        points: Tensor::stack(&states)?,
        depths: eval_points.to_vec(),
        stats,
    })
}
