use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

/// Truncated Fourier basis over a depth span, periodic with the span length.
///
/// Evaluates to `[1, cos(ω₁τ), sin(ω₁τ), …, cos(ωₙτ), sin(ωₙτ)]` with
/// `τ = s − s0` and `ωₖ = 2πk / period`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FourierBasis {
    pub n_terms: usize,
    pub s0: f64,
    pub period: f64,
}

impl FourierBasis {
    pub fn new(n_terms: usize, s0: f64, s1: f64) -> Self {
        Self {
            n_terms,
            s0,
            period: s1 - s0,
        }
    }

    /// Number of basis functions, `2·n_terms + 1`.
    pub fn len(&self) -> usize {
        2 * self.n_terms + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn eval(&self, s: f64) -> Vec<f64> {
        let tau = s - self.s0;
        let mut out = Vec::with_capacity(self.len());
        out.push(1.0);
        for k in 1..=self.n_terms {
            let w = TAU * k as f64 / self.period;
            out.push((w * tau).cos());
            out.push((w * tau).sin());
        }
        out
    }

    /// d/ds of every basis function.
    pub fn derivative(&self, s: f64) -> Vec<f64> {
        let tau = s - self.s0;
        let mut out = Vec::with_capacity(self.len());
        out.push(0.0);
        for k in 1..=self.n_terms {
            let w = TAU * k as f64 / self.period;
            out.push(-w * (w * tau).sin());
            out.push(w * (w * tau).cos());
        }
        out
    }
}
