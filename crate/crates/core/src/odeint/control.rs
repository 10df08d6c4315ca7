use super::SolverConfig;
use crate::tensor::Tensor;

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 5.0;
const ERROR_EXPONENT: f64 = 1.0 / 5.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepDecision {
    pub accept: bool,
    pub h_new: f64,
    /// Scaled RMS error; the step is accepted iff it is at most 1.
    pub ratio: f64,
}

/// `rms(err / (atol + rtol·max(|z|, |z_next|)))`, optionally restricted to the
/// leading `columns` of each row of a rank-2 state.
pub fn error_ratio(
    err: &Tensor,
    z: &Tensor,
    z_next: &Tensor,
    cfg: &SolverConfig,
    columns: Option<usize>,
) -> f64 {
    let width = match (columns, err.shape()) {
        (Some(c), [_, w]) if c < *w => Some((c, *w)),
        _ => None,
    };
    let mut acc = 0.0;
    let mut count = 0usize;
    for (i, ((e, a), b)) in err.data().iter().zip(z.data()).zip(z_next.data()).enumerate() {
        if let Some((c, w)) = width {
            if i % w >= c {
                continue;
            }
        }
        let scale = cfg.atol + cfg.rtol * a.abs().max(b.abs());
        let r = e / scale;
        acc += r * r;
        count += 1;
    }
    if count == 0 {
        0.0
    } else {
        (acc / count as f64).sqrt()
    }
}

/// Step-size update from a scaled error ratio.
pub fn decide(ratio: f64, h: f64, cfg: &SolverConfig) -> StepDecision {
    let factor = if ratio.is_nan() {
        MIN_FACTOR
    } else {
        (SAFETY * ratio.powf(-ERROR_EXPONENT)).clamp(MIN_FACTOR, MAX_FACTOR)
    };
    let h_max = cfg.h_max.unwrap_or(f64::INFINITY);
    StepDecision {
        accept: ratio <= 1.0,
        h_new: (h * factor).clamp(cfg.h_min, h_max),
        ratio,
    }
}

/// Accept/reject decision and next step size for an embedded error estimate.
pub fn adapt_step(err: &Tensor, z: &Tensor, z_next: &Tensor, h: f64, cfg: &SolverConfig) -> StepDecision {
    decide(error_ratio(err, z, z_next, cfg, None), h, cfg)
}
