//! Continuous-depth learning: neural ODEs and their variants.
//!
//! The crate is layered bottom-up:
//!
//! * [`tensor`]: dense `f64` tensors and a define-by-run reverse-mode tape
//!   with second-order support.
//! * [`nn`]: layers used to parametrize vector fields, including the
//!   depth-variant `DepthCat` and `GalLinear`.
//! * [`odeint`]: batched explicit Runge–Kutta solvers (Euler, RK4, adaptive
//!   Dormand–Prince 5(4)).
//! * [`sensitivity`]: loss gradients by backpropagation through the solver or
//!   by the continuous adjoint, for terminal and integral losses.
//! * [`models`]: `NeuralODE`/`DEFunc`, energy-based fields, divergence
//!   estimators and continuous normalizing flows.

pub mod error;
pub mod models;
pub mod nn;
pub mod odeint;
pub mod sensitivity;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Tape, Tensor, Var};
