//! Adversarially learnt interpolants (ALI) for multi-marginal trajectory
//! inference, and their marginalisation into a vector field by conditional
//! flow matching.
//!
//! The crate is organised bottom-up:
//!
//! * [`nd`]: dense tensors, a reverse-mode tape, MLPs and Adam.
//! * [`coupling`]: exact assignment, Sinkhorn and chained OT couplings.
//! * [`interpolants`]: linear, piecewise-linear, natural cubic spline and
//!   the neural ALI curve `G(x0, x1, t) = (1-t) x0 + t x1 + t(1-t) f(x0, x1, t)`.
//! * [`regularizers`]: penalties that pin down a unique interpolant.
//! * [`ali_train`]: adversarial training of the interpolant.
//! * [`cfm`]: flow matching against a frozen interpolant, plus ODE rollouts.
//! * [`data`] and [`eval`]: synthetic marginals, EMD and the evaluation protocol.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ali_train;
pub mod cfm;
pub mod coupling;
pub mod data;
pub mod error;
pub mod eval;
pub mod interpolants;
pub mod nd;
pub mod regularizers;
pub mod rng;
#[cfg(test)]
mod testing;

pub use error::{Error, Result};
pub use nd::{Activation, Adam, Mlp, Tape, Tensor, Var};
