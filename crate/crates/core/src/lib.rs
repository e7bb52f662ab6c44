//! Continuation Newton solvers for regularized empirical risk minimization.
//!
//! The central object is a family of objectives `f_{ν,n}(x) = (1/n) Σ φ(z_k, x) + ν/2 ‖x‖²`
//! indexed by a sample prefix length `n` and a regularization strength `ν`.
//! [`continuation::dyna_newton`] walks that family from a small, strongly
//! regularized problem towards the full one, growing the prefix and shrinking
//! `ν` so that every previous minimizer already sits in the quadratic
//! convergence region of the next Newton solve.
//!
//! The crate is `no_std` (it needs `alloc`); file formats, wall clocks and the
//! experiment harness live in the `dynanewton` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod baselines;
pub mod continuation;
pub mod dataset;
mod error;
pub mod lbfgs;
pub mod linalg;
mod math;
pub mod newton;
pub mod objective;
pub mod work;

pub use error::{Error, Result};
