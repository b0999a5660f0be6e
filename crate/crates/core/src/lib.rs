//! Loss-landscape laboratory.
//!
//! Trains tiny networks with SGD, gradient descent and variance-matched
//! Langevin dynamics, measures Hessian-spectrum entropy and free energy at
//! the critical points found, checks the minibatch noise-covariance law, and
//! reproduces the two-layer linear network theory (balance invariant,
//! Hessian trace formula, generalization-error prediction).

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod hessian;
pub mod linear_net;
pub mod model;
pub mod numerics;
pub mod optim;

pub use error::{Error, Result};
