//! Semi-parametric density regression with spline bulks and generalised
//! Pareto tails.
//!
//! The crate implements two related conditional density models:
//!
//! - **SPQR**: the conditional density of a `[0,1]`-scaled response is a
//!   convex combination of M-spline basis functions whose weights are the
//!   softmax output of a multi-layer perceptron driven by covariates.
//! - **SPQRx**: the SPQR bulk is blended with a generalised Pareto (GP)
//!   upper tail through a Beta-CDF weighting function, giving exact GP
//!   behaviour above the blending interval and therefore principled
//!   extrapolation beyond the range of the training responses. The GP
//!   shape `xi(x)` is produced by the same network through an extra output
//!   with its own activation.
//!
//! Supporting machinery: from-scratch backpropagation and Adam, training
//! with early stopping and a learning-rate restart scheme, accumulated
//! local effects / variable importance, integrated Wasserstein metrics,
//! PIT diagnostics, bootstrap resampling, and the synthetic data designs
//! used for benchmarking.

pub mod bench;
pub mod dist;
pub mod error;
pub mod evaluate;
pub mod interpret;
pub mod network;
pub mod persist;
pub mod regression;
pub mod simulate;
pub mod special;
pub mod splines;

mod tape;
mod util;

pub use error::{Error, Result};
