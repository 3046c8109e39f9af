//! Multilevel Monte Carlo for smoothing expectations of discretely observed
//! scalar SDEs.
//!
//! Samples from the Euler-discretised smoothing distribution at each level are
//! produced by composing monotone triangular transport maps. Adjacent levels
//! are coupled by thinning a shared standard-normal base draw. A multilevel
//! particle filter with maximal-coupling resampling is provided as a baseline,
//! and closed-form Kalman recursions serve as an oracle for the
//! linear-Gaussian case.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coupled_sampler;
pub mod discretization;
pub mod error;
pub mod harness;
pub mod kalman;
pub mod ml_estimator;
pub mod mlpf;
pub mod models;
pub mod optim;
pub mod plot;
pub mod reference;
pub mod rng;
pub mod stats;
pub mod transport;

pub use error::{Error, Result};
