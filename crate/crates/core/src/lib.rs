//! Peer-group benchmarking of panel performance scores.
//!
//! The pipeline has three stages:
//!
//! 1. [`copula`]: raw scores become latent standard-normal scores through
//!    the empirical CDF.
//! 2. [`treebench`]: a Bayesian regression tree with per-leaf mean and
//!    spread turns latent scores into covariate-adjusted benchmark scores.
//! 3. [`trajtest`]: each subject's benchmarked trajectory is tested against
//!    the zero function with a spike-and-slab model (AR(1) noise, Gaussian
//!    process alternative, learned mixture weight).
//!
//! [`synth`] generates panels and trajectories with known ground truth.
//!
//! The crate is `no_std` and needs only `alloc`.

#![no_std]
// NaN-rejecting `!(x > 0.0)` guards are deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod copula;
pub mod error;
pub mod math;
pub mod panel;
pub mod seed;
pub mod synth;
pub mod trajtest;
pub mod treebench;

pub use error::{Error, Result};
