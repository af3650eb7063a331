//! Marginal inference for clustered binary outcomes when cluster size is
//! informative and a binary cluster-level exposure is misclassified.
//!
//! The crate is `no_std` (with `alloc`) and purely computational:
//!
//! - [`numerics`]: Gauss-Hermite quadrature over normal random effects,
//!   bracketed root finding, quasi-Newton maximization and finite differences.
//! - [`data`]: clustered datasets, parameter vectors and fit results.
//! - [`glm`]: weighted logistic and Poisson regression by IRLS with
//!   cluster-robust covariance.
//! - [`gee`]: inverse-size weighted (WEE) and independence (IEE) estimating
//!   equations.
//! - [`jmm`]: the joint marginalized model of cluster size and outcome.
//! - [`obslik`]: observed-likelihood misclassification correction.
//! - [`eee`]: expected estimating equations with a plug-in exposure model and
//!   stratified cluster bootstrap.
//! - [`simgen`]: the synthetic data generator and misclassification regimes.
//! - [`rng`]: counter-based random streams keyed by `(seed, index, tag)`.
//!
//! IO, configuration files and the study harness live in the `misclass` crate.

#![cfg_attr(not(feature = "std"), no_std)]
// `!(a < b)` comparisons deliberately treat NaN as failure, and dense kernels
// index several arrays per loop.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

pub mod data;
pub mod eee;
mod error;
pub mod gee;
pub mod glm;
pub mod jmm;
mod likelihood;
pub mod linalg;
pub mod math;
pub mod numerics;
pub mod obslik;
pub mod rng;
pub mod simgen;

pub use error::{Error, Result};

/// Two-sided 95% normal quantile used for every Wald interval.
pub const Z_95: f64 = 1.959_963_984_540_054;
