//! Gaussian-process regression with an empirical-Bayes prior on the kernel
//! bandwidth that adapts to the intrinsic dimension of the predictors.
//!
//! The crate is organised by role:
//!
//! - [`kernel_gp`]: squared-exponential kernel, Gram factorization, marginal
//!   likelihood and posterior predictive means.
//! - [`manifold_stats`]: kNN radii, averaged kernel affinities, dimension
//!   estimators.
//! - [`priors`]: bandwidth priors, (A3)-style bound diagnostics and rate exponents.
//! - [`sampler`]: Metropolis-Hastings over the bandwidth (and noise variance).
//! - [`estimators`]: end-to-end regression methods and baselines.
//! - [`datagen`]: synthetic manifold datasets and the image-manifold loader.
//! - [`oracles`]: quadrature checks of the manifold integral operator and
//!   concentration bands.
//! - [`eval`]: error metrics, the repeated-run benchmark and rate fitting.

pub mod datagen;
pub mod error;
pub mod estimators;
pub mod eval;
pub mod kernel_gp;
pub mod manifold_stats;
pub mod oracles;
pub mod priors;
pub mod rng;
pub mod sampler;

pub use error::{Error, Result};
pub use faer::{Mat, MatRef};
