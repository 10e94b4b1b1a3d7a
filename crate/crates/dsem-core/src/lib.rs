//! Bayesian estimation engine for dynamic structural equation models (DSEMs)
//! with Bernoulli, binomial, ordinal, and Gaussian indicators.
//!
//! The engine centers on a hybrid sampler that alternates a Gibbs sweep over
//! latent-response augmentation variables with a No-U-Turn transition on the
//! population-level posterior, where within-level latent states are
//! marginalized out exactly by a Kalman filter. A pure NUTS comparator that
//! samples the latent states directly is provided for cross-checks, along
//! with simulation-study data generators, convergence diagnostics, and a
//! benchmark harness.

pub mod augment;
pub mod compile;
pub mod diagnostics;
pub mod error;
pub mod linalg;
pub mod model;
pub mod nuts;
pub mod params;
pub mod pure;
pub mod rng;
pub mod samplers;
pub mod simulate;
pub mod ssm;

#[doc(hidden)]
pub mod testutil;

pub use error::{DsemError, Result};
