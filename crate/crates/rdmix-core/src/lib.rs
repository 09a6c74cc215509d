//! Bayesian analysis of regression-discontinuity designs under local
//! randomization.
//!
//! Units are modeled as a three-component mixture: a latent subpopulation
//! around the eligibility threshold where the design behaves like a
//! randomized experiment, plus two off-threshold subpopulations (one per
//! side) where it may not. A data-augmented Gibbs sampler classifies units,
//! fits probit outcome models, and produces posterior draws of the
//! finite-sample causal relative risk over the latent subpopulation.
//!
//! The crate also ships the supporting analyses used around such a fit:
//! covariate balance diagnostics, fixed-window Bayesian comparators, local
//! polynomial estimators at the threshold, multiple-imputation combining,
//! and a generative simulator with known ground truth.

pub mod balance;
pub mod data;
pub mod error;
pub mod estimands;
pub mod kernels;
pub mod mixture;
pub mod report;
pub mod synth;
pub mod window;

pub use error::RdError;
