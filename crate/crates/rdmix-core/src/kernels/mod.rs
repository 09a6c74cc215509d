//! Probabilistic primitives shared by the samplers.
//!
//! Everything here is deterministic given an [`RngStream`]: the same
//! `(seed, stream_id)` pair always reproduces the same draw sequence, and
//! substreams derived from a stream are independent of how work is split
//! across workers.

mod conjugate;
mod normal;
mod rng;
mod scaled_inv_chi_sq;
mod truncated;

pub use conjugate::{ConjugateLinearUpdate, GaussianPosterior};
pub use normal::{
    ln_std_normal_cdf, ln_std_normal_cdf_pair, ln_std_normal_pdf, std_normal_cdf, std_normal_pdf,
    std_normal_quantile,
};
pub use rng::RngStream;
pub use scaled_inv_chi_sq::{
    residual_variance_draw, residual_variance_from_sumsq, residual_variance_params,
    sample_inv_chi_squared,
};
pub use truncated::{sample_probit_utility, sample_truncated_normal};
