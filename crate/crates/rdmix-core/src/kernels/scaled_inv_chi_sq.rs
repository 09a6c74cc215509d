//! Scaled inverse chi-squared sampling and the residual-variance update.

use super::rng::RngStream;
use crate::error::{RdError, Result};
use rand_distr::{Distribution, Gamma};

/// One draw from the scaled inverse chi-squared distribution with `df`
/// degrees of freedom and scale `scale`: the law of df·scale/χ²_df.
pub fn sample_inv_chi_squared(df: f64, scale: f64, rng: &mut RngStream) -> Result<f64> {
    if !(df > 0.0) || !(scale > 0.0) {
        return Err(RdError::Domain(format!(
            "scaled inv-chi-squared requires positive df and scale, got df={df}, scale={scale}"
        )));
    }
    let gamma = Gamma::new(df / 2.0, 2.0)
        .map_err(|e| RdError::Domain(format!("invalid chi-squared parameters: {e}")))?;
    loop {
        let chi2 = gamma.sample(rng);
        if chi2 > 0.0 {
            return Ok(df * scale / chi2);
        }
    }
}

/// Posterior draw of a regression noise variance with a scaled
/// inv-chi-squared prior: inv-χ²(ν₀ + n, [Σe² + ν₀·s₀²]/(ν₀ + n)).
pub fn residual_variance_draw(
    prior_df: f64,
    prior_scale: f64,
    residuals: &[f64],
    rng: &mut RngStream,
) -> Result<f64> {
    let ss = residuals.iter().map(|e| e * e).sum::<f64>();
    residual_variance_from_sumsq(prior_df, prior_scale, ss, residuals.len(), rng)
}

/// Same update when the residual sum of squares is already accumulated.
pub fn residual_variance_from_sumsq(
    prior_df: f64,
    prior_scale: f64,
    sum_sq: f64,
    n: usize,
    rng: &mut RngStream,
) -> Result<f64> {
    if !(prior_df > 0.0) || !(prior_scale > 0.0) {
        return Err(RdError::Domain(format!(
            "residual variance update requires positive prior df and scale, got ({prior_df}, {prior_scale})"
        )));
    }
    let df = prior_df + n as f64;
    let scale = (sum_sq + prior_df * prior_scale) / df;
    sample_inv_chi_squared(df, scale, rng)
}

/// Posterior (df, scale) for the residual-variance update, exposed for
/// closed-form checks.
pub fn residual_variance_params(prior_df: f64, prior_scale: f64, sum_sq: f64, n: usize) -> (f64, f64) {
    let df = prior_df + n as f64;
    (df, (sum_sq + prior_df * prior_scale) / df)
}
