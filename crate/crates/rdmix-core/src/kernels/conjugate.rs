//! Conjugate Gaussian linear-regression updates.
//!
//! With a N(0, σ²ₚ I) prior on the coefficients and Gaussian noise of known
//! variance σ², the posterior is N(μ, Σ) with
//!
//! ```text
//! Σ = [σₚ⁻² I + σ⁻² X'X]⁻¹,   μ = Σ σ⁻² X'y.
//! ```
//!
//! The posterior precision is factored by Cholesky; if factorization fails,
//! a small diagonal jitter is escalated (0, 1e-10, 1e-8) before giving up.

use super::rng::RngStream;
use crate::error::{RdError, Result};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

const JITTER_LADDER: [f64; 3] = [0.0, 1e-10, 1e-8];

/// A fully specified regression block: prior precision, noise variance,
/// design and response.
#[derive(Debug, Clone)]
pub struct ConjugateLinearUpdate {
    /// 1/σ²ₚ applied to every coefficient.
    pub prior_precision_scale: f64,
    pub noise_variance: f64,
    pub design: DMatrix<f64>,
    pub response: DVector<f64>,
}

impl ConjugateLinearUpdate {
    /// Exact posterior of the coefficients.
    pub fn posterior(&self) -> Result<GaussianPosterior> {
        if !(self.prior_precision_scale > 0.0) {
            return Err(RdError::Domain(
                "conjugate update: prior precision must be positive".into(),
            ));
        }
        if !(self.noise_variance > 0.0) {
            return Err(RdError::Domain(
                "conjugate update: noise variance must be positive".into(),
            ));
        }
        if self.design.nrows() != self.response.len() {
            return Err(RdError::Domain(format!(
                "conjugate update: design has {} rows but response has {}",
                self.design.nrows(),
                self.response.len()
            )));
        }
        let xtx = self.design.tr_mul(&self.design);
        let xty = self.design.tr_mul(&self.response);
        GaussianPosterior::from_suffstats(
            self.prior_precision_scale,
            self.noise_variance,
            &xtx,
            &xty.column(0).into(),
        )
    }
}

/// Multivariate normal posterior N(μ, Σ) held as mean plus the Cholesky
/// factor of the precision.
pub struct GaussianPosterior {
    mean: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl GaussianPosterior {
    /// Build from the sufficient statistics X'X and X'y.
    pub fn from_suffstats(
        prior_precision_scale: f64,
        noise_variance: f64,
        xtx: &DMatrix<f64>,
        xty: &DVector<f64>,
    ) -> Result<Self> {
        let k = xtx.nrows();
        let inv_noise = 1.0 / noise_variance;
        let mut precision = xtx * inv_noise;
        for i in 0..k {
            precision[(i, i)] += prior_precision_scale;
        }
        let b = xty * inv_noise;

        for &jitter in &JITTER_LADDER {
            let mut p = precision.clone();
            if jitter > 0.0 {
                for i in 0..k {
                    p[(i, i)] += jitter;
                }
            }
            if let Some(chol) = Cholesky::new(p) {
                let mean = chol.solve(&b);
                return Ok(GaussianPosterior { mean, chol });
            }
        }
        Err(RdError::Numeric(format!(
            "posterior precision not positive definite after jitter; {}",
            condition_diagnostics(&precision)
        )))
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    /// One draw θ = μ + L⁻ᵀ z with z ~ N(0, I); L is the lower Cholesky
    /// factor of the precision, so Cov(θ) = Σ exactly.
    pub fn draw(&self, rng: &mut RngStream) -> DVector<f64> {
        let k = self.mean.len();
        let z = DVector::from_fn(k, |_, _| rng.std_normal());
        let lt = self.chol.l().transpose();
        let w = lt
            .solve_upper_triangular(&z)
            .expect("Cholesky factor has positive diagonal");
        &self.mean + w
    }
}

fn condition_diagnostics(precision: &DMatrix<f64>) -> String {
    let eig = precision.clone().symmetric_eigen();
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for &v in eig.eigenvalues.iter() {
        min = min.min(v);
        max = max.max(v);
    }
    format!("eigenvalue range [{min:.3e}, {max:.3e}], condition ~{:.3e}", max / min.abs().max(f64::MIN_POSITIVE))
}
