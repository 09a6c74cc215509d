//! Joint-distribution coherence check for the Gibbs machinery.
//!
//! Two samplers target the same joint over (parameters, labels, data):
//! independent forward simulation (parameters from the prior, data from the
//! model) versus successive substitution (regenerate data given the current
//! parameters, then one full Gibbs sweep). If every full conditional is
//! correct, both produce draws from the same distribution and the moments
//! of any test function agree up to Monte-Carlo error.
//!
//! The check runs on the unconstrained mixture: labels carry no side
//! restriction and the membership conditional covers all three components.
//! The production sampler's structural zeros condition on an event of the
//! observed eligibility whose normalizing constant the conjugate parameter
//! updates do not include, so a rejection-based forward simulator would
//! target a different joint; the zeros are verified separately.

use super::model::ModelData;
use super::sampler::{GibbsEngine, GibbsOptions};
use super::state::{Label, MembershipState, ParameterState, Priors};
use crate::error::Result;
use crate::kernels::{sample_inv_chi_squared, std_normal_cdf, RngStream};
use nalgebra::DMatrix;

#[derive(Debug, Clone)]
pub struct GewekeStat {
    pub name: String,
    pub forward_mean: f64,
    pub forward_se: f64,
    pub successive_mean: f64,
    pub successive_se: f64,
}

impl GewekeStat {
    /// |Δmean| in units of the combined Monte-Carlo standard error.
    pub fn z_score(&self) -> f64 {
        let se = (self.forward_se * self.forward_se + self.successive_se * self.successive_se)
            .sqrt();
        (self.forward_mean - self.successive_mean).abs() / se
    }
}

#[derive(Debug, Clone)]
pub struct GewekeReport {
    pub stats: Vec<GewekeStat>,
    pub draws_per_side: usize,
}

impl GewekeReport {
    pub fn max_z(&self) -> f64 {
        self.stats.iter().map(|s| s.z_score()).fold(0.0, f64::max)
    }
}

fn draw_prior(p: usize, priors: &Priors, rng: &mut RngStream) -> Result<ParameterState> {
    let normal_vec = |len: usize, sd: f64, rng: &mut RngStream| {
        nalgebra::DVector::from_fn(len, |_, _| sd * rng.std_normal())
    };
    Ok(ParameterState {
        alpha_minus: normal_vec(p + 1, priors.sd_alpha, rng),
        alpha_plus: normal_vec(p + 1, priors.sd_alpha, rng),
        beta_minus: normal_vec(p + 1, priors.var_beta.sqrt(), rng),
        sigma2_minus: sample_inv_chi_squared(priors.variance_df, priors.variance_scale, rng)?,
        beta_plus: normal_vec(p + 1, priors.var_beta.sqrt(), rng),
        sigma2_plus: sample_inv_chi_squared(priors.variance_df, priors.variance_scale, rng)?,
        beta: normal_vec(p + 1, priors.var_beta.sqrt(), rng),
        sigma2: sample_inv_chi_squared(priors.variance_df, priors.variance_scale, rng)?,
        gamma_minus: [priors.sd_gamma * rng.std_normal(), priors.sd_gamma * rng.std_normal()],
        gamma_plus: [priors.sd_gamma * rng.std_normal(), priors.sd_gamma * rng.std_normal()],
        gamma00: priors.sd_gamma * rng.std_normal(),
        gamma01: priors.sd_gamma * rng.std_normal(),
        gamma_x: normal_vec(p, priors.sd_gamma, rng),
    })
}

/// Forward-simulate (labels, eta, z, y) given parameters and fixed
/// covariates; the unconstrained model, so labels ignore sides.
fn forward_data(
    params: &ParameterState,
    x: &DMatrix<f64>,
    eta_threshold: f64,
    rng: &mut RngStream,
) -> (Vec<Label>, ModelData) {
    let n = x.nrows();
    let p = x.ncols();
    let mut labels = Vec::with_capacity(n);
    let mut eta = Vec::with_capacity(n);
    let mut z = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let row: Vec<f64> = (0..p).map(|j| x[(i, j)]).collect();
        let (pi_m, pi_z, _) =
            super::model::mixing_probabilities(&row, &params.alpha_minus, &params.alpha_plus);
        let u = rng.uniform_open();
        let label = if u < pi_m {
            Label::Minus
        } else if u < pi_m + pi_z {
            Label::Zero
        } else {
            Label::Plus
        };
        let (mu, s2) = match label {
            Label::Minus => (ext_mu(x, i, &params.beta_minus), params.sigma2_minus),
            Label::Zero => (ext_mu(x, i, &params.beta), params.sigma2),
            Label::Plus => (ext_mu(x, i, &params.beta_plus), params.sigma2_plus),
        };
        let e = mu + s2.sqrt() * rng.std_normal();
        let zi = e <= eta_threshold;
        let xg: f64 = (0..p).map(|j| x[(i, j)] * params.gamma_x[j]).sum();
        let lp = match label {
            Label::Minus => params.gamma_minus[0] + params.gamma_minus[1] * e + xg,
            Label::Plus => params.gamma_plus[0] + params.gamma_plus[1] * e + xg,
            Label::Zero => (if zi { params.gamma01 } else { params.gamma00 }) + xg,
        };
        let yi = rng.bernoulli(std_normal_cdf(lp));
        labels.push(label);
        eta.push(e);
        z.push(zi);
        y.push(yi);
    }
    (labels, ModelData::from_raw(eta, z, y, x.clone()))
}

fn ext_mu(x: &DMatrix<f64>, i: usize, coef: &nalgebra::DVector<f64>) -> f64 {
    let mut acc = coef[0];
    for j in 0..x.ncols() {
        acc += x[(i, j)] * coef[j + 1];
    }
    acc
}

fn test_stats(params: &ParameterState, labels: &[Label]) -> [f64; 3] {
    let pi_zero =
        labels.iter().filter(|&&l| l == Label::Zero).count() as f64 / labels.len() as f64;
    [params.gamma01, params.sigma2, pi_zero]
}

/// Run the two samplers and compare the means of γ₀₁, σ² and the realized
/// threshold-component fraction.
pub fn run_geweke(
    n_units: usize,
    p: usize,
    draws_per_side: usize,
    seed: u64,
    priors: &Priors,
) -> Result<GewekeReport> {
    let master = RngStream::new(seed, 7001);
    let mut x_rng = master.substream(&[1]);
    let x = DMatrix::from_fn(n_units, p, |_, _| x_rng.std_normal());
    let eta_threshold = 0.0;

    // Independent forward side.
    let mut fwd_rng = master.substream(&[2]);
    let mut forward: Vec<[f64; 3]> = Vec::with_capacity(draws_per_side);
    for _ in 0..draws_per_side {
        let params = draw_prior(p, priors, &mut fwd_rng)?;
        let (labels, _) = forward_data(&params, &x, eta_threshold, &mut fwd_rng);
        forward.push(test_stats(&params, &labels));
    }

    // Successive-substitution side, started from an exact joint draw.
    let mut gibbs_rng = master.substream(&[3]);
    let sweep_master = master.substream(&[4]);
    let mut seq = master.substream(&[5]);
    let mut params = draw_prior(p, priors, &mut gibbs_rng)?;
    let mut successive: Vec<[f64; 3]> = Vec::with_capacity(draws_per_side);
    let opts = GibbsOptions { frozen_labels: None, constrain_sides: false };
    for t in 0..draws_per_side {
        let (_, data) = forward_data(&params, &x, eta_threshold, &mut gibbs_rng);
        let mut engine = GibbsEngine::new(&data, priors, opts.clone(), 0.5)?;
        let mut memb = MembershipState::new(n_units);
        engine.iteration(&mut params, &mut memb, &sweep_master, &mut seq, t as u64)?;
        successive.push(test_stats(&params, &memb.g));
    }

    let names = ["gamma_01", "sigma2", "pi_zero"];
    let stats = (0..3)
        .map(|k| {
            let f: Vec<f64> = forward.iter().map(|s| s[k]).collect();
            let g: Vec<f64> = successive.iter().map(|s| s[k]).collect();
            GewekeStat {
                name: names[k].to_string(),
                forward_mean: mean(&f),
                forward_se: (variance(&f) / f.len() as f64).sqrt(),
                successive_mean: mean(&g),
                successive_se: super::diagnostics::mcse_mean(&g),
            }
        })
        .collect();
    Ok(GewekeReport { stats, draws_per_side })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() as f64 - 1.0).max(1.0)
}
