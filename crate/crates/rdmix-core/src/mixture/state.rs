//! Parameter and latent-variable state for the mixture sampler.

use crate::error::{RdError, Result};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

/// Latent subpopulation label.
///
/// `Minus`/`Plus` are the off-threshold components below/above the cutoff;
/// `Zero` is the component where the design assumptions hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[repr(u8)]
pub enum Label {
    Minus = 0,
    Zero = 1,
    Plus = 2,
}

impl Label {
    pub fn as_char(self) -> char {
        match self {
            Label::Minus => '-',
            Label::Zero => '0',
            Label::Plus => '+',
        }
    }

    pub fn from_char(c: char) -> Result<Label> {
        match c {
            '-' => Ok(Label::Minus),
            '0' => Ok(Label::Zero),
            '+' => Ok(Label::Plus),
            other => Err(RdError::Data(format!("unknown membership label '{other}'"))),
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// The full parameter vector θ: mixing probits, three forcing regressions
/// with variances, and the four outcome blocks with shared covariate slopes.
/// Dimension is 6p + 14.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParameterState {
    /// Probit coefficients for membership below the threshold; intercept
    /// first, then p covariate slopes.
    pub alpha_minus: DVector<f64>,
    /// Probit coefficients for membership above the threshold (sequential,
    /// conditional on not being below).
    pub alpha_plus: DVector<f64>,
    /// Forcing regression in the below component.
    pub beta_minus: DVector<f64>,
    pub sigma2_minus: f64,
    /// Forcing regression in the above component.
    pub beta_plus: DVector<f64>,
    pub sigma2_plus: f64,
    /// Forcing regression in the threshold component.
    pub beta: DVector<f64>,
    pub sigma2: f64,
    /// Outcome intercept and forcing slope in the below component.
    pub gamma_minus: [f64; 2],
    /// Outcome intercept and forcing slope in the above component.
    pub gamma_plus: [f64; 2],
    /// Outcome intercepts in the threshold component, by eligibility arm.
    pub gamma00: f64,
    pub gamma01: f64,
    /// Covariate slopes shared by all four outcome regressions.
    pub gamma_x: DVector<f64>,
}

impl ParameterState {
    /// Number of covariates.
    pub fn p(&self) -> usize {
        self.gamma_x.len()
    }

    /// Prior-mean initialization: all coefficients zero, variances at the
    /// prior scale.
    pub fn prior_init(p: usize, priors: &Priors) -> Self {
        ParameterState {
            alpha_minus: DVector::zeros(p + 1),
            alpha_plus: DVector::zeros(p + 1),
            beta_minus: DVector::zeros(p + 1),
            sigma2_minus: priors.variance_scale,
            beta_plus: DVector::zeros(p + 1),
            sigma2_plus: priors.variance_scale,
            beta: DVector::zeros(p + 1),
            sigma2: priors.variance_scale,
            gamma_minus: [0.0; 2],
            gamma_plus: [0.0; 2],
            gamma00: 0.0,
            gamma01: 0.0,
            gamma_x: DVector::zeros(p),
        }
    }

    pub fn dim(&self) -> usize {
        6 * self.p() + 14
    }

    /// Stable flattened layout used by the draw file.
    pub fn flat_names(p: usize) -> Vec<String> {
        let mut names = Vec::with_capacity(6 * p + 14);
        let vec_block = |names: &mut Vec<String>, prefix: &str| {
            for j in 0..=p {
                names.push(format!("{prefix}_{j}"));
            }
        };
        vec_block(&mut names, "alpha_minus");
        vec_block(&mut names, "alpha_plus");
        vec_block(&mut names, "beta_minus");
        names.push("sigma2_minus".into());
        vec_block(&mut names, "beta_plus");
        names.push("sigma2_plus".into());
        vec_block(&mut names, "beta");
        names.push("sigma2".into());
        names.push("gamma_minus_0".into());
        names.push("gamma_minus_1".into());
        names.push("gamma_plus_0".into());
        names.push("gamma_plus_1".into());
        names.push("gamma_00".into());
        names.push("gamma_01".into());
        for j in 1..=p {
            names.push(format!("gamma_x_{j}"));
        }
        names
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        out.extend(self.alpha_minus.iter());
        out.extend(self.alpha_plus.iter());
        out.extend(self.beta_minus.iter());
        out.push(self.sigma2_minus);
        out.extend(self.beta_plus.iter());
        out.push(self.sigma2_plus);
        out.extend(self.beta.iter());
        out.push(self.sigma2);
        out.extend_from_slice(&self.gamma_minus);
        out.extend_from_slice(&self.gamma_plus);
        out.push(self.gamma00);
        out.push(self.gamma01);
        out.extend(self.gamma_x.iter());
        out
    }

    pub fn variances_positive(&self) -> bool {
        self.sigma2 > 0.0 && self.sigma2_minus > 0.0 && self.sigma2_plus > 0.0
    }
}

/// Latent augmentation state: labels, probit utilities and outcome
/// utilities.
#[derive(Debug, Clone)]
pub struct MembershipState {
    pub g: Vec<Label>,
    pub g_star_minus: Vec<f64>,
    /// Only referenced for units outside the below component.
    pub g_star_plus: Vec<f64>,
    pub y_star: Vec<f64>,
    /// Most recent imputed counterfactual outcome for threshold-component
    /// units (missing arm).
    pub y_missing: Vec<bool>,
}

impl MembershipState {
    pub fn new(n: usize) -> Self {
        MembershipState {
            g: vec![Label::Zero; n],
            g_star_minus: vec![0.0; n],
            g_star_plus: vec![0.0; n],
            y_star: vec![0.0; n],
            y_missing: vec![false; n],
        }
    }

    /// Structural zeros: an eligible unit is never in the above component,
    /// an ineligible unit never in the below component.
    pub fn respects_structural_zeros(&self, z: &[bool]) -> bool {
        self.g.iter().zip(z).all(|(&g, &zi)| match g {
            Label::Minus => zi,
            Label::Plus => !zi,
            Label::Zero => true,
        })
    }
}

/// Prior hyperparameters. Defaults: unit-variance normals on probit
/// coefficients, variance 100 on forcing coefficients, inv-χ²(3, 1/3) on
/// forcing variances.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Priors {
    pub sd_alpha: f64,
    pub sd_gamma: f64,
    pub var_beta: f64,
    pub variance_df: f64,
    pub variance_scale: f64,
}

impl Default for Priors {
    fn default() -> Self {
        Priors {
            sd_alpha: 1.0,
            sd_gamma: 1.0,
            var_beta: 100.0,
            variance_df: 3.0,
            variance_scale: 1.0 / 3.0,
        }
    }
}

impl Priors {
    pub fn validate(&self) -> Result<()> {
        let all_positive = self.sd_alpha > 0.0
            && self.sd_gamma > 0.0
            && self.var_beta > 0.0
            && self.variance_df > 0.0
            && self.variance_scale > 0.0;
        if all_positive {
            Ok(())
        } else {
            Err(RdError::Config("prior hyperparameters must all be positive".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum InitStrategy {
    /// Labels drawn uniformly between the two admissible components per
    /// side; parameters at prior means with variances at prior scale.
    #[default]
    PriorSymmetric,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub chains: u32,
    pub seed: u64,
    pub init_strategy: InitStrategy,
    /// Continuity guard added to both relative-risk tallies when the
    /// denominator of a draw is zero.
    pub rr_guard: f64,
    /// Keep a full membership snapshot every this many retained draws
    /// (0 disables snapshots).
    pub snapshot_stride: usize,
    /// Bin width (forcing-variable units) for per-draw membership bin
    /// means; `None` disables tracking.
    pub bin_width: Option<f64>,
}

impl SamplerConfig {
    pub fn new(iterations: usize, burn_in: usize, seed: u64) -> Self {
        SamplerConfig {
            iterations,
            burn_in,
            thinning: 1,
            chains: 1,
            seed,
            init_strategy: InitStrategy::PriorSymmetric,
            rr_guard: 0.5,
            snapshot_stride: 10,
            bin_width: Some(10.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.iterations {
            return Err(RdError::Config(format!(
                "burn_in ({}) must be smaller than iterations ({})",
                self.burn_in, self.iterations
            )));
        }
        if self.thinning == 0 {
            return Err(RdError::Config("thinning must be at least 1".into()));
        }
        if self.chains == 0 {
            return Err(RdError::Config("at least one chain is required".into()));
        }
        if !(self.rr_guard > 0.0) {
            return Err(RdError::Config("rr_guard must be positive".into()));
        }
        Ok(())
    }

    /// Retained draws per chain.
    pub fn retained(&self) -> usize {
        (self.iterations - self.burn_in).div_ceil(self.thinning)
    }
}
