//! Model quantities: mixing probabilities, membership full conditionals and
//! the complete-data log likelihood.

use super::state::{Label, ParameterState};
use crate::data::ObservedDataset;
use crate::error::{RdError, Result};
use crate::kernels::{ln_std_normal_cdf, std_normal_cdf, RngStream};
use nalgebra::DMatrix;

/// Sampler-facing view of a dataset: the transformed forcing variable,
/// eligibility, outcome and model-scale covariates, plus design cross
/// products that never change across iterations.
#[derive(Debug, Clone)]
pub struct ModelData {
    pub eta: Vec<f64>,
    pub z: Vec<bool>,
    pub y: Vec<bool>,
    pub x: DMatrix<f64>,
    /// Row-major mirror of `x` for per-unit row loads in the hot loops.
    pub x_rows: Vec<f64>,
    /// [1, X]'[1, X] over all units, for the full-design probit update.
    pub ext_xtx: DMatrix<f64>,
    /// [1, X]'eta over all units.
    pub ext_xty_eta: nalgebra::DVector<f64>,
    /// X'X over all units, for the shared-slope update.
    pub xtx: DMatrix<f64>,
}

impl ModelData {
    pub fn from_dataset(data: &ObservedDataset) -> Self {
        ModelData::from_raw(
            data.log_s_tilde().to_vec(),
            data.eligible().to_vec(),
            data.outcome().to_vec(),
            data.covariates().clone(),
        )
    }

    /// Build directly from transformed-forcing values; used by simulation
    /// harnesses that never materialize incomes.
    pub fn from_raw(eta: Vec<f64>, z: Vec<bool>, y: Vec<bool>, x: DMatrix<f64>) -> Self {
        let n = eta.len();
        let p = x.ncols();
        let mut ext = DMatrix::zeros(n, p + 1);
        for i in 0..n {
            ext[(i, 0)] = 1.0;
            for j in 0..p {
                ext[(i, j + 1)] = x[(i, j)];
            }
        }
        let ext_xtx = ext.tr_mul(&ext);
        let xtx = x.tr_mul(&x);
        let eta_vec = nalgebra::DVector::from_column_slice(&eta);
        let ext_xty_eta = ext.tr_mul(&eta_vec).column(0).into();
        let mut x_rows = Vec::with_capacity(n * p);
        for i in 0..n {
            for j in 0..p {
                x_rows.push(x[(i, j)]);
            }
        }
        ModelData { eta, z, y, x, x_rows, ext_xtx, ext_xty_eta, xtx }
    }

    pub fn n(&self) -> usize {
        self.eta.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    #[inline]
    pub(crate) fn row(&self, i: usize) -> &[f64] {
        let p = self.p();
        &self.x_rows[i * p..(i + 1) * p]
    }
}

/// Linear predictor of an intercept-first coefficient vector against row i.
pub(crate) fn lin_pred(x: &DMatrix<f64>, i: usize, coef: &nalgebra::DVector<f64>) -> f64 {
    let mut acc = coef[0];
    for j in 0..x.ncols() {
        acc += x[(i, j)] * coef[j + 1];
    }
    acc
}

/// x_i'v for a plain slope vector.
pub(crate) fn dot_row(x: &DMatrix<f64>, i: usize, v: &nalgebra::DVector<f64>) -> f64 {
    let mut acc = 0.0;
    for j in 0..x.ncols() {
        acc += x[(i, j)] * v[j];
    }
    acc
}

/// Mixing probabilities (π⁻, π₀, π⁺) for one unit from the two sequential
/// probits:
///
/// ```text
/// π⁻ = Φ(−a⁻),  π⁺ = (1 − π⁻)·Φ(−a⁺),  π₀ = 1 − π⁻ − π⁺,
/// ```
///
/// with a± the linear predictors of the two membership probits.
pub fn mixing_probabilities(
    x_row: &[f64],
    alpha_minus: &nalgebra::DVector<f64>,
    alpha_plus: &nalgebra::DVector<f64>,
) -> (f64, f64, f64) {
    let mut a_minus = alpha_minus[0];
    let mut a_plus = alpha_plus[0];
    for (j, &v) in x_row.iter().enumerate() {
        a_minus += v * alpha_minus[j + 1];
        a_plus += v * alpha_plus[j + 1];
    }
    mixing_from_predictors(a_minus, a_plus)
}

pub(crate) fn mixing_from_predictors(a_minus: f64, a_plus: f64) -> (f64, f64, f64) {
    let pi_minus = std_normal_cdf(-a_minus);
    let pi_plus = (1.0 - pi_minus) * std_normal_cdf(-a_plus);
    let pi_zero = 1.0 - pi_minus - pi_plus;
    (pi_minus, pi_zero.max(0.0), pi_plus)
}

/// Log mixing probabilities; finite for all finite predictors. One tail
/// evaluation per probit.
pub(crate) fn ln_mixing_from_predictors(a_minus: f64, a_plus: f64) -> (f64, f64, f64) {
    let (ln_keep, ln_pi_minus) = crate::kernels::ln_std_normal_cdf_pair(a_minus);
    let (ln_above, ln_below) = crate::kernels::ln_std_normal_cdf_pair(a_plus);
    (ln_pi_minus, ln_keep + ln_above, ln_keep + ln_below)
}

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_74;

/// ln N(eta; mu, sigma2).
pub(crate) fn ln_normal_pdf(eta: f64, mu: f64, sigma2: f64) -> f64 {
    let d = eta - mu;
    -0.5 * (sigma2.ln() + d * d / sigma2) - LN_SQRT_2PI
}

/// Precomputed Gaussian log-density constants for one component, refreshed
/// once per iteration instead of per unit.
#[derive(Debug, Clone, Copy)]
pub(crate) struct GaussConsts {
    ln_norm: f64,
    half_inv: f64,
}

impl GaussConsts {
    pub fn new(sigma2: f64) -> Self {
        GaussConsts { ln_norm: -0.5 * sigma2.ln() - LN_SQRT_2PI, half_inv: 0.5 / sigma2 }
    }

    #[inline]
    pub fn ln_pdf(&self, d: f64) -> f64 {
        self.ln_norm - self.half_inv * d * d
    }
}

/// ln Bernoulli(y; Φ(lp)).
pub(crate) fn ln_probit_bernoulli(y: bool, lp: f64) -> f64 {
    if y {
        ln_std_normal_cdf(lp)
    } else {
        ln_std_normal_cdf(-lp)
    }
}

/// Per-unit log weights of the admissible components in the membership full
/// conditional. For an eligible unit the two entries are (threshold
/// component, below component); for an ineligible unit (threshold
/// component, above component). The mixing probabilities are kept in linear
/// form for the zero-weight fallback.
pub(crate) struct MembershipWeights {
    pub ln_w_zero: f64,
    pub ln_w_side: f64,
    pub pi_zero: f64,
    pub pi_side: f64,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn membership_weights(
    z: bool,
    y: bool,
    eta: f64,
    a_minus: f64,
    a_plus: f64,
    mu_zero: f64,
    mu_side: f64,
    consts_zero: GaussConsts,
    consts_side: GaussConsts,
    params: &ParameterState,
    x_gamma: f64,
) -> MembershipWeights {
    // Mixing probabilities in linear form; tails are computed directly so
    // small probabilities keep relative precision.
    let tail_minus = std_normal_cdf(-a_minus);
    let keep = 1.0 - tail_minus;
    let tail_plus = std_normal_cdf(-a_plus);
    let pi_zero = keep * (1.0 - tail_plus);
    let pi_side = if z { tail_minus } else { keep * tail_plus };

    let lp_zero = if z { params.gamma01 } else { params.gamma00 } + x_gamma;
    let b_zero = std_normal_cdf(if y { lp_zero } else { -lp_zero });
    let ln_w_zero = (pi_zero * b_zero).ln() + consts_zero.ln_pdf(eta - mu_zero);

    let (g0, g1) = if z {
        (params.gamma_minus[0], params.gamma_minus[1])
    } else {
        (params.gamma_plus[0], params.gamma_plus[1])
    };
    let lp_side = g0 + g1 * eta + x_gamma;
    let b_side = std_normal_cdf(if y { lp_side } else { -lp_side });
    let ln_w_side = (pi_side * b_side).ln() + consts_side.ln_pdf(eta - mu_side);

    MembershipWeights { ln_w_zero, ln_w_side, pi_zero, pi_side }
}

/// Outcome of drawing one membership label.
pub(crate) struct MembershipDraw {
    pub label: Label,
    /// Complete-data log-likelihood contribution of the drawn label.
    pub ln_weight: f64,
    pub used_fallback: bool,
}

/// Draw from the two-point membership conditional. When both weights are
/// numerically zero the draw falls back to the mixing probabilities alone
/// and the event is flagged.
pub(crate) fn draw_membership_from_weights(
    z: bool,
    w: &MembershipWeights,
    rng: &mut RngStream,
) -> MembershipDraw {
    let side_label = if z { Label::Minus } else { Label::Plus };
    let both_zero = w.ln_w_zero == f64::NEG_INFINITY && w.ln_w_side == f64::NEG_INFINITY;
    let (ln_a, ln_b, used_fallback) = if both_zero {
        (w.pi_zero.ln(), w.pi_side.ln(), true)
    } else {
        (w.ln_w_zero, w.ln_w_side, false)
    };
    // p(zero) = 1 / (1 + exp(ln_b − ln_a)), stable in log space.
    let p_zero = if ln_a == f64::NEG_INFINITY && ln_b == f64::NEG_INFINITY {
        0.5
    } else if ln_a >= ln_b {
        1.0 / (1.0 + (ln_b - ln_a).exp())
    } else {
        let e = (ln_a - ln_b).exp();
        e / (1.0 + e)
    };
    let take_zero = rng.uniform_open() < p_zero;
    let label = if take_zero { Label::Zero } else { side_label };
    let ln_weight = if take_zero { ln_a } else { ln_b };
    MembershipDraw { label, ln_weight, used_fallback }
}

/// One membership draw for a single unit from the exact full conditional.
/// Eligible units choose between the threshold and below components,
/// ineligible units between the threshold and above components.
pub fn draw_membership(
    unit: usize,
    params: &ParameterState,
    data: &ModelData,
    rng: &mut RngStream,
) -> Result<Label> {
    if unit >= data.n() {
        return Err(RdError::Domain(format!("unit index {unit} out of range")));
    }
    if !params.variances_positive() {
        return Err(RdError::Domain("variance parameters must be positive".into()));
    }
    let a_minus = lin_pred(&data.x, unit, &params.alpha_minus);
    let a_plus = lin_pred(&data.x, unit, &params.alpha_plus);
    let z = data.z[unit];
    let mu_zero = lin_pred(&data.x, unit, &params.beta);
    let (mu_side, sigma2_side) = if z {
        (lin_pred(&data.x, unit, &params.beta_minus), params.sigma2_minus)
    } else {
        (lin_pred(&data.x, unit, &params.beta_plus), params.sigma2_plus)
    };
    let x_gamma = dot_row(&data.x, unit, &params.gamma_x);
    let w = membership_weights(
        z,
        data.y[unit],
        data.eta[unit],
        a_minus,
        a_plus,
        mu_zero,
        mu_side,
        GaussConsts::new(params.sigma2),
        GaussConsts::new(sigma2_side),
        params,
        x_gamma,
    );
    Ok(draw_membership_from_weights(z, &w, rng).label)
}

/// Finite-sample relative-risk tally over completed potential outcomes.
///
/// For each unit flagged in `in_analysis`, the observed outcome enters the
/// factual arm and the imputed counterfactual enters the other. A zero
/// denominator is guarded by adding `guard` to both tallies and flagging
/// the result.
pub fn score_relative_risk(
    z: &[bool],
    y_obs: &[bool],
    y_counterfactual: &[bool],
    in_analysis: &[bool],
    guard: f64,
) -> (f64, f64, f64, bool) {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..z.len() {
        if !in_analysis[i] {
            continue;
        }
        if z[i] {
            num += f64::from(y_obs[i]);
            den += f64::from(y_counterfactual[i]);
        } else {
            num += f64::from(y_counterfactual[i]);
            den += f64::from(y_obs[i]);
        }
    }
    let degenerate = den == 0.0;
    let rr = if degenerate { (num + guard) / (den + guard) } else { num / den };
    (num, den, rr, degenerate)
}

/// Complete-data log likelihood at the given labels and parameters.
pub fn complete_data_log_likelihood(
    params: &ParameterState,
    labels: &[Label],
    data: &ModelData,
) -> f64 {
    let mut total = 0.0;
    for i in 0..data.n() {
        let a_minus = lin_pred(&data.x, i, &params.alpha_minus);
        let a_plus = lin_pred(&data.x, i, &params.alpha_plus);
        let (ln_pi_minus, ln_pi_zero, ln_pi_plus) = ln_mixing_from_predictors(a_minus, a_plus);
        let x_gamma = dot_row(&data.x, i, &params.gamma_x);
        let eta = data.eta[i];
        let y = data.y[i];
        total += match labels[i] {
            Label::Zero => {
                let lp = if data.z[i] { params.gamma01 } else { params.gamma00 } + x_gamma;
                ln_pi_zero
                    + ln_normal_pdf(eta, lin_pred(&data.x, i, &params.beta), params.sigma2)
                    + ln_probit_bernoulli(y, lp)
            }
            Label::Minus => {
                let lp = params.gamma_minus[0] + params.gamma_minus[1] * eta + x_gamma;
                ln_pi_minus
                    + ln_normal_pdf(eta, lin_pred(&data.x, i, &params.beta_minus), params.sigma2_minus)
                    + ln_probit_bernoulli(y, lp)
            }
            Label::Plus => {
                let lp = params.gamma_plus[0] + params.gamma_plus[1] * eta + x_gamma;
                ln_pi_plus
                    + ln_normal_pdf(eta, lin_pred(&data.x, i, &params.beta_plus), params.sigma2_plus)
                    + ln_probit_bernoulli(y, lp)
            }
        };
    }
    total
}
