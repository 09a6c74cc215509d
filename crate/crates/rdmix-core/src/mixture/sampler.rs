//! The data-augmented Gibbs sampler for the three-component mixture.
//!
//! One iteration runs, in a fixed order: (1) membership draws for every
//! unit; (2) latent probit utilities for the two membership probits and
//! conjugate updates of both coefficient blocks, the second restricted to
//! units outside the below component; (3–8) conjugate updates of the three
//! forcing regressions and their variances on their member subsets; (9)
//! latent outcome utilities and updates of the four outcome intercept
//! blocks; (10) fresh outcome utilities, residualization, and the shared
//! covariate-slope update over all units. After the sweep the missing
//! potential outcome of every threshold-component unit is imputed and the
//! finite-sample relative risk of the draw is scored.
//!
//! Determinism: membership draws consume shard-indexed substreams keyed by
//! `(iteration, shard)`, so the draw sequence is identical however the
//! shards are scheduled; everything else consumes the chain's own stream
//! sequentially. Chains own disjoint streams.

use super::draws::{DrawRecord, MembershipSnapshot, PosteriorDraws};
use super::model::{
    draw_membership_from_weights, ln_mixing_from_predictors, ln_probit_bernoulli,
    membership_weights, GaussConsts, ModelData,
};
use super::state::{InitStrategy, Label, MembershipState, ParameterState, Priors, SamplerConfig};
use crate::data::ObservedDataset;
use crate::error::{RdError, Result};
use crate::kernels::{
    residual_variance_from_sumsq, sample_probit_utility, std_normal_cdf, GaussianPosterior,
    RngStream,
};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

const MEMBERSHIP_SHARD: usize = 1024;
// Substream tags; keep distinct so derived streams never alias.
const TAG_SEQ: u64 = 0x5E9;
const TAG_INIT: u64 = 0xA0;
const TAG_MEMBERSHIP: u64 = 0xA1;

#[derive(Debug, Clone, Default)]
pub struct GibbsOptions {
    /// When set, memberships are never re-drawn; the sampler runs the
    /// regression blocks conditional on these labels.
    pub frozen_labels: Option<Vec<Label>>,
    /// Membership conditionals place zero mass on the off-side component
    /// (the production model). The coherence harness disables this to
    /// sample the unconstrained mixture.
    pub constrain_sides: bool,
}

impl GibbsOptions {
    pub fn production() -> Self {
        GibbsOptions { frozen_labels: None, constrain_sides: true }
    }
}

/// Per-iteration scoring output.
#[derive(Debug, Clone, Copy)]
pub struct IterationScore {
    pub log_lik: f64,
    pub rr: f64,
    pub rr_num: f64,
    pub rr_den: f64,
    pub degenerate: bool,
    pub n_minus: u32,
    pub n_plus: u32,
    pub n_zero_z0: u32,
    pub n_zero_z1: u32,
    pub fallbacks: u64,
    pub prior_collapses: u64,
}

/// Reusable engine holding the data, priors and per-iteration scratch.
pub struct GibbsEngine<'a> {
    data: &'a ModelData,
    priors: &'a Priors,
    opts: GibbsOptions,
    rr_guard: f64,
    // Linear predictors refreshed at the start of each iteration.
    lin_alpha_minus: Vec<f64>,
    lin_alpha_plus: Vec<f64>,
    mu_minus: Vec<f64>,
    mu_plus: Vec<f64>,
    mu_zero: Vec<f64>,
    x_gamma: Vec<f64>,
    in_u0: Vec<bool>,
    resid: Vec<f64>,
    idx: [Vec<usize>; 3],
    stats_minus: ExtSuffStats,
    stats_plus: ExtSuffStats,
}

/// Upper-triangle running cross products of the extended design [1, x] plus
/// the forcing-response accumulation, for one label's member units.
struct ExtSuffStats {
    k: usize,
    tri: Vec<f64>,
    eta_xty: DVector<f64>,
}

impl ExtSuffStats {
    fn new(p: usize) -> Self {
        let k = p + 1;
        ExtSuffStats { k, tri: vec![0.0; k * (k + 1) / 2], eta_xty: DVector::zeros(k) }
    }

    fn clear(&mut self) {
        self.tri.fill(0.0);
        self.eta_xty.fill(0.0);
    }

    #[inline]
    fn add(&mut self, row: &[f64], response: f64) {
        let t = &mut self.tri;
        t[0] += 1.0;
        let mut idx = 1;
        for &v in row {
            t[idx] += v;
            idx += 1;
        }
        for (a, &va) in row.iter().enumerate() {
            for &vb in &row[a..] {
                t[idx] += va * vb;
                idx += 1;
            }
        }
        self.eta_xty[0] += response;
        for (j, &v) in row.iter().enumerate() {
            self.eta_xty[j + 1] += v * response;
        }
    }

    fn to_matrix(&self) -> DMatrix<f64> {
        let k = self.k;
        let mut m = DMatrix::zeros(k, k);
        let mut idx = 0;
        for a in 0..k {
            for b in a..k {
                m[(a, b)] = self.tri[idx];
                m[(b, a)] = self.tri[idx];
                idx += 1;
            }
        }
        m
    }
}

impl<'a> GibbsEngine<'a> {
    pub fn new(
        data: &'a ModelData,
        priors: &'a Priors,
        opts: GibbsOptions,
        rr_guard: f64,
    ) -> Result<Self> {
        priors.validate()?;
        if let Some(labels) = &opts.frozen_labels {
            if labels.len() != data.n() {
                return Err(RdError::Config("frozen labels length differs from data".into()));
            }
        }
        let n = data.n();
        Ok(GibbsEngine {
            data,
            priors,
            opts,
            rr_guard,
            lin_alpha_minus: vec![0.0; n],
            lin_alpha_plus: vec![0.0; n],
            mu_minus: vec![0.0; n],
            mu_plus: vec![0.0; n],
            mu_zero: vec![0.0; n],
            x_gamma: vec![0.0; n],
            in_u0: Vec::with_capacity(n),
            resid: Vec::with_capacity(n),
            idx: [Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n)],
            stats_minus: ExtSuffStats::new(data.p()),
            stats_plus: ExtSuffStats::new(data.p()),
        })
    }

    fn refresh_predictors(&mut self, params: &ParameterState) {
        lin_combo_ext(&self.data.x, &params.alpha_minus, &mut self.lin_alpha_minus);
        lin_combo_ext(&self.data.x, &params.alpha_plus, &mut self.lin_alpha_plus);
        lin_combo_ext(&self.data.x, &params.beta_minus, &mut self.mu_minus);
        lin_combo_ext(&self.data.x, &params.beta_plus, &mut self.mu_plus);
        lin_combo_ext(&self.data.x, &params.beta, &mut self.mu_zero);
        lin_combo(&self.data.x, &params.gamma_x, &mut self.x_gamma);
    }

    /// One full sweep plus imputation scoring. `master` provides the
    /// path-addressed membership substreams; `seq` is the chain's
    /// sequential stream.
    pub fn iteration(
        &mut self,
        params: &mut ParameterState,
        memb: &mut MembershipState,
        master: &RngStream,
        seq: &mut RngStream,
        iter_index: u64,
    ) -> Result<IterationScore> {
        let n = self.data.n();
        let p = self.data.p();
        self.refresh_predictors(params);

        // Step 1: membership draws (or frozen labels), with the
        // complete-data log likelihood accumulated from the drawn labels.
        let (log_lik, fallbacks) = if let Some(frozen) = &self.opts.frozen_labels {
            memb.g.copy_from_slice(frozen);
            (super::model::complete_data_log_likelihood(params, &memb.g, self.data), 0)
        } else if self.opts.constrain_sides {
            self.draw_memberships_constrained(params, memb, master, iter_index)
        } else {
            self.draw_memberships_unconstrained(params, memb, master, iter_index)
        };
        if !log_lik.is_finite() {
            return Err(RdError::Numeric(format!(
                "complete-data log likelihood became non-finite at iteration {iter_index}"
            )));
        }

        let mut prior_collapses = 0u64;

        // Per-label index lists and extended-design sufficient statistics.
        // Only the two side components are accumulated; the threshold
        // component's blocks follow from the precomputed full-data cross
        // products by subtraction.
        self.rebuild_label_stats(memb);

        // Step 2a: latent membership utilities.
        for i in 0..n {
            memb.g_star_minus[i] =
                sample_probit_utility(self.lin_alpha_minus[i], memb.g[i] != Label::Minus, seq);
        }
        // The second probit only concerns units outside the below
        // component; its coefficient update is restricted the same way.
        let mut ext_xty_plus = DVector::zeros(p + 1);
        for i in 0..n {
            if memb.g[i] == Label::Minus {
                continue;
            }
            let draw =
                sample_probit_utility(self.lin_alpha_plus[i], memb.g[i] != Label::Plus, seq);
            memb.g_star_plus[i] = draw;
            add_ext_vec(self.data.row(i), draw, &mut ext_xty_plus);
        }

        // Step 2b: below-membership probit coefficients on the full design.
        let prec_alpha = 1.0 / (self.priors.sd_alpha * self.priors.sd_alpha);
        let ext_xty_minus = column_dots_ext(&self.data.x, &memb.g_star_minus);
        params.alpha_minus =
            GaussianPosterior::from_suffstats(prec_alpha, 1.0, &self.data.ext_xtx, &ext_xty_minus)?
                .draw(seq);

        // Step 2c: above-membership probit on the restricted design.
        let ext_xtx_minus = self.stats_minus.to_matrix();
        let ext_xtx_plus = &self.data.ext_xtx - &ext_xtx_minus;
        if self.idx[Label::Minus.index()].len() == n {
            prior_collapses += 1;
        }
        params.alpha_plus =
            GaussianPosterior::from_suffstats(prec_alpha, 1.0, &ext_xtx_plus, &ext_xty_plus)?
                .draw(seq);

        // Steps 3–8: forcing regressions and variances per component.
        let ext_xtx_plus_stats = self.stats_plus.to_matrix();
        let xtx_zero = &self.data.ext_xtx - &ext_xtx_minus - &ext_xtx_plus_stats;
        let xty_zero =
            &self.data.ext_xty_eta - &self.stats_minus.eta_xty - &self.stats_plus.eta_xty;
        let (beta_minus, sigma2_minus) = self.forcing_block(
            Label::Minus,
            params.sigma2_minus,
            &ext_xtx_minus,
            &self.stats_minus.eta_xty.clone(),
            seq,
            &mut prior_collapses,
        )?;
        params.beta_minus = beta_minus;
        params.sigma2_minus = sigma2_minus;
        let (beta_plus, sigma2_plus) = self.forcing_block(
            Label::Plus,
            params.sigma2_plus,
            &ext_xtx_plus_stats,
            &self.stats_plus.eta_xty.clone(),
            seq,
            &mut prior_collapses,
        )?;
        params.beta_plus = beta_plus;
        params.sigma2_plus = sigma2_plus;
        let (beta, sigma2) =
            self.forcing_block(Label::Zero, params.sigma2, &xtx_zero, &xty_zero, seq, &mut prior_collapses)?;
        params.beta = beta;
        params.sigma2 = sigma2;

        // Step 9a: latent outcome utilities at the current coefficients.
        self.draw_outcome_utilities(params, memb, seq)?;

        // Steps 9b–9e: outcome intercept blocks.
        let prec_gamma = 1.0 / (self.priors.sd_gamma * self.priors.sd_gamma);
        let mut side_xtx = [DMatrix::zeros(2, 2), DMatrix::zeros(2, 2)];
        let mut side_xty = [DVector::zeros(2), DVector::zeros(2)];
        let mut side_n = [0usize; 2];
        let mut zero_sum = [0.0f64; 2];
        let mut zero_n = [0usize; 2];
        for i in 0..n {
            let resid = memb.y_star[i] - self.x_gamma[i];
            match memb.g[i] {
                Label::Minus | Label::Plus => {
                    let k = usize::from(memb.g[i] == Label::Plus);
                    let eta = self.data.eta[i];
                    side_xtx[k][(0, 0)] += 1.0;
                    side_xtx[k][(0, 1)] += eta;
                    side_xtx[k][(1, 0)] += eta;
                    side_xtx[k][(1, 1)] += eta * eta;
                    side_xty[k][0] += resid;
                    side_xty[k][1] += eta * resid;
                    side_n[k] += 1;
                }
                Label::Zero => {
                    let arm = usize::from(self.data.z[i]);
                    zero_sum[arm] += resid;
                    zero_n[arm] += 1;
                }
            }
        }
        for k in 0..2 {
            if side_n[k] == 0 {
                prior_collapses += 1;
            }
            let draw =
                GaussianPosterior::from_suffstats(prec_gamma, 1.0, &side_xtx[k], &side_xty[k])?
                    .draw(seq);
            if k == 0 {
                params.gamma_minus = [draw[0], draw[1]];
            } else {
                params.gamma_plus = [draw[0], draw[1]];
            }
        }
        for arm in 0..2 {
            if zero_n[arm] == 0 {
                prior_collapses += 1;
            }
            let var = 1.0 / (prec_gamma + zero_n[arm] as f64);
            let mean = var * zero_sum[arm];
            let draw = mean + var.sqrt() * seq.std_normal();
            if arm == 0 {
                params.gamma00 = draw;
            } else {
                params.gamma01 = draw;
            }
        }

        // Step 10: fresh outcome utilities, residualize, shared slopes.
        self.draw_outcome_utilities(params, memb, seq)?;
        self.resid.clear();
        for i in 0..n {
            let offset = match memb.g[i] {
                Label::Minus => params.gamma_minus[0] + params.gamma_minus[1] * self.data.eta[i],
                Label::Plus => params.gamma_plus[0] + params.gamma_plus[1] * self.data.eta[i],
                Label::Zero => {
                    if self.data.z[i] {
                        params.gamma01
                    } else {
                        params.gamma00
                    }
                }
            };
            self.resid.push(memb.y_star[i] - offset);
        }
        let xty_gamma = column_dots(&self.data.x, &self.resid);
        params.gamma_x =
            GaussianPosterior::from_suffstats(prec_gamma, 1.0, &self.data.xtx, &xty_gamma)?
                .draw(seq);

        // Imputation and scoring at the end-of-sweep state.
        lin_combo(&self.data.x, &params.gamma_x, &mut self.x_gamma);
        let mut counts = [0u32; 4]; // minus, plus, zero_z0, zero_z1
        for i in 0..n {
            match memb.g[i] {
                Label::Minus => counts[0] += 1,
                Label::Plus => counts[1] += 1,
                Label::Zero => {
                    let z = self.data.z[i];
                    counts[2 + usize::from(z)] += 1;
                    let counter_intercept = if z { params.gamma00 } else { params.gamma01 };
                    let p_miss = std_normal_cdf(counter_intercept + self.x_gamma[i]);
                    memb.y_missing[i] = seq.bernoulli(p_miss);
                }
            }
        }
        self.in_u0.clear();
        self.in_u0.extend(memb.g.iter().map(|&g| g == Label::Zero));
        let (rr_num, rr_den, rr, degenerate) = super::model::score_relative_risk(
            &self.data.z,
            &self.data.y,
            &memb.y_missing,
            &self.in_u0,
            self.rr_guard,
        );

        Ok(IterationScore {
            log_lik,
            rr,
            rr_num,
            rr_den,
            degenerate,
            n_minus: counts[0],
            n_plus: counts[1],
            n_zero_z0: counts[2],
            n_zero_z1: counts[3],
            fallbacks,
            prior_collapses,
        })
    }

    /// Rebuild per-label unit indices and side-component design statistics.
    fn rebuild_label_stats(&mut self, memb: &MembershipState) {
        for list in &mut self.idx {
            list.clear();
        }
        self.stats_minus.clear();
        self.stats_plus.clear();
        for (i, &g) in memb.g.iter().enumerate() {
            self.idx[g.index()].push(i);
            match g {
                Label::Minus => self.stats_minus.add(self.data.row(i), self.data.eta[i]),
                Label::Plus => self.stats_plus.add(self.data.row(i), self.data.eta[i]),
                Label::Zero => {}
            }
        }
    }

    /// Coefficient and variance update of one forcing regression.
    fn forcing_block(
        &self,
        label: Label,
        sigma2: f64,
        xtx: &DMatrix<f64>,
        xty: &DVector<f64>,
        seq: &mut RngStream,
        collapses: &mut u64,
    ) -> Result<(DVector<f64>, f64)> {
        let members = &self.idx[label.index()];
        if members.is_empty() {
            *collapses += 1;
        }
        let prec_beta = 1.0 / self.priors.var_beta;
        let coef = GaussianPosterior::from_suffstats(prec_beta, sigma2, xtx, xty)?.draw(seq);
        let mut ss = 0.0;
        for &i in members {
            let mut fitted = coef[0];
            for (j, &v) in self.data.row(i).iter().enumerate() {
                fitted += v * coef[j + 1];
            }
            let r = self.data.eta[i] - fitted;
            ss += r * r;
        }
        let sigma2_new = residual_variance_from_sumsq(
            self.priors.variance_df,
            self.priors.variance_scale,
            ss,
            members.len(),
            seq,
        )?;
        Ok((coef, sigma2_new))
    }

    fn draw_memberships_constrained(
        &self,
        params: &ParameterState,
        memb: &mut MembershipState,
        master: &RngStream,
        iter_index: u64,
    ) -> (f64, u64) {
        let n = self.data.n();
        let consts_zero = GaussConsts::new(params.sigma2);
        let consts_minus = GaussConsts::new(params.sigma2_minus);
        let consts_plus = GaussConsts::new(params.sigma2_plus);
        let mut log_lik = 0.0;
        let mut fallbacks = 0u64;
        for (shard_idx, start) in (0..n).step_by(MEMBERSHIP_SHARD).enumerate() {
            let mut rng = master.substream(&[TAG_MEMBERSHIP, iter_index, shard_idx as u64]);
            let end = (start + MEMBERSHIP_SHARD).min(n);
            for i in start..end {
                let z = self.data.z[i];
                let (mu_side, consts_side) = if z {
                    (self.mu_minus[i], consts_minus)
                } else {
                    (self.mu_plus[i], consts_plus)
                };
                let w = membership_weights(
                    z,
                    self.data.y[i],
                    self.data.eta[i],
                    self.lin_alpha_minus[i],
                    self.lin_alpha_plus[i],
                    self.mu_zero[i],
                    mu_side,
                    consts_zero,
                    consts_side,
                    params,
                    self.x_gamma[i],
                );
                let d = draw_membership_from_weights(z, &w, &mut rng);
                memb.g[i] = d.label;
                log_lik += d.ln_weight;
                fallbacks += u64::from(d.used_fallback);
            }
        }
        (log_lik, fallbacks)
    }

    /// Membership draws from the unconstrained three-component conditional.
    /// Only used by the joint-coherence harness, where data are generated
    /// without side restrictions.
    fn draw_memberships_unconstrained(
        &self,
        params: &ParameterState,
        memb: &mut MembershipState,
        master: &RngStream,
        iter_index: u64,
    ) -> (f64, u64) {
        let n = self.data.n();
        let consts_zero = GaussConsts::new(params.sigma2);
        let consts_minus = GaussConsts::new(params.sigma2_minus);
        let consts_plus = GaussConsts::new(params.sigma2_plus);
        let mut log_lik = 0.0;
        let mut fallbacks = 0u64;
        for (shard_idx, start) in (0..n).step_by(MEMBERSHIP_SHARD).enumerate() {
            let mut rng = master.substream(&[TAG_MEMBERSHIP, iter_index, shard_idx as u64]);
            let end = (start + MEMBERSHIP_SHARD).min(n);
            for i in start..end {
                let eta = self.data.eta[i];
                let y = self.data.y[i];
                let xg = self.x_gamma[i];
                let (ln_pi_m, ln_pi_z, ln_pi_p) =
                    ln_mixing_from_predictors(self.lin_alpha_minus[i], self.lin_alpha_plus[i]);
                let lp_zero = if self.data.z[i] { params.gamma01 } else { params.gamma00 } + xg;
                let ln_w = [
                    ln_pi_m
                        + consts_minus.ln_pdf(eta - self.mu_minus[i])
                        + ln_probit_bernoulli(
                            y,
                            params.gamma_minus[0] + params.gamma_minus[1] * eta + xg,
                        ),
                    ln_pi_z
                        + consts_zero.ln_pdf(eta - self.mu_zero[i])
                        + ln_probit_bernoulli(y, lp_zero),
                    ln_pi_p
                        + consts_plus.ln_pdf(eta - self.mu_plus[i])
                        + ln_probit_bernoulli(
                            y,
                            params.gamma_plus[0] + params.gamma_plus[1] * eta + xg,
                        ),
                ];
                let max = ln_w[0].max(ln_w[1]).max(ln_w[2]);
                let (weights, used_fallback) = if max == f64::NEG_INFINITY {
                    ([ln_pi_m.exp(), ln_pi_z.exp(), ln_pi_p.exp()], true)
                } else {
                    ([(ln_w[0] - max).exp(), (ln_w[1] - max).exp(), (ln_w[2] - max).exp()], false)
                };
                fallbacks += u64::from(used_fallback);
                let total = weights[0] + weights[1] + weights[2];
                let u = rng.uniform_open() * total;
                let label = if u < weights[0] {
                    Label::Minus
                } else if u < weights[0] + weights[1] {
                    Label::Zero
                } else {
                    Label::Plus
                };
                memb.g[i] = label;
                log_lik += ln_w[label.index()];
            }
        }
        (log_lik, fallbacks)
    }

    /// Draw Y* for every unit, truncated by the observed outcome.
    fn draw_outcome_utilities(
        &self,
        params: &ParameterState,
        memb: &mut MembershipState,
        seq: &mut RngStream,
    ) -> Result<()> {
        for i in 0..self.data.n() {
            let mean = match memb.g[i] {
                Label::Minus => {
                    params.gamma_minus[0] + params.gamma_minus[1] * self.data.eta[i] + self.x_gamma[i]
                }
                Label::Plus => {
                    params.gamma_plus[0] + params.gamma_plus[1] * self.data.eta[i] + self.x_gamma[i]
                }
                Label::Zero => {
                    (if self.data.z[i] { params.gamma01 } else { params.gamma00 }) + self.x_gamma[i]
                }
            };
            memb.y_star[i] = sample_probit_utility(mean, self.data.y[i], seq);
        }
        Ok(())
    }
}

fn lin_combo_ext(x: &DMatrix<f64>, coef: &DVector<f64>, out: &mut [f64]) {
    out.fill(coef[0]);
    for j in 0..x.ncols() {
        let c = coef[j + 1];
        let col = x.column(j);
        for (i, o) in out.iter_mut().enumerate() {
            *o += c * col[i];
        }
    }
}

fn lin_combo(x: &DMatrix<f64>, coef: &DVector<f64>, out: &mut [f64]) {
    out.fill(0.0);
    for j in 0..x.ncols() {
        let c = coef[j];
        let col = x.column(j);
        for (i, o) in out.iter_mut().enumerate() {
            *o += c * col[i];
        }
    }
}

/// Add [1, row]·w into `acc`.
#[inline]
fn add_ext_vec(row: &[f64], w: f64, acc: &mut DVector<f64>) {
    acc[0] += w;
    for (j, &v) in row.iter().enumerate() {
        acc[j + 1] += v * w;
    }
}

/// [1, X]'w over all units as per-column dot products.
fn column_dots_ext(x: &DMatrix<f64>, w: &[f64]) -> DVector<f64> {
    let p = x.ncols();
    let mut out = DVector::zeros(p + 1);
    out[0] = w.iter().sum();
    for j in 0..p {
        let col = x.column(j);
        let mut acc = 0.0;
        for (i, &wi) in w.iter().enumerate() {
            acc += col[i] * wi;
        }
        out[j + 1] = acc;
    }
    out
}

/// X'w over all units as per-column dot products.
fn column_dots(x: &DMatrix<f64>, w: &[f64]) -> DVector<f64> {
    let p = x.ncols();
    let mut out = DVector::zeros(p);
    for j in 0..p {
        let col = x.column(j);
        let mut acc = 0.0;
        for (i, &wi) in w.iter().enumerate() {
            acc += col[i] * wi;
        }
        out[j] = acc;
    }
    out
}

/// Initialize memberships: eligible units split evenly between the
/// threshold and below components, ineligible units between threshold and
/// above; no window assumption enters.
pub fn init_memberships(
    data: &ModelData,
    strategy: InitStrategy,
    rng: &mut RngStream,
) -> MembershipState {
    let InitStrategy::PriorSymmetric = strategy;
    let mut memb = MembershipState::new(data.n());
    for i in 0..data.n() {
        let side = if data.z[i] { Label::Minus } else { Label::Plus };
        memb.g[i] = if rng.bernoulli(0.5) { Label::Zero } else { side };
    }
    memb
}

struct ChainOutput {
    records: Vec<DrawRecord>,
    label_counts: Vec<[u32; 3]>,
    snapshots: Vec<MembershipSnapshot>,
    bin_means: Vec<Vec<f64>>,
    fallbacks: u64,
    prior_collapses: u64,
    violations: u64,
    abort: Option<String>,
}

fn run_single_chain(
    data: &ModelData,
    priors: &Priors,
    config: &SamplerConfig,
    chain: u32,
    bin_index: &Option<Vec<usize>>,
    n_bins: usize,
    opts: &GibbsOptions,
) -> Result<ChainOutput> {
    let master = RngStream::new(config.seed, chain as u64);
    let mut seq = master.substream(&[TAG_SEQ]);
    let mut init_rng = master.substream(&[TAG_INIT]);

    let mut engine = GibbsEngine::new(data, priors, opts.clone(), config.rr_guard)?;
    let mut params = ParameterState::prior_init(data.p(), priors);
    let mut memb = match &opts.frozen_labels {
        Some(labels) => {
            let mut m = MembershipState::new(data.n());
            m.g = labels.clone();
            m
        }
        None => init_memberships(data, config.init_strategy, &mut init_rng),
    };

    // Warm start: one parameter sweep conditional on the randomized initial
    // memberships. Starting instead from identical prior-mean components
    // makes the first membership draw arbitrary and lets the largest
    // component absorb the smallest before it ever fits its own units.
    if opts.frozen_labels.is_none() {
        let warm_opts = GibbsOptions {
            frozen_labels: Some(memb.g.clone()),
            constrain_sides: opts.constrain_sides,
        };
        let mut warm = GibbsEngine::new(data, priors, warm_opts, config.rr_guard)?;
        warm.iteration(&mut params, &mut memb, &master, &mut seq, 0)
            .map_err(|e| RdError::Numeric(format!("chain {chain} warm start failed: {e}")))?;
    }

    let mut out = ChainOutput {
        records: Vec::with_capacity(config.retained()),
        label_counts: vec![[0u32; 3]; data.n()],
        snapshots: Vec::new(),
        bin_means: Vec::new(),
        fallbacks: 0,
        prior_collapses: 0,
        violations: 0,
        abort: None,
    };

    let mut retained_idx = 0usize;
    for iter in 0..config.iterations {
        let score = match engine.iteration(&mut params, &mut memb, &master, &mut seq, iter as u64) {
            Ok(s) => s,
            Err(e) => {
                out.abort = Some(format!("chain {chain} aborted at iteration {iter}: {e}"));
                break;
            }
        };
        out.fallbacks += score.fallbacks;
        out.prior_collapses += score.prior_collapses;

        if iter < config.burn_in || (iter - config.burn_in) % config.thinning != 0 {
            continue;
        }

        let n = data.n();
        for i in 0..n {
            out.label_counts[i][memb.g[i].index()] += 1;
        }
        if opts.constrain_sides {
            out.violations += memb
                .g
                .iter()
                .zip(&data.z)
                .filter(|&(&g, &z)| (g == Label::Plus && z) || (g == Label::Minus && !z))
                .count() as u64;
        }
        if let (Some(bins), true) = (bin_index, n_bins > 0) {
            let mut member = vec![0u32; n_bins];
            let mut total = vec![0u32; n_bins];
            for i in 0..n {
                let b = bins[i];
                total[b] += 1;
                member[b] += u32::from(memb.g[i] == Label::Zero);
            }
            out.bin_means.push(
                (0..n_bins)
                    .map(|b| if total[b] > 0 { member[b] as f64 / total[b] as f64 } else { f64::NAN })
                    .collect(),
            );
        }
        if config.snapshot_stride > 0 && retained_idx % config.snapshot_stride == 0 {
            out.snapshots.push(MembershipSnapshot {
                chain,
                retained_index: retained_idx,
                labels: memb.g.clone(),
            });
        }

        let n_total = data.n() as f64;
        let n_zero = score.n_zero_z0 + score.n_zero_z1;
        out.records.push(DrawRecord {
            chain,
            iteration: iter as u64,
            params: params.flatten(),
            pi_bar: [
                score.n_minus as f64 / n_total,
                n_zero as f64 / n_total,
                score.n_plus as f64 / n_total,
            ],
            n_u0: n_zero,
            n_u0_z0: score.n_zero_z0,
            n_u0_z1: score.n_zero_z1,
            n_minus: score.n_minus,
            n_plus: score.n_plus,
            rr: score.rr,
            rr_num: score.rr_num,
            rr_den: score.rr_den,
            degenerate: score.degenerate,
            log_lik: score.log_lik,
        });
        retained_idx += 1;
    }

    if out.records.is_empty() {
        if let Some(msg) = out.abort {
            return Err(RdError::Numeric(msg));
        }
        return Err(RdError::Config("no draws retained".into()));
    }
    Ok(out)
}

/// Run the configured number of chains and concatenate their retained
/// draws with chain labels. Chains use disjoint random streams and may run
/// in parallel; the output is identical for any worker count.
pub fn run_chain(
    data: &ObservedDataset,
    priors: &Priors,
    config: &SamplerConfig,
) -> Result<PosteriorDraws> {
    run_chain_with(
        &ModelData::from_dataset(data),
        priors,
        config,
        GibbsOptions::production(),
        Some(data),
    )
}

/// Run with frozen memberships; the regression blocks then reduce to
/// independent conjugate updates on fixed subsets.
pub fn run_chain_frozen(
    data: &ObservedDataset,
    priors: &Priors,
    config: &SamplerConfig,
    labels: Vec<Label>,
) -> Result<PosteriorDraws> {
    let opts = GibbsOptions { frozen_labels: Some(labels), constrain_sides: true };
    run_chain_with(&ModelData::from_dataset(data), priors, config, opts, Some(data))
}

pub(crate) fn run_chain_with(
    model: &ModelData,
    priors: &Priors,
    config: &SamplerConfig,
    opts: GibbsOptions,
    dataset: Option<&ObservedDataset>,
) -> Result<PosteriorDraws> {
    config.validate()?;
    priors.validate()?;

    // Fixed bin layout for per-draw membership bin means.
    let (bin_edges, bin_index) = match (config.bin_width, dataset) {
        (Some(w), Some(ds)) if w > 0.0 => {
            let (edges, idx) = super::draws::bin_layout(ds.forcing(), w);
            (edges, Some(idx))
        }
        _ => (Vec::new(), None),
    };
    let n_bins = bin_edges.len().saturating_sub(1);

    let outputs: Vec<Result<ChainOutput>> = (0..config.chains)
        .into_par_iter()
        .map(|chain| run_single_chain(model, priors, config, chain, &bin_index, n_bins, &opts))
        .collect();

    let mut draws = PosteriorDraws {
        param_names: ParameterState::flat_names(model.p()),
        records: Vec::new(),
        n_units: model.n(),
        chains: config.chains,
        label_counts: vec![[0u32; 3]; model.n()],
        snapshots: Vec::new(),
        snapshot_stride: config.snapshot_stride,
        bin_edges,
        bin_means: Vec::new(),
        fallback_events: 0,
        prior_collapse_events: 0,
        structural_zero_violations: 0,
        aborted: Vec::new(),
    };
    for out in outputs {
        let out = out?;
        draws.records.extend(out.records);
        for (acc, add) in draws.label_counts.iter_mut().zip(&out.label_counts) {
            for k in 0..3 {
                acc[k] += add[k];
            }
        }
        draws.snapshots.extend(out.snapshots);
        draws.bin_means.extend(out.bin_means);
        draws.fallback_events += out.fallbacks;
        draws.prior_collapse_events += out.prior_collapses;
        draws.structural_zero_violations += out.violations;
        if let Some(msg) = out.abort {
            draws.aborted.push(msg);
        }
    }
    Ok(draws)
}
