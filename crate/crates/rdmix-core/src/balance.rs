//! Covariate balance diagnostics between eligibility groups: normalized
//! mean differences, log ratios of standard deviations, and the Mahalanobis
//! distance between group means, with weighted variants and a posterior
//! (per-draw membership) mode.
//!
//! Variances use n−1 denominators; weighted moments use frequency weights
//! with an effective-sample-size correction so uniform weights reproduce
//! the unweighted statistics exactly.

use crate::data::ObservedDataset;
use crate::error::{RdError, Result};
use crate::mixture::{Label, MembershipSnapshot};
use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Weighted-variance convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum WeightConvention {
    /// Frequency weights with an effective-sample-size Bessel correction:
    /// s² = [Σw(x−m)²/Σw] · ESS/(ESS−1), ESS = (Σw)²/Σw².
    #[default]
    FrequencyEss,
    /// Plain frequency weights: s² = Σw(x−m)²/(Σw − 1).
    Frequency,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovariateBalance {
    pub name: String,
    pub mean0: f64,
    pub sd0: f64,
    pub mean1: f64,
    pub sd1: f64,
    /// (mean₁ − mean₀)/√((s₀² + s₁²)/2); `None` when both variances vanish.
    pub normalized_diff: Option<f64>,
    /// ½(log s₁² − log s₀²); ±∞ when exactly one variance vanishes,
    /// `None` when both do.
    pub log_sd_ratio: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BalanceReport {
    pub covariates: Vec<CovariateBalance>,
    pub mahalanobis: Option<f64>,
    /// Columns excluded from the multivariate measure (zero variance in
    /// both groups).
    pub dropped_columns: Vec<String>,
    /// Draws skipped in posterior mode because a group was degenerate.
    pub skipped_draws: usize,
}

fn weighted_mean(x: &[f64], w: &[f64]) -> f64 {
    let sw: f64 = w.iter().sum();
    x.iter().zip(w).map(|(xi, wi)| xi * wi).sum::<f64>() / sw
}

fn weighted_variance(x: &[f64], w: &[f64], convention: WeightConvention) -> f64 {
    let sw: f64 = w.iter().sum();
    let m = weighted_mean(x, w);
    let ssq: f64 = x.iter().zip(w).map(|(xi, wi)| wi * (xi - m) * (xi - m)).sum();
    match convention {
        WeightConvention::FrequencyEss => {
            let sw2: f64 = w.iter().map(|wi| wi * wi).sum();
            let ess = sw * sw / sw2;
            if ess <= 1.0 {
                return 0.0;
            }
            (ssq / sw) * ess / (ess - 1.0)
        }
        WeightConvention::Frequency => {
            if sw <= 1.0 {
                return 0.0;
            }
            ssq / (sw - 1.0)
        }
    }
}

/// (mean₁ − mean₀) normalized by the square root of the average
/// within-group variance.
pub fn normalized_difference(x0: &[f64], x1: &[f64]) -> Result<Option<f64>> {
    let w0 = vec![1.0; x0.len()];
    let w1 = vec![1.0; x1.len()];
    weighted_normalized_difference(x0, x1, &w0, &w1, WeightConvention::FrequencyEss)
}

pub fn weighted_normalized_difference(
    x0: &[f64],
    x1: &[f64],
    w0: &[f64],
    w1: &[f64],
    convention: WeightConvention,
) -> Result<Option<f64>> {
    check_group(x0, w0, "group 0")?;
    check_group(x1, w1, "group 1")?;
    let v0 = weighted_variance(x0, w0, convention);
    let v1 = weighted_variance(x1, w1, convention);
    if v0 == 0.0 && v1 == 0.0 {
        return Ok(None);
    }
    let denom = ((v0 + v1) / 2.0).sqrt();
    Ok(Some((weighted_mean(x1, w1) - weighted_mean(x0, w0)) / denom))
}

/// ½(log s₁² − log s₀²).
pub fn log_sd_ratio(x0: &[f64], x1: &[f64]) -> Result<Option<f64>> {
    let w0 = vec![1.0; x0.len()];
    let w1 = vec![1.0; x1.len()];
    weighted_log_sd_ratio(x0, x1, &w0, &w1, WeightConvention::FrequencyEss)
}

pub fn weighted_log_sd_ratio(
    x0: &[f64],
    x1: &[f64],
    w0: &[f64],
    w1: &[f64],
    convention: WeightConvention,
) -> Result<Option<f64>> {
    check_group(x0, w0, "group 0")?;
    check_group(x1, w1, "group 1")?;
    let v0 = weighted_variance(x0, w0, convention);
    let v1 = weighted_variance(x1, w1, convention);
    match (v0 == 0.0, v1 == 0.0) {
        (true, true) => Ok(None),
        (true, false) => Ok(Some(f64::INFINITY)),
        (false, true) => Ok(Some(f64::NEG_INFINITY)),
        (false, false) => Ok(Some(0.5 * (v1.ln() - v0.ln()))),
    }
}

fn check_group(x: &[f64], w: &[f64], which: &str) -> Result<()> {
    if x.len() < 2 {
        return Err(RdError::Data(format!(
            "balance: {which} needs at least 2 units, got {}",
            x.len()
        )));
    }
    if x.len() != w.len() {
        return Err(RdError::Data("balance: weight length differs from data".into()));
    }
    if w.iter().any(|&wi| wi < 0.0) {
        return Err(RdError::Data("balance: weights must be nonnegative".into()));
    }
    if w.iter().sum::<f64>() <= 0.0 {
        return Err(RdError::Data(format!("balance: {which} has zero total weight")));
    }
    Ok(())
}

#[derive(Debug)]
pub struct MahalanobisOutcome {
    pub value: f64,
    pub dropped_columns: Vec<usize>,
}

/// Mahalanobis distance between group means in the metric of the average
/// within-group covariance. Columns with zero variance in both groups are
/// dropped first (reported); a still-singular pooled covariance is an error
/// naming the collinear columns.
pub fn mahalanobis_balance(x0: &DMatrix<f64>, x1: &DMatrix<f64>) -> Result<MahalanobisOutcome> {
    weighted_mahalanobis(
        x0,
        x1,
        &vec![1.0; x0.nrows()],
        &vec![1.0; x1.nrows()],
        WeightConvention::FrequencyEss,
    )
}

pub fn weighted_mahalanobis(
    x0: &DMatrix<f64>,
    x1: &DMatrix<f64>,
    w0: &[f64],
    w1: &[f64],
    convention: WeightConvention,
) -> Result<MahalanobisOutcome> {
    if x0.ncols() != x1.ncols() {
        return Err(RdError::Data("balance: column counts differ".into()));
    }
    if x0.nrows() < 2 || x1.nrows() < 2 {
        return Err(RdError::Data("balance: each group needs at least 2 units".into()));
    }
    let p = x0.ncols();
    let cov0 = weighted_covariance(x0, w0, convention);
    let cov1 = weighted_covariance(x1, w1, convention);
    let keep: Vec<usize> =
        (0..p).filter(|&j| cov0[(j, j)] > 0.0 || cov1[(j, j)] > 0.0).collect();
    let dropped: Vec<usize> = (0..p).filter(|j| !keep.contains(j)).collect();
    if keep.is_empty() {
        return Err(RdError::Data("balance: all covariates are constant".into()));
    }

    let k = keep.len();
    let mut pooled = DMatrix::zeros(k, k);
    for (a, &ja) in keep.iter().enumerate() {
        for (b, &jb) in keep.iter().enumerate() {
            pooled[(a, b)] = 0.5 * (cov0[(ja, jb)] + cov1[(ja, jb)]);
        }
    }
    let mean_diff = DVector::from_fn(k, |a, _| {
        let j = keep[a];
        let c0: Vec<f64> = x0.column(j).iter().copied().collect();
        let c1: Vec<f64> = x1.column(j).iter().copied().collect();
        weighted_mean(&c1, w1) - weighted_mean(&c0, w0)
    });

    match Cholesky::new(pooled.clone()) {
        Some(chol) => {
            let solved = chol.solve(&mean_diff);
            let value = mean_diff.dot(&solved).max(0.0).sqrt();
            Ok(MahalanobisOutcome { value, dropped_columns: dropped })
        }
        None => {
            let collinear = collinear_set(&pooled, &keep);
            Err(RdError::Numeric(format!(
                "balance: pooled covariance singular; collinear columns {collinear:?}"
            )))
        }
    }
}

/// Greedy forward selection: columns that cannot be added while keeping the
/// candidate covariance positive definite.
fn collinear_set(pooled: &DMatrix<f64>, keep: &[usize]) -> Vec<usize> {
    let k = pooled.nrows();
    let mut selected: Vec<usize> = Vec::new();
    let mut collinear = Vec::new();
    for cand in 0..k {
        let mut trial = selected.clone();
        trial.push(cand);
        let sub = DMatrix::from_fn(trial.len(), trial.len(), |a, b| pooled[(trial[a], trial[b])]);
        if Cholesky::new(sub).is_some() {
            selected = trial;
        } else {
            collinear.push(keep[cand]);
        }
    }
    collinear
}

fn weighted_covariance(x: &DMatrix<f64>, w: &[f64], convention: WeightConvention) -> DMatrix<f64> {
    let (n, p) = (x.nrows(), x.ncols());
    let sw: f64 = w.iter().sum();
    let means: Vec<f64> = (0..p)
        .map(|j| x.column(j).iter().zip(w).map(|(v, wi)| v * wi).sum::<f64>() / sw)
        .collect();
    let correction = match convention {
        WeightConvention::FrequencyEss => {
            let sw2: f64 = w.iter().map(|wi| wi * wi).sum();
            let ess = sw * sw / sw2;
            if ess <= 1.0 {
                0.0
            } else {
                ess / ((ess - 1.0) * sw)
            }
        }
        WeightConvention::Frequency => {
            if sw <= 1.0 {
                0.0
            } else {
                1.0 / (sw - 1.0)
            }
        }
    };
    let mut cov = DMatrix::zeros(p, p);
    for i in 0..n {
        for a in 0..p {
            let da = x[(i, a)] - means[a];
            for b in a..p {
                let db = x[(i, b)] - means[b];
                cov[(a, b)] += w[i] * da * db;
            }
        }
    }
    for a in 0..p {
        for b in a..p {
            let v = cov[(a, b)] * correction;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    cov
}

/// Full per-covariate and multivariate report for two groups.
pub fn weighted_balance(
    x0: &DMatrix<f64>,
    x1: &DMatrix<f64>,
    w0: &[f64],
    w1: &[f64],
    names: &[String],
    convention: WeightConvention,
) -> Result<BalanceReport> {
    if names.len() != x0.ncols() {
        return Err(RdError::Data("balance: name count differs from columns".into()));
    }
    let mut covariates = Vec::with_capacity(names.len());
    for j in 0..names.len() {
        let c0: Vec<f64> = x0.column(j).iter().copied().collect();
        let c1: Vec<f64> = x1.column(j).iter().copied().collect();
        covariates.push(CovariateBalance {
            name: names[j].clone(),
            mean0: weighted_mean(&c0, w0),
            sd0: weighted_variance(&c0, w0, convention).sqrt(),
            mean1: weighted_mean(&c1, w1),
            sd1: weighted_variance(&c1, w1, convention).sqrt(),
            normalized_diff: weighted_normalized_difference(&c0, &c1, w0, w1, convention)?,
            log_sd_ratio: weighted_log_sd_ratio(&c0, &c1, w0, w1, convention)?,
        });
    }
    let (mahalanobis, dropped) = match weighted_mahalanobis(x0, x1, w0, w1, convention) {
        Ok(out) => {
            let names_dropped = out.dropped_columns.iter().map(|&j| names[j].clone()).collect();
            (Some(out.value), names_dropped)
        }
        Err(RdError::Numeric(_)) => (None, Vec::new()),
        Err(e) => return Err(e),
    };
    Ok(BalanceReport { covariates, mahalanobis, dropped_columns: dropped, skipped_draws: 0 })
}

/// Unweighted report.
pub fn balance_report(
    x0: &DMatrix<f64>,
    x1: &DMatrix<f64>,
    names: &[String],
) -> Result<BalanceReport> {
    weighted_balance(
        x0,
        x1,
        &vec![1.0; x0.nrows()],
        &vec![1.0; x1.nrows()],
        names,
        WeightConvention::FrequencyEss,
    )
}

/// Balance between eligibility arms inside the threshold component of each
/// retained membership draw, reported as per-metric posterior medians.
/// Draws where either arm has fewer than two member units are skipped and
/// counted.
pub fn posterior_balance(
    snapshots: &[MembershipSnapshot],
    data: &ObservedDataset,
) -> Result<BalanceReport> {
    if snapshots.is_empty() {
        return Err(RdError::Data("posterior balance: no membership draws".into()));
    }
    let names = data.covariate_names();
    let p = data.p();
    let raw: Vec<Vec<f64>> = (0..p).map(|j| data.raw_covariate(j)).collect();
    let z = data.eligible();

    let mut per_draw: Vec<BalanceReport> = Vec::new();
    let mut skipped = 0usize;
    for snap in snapshots {
        let idx0: Vec<usize> = (0..data.n())
            .filter(|&i| snap.labels[i] == Label::Zero && !z[i])
            .collect();
        let idx1: Vec<usize> = (0..data.n())
            .filter(|&i| snap.labels[i] == Label::Zero && z[i])
            .collect();
        if idx0.len() < 2 || idx1.len() < 2 {
            skipped += 1;
            continue;
        }
        let gather = |idx: &[usize]| {
            DMatrix::from_fn(idx.len(), p, |r, c| raw[c][idx[r]])
        };
        match balance_report(&gather(&idx0), &gather(&idx1), &names) {
            Ok(rep) => per_draw.push(rep),
            Err(_) => skipped += 1,
        }
    }
    if per_draw.is_empty() {
        return Err(RdError::Data(
            "posterior balance: every draw had a degenerate eligibility group".into(),
        ));
    }

    let median_of = |extract: &dyn Fn(&BalanceReport) -> Option<f64>| -> Option<f64> {
        let vals: Vec<f64> = per_draw.iter().filter_map(extract).collect();
        if vals.is_empty() {
            None
        } else {
            Some(crate::estimands::quantile(&vals, 0.5))
        }
    };

    let covariates = (0..p)
        .map(|j| CovariateBalance {
            name: names[j].clone(),
            mean0: median_of(&|r| Some(r.covariates[j].mean0)).unwrap(),
            sd0: median_of(&|r| Some(r.covariates[j].sd0)).unwrap(),
            mean1: median_of(&|r| Some(r.covariates[j].mean1)).unwrap(),
            sd1: median_of(&|r| Some(r.covariates[j].sd1)).unwrap(),
            normalized_diff: median_of(&|r| r.covariates[j].normalized_diff),
            log_sd_ratio: median_of(&|r| r.covariates[j].log_sd_ratio),
        })
        .collect();
    Ok(BalanceReport {
        covariates,
        mahalanobis: median_of(&|r| r.mahalanobis),
        dropped_columns: Vec::new(),
        skipped_draws: skipped,
    })
}
