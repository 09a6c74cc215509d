//! Posterior summaries of the causal quantities: the relative risk, the
//! mixing proportions and membership counts, the membership-by-forcing
//! table, and the covariate-stratified identification estimator.
//!
//! Quantiles use linear interpolation between order statistics throughout.

use crate::data::ObservedDataset;
use crate::error::{RdError, Result};
use crate::mixture::{Label, PosteriorDraws};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Linear-interpolation quantile of an already sorted slice.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    if n == 1 {
        return sorted[0];
    }
    let h = (n as f64 - 1.0) * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

pub fn quantile(values: &[f64], p: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    quantile_sorted(&sorted, p)
}

/// Summary of a posterior draw series for a ratio estimand.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub median: f64,
    pub pct_2_5: f64,
    pub pct_97_5: f64,
    pub interval_width: f64,
    /// Fraction of draws strictly below one.
    pub prob_below_1: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RrSummary {
    pub stats: PosteriorSummary,
    pub n_draws: usize,
    /// Draws whose denominator was zero and received the continuity guard;
    /// they are included in the quantiles.
    pub degenerate_draws: usize,
}

fn summarize_series(series: &[f64]) -> Result<PosteriorSummary> {
    if series.len() < 2 {
        return Err(RdError::Data(format!(
            "need at least 2 draws to summarize, got {}",
            series.len()
        )));
    }
    let mut sorted = series.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = quantile_sorted(&sorted, 0.5);
    let lo = quantile_sorted(&sorted, 0.025);
    let hi = quantile_sorted(&sorted, 0.975);
    let below = series.iter().filter(|&&v| v < 1.0).count() as f64 / series.len() as f64;
    Ok(PosteriorSummary {
        median,
        pct_2_5: lo,
        pct_97_5: hi,
        interval_width: hi - lo,
        prob_below_1: below,
    })
}

/// Quantile summary of the relative-risk draw series.
pub fn summarize_rr(draws: &PosteriorDraws) -> Result<RrSummary> {
    let series = draws.rr_series();
    Ok(RrSummary {
        stats: summarize_series(&series)?,
        n_draws: series.len(),
        degenerate_draws: draws.degenerate_count(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CountSummary {
    pub median: f64,
    pub pct_2_5: f64,
    pub pct_97_5: f64,
}

fn count_summary(series: &[f64]) -> CountSummary {
    let mut sorted = series.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    CountSummary {
        median: quantile_sorted(&sorted, 0.5),
        pct_2_5: quantile_sorted(&sorted, 0.025),
        pct_97_5: quantile_sorted(&sorted, 0.975),
    }
}

/// Posterior medians and 95% intervals of the membership counts and mixing
/// proportions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MembershipCountsSummary {
    pub pi_minus: CountSummary,
    pub pi_zero: CountSummary,
    pub pi_plus: CountSummary,
    pub n_u0: CountSummary,
    pub n_u0_ineligible: CountSummary,
    pub n_u0_eligible: CountSummary,
}

pub fn summarize_membership_counts(draws: &PosteriorDraws) -> Result<MembershipCountsSummary> {
    if draws.records.is_empty() {
        return Err(RdError::Data("no draws".into()));
    }
    let col = |f: &dyn Fn(&crate::mixture::DrawRecord) -> f64| -> Vec<f64> {
        draws.records.iter().map(f).collect()
    };
    Ok(MembershipCountsSummary {
        pi_minus: count_summary(&col(&|r| r.pi_bar[0])),
        pi_zero: count_summary(&col(&|r| r.pi_bar[1])),
        pi_plus: count_summary(&col(&|r| r.pi_bar[2])),
        n_u0: count_summary(&col(&|r| r.n_u0 as f64)),
        n_u0_ineligible: count_summary(&col(&|r| r.n_u0_z0 as f64)),
        n_u0_eligible: count_summary(&col(&|r| r.n_u0_z1 as f64)),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MembershipBinRow {
    pub lower: f64,
    pub upper: f64,
    pub n_units: usize,
    pub median: Option<f64>,
    pub sd: Option<f64>,
}

/// Posterior distribution of the per-bin mean membership probability,
/// reported as median and standard deviation across draws.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MembershipTable {
    pub bin_width: f64,
    pub rows: Vec<MembershipBinRow>,
    pub draws_used: usize,
}

/// Build the membership-by-forcing table. Uses the per-draw bin means
/// tracked during the run when the requested width matches the run's
/// layout; otherwise falls back to the retained membership snapshots.
pub fn membership_table(
    draws: &PosteriorDraws,
    data: &ObservedDataset,
    bin_width: f64,
) -> Result<MembershipTable> {
    if !(bin_width > 0.0) {
        return Err(RdError::Config("bin width must be positive".into()));
    }
    let run_width = if draws.bin_edges.len() >= 2 {
        draws.bin_edges[1] - draws.bin_edges[0]
    } else {
        f64::NAN
    };
    if !draws.bin_means.is_empty() && (run_width - bin_width).abs() < 1e-9 {
        return table_from_bin_means(&draws.bin_edges, &draws.bin_means, data, bin_width);
    }
    if draws.snapshots.is_empty() {
        return Err(RdError::Data(
            "no per-draw memberships available at this bin width; rerun with bin tracking or snapshots".into(),
        ));
    }
    let (edges, idx) = crate::mixture::bin_layout(data.forcing(), bin_width);
    let n_bins = edges.len() - 1;
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(draws.snapshots.len());
    for snap in &draws.snapshots {
        let mut member = vec![0u32; n_bins];
        let mut total = vec![0u32; n_bins];
        for (i, &b) in idx.iter().enumerate() {
            total[b] += 1;
            member[b] += u32::from(snap.labels[i] == Label::Zero);
        }
        means.push(
            (0..n_bins)
                .map(|b| if total[b] > 0 { member[b] as f64 / total[b] as f64 } else { f64::NAN })
                .collect(),
        );
    }
    table_from_bin_means(&edges, &means, data, bin_width)
}

fn table_from_bin_means(
    edges: &[f64],
    means: &[Vec<f64>],
    data: &ObservedDataset,
    bin_width: f64,
) -> Result<MembershipTable> {
    if means.is_empty() {
        return Err(RdError::Data("no draws with bin means".into()));
    }
    let n_bins = edges.len() - 1;
    let (_, idx) = crate::mixture::bin_layout(data.forcing(), bin_width);
    let mut counts = vec![0usize; n_bins];
    for &b in &idx {
        counts[b] += 1;
    }
    let mut rows = Vec::with_capacity(n_bins);
    for b in 0..n_bins {
        if counts[b] == 0 {
            rows.push(MembershipBinRow {
                lower: edges[b],
                upper: edges[b + 1],
                n_units: 0,
                median: None,
                sd: None,
            });
            continue;
        }
        let series: Vec<f64> = means.iter().map(|m| m[b]).collect();
        let med = quantile(&series, 0.5);
        let mean = series.iter().sum::<f64>() / series.len() as f64;
        let sd = (series.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / (series.len() as f64 - 1.0).max(1.0))
        .sqrt();
        rows.push(MembershipBinRow {
            lower: edges[b],
            upper: edges[b + 1],
            n_units: counts[b],
            median: Some(med),
            sd: Some(sd),
        });
    }
    Ok(MembershipTable { bin_width, rows, draws_used: means.len() })
}

/// Covariate-stratified arm means: within each stratum the per-arm outcome
/// mean, aggregated as the unweighted average over strata, and their ratio.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StratifiedEstimate {
    pub mean_treated: f64,
    pub mean_control: f64,
    pub rr: Option<f64>,
    pub degenerate: bool,
    pub n_strata: usize,
}

/// The stratified identification estimator over a fixed subpopulation:
/// every stratum must contain units of both arms.
pub fn stratified_estimator(
    z: &[bool],
    y: &[f64],
    strata: &[String],
) -> Result<StratifiedEstimate> {
    if z.len() != y.len() || z.len() != strata.len() {
        return Err(RdError::Data("stratified estimator: column lengths differ".into()));
    }
    if z.is_empty() {
        return Err(RdError::Data("stratified estimator: empty data".into()));
    }
    let mut cells: BTreeMap<&str, [(f64, usize); 2]> = BTreeMap::new();
    for i in 0..z.len() {
        let entry = cells.entry(strata[i].as_str()).or_insert([(0.0, 0); 2]);
        let arm = usize::from(z[i]);
        entry[arm].0 += y[i];
        entry[arm].1 += 1;
    }
    let mut sum_treated = 0.0;
    let mut sum_control = 0.0;
    for (stratum, arms) in &cells {
        for (arm, (_, count)) in arms.iter().enumerate() {
            if *count == 0 {
                return Err(RdError::Data(format!(
                    "stratified estimator: empty cell (stratum '{stratum}', arm z={arm})"
                )));
            }
        }
        sum_control += arms[0].0 / arms[0].1 as f64;
        sum_treated += arms[1].0 / arms[1].1 as f64;
    }
    let k = cells.len() as f64;
    let mean_treated = sum_treated / k;
    let mean_control = sum_control / k;
    let degenerate = mean_control == 0.0;
    Ok(StratifiedEstimate {
        mean_treated,
        mean_control,
        rr: if degenerate { None } else { Some(mean_treated / mean_control) },
        degenerate,
        n_strata: cells.len(),
    })
}

/// Kernel-density data for the relative-risk posterior (plot-file content):
/// a Gaussian KDE evaluated on a regular grid plus the posterior median.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DensityData {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub median: f64,
}

pub fn rr_density(draws: &PosteriorDraws, points: usize) -> Result<DensityData> {
    let series = draws.rr_series();
    if series.len() < 2 {
        return Err(RdError::Data("need at least 2 draws for a density".into()));
    }
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let sd = (series.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt();
    let bw = (1.06 * sd * n.powf(-0.2)).max(1e-12);
    let lo = series.iter().cloned().fold(f64::INFINITY, f64::min) - 3.0 * bw;
    let hi = series.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 3.0 * bw;
    let grid: Vec<f64> = (0..points)
        .map(|i| lo + (hi - lo) * i as f64 / (points as f64 - 1.0))
        .collect();
    let norm = 1.0 / (n * bw * (2.0 * std::f64::consts::PI).sqrt());
    let density = grid
        .iter()
        .map(|&g| {
            norm * series
                .iter()
                .map(|&v| (-0.5 * ((g - v) / bw) * ((g - v) / bw)).exp())
                .sum::<f64>()
        })
        .collect();
    Ok(DensityData { grid, density, median: quantile(&series, 0.5) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixture::DrawRecord;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn draws_from_rr(rr: &[f64]) -> PosteriorDraws {
        PosteriorDraws {
            param_names: vec![],
            records: rr
                .iter()
                .enumerate()
                .map(|(i, &r)| DrawRecord {
                    chain: 0,
                    iteration: i as u64,
                    params: vec![],
                    pi_bar: [0.0, 1.0, 0.0],
                    n_u0: 4,
                    n_u0_z0: 2,
                    n_u0_z1: 2,
                    n_minus: 0,
                    n_plus: 0,
                    rr: r,
                    rr_num: 1.0,
                    rr_den: 2.0,
                    degenerate: false,
                    log_lik: -1.0,
                })
                .collect(),
            n_units: 4,
            chains: 1,
            label_counts: vec![[0, 1, 0]; 4],
            snapshots: vec![],
            snapshot_stride: 0,
            bin_edges: vec![],
            bin_means: vec![],
            fallback_events: 0,
            prior_collapse_events: 0,
            structural_zero_violations: 0,
            aborted: vec![],
        }
    }

    #[test]
    fn rr_summary_order_statistics() {
        let d = draws_from_rr(&[0.5, 1.5, 2.5, 3.5]);
        let s = summarize_rr(&d).unwrap();
        assert_abs_diff_eq!(s.stats.median, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.stats.prob_below_1, 0.25, epsilon = 1e-12);
    }

    #[test]
    fn rr_summary_constant_series() {
        let d = draws_from_rr(&[1.0; 10]);
        let s = summarize_rr(&d).unwrap();
        assert_eq!(s.stats.median, 1.0);
        assert_eq!(s.stats.interval_width, 0.0);
        // Strict inequality: draws equal to one do not count as below.
        assert_eq!(s.stats.prob_below_1, 0.0);
    }

    #[test]
    fn rr_summary_needs_draws() {
        let d = draws_from_rr(&[1.0]);
        assert!(summarize_rr(&d).is_err());
    }

    #[test]
    fn reciprocal_prob_identity() {
        // prob_below_1 of the series equals 1 − prob_below_1 of the
        // reciprocals when no draw equals one.
        let rr = [0.5, 0.8, 1.2, 2.0, 3.0];
        let d = summarize_rr(&draws_from_rr(&rr)).unwrap();
        let recip: Vec<f64> = rr.iter().map(|v| 1.0 / v).collect();
        let dr = summarize_rr(&draws_from_rr(&recip)).unwrap();
        assert_abs_diff_eq!(d.stats.prob_below_1, 1.0 - dr.stats.prob_below_1, epsilon = 1e-12);
    }

    #[test]
    fn membership_count_summary() {
        let mut d = draws_from_rr(&[1.0, 1.0, 1.0]);
        for (k, rec) in d.records.iter_mut().enumerate() {
            rec.n_u0 = [10u32, 20, 30][k];
        }
        let s = summarize_membership_counts(&d).unwrap();
        assert_eq!(s.n_u0.median, 20.0);
        // Deterministic pi series: zero-width intervals.
        assert_eq!(s.pi_zero.pct_2_5, s.pi_zero.pct_97_5);
    }

    #[test]
    fn stratified_two_strata_fixture() {
        // Stratum A: arm 1 mean 0.5 (2 units), arm 0 mean 0.25 (4 units);
        // stratum B: arm 1 mean 0 (1 unit), arm 0 mean 0.5 (2 units).
        let z = vec![true, true, false, false, false, false, true, false, false];
        let y = vec![1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        let strata: Vec<String> = ["A", "A", "A", "A", "A", "A", "B", "B", "B"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let est = stratified_estimator(&z, &y, &strata).unwrap();
        assert_abs_diff_eq!(est.mean_treated, 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(est.mean_control, 0.375, epsilon = 1e-12);
        assert_abs_diff_eq!(est.rr.unwrap(), 2.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn stratified_single_stratum_reduces_to_arm_means() {
        let z = vec![true, true, false, false];
        let y = vec![1.0, 0.0, 1.0, 1.0];
        let strata = vec!["all".to_string(); 4];
        let est = stratified_estimator(&z, &y, &strata).unwrap();
        assert_abs_diff_eq!(est.mean_treated, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(est.mean_control, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn stratified_empty_cell_is_error() {
        let z = vec![true, true, false];
        let y = vec![1.0, 0.0, 1.0];
        let strata: Vec<String> =
            ["A", "B", "A"].iter().map(|s| s.to_string()).collect();
        match stratified_estimator(&z, &y, &strata) {
            Err(RdError::Data(msg)) => assert!(msg.contains("'B'") && msg.contains("z=0")),
            other => panic!("expected cell error, got {other:?}"),
        }
    }

    #[test]
    fn stratified_all_zero_outcomes_flagged() {
        let z = vec![true, false, true, false];
        let y = vec![0.0; 4];
        let strata = vec!["s".to_string(); 4];
        let est = stratified_estimator(&z, &y, &strata).unwrap();
        assert_eq!(est.mean_treated, 0.0);
        assert!(est.degenerate);
        assert!(est.rr.is_none());
    }

    proptest! {
        #[test]
        fn quantiles_are_monotone(values in proptest::collection::vec(-1e6f64..1e6, 2..200)) {
            let mut sorted = values.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let q1 = quantile_sorted(&sorted, 0.025);
            let q2 = quantile_sorted(&sorted, 0.5);
            let q3 = quantile_sorted(&sorted, 0.975);
            prop_assert!(q1 <= q2 && q2 <= q3);
        }
    }
}
