//! Human-readable table renderers for the analysis outputs. The JSON side
//! of every report is just the serialized summary structs.

use crate::balance::BalanceReport;
use crate::data::DescriptiveSummary;
use crate::estimands::{MembershipCountsSummary, MembershipTable, RrSummary};
use crate::window::{LocalPolyEstimate, MICombined, WindowSpec};

fn fmt(v: f64, digits: usize) -> String {
    if v.is_nan() {
        return "-".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    format!("{v:.digits$}")
}

/// Mixing proportions and membership counts (medians with 95% intervals).
pub fn membership_counts_table(s: &MembershipCountsSummary) -> String {
    let mut out = String::new();
    out.push_str(&format!("{:<18} {:>12} {:>12} {:>12}\n", "estimand", "median", "2.5%", "97.5%"));
    let mut row = |name: &str, c: &crate::estimands::CountSummary, digits: usize| {
        out.push_str(&format!(
            "{:<18} {:>12} {:>12} {:>12}\n",
            name,
            fmt(c.median, digits),
            fmt(c.pct_2_5, digits),
            fmt(c.pct_97_5, digits)
        ));
    };
    row("pi(below)", &s.pi_minus, 3);
    row("pi(threshold)", &s.pi_zero, 3);
    row("pi(above)", &s.pi_plus, 3);
    row("N threshold", &s.n_u0, 0);
    row("N thr. ineligible", &s.n_u0_ineligible, 0);
    row("N thr. eligible", &s.n_u0_eligible, 0);
    out
}

/// Relative-risk posterior summary (median, 95% interval, width, prob < 1).
pub fn rr_table(s: &RrSummary) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:>8} {:>8} {:>8} {:>8} {:>10}\n",
        "median", "2.5%", "97.5%", "width", "Pr(RR<1)"
    ));
    out.push_str(&format!(
        "{:>8} {:>8} {:>8} {:>8} {:>10}\n",
        fmt(s.stats.median, 3),
        fmt(s.stats.pct_2_5, 3),
        fmt(s.stats.pct_97_5, 3),
        fmt(s.stats.interval_width, 3),
        fmt(s.stats.prob_below_1, 3)
    ));
    if s.degenerate_draws > 0 {
        out.push_str(&format!(
            "({} of {} draws carried the zero-denominator guard)\n",
            s.degenerate_draws, s.n_draws
        ));
    }
    out
}

/// Membership probability by forcing-variable bin.
pub fn membership_bin_table(t: &MembershipTable) -> String {
    let mut out = String::new();
    out.push_str(&format!("{:<16} {:>8} {:>10} {:>10}\n", "bin", "units", "median", "SD"));
    for row in &t.rows {
        let label = format!("({}, {}]", fmt(row.lower, 0), fmt(row.upper, 0));
        out.push_str(&format!(
            "{:<16} {:>8} {:>10} {:>10}\n",
            label,
            row.n_units,
            row.median.map_or("-".into(), |v| fmt(v, 3)),
            row.sd.map_or("-".into(), |v| fmt(v, 3)),
        ));
    }
    out
}

/// Covariate balance table: group moments, normalized differences, SD log
/// ratios and the multivariate row.
pub fn balance_table(r: &BalanceReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<28} {:>9} {:>8} {:>9} {:>8} {:>9} {:>9}\n",
        "covariate", "mean0", "sd0", "mean1", "sd1", "norm.diff", "log(s1/s0)"
    ));
    for c in &r.covariates {
        out.push_str(&format!(
            "{:<28} {:>9} {:>8} {:>9} {:>8} {:>9} {:>9}\n",
            c.name,
            fmt(c.mean0, 2),
            fmt(c.sd0, 2),
            fmt(c.mean1, 2),
            fmt(c.sd1, 2),
            c.normalized_diff.map_or("-".into(), |v| fmt(v, 2)),
            c.log_sd_ratio.map_or("-".into(), |v| fmt(v, 2)),
        ));
    }
    if let Some(m) = r.mahalanobis {
        out.push_str(&format!("{:<28} {:>9}\n", "multivariate measure", fmt(m, 2)));
    }
    if !r.dropped_columns.is_empty() {
        out.push_str(&format!(
            "(dropped from multivariate measure: {})\n",
            r.dropped_columns.join(", ")
        ));
    }
    if r.skipped_draws > 0 {
        out.push_str(&format!("({} draws skipped for degenerate groups)\n", r.skipped_draws));
    }
    out
}

/// Love-plot data: one covariate/normalized-difference pair per line.
pub fn love_plot_csv(r: &BalanceReport) -> String {
    let mut out = String::from("covariate,normalized_diff\n");
    for c in &r.covariates {
        out.push_str(&format!(
            "{},{}\n",
            c.name,
            c.normalized_diff.map_or(String::new(), |v| format!("{v}"))
        ));
    }
    out
}

/// One row of the fixed-window comparison table.
pub fn window_result_row(spec: &WindowSpec, rr: &RrSummary) -> String {
    format!(
        "{:<11} p={} h=({}, {}) window=[{}, {}]  median {}  PCI ({}, {})  width {}  Pr(RR<1) {}",
        format!("{:?}", spec.kernel),
        spec.order,
        fmt(spec.bandwidth_left, 1),
        fmt(spec.bandwidth_right, 1),
        fmt(spec.lower, 1),
        fmt(spec.upper, 1),
        fmt(rr.stats.median, 3),
        fmt(rr.stats.pct_2_5, 3),
        fmt(rr.stats.pct_97_5, 3),
        fmt(rr.stats.interval_width, 3),
        fmt(rr.stats.prob_below_1, 3)
    )
}

/// One row of the local-polynomial point-estimate table.
pub fn local_poly_row(spec: &WindowSpec, est: &LocalPolyEstimate) -> String {
    format!(
        "{:<11} p={} h=({}, {})  P0 {}  P1 {}  RR {}  ATE {}{}",
        format!("{:?}", spec.kernel),
        spec.order,
        fmt(spec.bandwidth_left, 1),
        fmt(spec.bandwidth_right, 1),
        fmt(est.p0_hat, 5),
        fmt(est.p1_hat, 5),
        est.rr.map_or("-".into(), |v| fmt(v, 5)),
        fmt(est.ate, 5),
        if est.out_of_range { "  [outside [0,1]]" } else { "" }
    )
}

pub fn mi_table(m: &MICombined) -> String {
    format!(
        "M {}  point {}  within {}  between {}  total variance {}\n",
        m.m,
        fmt(m.point, 6),
        fmt(m.within, 6),
        fmt(m.between, 6),
        fmt(m.total_variance, 6)
    )
}

/// Descriptive table of the forcing variable by eligibility group.
pub fn descriptive_table(s: &DescriptiveSummary) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<10} {:>10} {:>10} {:>10}\n",
        "statistic", "all", "ineligible", "eligible"
    ));
    let rows: [(&str, fn(&crate::data::ForcingStats) -> f64); 7] = [
        ("min", |g| g.min),
        ("q1", |g| g.q1),
        ("median", |g| g.median),
        ("mean", |g| g.mean),
        ("q3", |g| g.q3),
        ("max", |g| g.max),
        ("sd", |g| g.sd),
    ];
    for (name, f) in rows {
        out.push_str(&format!(
            "{:<10} {:>10} {:>10} {:>10}\n",
            name,
            fmt(f(&s.forcing_overall), 1),
            fmt(f(&s.forcing_ineligible), 1),
            fmt(f(&s.forcing_eligible), 1)
        ));
    }
    out.push_str(&format!(
        "{:<10} {:>10} {:>10} {:>10}\n",
        "n", s.forcing_overall.n, s.forcing_ineligible.n, s.forcing_eligible.n
    ));
    out.push_str(&format!(
        "{:<10} {:>10} {:>10} {:>10}\n",
        "y (\u{2030})",
        fmt(s.outcome_per_mil_overall, 2),
        fmt(s.outcome_per_mil_ineligible, 2),
        fmt(s.outcome_per_mil_eligible, 2)
    ));
    if !s.covariate_means.is_empty() {
        out.push_str("\ncovariate means\n");
        for c in &s.covariate_means {
            out.push_str(&format!(
                "{:<28} {:>10} {:>10} {:>10}\n",
                c.name,
                fmt(c.overall, 2),
                fmt(c.ineligible, 2),
                fmt(c.eligible, 2)
            ));
        }
    }
    out
}
