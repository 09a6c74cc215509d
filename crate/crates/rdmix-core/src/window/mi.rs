//! Multiple-imputation machinery: combining rules for completed-membership
//! estimates and export of completed membership datasets.

use crate::error::{RdError, Result};
use crate::mixture::{Label, PosteriorDraws};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};

/// Combined inference over M completed-membership analyses.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MICombined {
    pub m: usize,
    /// Average of the completed-data point estimates.
    pub point: f64,
    /// Average within-imputation variance.
    pub within: f64,
    /// Between-imputation variance.
    pub between: f64,
    /// within + (1 + 1/M) · between.
    pub total_variance: f64,
}

/// Combine M completed-data estimates and their sampling variances.
pub fn rubin_combine(estimates: &[f64], variances: &[f64]) -> Result<MICombined> {
    let m = estimates.len();
    if m < 2 {
        return Err(RdError::Domain(format!(
            "combining rules need at least 2 imputations, got {m}"
        )));
    }
    if variances.len() != m {
        return Err(RdError::Domain("estimate and variance counts differ".into()));
    }
    if variances.iter().any(|&v| v < 0.0) {
        return Err(RdError::Domain("variances must be nonnegative".into()));
    }
    let mf = m as f64;
    let point = estimates.iter().sum::<f64>() / mf;
    let within = variances.iter().sum::<f64>() / mf;
    let between =
        estimates.iter().map(|e| (e - point) * (e - point)).sum::<f64>() / (mf - 1.0);
    Ok(MICombined {
        m,
        point,
        within,
        between,
        total_variance: within + (1.0 + 1.0 / mf) * between,
    })
}

/// One completed membership dataset extracted from the posterior draws.
#[derive(Debug, Clone)]
pub struct MembershipImputation {
    /// Retained-draw index (chain 0 grid) the labels came from.
    pub retained_index: usize,
    pub labels: Vec<Label>,
}

/// Extract `m` completed membership datasets at the given stride over the
/// retained draws (indices 0, stride, 2·stride, ...). The run must have
/// kept membership snapshots on a grid that contains those indices.
pub fn export_membership_imputations(
    draws: &PosteriorDraws,
    m: usize,
    stride: usize,
) -> Result<Vec<MembershipImputation>> {
    if m == 0 {
        return Err(RdError::Config("need at least one imputation".into()));
    }
    if stride == 0 {
        return Err(RdError::Config("stride must be at least 1".into()));
    }
    let retained_chain0 = draws.records.iter().filter(|r| r.chain == 0).count();
    if m * stride > retained_chain0 {
        return Err(RdError::Config(format!(
            "asked for {m} imputations at stride {stride} but only {retained_chain0} draws are retained"
        )));
    }
    let mut out = Vec::with_capacity(m);
    for k in 0..m {
        let want = k * stride;
        let snap = draws
            .snapshots
            .iter()
            .find(|s| s.chain == 0 && s.retained_index == want)
            .ok_or_else(|| {
                RdError::Data(format!(
                    "retained draw {want} has no stored membership; rerun with a snapshot stride dividing {stride}"
                ))
            })?;
        out.push(MembershipImputation { retained_index: want, labels: snap.labels.clone() });
    }
    Ok(out)
}

/// Write each imputation as `membership_imputation_<k>.csv` with one
/// unit-id/label row per unit.
pub fn write_membership_imputations(
    imputations: &[MembershipImputation],
    unit_ids: &[String],
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::with_capacity(imputations.len());
    for (k, imp) in imputations.iter().enumerate() {
        if imp.labels.len() != unit_ids.len() {
            return Err(RdError::Data("imputation length differs from unit count".into()));
        }
        let path = dir.join(format!("membership_imputation_{k}.csv"));
        let mut out = std::io::BufWriter::new(std::fs::File::create(&path)?);
        writeln!(out, "unit_id,label")?;
        for (id, label) in unit_ids.iter().zip(&imp.labels) {
            writeln!(out, "{id},{}", label.as_char())?;
        }
        paths.push(path);
    }
    Ok(paths)
}
