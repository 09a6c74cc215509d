//! Dataset ingestion, validation and the forcing-variable transform.
//!
//! Eligibility is never trusted from the input file: it is recomputed as
//! `z = 1{s ≤ s0}` for every row. Rows with missing or non-numeric fields
//! are dropped and counted. Continuous covariates are centered and scaled
//! to unit variance at ingestion (binary 0/1 columns are left alone), with
//! the affine map stored so reports can show original units.

use crate::error::{RdError, Result};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

/// log(s̃) = [log(s + eps0) − log(s0)] / 10.
///
/// The shift `eps0` keeps zero incomes inside the support of the log-normal
/// forcing models.
pub fn transform_forcing(s: f64, s0: f64, eps0: f64) -> Result<f64> {
    if !(s0 > 0.0) {
        return Err(RdError::Domain(format!("threshold must be positive, got {s0}")));
    }
    if !(s + eps0 > 0.0) {
        return Err(RdError::Domain(format!(
            "forcing value {s} with shift {eps0} is outside the log domain"
        )));
    }
    Ok(((s + eps0).ln() - s0.ln()) / 10.0)
}

/// Inverse of [`transform_forcing`]: s = s0·exp(10·log_s_tilde) − eps0.
pub fn inverse_transform_forcing(log_s_tilde: f64, s0: f64, eps0: f64) -> f64 {
    s0 * (10.0 * log_s_tilde).exp() - eps0
}

/// Column mapping for delimited input.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColumnSchema {
    /// Optional id column; row numbers are used when absent.
    pub unit_id: Option<String>,
    pub forcing: String,
    pub outcome: String,
    pub covariates: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestOptions {
    /// Eligibility threshold, in forcing-variable units.
    pub s0: f64,
    /// Zero-income shift applied before the log transform.
    pub eps0: f64,
    /// Optional pre-filter: drop rows with forcing value above this bound.
    pub max_s: Option<f64>,
    /// Center/scale continuous covariates (binary columns are never touched).
    pub standardize: bool,
}

impl IngestOptions {
    pub fn new(s0: f64) -> Self {
        IngestOptions { s0, eps0: 0.5, max_s: None, standardize: true }
    }
}

/// Per-covariate affine map from standardized back to original units:
/// raw = std · scale + shift.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovariateScale {
    pub name: String,
    pub shift: f64,
    pub scale: f64,
    pub binary: bool,
}

/// What ingestion dropped and why.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows_read: usize,
    pub rows_kept: usize,
    pub rows_rejected: usize,
    pub rejected_by_reason: BTreeMap<String, usize>,
    /// Rows dropped by the `max_s` pre-filter (not counted as rejections).
    pub rows_filtered: usize,
}

/// A validated analysis dataset. Read-only after construction.
#[derive(Debug, Clone)]
pub struct ObservedDataset {
    unit_ids: Vec<String>,
    s: Vec<f64>,
    log_s_tilde: Vec<f64>,
    z: Vec<bool>,
    y: Vec<bool>,
    /// n × p covariates on the model (standardized) scale.
    x: DMatrix<f64>,
    scales: Vec<CovariateScale>,
    s0: f64,
    eps0: f64,
}

impl ObservedDataset {
    /// Build a dataset from already-parsed columns, applying the same
    /// validation and standardization as file ingestion.
    pub fn from_parts(
        unit_ids: Vec<String>,
        s: Vec<f64>,
        y: Vec<bool>,
        x_raw: Vec<Vec<f64>>,
        x_names: Vec<String>,
        opts: &IngestOptions,
    ) -> Result<Self> {
        let n = s.len();
        if n == 0 {
            return Err(RdError::Data("empty dataset".into()));
        }
        if y.len() != n || x_raw.len() != n {
            return Err(RdError::Data("column lengths differ".into()));
        }
        let p = x_names.len();
        if x_raw.iter().any(|row| row.len() != p) {
            return Err(RdError::Data("covariate row width differs from header".into()));
        }
        if !(opts.s0 > 0.0) {
            return Err(RdError::Config(format!("threshold must be positive, got {}", opts.s0)));
        }
        for (i, &si) in s.iter().enumerate() {
            if !si.is_finite() || si < 0.0 {
                return Err(RdError::Data(format!(
                    "row {i}: forcing value {si} is not a nonnegative real"
                )));
            }
        }

        let z: Vec<bool> = s.iter().map(|&si| si <= opts.s0).collect();
        let n_eligible = z.iter().filter(|&&zi| zi).count();
        if n_eligible == 0 || n_eligible == n {
            return Err(RdError::Data(format!(
                "degenerate design: {n_eligible} of {n} units on the eligible side of s0={}",
                opts.s0
            )));
        }

        let log_s_tilde = s
            .iter()
            .map(|&si| transform_forcing(si, opts.s0, opts.eps0))
            .collect::<Result<Vec<f64>>>()?;

        let mut x = DMatrix::zeros(n, p);
        for (i, row) in x_raw.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                x[(i, j)] = v;
            }
        }
        let mut scales = Vec::with_capacity(p);
        for j in 0..p {
            let col = x.column(j);
            let binary = col.iter().all(|&v| v == 0.0 || v == 1.0);
            if binary || !opts.standardize {
                scales.push(CovariateScale { name: x_names[j].clone(), shift: 0.0, scale: 1.0, binary });
                continue;
            }
            let mean = col.sum() / n as f64;
            let var =
                col.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0).max(1.0);
            let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
            for i in 0..n {
                x[(i, j)] = (x[(i, j)] - mean) / sd;
            }
            scales.push(CovariateScale { name: x_names[j].clone(), shift: mean, scale: sd, binary: false });
        }

        Ok(ObservedDataset { unit_ids, s, log_s_tilde, z, y, x, scales, s0: opts.s0, eps0: opts.eps0 })
    }

    pub fn n(&self) -> usize {
        self.s.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn s0(&self) -> f64 {
        self.s0
    }

    pub fn eps0(&self) -> f64 {
        self.eps0
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    pub fn forcing(&self) -> &[f64] {
        &self.s
    }

    pub fn log_s_tilde(&self) -> &[f64] {
        &self.log_s_tilde
    }

    pub fn eligible(&self) -> &[bool] {
        &self.z
    }

    pub fn outcome(&self) -> &[bool] {
        &self.y
    }

    /// Covariates on the model scale.
    pub fn covariates(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn covariate_scales(&self) -> &[CovariateScale] {
        &self.scales
    }

    pub fn covariate_names(&self) -> Vec<String> {
        self.scales.iter().map(|c| c.name.clone()).collect()
    }

    /// Covariate column j in original units.
    pub fn raw_covariate(&self, j: usize) -> Vec<f64> {
        let sc = &self.scales[j];
        self.x.column(j).iter().map(|&v| v * sc.scale + sc.shift).collect()
    }

    /// Indices of units whose forcing value lies in [lower, upper].
    pub fn restrict_window(&self, lower: f64, upper: f64) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.s[i] >= lower && self.s[i] <= upper).collect()
    }
}

/// Read a delimited file with header and build the dataset.
///
/// Rows with a missing or unparseable forcing value, outcome or covariate
/// are rejected and counted by reason; a file whose rows are all rejected is
/// an error.
pub fn ingest(
    path: &Path,
    schema: &ColumnSchema,
    opts: &IngestOptions,
) -> Result<(ObservedDataset, IngestReport)> {
    if !(opts.s0 > 0.0) {
        return Err(RdError::Config(format!("threshold must be positive, got {}", opts.s0)));
    }
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| RdError::Schema(format!("cannot open {}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| RdError::Schema(format!("cannot read header: {e}")))?
        .clone();
    let col_index = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| RdError::Schema(format!("column '{name}' not found in {}", path.display())))
    };

    let idx_s = col_index(&schema.forcing)?;
    let idx_y = col_index(&schema.outcome)?;
    let idx_id = schema.unit_id.as_deref().map(col_index).transpose()?;
    let idx_x = schema.covariates.iter().map(|c| col_index(c)).collect::<Result<Vec<usize>>>()?;

    let mut report = IngestReport::default();
    let mut unit_ids = Vec::new();
    let mut s = Vec::new();
    let mut y = Vec::new();
    let mut x_rows: Vec<Vec<f64>> = Vec::new();

    fn reject(report: &mut IngestReport, reason: &str) {
        report.rows_rejected += 1;
        *report.rejected_by_reason.entry(reason.to_string()).or_insert(0) += 1;
    }

    for (row_no, record) in reader.records().enumerate() {
        let record = record.map_err(|e| RdError::Data(format!("row {}: {e}", row_no + 1)))?;
        report.rows_read += 1;

        let cell = |idx: usize| record.get(idx).map(str::trim).unwrap_or("");
        let si = match cell(idx_s).parse::<f64>() {
            Ok(v) if v.is_finite() && v >= 0.0 => v,
            _ => {
                reject(&mut report, "invalid forcing value");
                continue;
            }
        };
        let yi = match cell(idx_y).parse::<f64>() {
            Ok(v) if v == 0.0 => false,
            Ok(v) if v == 1.0 => true,
            _ => {
                reject(&mut report, "invalid outcome value");
                continue;
            }
        };
        let mut xi = Vec::with_capacity(idx_x.len());
        let mut bad_cov = false;
        for &jx in &idx_x {
            match cell(jx).parse::<f64>() {
                Ok(v) if v.is_finite() => xi.push(v),
                _ => {
                    bad_cov = true;
                    break;
                }
            }
        }
        if bad_cov {
            reject(&mut report, "invalid covariate value");
            continue;
        }
        if let Some(max_s) = opts.max_s {
            if si > max_s {
                report.rows_filtered += 1;
                continue;
            }
        }
        let id = match idx_id {
            Some(idx) => cell(idx).to_string(),
            None => (row_no + 1).to_string(),
        };
        unit_ids.push(id);
        s.push(si);
        y.push(yi);
        x_rows.push(xi);
    }

    if s.is_empty() {
        return Err(RdError::Data(format!(
            "no usable rows in {} ({} read, {} rejected, {} filtered)",
            path.display(),
            report.rows_read,
            report.rows_rejected,
            report.rows_filtered
        )));
    }
    report.rows_kept = s.len();
    let dataset = ObservedDataset::from_parts(unit_ids, s, y, x_rows, schema.covariates.clone(), opts)?;
    Ok((dataset, report))
}

/// Descriptive statistics of one eligibility group.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForcingStats {
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub mean: f64,
    pub q3: f64,
    pub max: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovariateGroupMeans {
    pub name: String,
    pub overall: f64,
    pub ineligible: f64,
    pub eligible: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DescriptiveSummary {
    pub forcing_overall: ForcingStats,
    pub forcing_ineligible: ForcingStats,
    pub forcing_eligible: ForcingStats,
    pub covariate_means: Vec<CovariateGroupMeans>,
    /// Outcome rate per thousand units.
    pub outcome_per_mil_overall: f64,
    pub outcome_per_mil_ineligible: f64,
    pub outcome_per_mil_eligible: f64,
}

fn forcing_stats(values: &[f64]) -> ForcingStats {
    let n = values.len();
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mean = sorted.iter().sum::<f64>() / n as f64;
    let sd = if n > 1 {
        (sorted.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0)).sqrt()
    } else {
        0.0
    };
    ForcingStats {
        n,
        min: sorted[0],
        q1: crate::estimands::quantile_sorted(&sorted, 0.25),
        median: crate::estimands::quantile_sorted(&sorted, 0.5),
        mean,
        q3: crate::estimands::quantile_sorted(&sorted, 0.75),
        max: sorted[n - 1],
        sd,
    }
}

/// Per-eligibility-group descriptives of the forcing variable, covariate
/// means in original units, and outcome rates per mil.
pub fn summarize(dataset: &ObservedDataset) -> Result<DescriptiveSummary> {
    let n = dataset.n();
    if n == 0 {
        return Err(RdError::Data("cannot summarize an empty dataset".into()));
    }
    let z = dataset.eligible();
    let s = dataset.forcing();
    let y = dataset.outcome();

    let split = |keep: &dyn Fn(usize) -> bool| -> Vec<f64> {
        (0..n).filter(|&i| keep(i)).map(|i| s[i]).collect()
    };
    let all = split(&|_| true);
    let elig = split(&|i| z[i]);
    let inelig = split(&|i| !z[i]);

    let rate = |keep: &dyn Fn(usize) -> bool| -> f64 {
        let idx: Vec<usize> = (0..n).filter(|&i| keep(i)).collect();
        if idx.is_empty() {
            return f64::NAN;
        }
        1000.0 * idx.iter().filter(|&&i| y[i]).count() as f64 / idx.len() as f64
    };

    let mut covariate_means = Vec::new();
    for j in 0..dataset.p() {
        let raw = dataset.raw_covariate(j);
        let mean_of = |keep: &dyn Fn(usize) -> bool| -> f64 {
            let idx: Vec<usize> = (0..n).filter(|&i| keep(i)).collect();
            idx.iter().map(|&i| raw[i]).sum::<f64>() / idx.len() as f64
        };
        covariate_means.push(CovariateGroupMeans {
            name: dataset.scales[j].name.clone(),
            overall: mean_of(&|_| true),
            ineligible: mean_of(&|i| !z[i]),
            eligible: mean_of(&|i| z[i]),
        });
    }

    Ok(DescriptiveSummary {
        forcing_overall: forcing_stats(&all),
        forcing_ineligible: forcing_stats(&inelig),
        forcing_eligible: forcing_stats(&elig),
        covariate_means,
        outcome_per_mil_overall: rate(&|_| true),
        outcome_per_mil_ineligible: rate(&|i| !z[i]),
        outcome_per_mil_eligible: rate(&|i| z[i]),
    })
}
