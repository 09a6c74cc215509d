//! Retained posterior draws, their on-disk format, and the run manifest.
//!
//! The draw file is a delimited text file with one row per retained draw:
//! chain, iteration, the flattened parameter vector under stable names, the
//! mixing-proportion triple, membership counts, the relative-risk tally and
//! its degeneracy flag, and the complete-data log likelihood. Floats are
//! written in shortest round-trip form, so identical runs produce identical
//! bytes.

use super::state::Label;
use crate::error::{RdError, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::Write;
use std::path::Path;

#[derive(Debug, Clone)]
pub struct DrawRecord {
    pub chain: u32,
    pub iteration: u64,
    pub params: Vec<f64>,
    /// Realized label fractions (below, threshold, above).
    pub pi_bar: [f64; 3],
    pub n_u0: u32,
    pub n_u0_z0: u32,
    pub n_u0_z1: u32,
    pub n_minus: u32,
    pub n_plus: u32,
    pub rr: f64,
    pub rr_num: f64,
    pub rr_den: f64,
    pub degenerate: bool,
    pub log_lik: f64,
}

/// Full membership labels at one retained draw.
#[derive(Debug, Clone)]
pub struct MembershipSnapshot {
    pub chain: u32,
    /// Index into the retained sequence of that chain.
    pub retained_index: usize,
    pub labels: Vec<Label>,
}

#[derive(Debug, Clone)]
pub struct PosteriorDraws {
    pub param_names: Vec<String>,
    pub records: Vec<DrawRecord>,
    pub n_units: usize,
    pub chains: u32,
    /// Per-unit counts of retained draws spent in each component.
    pub label_counts: Vec<[u32; 3]>,
    pub snapshots: Vec<MembershipSnapshot>,
    pub snapshot_stride: usize,
    /// Forcing-variable bin layout for the per-draw membership bin means
    /// (empty when tracking was disabled).
    pub bin_edges: Vec<f64>,
    /// Per retained draw, per bin: fraction of the bin's units in the
    /// threshold component.
    pub bin_means: Vec<Vec<f64>>,
    pub fallback_events: u64,
    pub prior_collapse_events: u64,
    pub structural_zero_violations: u64,
    /// Abort messages of chains that stopped early (their completed draws
    /// are kept).
    pub aborted: Vec<String>,
}

impl PosteriorDraws {
    pub fn n_draws(&self) -> usize {
        self.records.len()
    }

    pub fn rr_series(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.rr).collect()
    }

    pub fn degenerate_count(&self) -> usize {
        self.records.iter().filter(|r| r.degenerate).count()
    }

    /// Column of one named parameter across draws.
    pub fn param_series(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.param_names.iter().position(|n| n == name)?;
        Some(self.records.iter().map(|r| r.params[idx]).collect())
    }

    /// Per-unit posterior frequency of threshold-component membership.
    pub fn unit_u0_frequency(&self) -> Vec<f64> {
        self.label_counts
            .iter()
            .map(|c| {
                let total: u32 = c.iter().sum();
                if total == 0 {
                    f64::NAN
                } else {
                    c[Label::Zero.index()] as f64 / total as f64
                }
            })
            .collect()
    }

    /// Per-unit posterior mode label.
    pub fn unit_mode_labels(&self) -> Vec<Label> {
        self.label_counts
            .iter()
            .map(|c| {
                if c[0] >= c[1] && c[0] >= c[2] {
                    Label::Minus
                } else if c[1] >= c[2] {
                    Label::Zero
                } else {
                    Label::Plus
                }
            })
            .collect()
    }

    pub fn header(&self) -> Vec<String> {
        let mut cols = vec!["chain".to_string(), "iteration".to_string()];
        cols.extend(self.param_names.iter().cloned());
        cols.extend(
            [
                "pi_minus",
                "pi_zero",
                "pi_plus",
                "n_u0",
                "n_u0_z0",
                "n_u0_z1",
                "n_minus",
                "n_plus",
                "rr",
                "rr_num",
                "rr_den",
                "degenerate",
                "log_lik",
            ]
            .iter()
            .map(|s| s.to_string()),
        );
        cols
    }

    /// Write the draw file.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "{}", self.header().join(","))?;
        for r in &self.records {
            let mut fields: Vec<String> = Vec::with_capacity(self.param_names.len() + 15);
            fields.push(r.chain.to_string());
            fields.push(r.iteration.to_string());
            for v in &r.params {
                fields.push(format!("{v}"));
            }
            fields.push(format!("{}", r.pi_bar[0]));
            fields.push(format!("{}", r.pi_bar[1]));
            fields.push(format!("{}", r.pi_bar[2]));
            fields.push(r.n_u0.to_string());
            fields.push(r.n_u0_z0.to_string());
            fields.push(r.n_u0_z1.to_string());
            fields.push(r.n_minus.to_string());
            fields.push(r.n_plus.to_string());
            fields.push(format!("{}", r.rr));
            fields.push(format!("{}", r.rr_num));
            fields.push(format!("{}", r.rr_den));
            fields.push(if r.degenerate { "1".into() } else { "0".into() });
            fields.push(format!("{}", r.log_lik));
            writeln!(out, "{}", fields.join(","))?;
        }
        Ok(())
    }

    /// Read a draw file back. Membership-derived fields (label counts,
    /// snapshots, bin means) are not part of the draw file and come back
    /// empty; summaries that need them read the companion files.
    pub fn read_csv(path: &Path) -> Result<PosteriorDraws> {
        let mut rdr = csv::Reader::from_path(path)
            .map_err(|e| RdError::Data(format!("cannot open draw file {}: {e}", path.display())))?;
        let headers: Vec<String> = rdr
            .headers()
            .map_err(|e| RdError::Data(format!("draw file header: {e}")))?
            .iter()
            .map(|s| s.to_string())
            .collect();
        let fixed_tail = 13usize;
        if headers.len() < 2 + fixed_tail || headers[0] != "chain" || headers[1] != "iteration" {
            return Err(RdError::Data("unrecognized draw file layout".into()));
        }
        let param_names: Vec<String> =
            headers[2..headers.len() - fixed_tail].iter().cloned().collect();
        let mut records = Vec::new();
        let mut chains = 0u32;
        for row in rdr.records() {
            let row = row.map_err(|e| RdError::Data(format!("draw file row: {e}")))?;
            let get = |k: usize| -> Result<f64> {
                row.get(k)
                    .and_then(|s| s.parse::<f64>().ok())
                    .ok_or_else(|| RdError::Data(format!("bad numeric field {k} in draw file")))
            };
            let np = param_names.len();
            let chain = get(0)? as u32;
            chains = chains.max(chain + 1);
            let tail = 2 + np;
            records.push(DrawRecord {
                chain,
                iteration: get(1)? as u64,
                params: (0..np).map(|j| get(2 + j)).collect::<Result<Vec<f64>>>()?,
                pi_bar: [get(tail)?, get(tail + 1)?, get(tail + 2)?],
                n_u0: get(tail + 3)? as u32,
                n_u0_z0: get(tail + 4)? as u32,
                n_u0_z1: get(tail + 5)? as u32,
                n_minus: get(tail + 6)? as u32,
                n_plus: get(tail + 7)? as u32,
                rr: get(tail + 8)?,
                rr_num: get(tail + 9)?,
                rr_den: get(tail + 10)?,
                degenerate: get(tail + 11)? != 0.0,
                log_lik: get(tail + 12)?,
            });
        }
        Ok(PosteriorDraws {
            param_names,
            records,
            n_units: 0,
            chains,
            label_counts: Vec::new(),
            snapshots: Vec::new(),
            snapshot_stride: 0,
            bin_edges: Vec::new(),
            bin_means: Vec::new(),
            fallback_events: 0,
            prior_collapse_events: 0,
            structural_zero_violations: 0,
            aborted: Vec::new(),
        })
    }

    /// Write membership snapshots: one row per snapshot, labels as a string
    /// of `-`, `0`, `+`.
    pub fn write_memberships(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "chain,retained_index,labels")?;
        for snap in &self.snapshots {
            let labels: String = snap.labels.iter().map(|l| l.as_char()).collect();
            writeln!(out, "{},{},{labels}", snap.chain, snap.retained_index)?;
        }
        Ok(())
    }

    pub fn read_memberships(path: &Path) -> Result<Vec<MembershipSnapshot>> {
        let content = std::fs::read_to_string(path)?;
        let mut snaps = Vec::new();
        for (i, line) in content.lines().enumerate() {
            if i == 0 {
                if line != "chain,retained_index,labels" {
                    return Err(RdError::Data("unrecognized membership file header".into()));
                }
                continue;
            }
            let mut parts = line.splitn(3, ',');
            let chain = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| RdError::Data(format!("bad membership row {i}")))?;
            let retained_index = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| RdError::Data(format!("bad membership row {i}")))?;
            let labels = parts
                .next()
                .ok_or_else(|| RdError::Data(format!("bad membership row {i}")))?
                .chars()
                .map(Label::from_char)
                .collect::<Result<Vec<Label>>>()?;
            snaps.push(MembershipSnapshot { chain, retained_index, labels });
        }
        Ok(snaps)
    }

    /// Write per-draw membership bin means (one row per retained draw).
    pub fn write_bin_means(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        let nb = self.bin_edges.len().saturating_sub(1);
        let cols: Vec<String> = (0..nb)
            .map(|b| format!("bin_{}_{}", self.bin_edges[b], self.bin_edges[b + 1]))
            .collect();
        writeln!(out, "{}", cols.join(","))?;
        for row in &self.bin_means {
            let fields: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            writeln!(out, "{}", fields.join(","))?;
        }
        Ok(())
    }
}

const BINARY_MAGIC: &[u8; 8] = b"RDMXDRW1";

impl PosteriorDraws {
    /// Compact binary draw file: magic, parameter names, then fixed-width
    /// little-endian records. Carries exactly the columns of the text
    /// format.
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        out.write_all(BINARY_MAGIC)?;
        out.write_all(&(self.param_names.len() as u32).to_le_bytes())?;
        out.write_all(&(self.records.len() as u64).to_le_bytes())?;
        for name in &self.param_names {
            let bytes = name.as_bytes();
            out.write_all(&(bytes.len() as u16).to_le_bytes())?;
            out.write_all(bytes)?;
        }
        for r in &self.records {
            out.write_all(&r.chain.to_le_bytes())?;
            out.write_all(&r.iteration.to_le_bytes())?;
            for v in &r.params {
                out.write_all(&v.to_le_bytes())?;
            }
            for v in r.pi_bar {
                out.write_all(&v.to_le_bytes())?;
            }
            for v in [r.n_u0, r.n_u0_z0, r.n_u0_z1, r.n_minus, r.n_plus] {
                out.write_all(&v.to_le_bytes())?;
            }
            for v in [r.rr, r.rr_num, r.rr_den] {
                out.write_all(&v.to_le_bytes())?;
            }
            out.write_all(&[u8::from(r.degenerate)])?;
            out.write_all(&r.log_lik.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary(path: &Path) -> Result<PosteriorDraws> {
        let bytes = std::fs::read(path)?;
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
            if *pos + n > bytes.len() {
                return Err(RdError::Data("truncated binary draw file".into()));
            }
            let out = &bytes[*pos..*pos + n];
            *pos += n;
            Ok(out)
        };
        if take(&mut pos, 8)? != BINARY_MAGIC {
            return Err(RdError::Data("not a binary draw file (bad magic)".into()));
        }
        let np = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let n_records = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
        let mut param_names = Vec::with_capacity(np);
        for _ in 0..np {
            let len = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap()) as usize;
            let name = std::str::from_utf8(take(&mut pos, len)?)
                .map_err(|_| RdError::Data("invalid name in binary draw file".into()))?
                .to_string();
            param_names.push(name);
        }
        let f64_at = |pos: &mut usize| -> Result<f64> {
            Ok(f64::from_le_bytes(take(pos, 8)?.try_into().unwrap()))
        };
        let u32_at = |pos: &mut usize| -> Result<u32> {
            Ok(u32::from_le_bytes(take(pos, 4)?.try_into().unwrap()))
        };
        let mut records = Vec::with_capacity(n_records);
        let mut chains = 0u32;
        for _ in 0..n_records {
            let chain = u32_at(&mut pos)?;
            chains = chains.max(chain + 1);
            let iteration = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
            let params = (0..np).map(|_| f64_at(&mut pos)).collect::<Result<Vec<f64>>>()?;
            let pi_bar = [f64_at(&mut pos)?, f64_at(&mut pos)?, f64_at(&mut pos)?];
            let n_u0 = u32_at(&mut pos)?;
            let n_u0_z0 = u32_at(&mut pos)?;
            let n_u0_z1 = u32_at(&mut pos)?;
            let n_minus = u32_at(&mut pos)?;
            let n_plus = u32_at(&mut pos)?;
            let rr = f64_at(&mut pos)?;
            let rr_num = f64_at(&mut pos)?;
            let rr_den = f64_at(&mut pos)?;
            let degenerate = take(&mut pos, 1)?[0] != 0;
            let log_lik = f64_at(&mut pos)?;
            records.push(DrawRecord {
                chain,
                iteration,
                params,
                pi_bar,
                n_u0,
                n_u0_z0,
                n_u0_z1,
                n_minus,
                n_plus,
                rr,
                rr_num,
                rr_den,
                degenerate,
                log_lik,
            });
        }
        Ok(PosteriorDraws {
            param_names,
            records,
            n_units: 0,
            chains,
            label_counts: Vec::new(),
            snapshots: Vec::new(),
            snapshot_stride: 0,
            bin_edges: Vec::new(),
            bin_means: Vec::new(),
            fallback_events: 0,
            prior_collapse_events: 0,
            structural_zero_violations: 0,
            aborted: Vec::new(),
        })
    }
}

/// Bin layout over the observed forcing range: width-w bins starting at
/// floor(min/w)·w, the first bin closed on the left, the rest left-open.
pub fn bin_layout(s: &[f64], width: f64) -> (Vec<f64>, Vec<usize>) {
    let min = s.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let start = (min / width).floor() * width;
    let mut edges = vec![start];
    while *edges.last().unwrap() < max {
        let next = edges.last().unwrap() + width;
        edges.push(next);
    }
    if edges.len() == 1 {
        edges.push(start + width);
    }
    let n_bins = edges.len() - 1;
    let idx = s
        .iter()
        .map(|&v| {
            if v <= edges[0] {
                return 0;
            }
            let b = ((v - edges[0]) / width).ceil() as usize;
            b.saturating_sub(1).min(n_bins - 1)
        })
        .collect();
    (edges, idx)
}

/// Reproducibility manifest written next to every draw file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub seed: u64,
    pub chains: u32,
    pub iterations: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub data_sha256: String,
    pub priors_sha256: String,
    pub config_echo: serde_json::Value,
    pub version: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
