//! Run configuration: a single TOML tree, fully validated before any
//! compute. Unknown keys are rejected. Environment variables override only
//! the seed, the output directory and the parallelism degree.

use rdmix_core::data::{ColumnSchema, IngestOptions};
use rdmix_core::mixture::{InitStrategy, Priors, SamplerConfig};
use rdmix_core::window::KernelKind;
use rdmix_core::RdError;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<DataConfig>,
    #[serde(default)]
    pub priors: PriorsConfig,
    pub sampler: Option<SamplerSection>,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    pub synth: Option<SynthConfig>,
    pub output: Option<OutputConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub path: PathBuf,
    pub s0: f64,
    #[serde(default = "default_eps0")]
    pub eps0: f64,
    /// Optional pre-filter dropping rows with forcing value above this.
    pub max_s: Option<f64>,
    #[serde(default = "default_true")]
    pub standardize: bool,
    pub schema: SchemaConfig,
}

fn default_eps0() -> f64 {
    0.5
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemaConfig {
    pub unit_id: Option<String>,
    pub forcing: String,
    pub outcome: String,
    pub covariates: Vec<String>,
}

impl SchemaConfig {
    pub fn to_schema(&self) -> ColumnSchema {
        ColumnSchema {
            unit_id: self.unit_id.clone(),
            forcing: self.forcing.clone(),
            outcome: self.outcome.clone(),
            covariates: self.covariates.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorsConfig {
    pub sd_alpha: f64,
    pub sd_gamma: f64,
    pub var_beta: f64,
    pub variance_df: f64,
    pub variance_scale: f64,
}

impl Default for PriorsConfig {
    fn default() -> Self {
        let p = Priors::default();
        PriorsConfig {
            sd_alpha: p.sd_alpha,
            sd_gamma: p.sd_gamma,
            var_beta: p.var_beta,
            variance_df: p.variance_df,
            variance_scale: p.variance_scale,
        }
    }
}

impl PriorsConfig {
    pub fn to_priors(&self) -> Priors {
        Priors {
            sd_alpha: self.sd_alpha,
            sd_gamma: self.sd_gamma,
            var_beta: self.var_beta,
            variance_df: self.variance_df,
            variance_scale: self.variance_scale,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    pub iterations: usize,
    pub burn_in: usize,
    #[serde(default = "default_thinning")]
    pub thinning: usize,
    #[serde(default = "default_chains")]
    pub chains: u32,
    pub seed: u64,
    #[serde(default = "default_rr_guard")]
    pub rr_guard: f64,
    #[serde(default = "default_snapshot_stride")]
    pub snapshot_stride: usize,
    #[serde(default = "default_bin_width")]
    pub bin_width: Option<f64>,
}

fn default_thinning() -> usize {
    1
}

fn default_chains() -> u32 {
    1
}

fn default_rr_guard() -> f64 {
    0.5
}

fn default_snapshot_stride() -> usize {
    10
}

fn default_bin_width() -> Option<f64> {
    Some(10.0)
}

impl SamplerSection {
    pub fn to_sampler_config(&self, seed_override: Option<u64>) -> SamplerConfig {
        SamplerConfig {
            iterations: self.iterations,
            burn_in: self.burn_in,
            thinning: self.thinning,
            chains: self.chains,
            seed: seed_override.unwrap_or(self.seed),
            init_strategy: InitStrategy::PriorSymmetric,
            rr_guard: self.rr_guard,
            snapshot_stride: self.snapshot_stride,
            bin_width: self.bin_width,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    pub mixture: bool,
    pub balance: bool,
    pub windows: Vec<WindowConfig>,
    pub mi_export: Option<MiExportConfig>,
    /// Bin width for the membership-probability table.
    pub membership_bin_width: Option<f64>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            mixture: true,
            balance: true,
            windows: Vec::new(),
            mi_export: None,
            membership_bin_width: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowConfig {
    pub kernel: KernelName,
    pub order: usize,
    pub bandwidth_left: Option<f64>,
    pub bandwidth_right: Option<f64>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelName {
    Uniform,
    Triangular,
}

impl From<KernelName> for KernelKind {
    fn from(k: KernelName) -> KernelKind {
        match k {
            KernelName::Uniform => KernelKind::Uniform,
            KernelName::Triangular => KernelKind::Triangular,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MiExportConfig {
    pub m: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub scenario: String,
    pub n: usize,
    pub seed: u64,
    #[serde(default = "default_s0")]
    pub s0: f64,
    #[serde(default = "default_eps0")]
    pub eps0: f64,
}

fn default_s0() -> f64 {
    120.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, RdError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RdError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| RdError::Config(format!("invalid config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), RdError> {
        if let Some(data) = &self.data {
            if !(data.s0 > 0.0) {
                return Err(RdError::Config("data.s0 must be positive".into()));
            }
            if data.eps0 < 0.0 {
                return Err(RdError::Config("data.eps0 must be nonnegative".into()));
            }
            if data.schema.covariates.is_empty() {
                // Covariate-free runs are allowed; nothing to check.
            }
        }
        self.priors.to_priors().validate()?;
        if let Some(s) = &self.sampler {
            s.to_sampler_config(None).validate()?;
        }
        for w in &self.analysis.windows {
            let has_bandwidths = w.bandwidth_left.is_some() && w.bandwidth_right.is_some();
            let has_bounds = w.lower.is_some() && w.upper.is_some();
            if !has_bandwidths && !has_bounds {
                return Err(RdError::Config(
                    "window needs either bandwidth_left/bandwidth_right or lower/upper".into(),
                ));
            }
            if !(1..=2).contains(&w.order) {
                return Err(RdError::Config(format!("window order {} unsupported", w.order)));
            }
        }
        if let Some(mi) = &self.analysis.mi_export {
            if mi.m == 0 || mi.stride == 0 {
                return Err(RdError::Config("mi_export needs m >= 1 and stride >= 1".into()));
            }
        }
        if let Some(synth) = &self.synth {
            if synth.n == 0 {
                return Err(RdError::Config("synth.n must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn ingest_options(&self) -> Result<IngestOptions, RdError> {
        let data = self
            .data
            .as_ref()
            .ok_or_else(|| RdError::Config("config has no [data] section".into()))?;
        Ok(IngestOptions {
            s0: data.s0,
            eps0: data.eps0,
            max_s: data.max_s,
            standardize: data.standardize,
        })
    }
}
