//! Generative simulator: draws datasets from the exact mixture model with
//! known ground truth, for recovery tests and calibration studies.
//!
//! The mixture components differ in distribution, not support, so a drawn
//! (label, forcing) pair can land on the side its label forbids in the
//! membership conditionals. Such pairs are rejected and re-drawn (counted),
//! which keeps the generated truth reachable by the sampler.

use crate::data::{inverse_transform_forcing, IngestOptions, ObservedDataset};
use crate::error::{RdError, Result};
use crate::kernels::{std_normal_cdf, RngStream};
use crate::mixture::{mixing_probabilities, Label, ParameterState, Priors};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

/// Covariate recipe: independent standard normal columns followed by
/// Bernoulli(0.5) columns.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub normal: usize,
    pub bernoulli: usize,
}

impl CovariateSpec {
    pub fn p(&self) -> usize {
        self.normal + self.bernoulli
    }

    pub fn names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.p());
        for j in 0..self.normal {
            names.push(format!("xn{}", j + 1));
        }
        for j in 0..self.bernoulli {
            names.push(format!("xb{}", j + 1));
        }
        names
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerateConfig {
    pub n: usize,
    pub s0: f64,
    pub eps0: f64,
    /// Per-unit cap on (label, forcing) redraws before the generator gives
    /// up and reports the configuration as side-inconsistent.
    pub rejection_cap: usize,
}

impl GenerateConfig {
    pub fn new(n: usize) -> Self {
        GenerateConfig { n, s0: 120.0, eps0: 0.5, rejection_cap: 1000 }
    }
}

/// Everything the generator knows that an analyst would not.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub params: ParameterState,
    pub labels: Vec<Label>,
    /// Potential outcomes for threshold-component units (both arms); `None`
    /// for off-threshold units.
    pub y0: Vec<Option<bool>>,
    pub y1: Vec<Option<bool>>,
    /// Finite-sample relative risk over the true threshold component;
    /// `None` when its control arm has no cases.
    pub true_rr: Option<f64>,
    /// Average mixing probabilities over the generated covariates.
    pub avg_pi: [f64; 3],
    /// Realized label fractions after side-consistency rejection.
    pub realized_pi: [f64; 3],
    /// Rejected (label, forcing) draws per emitted unit.
    pub rejection_rate: f64,
}

/// Draw a dataset of `n` units from the mixture under `params`.
pub fn generate(
    params: &ParameterState,
    covariates: &CovariateSpec,
    config: &GenerateConfig,
    rng: &mut RngStream,
) -> Result<(ObservedDataset, GroundTruth)> {
    if config.n == 0 {
        return Err(RdError::Config("need at least one unit".into()));
    }
    if covariates.p() != params.p() {
        return Err(RdError::Config(format!(
            "covariate recipe has {} columns but parameters expect {}",
            covariates.p(),
            params.p()
        )));
    }
    let n = config.n;
    let p = covariates.p();
    // Threshold in transformed units: s ≤ s0 iff eta ≤ eta_threshold.
    let eta_threshold = ((config.s0 + config.eps0) / config.s0).ln() / 10.0;

    let mut s = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut x_rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut y0 = Vec::with_capacity(n);
    let mut y1 = Vec::with_capacity(n);
    let mut avg_pi = [0.0f64; 3];
    let mut rejections = 0usize;

    for _ in 0..n {
        let mut row = Vec::with_capacity(p);
        for _ in 0..covariates.normal {
            row.push(rng.std_normal());
        }
        for _ in 0..covariates.bernoulli {
            row.push(f64::from(rng.bernoulli(0.5)));
        }
        let (pi_m, pi_z, pi_p) =
            mixing_probabilities(&row, &params.alpha_minus, &params.alpha_plus);
        avg_pi[0] += pi_m;
        avg_pi[1] += pi_z;
        avg_pi[2] += pi_p;

        // Redraw (label, eta) until the pair is side-consistent and the
        // income is representable (nonnegative).
        let mut attempt = 0usize;
        let (label, eta, si) = loop {
            attempt += 1;
            if attempt > config.rejection_cap {
                return Err(RdError::Config(format!(
                    "side-consistency rejection cap ({}) exceeded; the preset pushes a component onto the wrong side of the threshold — adjust the mixing or forcing parameters",
                    config.rejection_cap
                )));
            }
            let u = rng.uniform_open();
            let label = if u < pi_m {
                Label::Minus
            } else if u < pi_m + pi_z {
                Label::Zero
            } else {
                Label::Plus
            };
            let (coef, s2) = match label {
                Label::Minus => (&params.beta_minus, params.sigma2_minus),
                Label::Zero => (&params.beta, params.sigma2),
                Label::Plus => (&params.beta_plus, params.sigma2_plus),
            };
            let mut mu = coef[0];
            for j in 0..p {
                mu += row[j] * coef[j + 1];
            }
            let eta = mu + s2.sqrt() * rng.std_normal();
            let si = inverse_transform_forcing(eta, config.s0, config.eps0);
            let consistent = match label {
                Label::Minus => eta <= eta_threshold,
                Label::Plus => eta > eta_threshold,
                Label::Zero => true,
            } && si >= 0.0;
            if consistent {
                break (label, eta, si);
            }
            rejections += 1;
        };

        let z = si <= config.s0;
        let mut xg = 0.0;
        for j in 0..p {
            xg += row[j] * params.gamma_x[j];
        }
        let (yi, y0i, y1i) = match label {
            Label::Zero => {
                let p0 = std_normal_cdf(params.gamma00 + xg);
                let p1 = std_normal_cdf(params.gamma01 + xg);
                let draw0 = rng.bernoulli(p0);
                let draw1 = rng.bernoulli(p1);
                (if z { draw1 } else { draw0 }, Some(draw0), Some(draw1))
            }
            Label::Minus => {
                let lp = params.gamma_minus[0] + params.gamma_minus[1] * eta + xg;
                (rng.bernoulli(std_normal_cdf(lp)), None, None)
            }
            Label::Plus => {
                let lp = params.gamma_plus[0] + params.gamma_plus[1] * eta + xg;
                (rng.bernoulli(std_normal_cdf(lp)), None, None)
            }
        };

        s.push(si);
        y.push(yi);
        x_rows.push(row);
        labels.push(label);
        y0.push(y0i);
        y1.push(y1i);
    }

    for v in &mut avg_pi {
        *v /= n as f64;
    }
    let mut realized = [0.0f64; 3];
    for l in &labels {
        realized[l.index()] += 1.0;
    }
    for v in &mut realized {
        *v /= n as f64;
    }
    let sum1: u32 = y1.iter().flatten().map(|&b| u32::from(b)).sum();
    let sum0: u32 = y0.iter().flatten().map(|&b| u32::from(b)).sum();
    let true_rr = if sum0 > 0 { Some(f64::from(sum1) / f64::from(sum0)) } else { None };

    // The simulator's covariates are already on the standardized scale by
    // construction; re-centering would detach the truth from the fitted
    // coefficients.
    let opts = IngestOptions {
        s0: config.s0,
        eps0: config.eps0,
        max_s: None,
        standardize: false,
    };
    let dataset = ObservedDataset::from_parts(
        (0..n).map(|i| format!("u{i}")).collect(),
        s,
        y,
        x_rows,
        covariates.names(),
        &opts,
    )?;
    let truth = GroundTruth {
        params: params.clone(),
        labels,
        y0,
        y1,
        true_rr,
        avg_pi,
        realized_pi: realized,
        rejection_rate: rejections as f64 / n as f64,
    };
    Ok((dataset, truth))
}

/// Write the truth sidecar: per-unit labels and potential outcomes plus the
/// generating parameters as JSON.
pub fn write_truth(truth: &GroundTruth, dataset: &ObservedDataset, dir: &Path) -> Result<()> {
    let labels_path = dir.join("truth_labels.csv");
    let mut out = std::io::BufWriter::new(std::fs::File::create(&labels_path)?);
    writeln!(out, "unit_id,label,y0,y1")?;
    let fmt = |v: &Option<bool>| match v {
        Some(true) => "1",
        Some(false) => "0",
        None => "",
    };
    for i in 0..dataset.n() {
        writeln!(
            out,
            "{},{},{},{}",
            dataset.unit_ids()[i],
            truth.labels[i].as_char(),
            fmt(&truth.y0[i]),
            fmt(&truth.y1[i])
        )?;
    }
    let meta = serde_json::json!({
        "params": truth.params,
        "true_rr": truth.true_rr,
        "avg_pi": truth.avg_pi,
        "realized_pi": truth.realized_pi,
        "rejection_rate": truth.rejection_rate,
    });
    std::fs::write(dir.join("truth_params.json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

/// Write the dataset in the same delimited layout ingestion reads.
pub fn write_dataset_csv(dataset: &ObservedDataset, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let names = dataset.covariate_names();
    writeln!(out, "unit_id,s,y,{}", names.join(","))?;
    for i in 0..dataset.n() {
        let mut fields = vec![
            dataset.unit_ids()[i].clone(),
            format!("{}", dataset.forcing()[i]),
            if dataset.outcome()[i] { "1".into() } else { "0".into() },
        ];
        for j in 0..dataset.p() {
            // Emit raw-scale covariates so re-ingestion reproduces them.
            let sc = &dataset.covariate_scales()[j];
            fields.push(format!("{}", dataset.covariates()[(i, j)] * sc.scale + sc.shift));
        }
        writeln!(out, "{}", fields.join(","))?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: &'static str,
    pub description: &'static str,
    pub params: ParameterState,
    pub covariates: CovariateSpec,
}

fn vec_from(vals: &[f64]) -> nalgebra::DVector<f64> {
    nalgebra::DVector::from_row_slice(vals)
}

/// Named parameter presets with three covariates (two normal, one binary).
///
/// * `separated`: components far apart in the forcing distribution, common
///   outcome rates; recovery tests can re-identify memberships.
/// * `null-effect`: identical outcome intercepts in both arms of the
///   threshold component, so the causal relative risk is one.
/// * `rare-outcome`: arm probabilities near 3 per mil.
pub fn scenario_library() -> Vec<Scenario> {
    let mut base = ParameterState::prior_init(3, &Priors::default());
    // Mixing ~ (0.39, 0.54, 0.07) averaged over the covariates.
    base.alpha_minus = vec_from(&[0.176, 0.30, -0.20, 0.25]);
    base.alpha_plus = vec_from(&[1.355, -0.20, 0.15, -0.10]);
    // Forcing components in transformed units, separated by 4-5 component
    // standard deviations. The variance prior contributes ν·s² = 1 to every
    // residual sum of squares, so component variances are kept large enough
    // that the contribution stays small at the component sizes the presets
    // are used with.
    base.beta_minus = vec_from(&[-0.33, 0.010, -0.008, 0.012]);
    base.sigma2_minus = 0.0036;
    base.beta = vec_from(&[-0.02, 0.006, 0.005, -0.006]);
    base.sigma2 = 0.0025;
    base.beta_plus = vec_from(&[0.25, 0.004, -0.003, 0.005]);
    base.sigma2_plus = 0.0025;
    base.gamma_x = vec_from(&[0.15, -0.10, 0.20]);
    base.gamma_minus = [-1.8, 0.3];
    base.gamma_plus = [-1.9, 0.3];

    let mut separated = base.clone();
    separated.gamma00 = -1.2816; // ≈ 10% control-arm rate
    separated.gamma01 = -1.5548; // ≈ 6% treated-arm rate

    let mut null_effect = base.clone();
    null_effect.gamma00 = -1.4051; // ≈ 8% in both arms
    null_effect.gamma01 = -1.4051;

    let mut rare = base;
    rare.gamma00 = -2.75; // ≈ 3 per mil
    rare.gamma01 = -2.75;
    rare.gamma_minus = [-2.75, 0.0];
    rare.gamma_plus = [-2.75, 0.0];
    rare.gamma_x = vec_from(&[0.05, -0.05, 0.05]);

    let cov = CovariateSpec { normal: 2, bernoulli: 1 };
    vec![
        Scenario {
            name: "separated",
            description: "well-separated components for membership recovery",
            params: separated,
            covariates: cov.clone(),
        },
        Scenario {
            name: "null-effect",
            description: "equal outcome intercepts in both arms (relative risk one)",
            params: null_effect,
            covariates: cov.clone(),
        },
        Scenario {
            name: "rare-outcome",
            description: "arm probabilities near 3 per mil",
            params: rare,
            covariates: cov,
        },
    ]
}

pub fn scenario(name: &str) -> Result<Scenario> {
    scenario_library()
        .into_iter()
        .find(|s| s.name == name)
        .ok_or_else(|| RdError::Config(format!("unknown scenario '{name}'")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_names_are_stable() {
        let names: Vec<&str> = scenario_library().iter().map(|s| s.name).collect();
        assert_eq!(names, vec!["separated", "null-effect", "rare-outcome"]);
    }

    #[test]
    fn null_effect_has_equal_arm_intercepts() {
        let s = scenario("null-effect").unwrap();
        assert_eq!(s.params.gamma00, s.params.gamma01);
    }

    #[test]
    fn generated_eligibility_matches_indicator() {
        let sc = scenario("separated").unwrap();
        let mut rng = RngStream::new(81, 0);
        let (ds, _) = generate(&sc.params, &sc.covariates, &GenerateConfig::new(2000), &mut rng).unwrap();
        for i in 0..ds.n() {
            assert_eq!(ds.eligible()[i], ds.forcing()[i] <= 120.0);
        }
    }

    #[test]
    fn observed_outcome_is_factual_arm() {
        let sc = scenario("separated").unwrap();
        let mut rng = RngStream::new(82, 0);
        let (ds, truth) =
            generate(&sc.params, &sc.covariates, &GenerateConfig::new(5000), &mut rng).unwrap();
        for i in 0..ds.n() {
            if truth.labels[i] == Label::Zero {
                let factual =
                    if ds.eligible()[i] { truth.y1[i].unwrap() } else { truth.y0[i].unwrap() };
                assert_eq!(ds.outcome()[i], factual);
            } else {
                assert!(truth.y0[i].is_none() && truth.y1[i].is_none());
            }
        }
    }

    #[test]
    fn label_frequencies_converge_to_mixing_average() {
        let sc = scenario("separated").unwrap();
        let mut rng = RngStream::new(83, 0);
        let n = 100_000;
        let (_, truth) = generate(&sc.params, &sc.covariates, &GenerateConfig::new(n), &mut rng).unwrap();
        // Rejection is rare in this preset, so realized fractions track the
        // average mixing probabilities within a few binomial SEs.
        for k in 0..3 {
            let se = (truth.avg_pi[k] * (1.0 - truth.avg_pi[k]) / n as f64).sqrt();
            let tol = 3.0 * se + truth.rejection_rate * 0.1 + 0.002;
            assert!(
                (truth.realized_pi[k] - truth.avg_pi[k]).abs() < tol,
                "component {k}: realized {} vs avg {} (tol {tol})",
                truth.realized_pi[k],
                truth.avg_pi[k]
            );
        }
        assert!(truth.rejection_rate < 0.05, "rejection rate {}", truth.rejection_rate);
    }

    #[test]
    fn null_preset_rr_concentrates_near_one() {
        let sc = scenario("null-effect").unwrap();
        let mut rng = RngStream::new(84, 0);
        let (_, truth) =
            generate(&sc.params, &sc.covariates, &GenerateConfig::new(100_000), &mut rng).unwrap();
        let rr = truth.true_rr.unwrap();
        assert!((rr - 1.0).abs() < 0.15, "true rr {rr}");
    }

    #[test]
    fn rare_outcome_rate_is_a_few_per_mil() {
        let sc = scenario("rare-outcome").unwrap();
        let mut rng = RngStream::new(85, 0);
        let (ds, _) =
            generate(&sc.params, &sc.covariates, &GenerateConfig::new(100_000), &mut rng).unwrap();
        let rate = 1000.0 * ds.outcome().iter().filter(|&&v| v).count() as f64 / ds.n() as f64;
        assert!(rate > 1.0 && rate < 8.0, "rate {rate} per mil");
    }

    #[test]
    fn inconsistent_preset_hits_rejection_cap() {
        let sc = scenario("separated").unwrap();
        let mut params = sc.params.clone();
        // Below component forced above the threshold: every draw rejected.
        params.beta_minus = vec_from(&[0.5, 0.0, 0.0, 0.0]);
        params.sigma2_minus = 1e-6;
        params.alpha_minus = vec_from(&[-8.0, 0.0, 0.0, 0.0]); // π⁻ ≈ 1
        let mut rng = RngStream::new(86, 0);
        let mut cfg = GenerateConfig::new(100);
        cfg.rejection_cap = 50;
        match generate(&params, &sc.covariates, &cfg, &mut rng) {
            Err(RdError::Config(msg)) => assert!(msg.contains("rejection cap")),
            other => panic!("expected rejection-cap error, got {other:?}"),
        }
    }

    #[test]
    fn fixed_seed_reproduces_dataset_bytes() {
        let sc = scenario("separated").unwrap();
        let gen = |seed: u64| {
            let mut rng = RngStream::new(seed, 0);
            generate(&sc.params, &sc.covariates, &GenerateConfig::new(500), &mut rng).unwrap()
        };
        let (a, _) = gen(7);
        let (b, _) = gen(7);
        let dir = tempfile::tempdir().unwrap();
        let pa = dir.path().join("a.csv");
        let pb = dir.path().join("b.csv");
        write_dataset_csv(&a, &pa).unwrap();
        write_dataset_csv(&b, &pb).unwrap();
        assert_eq!(std::fs::read(pa).unwrap(), std::fs::read(pb).unwrap());
    }
}
