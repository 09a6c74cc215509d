//! Subcommand implementations. All outputs go to the run directory; inputs
//! are never mutated.

use crate::config::{MiExportConfig, RunConfig, WindowConfig};
use rdmix_core::data::{ingest, summarize, ObservedDataset};
use rdmix_core::estimands::{
    membership_table, rr_density, summarize_membership_counts, summarize_rr,
};
use rdmix_core::mixture::{
    diagnostics, run_chain, sha256_hex, PosteriorDraws, RunManifest, SamplerConfig,
};
use rdmix_core::synth::{generate, scenario, write_dataset_csv, write_truth, GenerateConfig};
use rdmix_core::window::{
    export_membership_imputations, fixed_window_sampler, local_polynomial_rd, rubin_combine,
    write_membership_imputations, WindowSpec,
};
use rdmix_core::{RdError, kernels::RngStream};
use std::path::{Path, PathBuf};

type Result<T> = std::result::Result<T, RdError>;

pub struct Ctx {
    pub config: RunConfig,
    pub out_dir: PathBuf,
    pub seed_override: Option<u64>,
}

impl Ctx {
    fn ensure_out(&self) -> Result<()> {
        std::fs::create_dir_all(&self.out_dir)?;
        Ok(())
    }

    fn load_dataset(&self) -> Result<(ObservedDataset, rdmix_core::data::IngestReport)> {
        let data = self
            .config
            .data
            .as_ref()
            .ok_or_else(|| RdError::Config("config has no [data] section".into()))?;
        let opts = self.config.ingest_options()?;
        ingest(&data.path, &data.schema.to_schema(), &opts)
    }

    fn sampler_config(&self) -> Result<SamplerConfig> {
        let section = self
            .config
            .sampler
            .as_ref()
            .ok_or_else(|| RdError::Config("config has no [sampler] section".into()))?;
        let cfg = section.to_sampler_config(self.seed_override);
        cfg.validate()?;
        Ok(cfg)
    }

    fn write_json<T: serde::Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let path = self.out_dir.join(name);
        std::fs::write(path, serde_json::to_string_pretty(value)?)?;
        Ok(())
    }

    fn write_text(&self, name: &str, text: &str) -> Result<()> {
        std::fs::write(self.out_dir.join(name), text)?;
        Ok(())
    }
}

fn window_spec(w: &WindowConfig, s0: f64) -> Result<WindowSpec> {
    let kernel = w.kernel.into();
    match (w.bandwidth_left, w.bandwidth_right) {
        (Some(hl), Some(hr)) => WindowSpec::from_bandwidths(s0, kernel, w.order, hl, hr),
        _ => {
            let lower = w.lower.ok_or_else(|| RdError::Config("window missing lower".into()))?;
            let upper = w.upper.ok_or_else(|| RdError::Config("window missing upper".into()))?;
            let spec = WindowSpec {
                lower,
                upper,
                kernel,
                order: w.order,
                bandwidth_left: s0 - lower,
                bandwidth_right: upper - s0,
            };
            spec.validate(s0)?;
            Ok(spec)
        }
    }
}

pub fn ingest_check(ctx: &Ctx) -> Result<()> {
    ctx.ensure_out()?;
    let (dataset, report) = ctx.load_dataset()?;
    let summary = summarize(&dataset)?;
    println!("{}", rdmix_core::report::descriptive_table(&summary));
    println!(
        "rows: read {}, kept {}, rejected {}, filtered {}",
        report.rows_read, report.rows_kept, report.rows_rejected, report.rows_filtered
    );
    ctx.write_json("ingest_report.json", &report)?;
    ctx.write_json("descriptive_summary.json", &summary)?;
    Ok(())
}

fn manifest(ctx: &Ctx, cfg: &SamplerConfig, data_path: &Path) -> Result<RunManifest> {
    let data_bytes = std::fs::read(data_path)?;
    let priors_json = serde_json::to_vec(&ctx.config.priors)?;
    Ok(RunManifest {
        seed: cfg.seed,
        chains: cfg.chains,
        iterations: cfg.iterations,
        burn_in: cfg.burn_in,
        thinning: cfg.thinning,
        data_sha256: sha256_hex(&data_bytes),
        priors_sha256: sha256_hex(&priors_json),
        config_echo: serde_json::to_value(&ctx.config)?,
        version: env!("CARGO_PKG_VERSION").to_string(),
    })
}

pub fn sample(ctx: &Ctx, binary_draws: bool) -> Result<PosteriorDraws> {
    ctx.ensure_out()?;
    let (dataset, report) = ctx.load_dataset()?;
    let cfg = ctx.sampler_config()?;
    let priors = ctx.config.priors.to_priors();
    let draws = run_chain(&dataset, &priors, &cfg)?;

    draws.write_csv(&ctx.out_dir.join("draws.csv"))?;
    if binary_draws {
        draws.write_binary(&ctx.out_dir.join("draws.bin"))?;
    }
    draws.write_memberships(&ctx.out_dir.join("memberships.csv"))?;
    if !draws.bin_means.is_empty() {
        draws.write_bin_means(&ctx.out_dir.join("membership_bin_means.csv"))?;
    }
    ctx.write_json("ingest_report.json", &report)?;
    let data_path = ctx.config.data.as_ref().unwrap().path.clone();
    ctx.write_json("run_manifest.json", &manifest(ctx, &cfg, &data_path)?)?;
    if !draws.aborted.is_empty() {
        ctx.write_text("partial.marker", &draws.aborted.join("\n"))?;
        eprintln!("warning: {} chain(s) aborted; completed draws persisted", draws.aborted.len());
    }
    println!(
        "retained {} draws over {} chains ({} structural-zero violations, {} fallbacks)",
        draws.n_draws(),
        draws.chains,
        draws.structural_zero_violations,
        draws.fallback_events
    );
    Ok(draws)
}

fn diagnostics_report(draws: &PosteriorDraws) -> Vec<diagnostics::ScalarDiagnostics> {
    let mut names = vec!["rr".to_string()];
    names.extend(draws.param_names.iter().cloned());
    names
        .iter()
        .map(|name| {
            let chains: Vec<Vec<f64>> = (0..draws.chains)
                .map(|c| {
                    draws
                        .records
                        .iter()
                        .filter(|r| r.chain == c)
                        .map(|r| {
                            if name == "rr" {
                                r.rr
                            } else {
                                let idx =
                                    draws.param_names.iter().position(|n| n == name).unwrap();
                                r.params[idx]
                            }
                        })
                        .collect()
                })
                .collect();
            diagnostics::ScalarDiagnostics {
                name: name.clone(),
                r_hat: diagnostics::split_r_hat(&chains),
                ess: diagnostics::effective_sample_size(&chains),
            }
        })
        .collect()
}

pub fn summarize_draws(ctx: &Ctx, draws: &PosteriorDraws, dataset: &ObservedDataset) -> Result<()> {
    ctx.ensure_out()?;
    let rr = summarize_rr(draws)?;
    let counts = summarize_membership_counts(draws)?;
    println!("{}", rdmix_core::report::rr_table(&rr));
    println!("{}", rdmix_core::report::membership_counts_table(&counts));
    ctx.write_json("rr_summary.json", &rr)?;
    ctx.write_json("membership_counts.json", &counts)?;

    let bin_width = ctx.config.analysis.membership_bin_width.unwrap_or(10.0);
    match membership_table(draws, dataset, bin_width) {
        Ok(table) => {
            println!("{}", rdmix_core::report::membership_bin_table(&table));
            ctx.write_json("membership_table.json", &table)?;
        }
        Err(e) => eprintln!("membership table skipped: {e}"),
    }

    let density = rr_density(draws, 512)?;
    ctx.write_json("rr_density.json", &density)?;

    let diags = diagnostics_report(draws);
    let worst = diags
        .iter()
        .filter(|d| d.r_hat.is_finite())
        .max_by(|a, b| a.r_hat.partial_cmp(&b.r_hat).unwrap());
    if let Some(w) = worst {
        if w.r_hat > 1.01 {
            eprintln!("advisory: {} has split R-hat {:.4} (threshold 1.01)", w.name, w.r_hat);
        }
    }
    ctx.write_json("convergence.json", &diags)?;
    Ok(())
}

pub fn summarize_from_files(ctx: &Ctx, draws_dir: &Path) -> Result<()> {
    let mut draws = PosteriorDraws::read_csv(&draws_dir.join("draws.csv"))?;
    let file = draws_dir.join("memberships.csv");
    if file.exists() {
        draws.snapshots = PosteriorDraws::read_memberships(&file)?;
        draws.snapshot_stride = 1;
    }
    let (dataset, _) = ctx.load_dataset()?;
    draws.n_units = dataset.n();
    summarize_draws(ctx, &draws, &dataset)
}

pub fn balance_from_files(ctx: &Ctx, draws_dir: &Path) -> Result<()> {
    ctx.ensure_out()?;
    let snapshots = PosteriorDraws::read_memberships(&draws_dir.join("memberships.csv"))?;
    let (dataset, _) = ctx.load_dataset()?;
    let report = rdmix_core::balance::posterior_balance(&snapshots, &dataset)?;
    println!("{}", rdmix_core::report::balance_table(&report));
    ctx.write_json("balance.json", &report)?;
    ctx.write_text("balance_love_plot.csv", &rdmix_core::report::love_plot_csv(&report))?;
    Ok(())
}

pub fn windows(ctx: &Ctx) -> Result<()> {
    ctx.ensure_out()?;
    let (dataset, _) = ctx.load_dataset()?;
    if ctx.config.analysis.windows.is_empty() {
        return Err(RdError::Config("no [[analysis.windows]] configured".into()));
    }
    let cfg = ctx.sampler_config()?;
    let priors = ctx.config.priors.to_priors();
    let mut results = Vec::new();
    for (k, wc) in ctx.config.analysis.windows.iter().enumerate() {
        let spec = window_spec(wc, dataset.s0())?;
        let local = local_polynomial_rd(&dataset, &spec)?;
        println!("{}", rdmix_core::report::local_poly_row(&spec, &local));
        let mut wcfg = cfg.clone();
        wcfg.snapshot_stride = 0;
        wcfg.bin_width = None;
        wcfg.seed = cfg.seed.wrapping_add(k as u64);
        let draws = fixed_window_sampler(&dataset, spec.lower, spec.upper, &priors, &wcfg)?;
        let rr = summarize_rr(&draws)?;
        println!("{}", rdmix_core::report::window_result_row(&spec, &rr));
        results.push(serde_json::json!({
            "spec": spec,
            "local_polynomial": local,
            "bayesian_rr": rr,
        }));
    }
    ctx.write_json("windows.json", &results)?;
    Ok(())
}

pub fn synth(ctx: &Ctx) -> Result<()> {
    ctx.ensure_out()?;
    let sc = ctx
        .config
        .synth
        .as_ref()
        .ok_or_else(|| RdError::Config("config has no [synth] section".into()))?;
    let preset = scenario(&sc.scenario)?;
    let seed = ctx.seed_override.unwrap_or(sc.seed);
    let mut rng = RngStream::new(seed, 0);
    let gen_cfg = GenerateConfig {
        n: sc.n,
        s0: sc.s0,
        eps0: sc.eps0,
        rejection_cap: 1000,
    };
    let (dataset, truth) = generate(&preset.params, &preset.covariates, &gen_cfg, &mut rng)?;
    write_dataset_csv(&dataset, &ctx.out_dir.join("synthetic_data.csv"))?;
    write_truth(&truth, &dataset, &ctx.out_dir)?;
    println!(
        "wrote {} units (scenario '{}', seed {seed}); true RR {:?}, rejection rate {:.4}",
        dataset.n(),
        preset.name,
        truth.true_rr,
        truth.rejection_rate
    );
    Ok(())
}

/// Convert between the delimited and binary draw formats; the direction is
/// inferred from the input (binary files carry a magic header).
pub fn convert_draws(input: &Path, output: &Path) -> Result<()> {
    let draws = match PosteriorDraws::read_binary(input) {
        Ok(d) => d,
        Err(_) => PosteriorDraws::read_csv(input)?,
    };
    if output.extension().and_then(|e| e.to_str()) == Some("bin") {
        draws.write_binary(output)?;
    } else {
        draws.write_csv(output)?;
    }
    println!("converted {} draws: {} -> {}", draws.n_draws(), input.display(), output.display());
    Ok(())
}

pub fn combine(ctx: &Ctx, estimates: &[f64], variances: &[f64]) -> Result<()> {
    ctx.ensure_out()?;
    let out = rubin_combine(estimates, variances)?;
    println!("{}", rdmix_core::report::mi_table(&out));
    ctx.write_json("mi_combined.json", &out)?;
    Ok(())
}

pub fn mi_export(ctx: &Ctx, draws: &PosteriorDraws, dataset: &ObservedDataset, mi: &MiExportConfig) -> Result<()> {
    let imputations = export_membership_imputations(draws, mi.m, mi.stride)?;
    let paths = write_membership_imputations(&imputations, dataset.unit_ids(), &ctx.out_dir)?;
    println!("wrote {} membership imputations", paths.len());
    Ok(())
}

/// Full pipeline: ingest, sample, summarize, balance, windows, exports.
pub fn run(ctx: &Ctx) -> Result<()> {
    ctx.ensure_out()?;
    let result = run_inner(ctx);
    if let Err(e) = &result {
        // Persist what we know about the failure next to any partial output.
        let _ = ctx.write_text("partial.marker", &format!("run aborted: {e}"));
    }
    result
}

fn run_inner(ctx: &Ctx) -> Result<()> {
    let (dataset, report) = ctx.load_dataset()?;
    let summary = summarize(&dataset)?;
    ctx.write_json("ingest_report.json", &report)?;
    ctx.write_json("descriptive_summary.json", &summary)?;
    ctx.write_text("descriptive_summary.txt", &rdmix_core::report::descriptive_table(&summary))?;

    let cfg = ctx.sampler_config()?;
    let priors = ctx.config.priors.to_priors();

    if ctx.config.analysis.mixture {
        let draws = run_chain(&dataset, &priors, &cfg)?;
        draws.write_csv(&ctx.out_dir.join("draws.csv"))?;
        draws.write_memberships(&ctx.out_dir.join("memberships.csv"))?;
        if !draws.bin_means.is_empty() {
            draws.write_bin_means(&ctx.out_dir.join("membership_bin_means.csv"))?;
        }
        let data_path = ctx.config.data.as_ref().unwrap().path.clone();
        ctx.write_json("run_manifest.json", &manifest(ctx, &cfg, &data_path)?)?;
        if !draws.aborted.is_empty() {
            ctx.write_text("partial.marker", &draws.aborted.join("\n"))?;
        }

        summarize_draws(ctx, &draws, &dataset)?;

        if ctx.config.analysis.balance {
            match rdmix_core::balance::posterior_balance(&draws.snapshots, &dataset) {
                Ok(report) => {
                    ctx.write_json("balance.json", &report)?;
                    ctx.write_text(
                        "balance_table.txt",
                        &rdmix_core::report::balance_table(&report),
                    )?;
                    ctx.write_text(
                        "balance_love_plot.csv",
                        &rdmix_core::report::love_plot_csv(&report),
                    )?;
                }
                Err(e) => eprintln!("balance skipped: {e}"),
            }
        }

        if let Some(mi) = &ctx.config.analysis.mi_export {
            mi_export(ctx, &draws, &dataset, mi)?;
        }
    }

    if !ctx.config.analysis.windows.is_empty() {
        let mut results = Vec::new();
        for (k, wc) in ctx.config.analysis.windows.iter().enumerate() {
            let spec = window_spec(wc, dataset.s0())?;
            let local = local_polynomial_rd(&dataset, &spec)?;
            let mut wcfg = cfg.clone();
            wcfg.snapshot_stride = 0;
            wcfg.bin_width = None;
            wcfg.seed = cfg.seed.wrapping_add(0x0574_0000 + k as u64);
            let wd = fixed_window_sampler(&dataset, spec.lower, spec.upper, &priors, &wcfg)?;
            let rr = summarize_rr(&wd)?;
            results.push(serde_json::json!({
                "spec": spec,
                "local_polynomial": local,
                "bayesian_rr": rr,
            }));
        }
        ctx.write_json("windows.json", &results)?;
    }

    println!("run complete: artifacts in {}", ctx.out_dir.display());
    Ok(())
}
