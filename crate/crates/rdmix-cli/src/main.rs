//! Batch entry point: ingest, sample, summarize, report.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
//! failure. `RDMIX_SEED`, `RDMIX_OUT` and `RDMIX_THREADS` override the
//! seed, output directory and parallelism degree; everything else comes
//! from the config file.

mod commands;
mod config;

use clap::{Parser, Subcommand};
use commands::Ctx;
use config::RunConfig;
use rdmix_core::RdError;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "rdmix", version, about = "Mixture-based local-randomization analysis of regression-discontinuity designs")]
struct Cli {
    /// Path to the TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the sampler seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Output directory (overrides [output].dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Full pipeline: ingest, sample, summarize, balance, windows, exports.
    Run,
    /// Validate and describe the input data without sampling.
    IngestCheck,
    /// Run the mixture sampler and persist the draw file.
    Sample {
        /// Also write the compact binary draw file (draws.bin).
        #[arg(long)]
        binary_draws: bool,
    },
    /// Convert a draw file between the delimited and binary formats
    /// (direction inferred from the extensions).
    ConvertDraws {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Summaries from a persisted draw file (no sampling).
    Summarize {
        /// Directory containing draws.csv (and memberships.csv).
        #[arg(long)]
        draws: PathBuf,
    },
    /// Posterior covariate balance from persisted memberships.
    Balance {
        #[arg(long)]
        draws: PathBuf,
    },
    /// Fixed-window comparators: local polynomials and window samplers.
    Window,
    /// Generate a synthetic dataset with ground truth.
    Synth,
    /// Combine completed-data estimates with the multiple-imputation rules.
    Combine {
        /// Comma-separated point estimates.
        #[arg(long, value_delimiter = ',')]
        estimates: Vec<f64>,
        /// Comma-separated sampling variances (same length).
        #[arg(long, value_delimiter = ',')]
        variances: Vec<f64>,
    },
}

fn exit_code_for(err: &RdError) -> u8 {
    match err {
        RdError::Config(_) | RdError::Domain(_) => 2,
        RdError::Schema(_) | RdError::Data(_) | RdError::Io(_) => 3,
        RdError::Numeric(_) => 4,
        RdError::Serialize(_) => 1,
    }
}

fn env_var<T: std::str::FromStr>(name: &str) -> Option<T> {
    std::env::var(name).ok().and_then(|v| v.parse().ok())
}

fn build_ctx(cli: &Cli) -> Result<Ctx, RdError> {
    let config_path = cli
        .config
        .clone()
        .ok_or_else(|| RdError::Config("--config is required".into()))?;
    let config = RunConfig::load(&config_path)?;
    let out_dir = cli
        .out
        .clone()
        .or_else(|| env_var::<PathBuf>("RDMIX_OUT"))
        .or_else(|| config.output.as_ref().map(|o| o.dir.clone()))
        .unwrap_or_else(|| PathBuf::from("rdmix-out"));
    let seed_override = cli.seed.or_else(|| env_var("RDMIX_SEED"));
    Ok(Ctx { config, out_dir, seed_override })
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    let threads = cli.threads.or_else(|| env_var("RDMIX_THREADS"));
    if let Some(t) = threads {
        if t > 0 {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
                eprintln!("warning: could not set thread pool size: {e}");
            }
        }
    }

    let result = (|| -> Result<(), RdError> {
        match &cli.command {
            Command::Combine { estimates, variances } => {
                // No config needed beyond the output directory.
                let ctx = match build_ctx(&cli) {
                    Ok(ctx) => ctx,
                    Err(_) => Ctx {
                        config: RunConfig {
                            data: None,
                            priors: Default::default(),
                            sampler: None,
                            analysis: Default::default(),
                            synth: None,
                            output: None,
                        },

                        out_dir: cli
                            .out
                            .clone()
                            .or_else(|| env_var("RDMIX_OUT"))
                            .unwrap_or_else(|| PathBuf::from("rdmix-out")),
                        seed_override: None,
                    },
                };
                commands::combine(&ctx, estimates, variances)
            }
            Command::ConvertDraws { input, output } => commands::convert_draws(input, output),
            other => {
                let ctx = build_ctx(&cli)?;
                match other {
                    Command::Run => commands::run(&ctx),
                    Command::IngestCheck => commands::ingest_check(&ctx),
                    Command::Sample { binary_draws } => {
                        commands::sample(&ctx, *binary_draws).map(|_| ())
                    }
                    Command::Summarize { draws } => commands::summarize_from_files(&ctx, draws),
                    Command::Balance { draws } => commands::balance_from_files(&ctx, draws),
                    Command::Window => commands::windows(&ctx),
                    Command::Synth => commands::synth(&ctx),
                    Command::Combine { .. } | Command::ConvertDraws { .. } => unreachable!(),
                }
            }
        }
    })();

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // Machine-readable error line on stderr.
            eprintln!(
                "{}",
                serde_json::json!({ "error": e.to_string(), "exit_code": exit_code_for(&e) })
            );
            ExitCode::from(exit_code_for(&e))
        }
    }
}
