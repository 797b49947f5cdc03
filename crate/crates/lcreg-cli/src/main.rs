//! Batch front-end: data simulation, chain fitting (single G or a G grid),
//! and machine-readable summaries of stored traces.

mod meta;
mod pipeline;

use clap::{Args, Parser, Subcommand};
use lcreg::error::Error;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "lcreg",
    version,
    about = "Bayesian latent class analysis and regression with item and predictor selection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a benchmark dataset (responses.csv, schema.json,
    /// covariates.csv, truth.json).
    Simulate(SimulateArgs),
    /// Fit an LCA or LCR chain (or a grid of LCA chains over G) and write
    /// trace.bin plus summaries.
    Fit(FitArgs),
    /// Re-derive summary tables from a stored run directory.
    Report(ReportArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Built-in design name (sim1, sim2) or a path to a JSON spec file
    /// with "theta" and "beta" fields.
    #[arg(long)]
    spec: String,
    /// Number of observations.
    #[arg(long)]
    n: usize,
    /// Generator seed.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    /// Model family: lca or lcr.
    #[arg(long)]
    model: String,
    /// Sampler configuration: full, item_sel, pred_sel, or both.
    #[arg(long)]
    mode: Option<String>,
    /// Responses CSV path.
    #[arg(long)]
    responses: PathBuf,
    /// Schema JSON path (defaults to schema.json beside the responses).
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Covariates CSV path (required for lcr).
    #[arg(long)]
    covariates: Option<PathBuf>,
    /// Flat key-value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of latent classes.
    #[arg(long)]
    g: Option<usize>,
    /// Grid of class counts, e.g. 2:8 (lca only).
    #[arg(long, value_name = "LO:HI")]
    g_grid: Option<String>,
    #[arg(long)]
    n_iter: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Drop rows with missing responses instead of aborting.
    #[arg(long, default_value_t = false)]
    drop_incomplete: bool,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directory written by `fit` (holds trace.bin and meta.json).
    #[arg(long)]
    run: PathBuf,
    /// Responses CSV (defaults to the path recorded in meta.json).
    #[arg(long)]
    responses: Option<PathBuf>,
    /// Schema JSON (defaults to the recorded path).
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Covariates CSV (defaults to the recorded path).
    #[arg(long)]
    covariates: Option<PathBuf>,
    /// truth.json for accuracy tables (ari.txt, hdi_coverage.csv).
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Output directory (defaults to the run directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_)
        | Error::InvalidParameter(_)
        | Error::TraceVersion(_)
        | Error::InsufficientSamples { .. } => 2,
        Error::Ingestion { .. }
        | Error::Io(_)
        | Error::Csv(_)
        | Error::Json(_)
        | Error::Dimension(_)
        | Error::TraceFormat(_) => 3,
        Error::Singular(_) | Error::DegenerateWeights(_) => 4,
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(args) => pipeline::cmd_simulate(args),
        Command::Fit(args) => pipeline::cmd_fit(args),
        Command::Report(args) => pipeline::cmd_report(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
