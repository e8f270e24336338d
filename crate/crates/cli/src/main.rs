//! `rap`: command-line front end for the random average process toolkit.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rap_core::error::RapError;

use commands::Env;
use config::*;

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Budget(String),
    Io(String),
}

impl From<RapError> for CliError {
    fn from(e: RapError) -> Self {
        if e.is_budget() {
            CliError::Budget(e.to_string())
        } else {
            CliError::Validation(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "rap", version, about = "Random average process: exact chains, constants and Monte Carlo tests")]
struct Cli {
    /// TOML config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, env = "RAP_THREADS")]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long = "budget-cells", global = true)]
    budget_cells: Option<usize>,
    #[arg(long, global = true)]
    replicas: Option<usize>,
    /// Significance level for pass/fail.
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Dimension of the default law when the config has no [law] table.
    #[arg(long, global = true, default_value_t = 1)]
    dim: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// σ², μ, chain kernels, quadratic form, a(·), 𝔄, c, c′ and h(A).
    Constants(ConstantsArgs),
    /// Return probabilities, renewal residuals, asymptotic-return and local-CLT ratios.
    Green(GreenArgs),
    /// Partial sums of P_l(D=0) − P_l'(D=0).
    LosaScan(LosaArgs),
    /// Truncated second moment at A|x|² against its limit.
    VarianceScan(VarianceScanArgs),
    /// Normalized second-moment matrix against the limiting covariance.
    CovScan(CovScanArgs),
    /// Forward simulation against the dual series.
    ForwardSim(ForwardArgs),
    Clt(CltArgs),
    Fdd(FddArgs),
    /// Joint series at several sites against the exact moment matrix.
    CrossMoments(CrossMomentArgs),
    /// Quenched minus annealed coincidence sums.
    Condition3(Condition3Args),
}

fn run(cli: Cli) -> Result<bool, CliError> {
    let mut file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let model = file.resolve_model(cli.dim)?;
    let run = &mut file.run;
    run.seed = cli.seed.or(run.seed);
    run.replicas = Some(cli.replicas.or(run.replicas).unwrap_or(commands::DEFAULT_REPLICAS));
    run.alpha = Some(cli.alpha.or(run.alpha).unwrap_or(commands::DEFAULT_ALPHA));
    run.budget_cells = Some(cli.budget_cells.or(run.budget_cells).unwrap_or(commands::DEFAULT_BUDGET));
    let threads = commands::resolve_threads(cli.threads, run.threads);
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("rap-out"));
    std::fs::create_dir_all(&out)?;

    let mut resolved = FileConfig {
        slope: file.slope.clone(),
        law: file.law.clone(),
        run: file.run.clone(),
        ..FileConfig::default()
    };
    macro_rules! resolve {
        ($args:expr, $field:ident, $name:literal) => {{
            let merged = $args.merged(file.$field.as_ref());
            resolved.$field = Some(merged.clone());
            ($name, merged)
        }};
    }
    let env = |name: &'static str, file: &FileConfig| Env {
        model: model.clone(),
        seed: file.run.seed,
        replicas: file.run.replicas.unwrap_or(commands::DEFAULT_REPLICAS),
        threads,
        alpha: file.run.alpha.unwrap_or(commands::DEFAULT_ALPHA),
        budget_cells: file.run.budget_cells.unwrap_or(commands::DEFAULT_BUDGET),
        out: out.clone(),
        command: name,
    };
    let write_resolved = |r: &FileConfig| -> Result<(), CliError> {
        let text = toml::to_string(r).map_err(|e| CliError::Io(e.to_string()))?;
        std::fs::write(out.join("resolved_config.toml"), text)?;
        Ok(())
    };
    match cli.command {
        Command::Constants(a) => {
            let (n, a) = resolve!(a, constants, "constants");
            write_resolved(&resolved)?;
            commands::constants(&env(n, &file), &a)
        }
        Command::Green(a) => {
            let (n, a) = resolve!(a, green, "green");
            write_resolved(&resolved)?;
            commands::green(&env(n, &file), &a)
        }
        Command::LosaScan(a) => {
            let (n, a) = resolve!(a, losa_scan, "losa-scan");
            write_resolved(&resolved)?;
            commands::losa(&env(n, &file), &a)
        }
        Command::VarianceScan(a) => {
            let (n, a) = resolve!(a, variance_scan, "variance-scan");
            write_resolved(&resolved)?;
            commands::variance_scan(&env(n, &file), &a)
        }
        Command::CovScan(a) => {
            let (n, a) = resolve!(a, cov_scan, "cov-scan");
            write_resolved(&resolved)?;
            commands::cov_scan(&env(n, &file), &a)
        }
        Command::ForwardSim(a) => {
            let (n, a) = resolve!(a, forward_sim, "forward-sim");
            write_resolved(&resolved)?;
            commands::forward_sim(&env(n, &file), &a)
        }
        Command::Clt(a) => {
            let (n, a) = resolve!(a, clt, "clt");
            write_resolved(&resolved)?;
            commands::clt(&env(n, &file), &a)
        }
        Command::Fdd(a) => {
            let (n, a) = resolve!(a, fdd, "fdd");
            write_resolved(&resolved)?;
            commands::fdd(&env(n, &file), &a)
        }
        Command::CrossMoments(a) => {
            let (n, a) = resolve!(a, cross_moments, "cross-moments");
            write_resolved(&resolved)?;
            commands::cross_moments(&env(n, &file), &a)
        }
        Command::Condition3(a) => {
            let (n, a) = resolve!(a, condition3, "condition3");
            write_resolved(&resolved)?;
            commands::condition3(&env(n, &file), &a)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("statistical test failed");
            ExitCode::from(3)
        }
        Err(CliError::Validation(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(CliError::Io(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(CliError::Budget(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
