//! Command-line front end for the block-parallel federated laboratory.
//!
//! Every subcommand reads one TOML config (see `config.rs` for the
//! schema) and produces deterministic output: the same config and seed
//! give byte-identical files and stdout. Verbosity is controlled only by
//! the `RUST_LOG` environment variable (default `warn`); warnings go to
//! stderr and never change the exit status.
//!
//! Exit codes: 0 success, 2 configuration error (bad TOML, unknown keys,
//! inconsistent settings, unusable files), 3 numeric error (non-finite
//! values, failed gradient check), 4 invariant violation (a consistency
//! or replay check tripped).

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

/// Error carrying its process exit code.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numeric(String),
    Invariant(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Invariant(_) => 4,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Numeric(m) | CliError::Invariant(m) => m,
        }
    }
}

impl From<parablock::Error> for CliError {
    fn from(e: parablock::Error) -> Self {
        use parablock::Error::*;
        match e {
            NonFinite(_) | Numeric { .. } => CliError::Numeric(e.to_string()),
            Invariant(_) => CliError::Invariant(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "parablock",
    version,
    about = "Deterministic laboratory for communication-overlapped block-coordinate federated learning"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one method and write its round trace and summary.
    Run {
        /// Experiment config (TOML).
        #[arg(long)]
        config: PathBuf,
        /// parablock, fedbcd, or fedcybgd.
        #[arg(long, default_value = "parablock")]
        method: String,
        /// Directory for trace_<method>.csv and summary_<method>.txt.
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Run several methods across the sweep grid and tabulate wall-clock
    /// structure and final loss.
    Compare {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated subset of parablock,fedbcd,fedcybgd.
        #[arg(long, value_delimiter = ',', default_values_t = [
            "parablock".to_string(),
            "fedbcd".to_string(),
            "fedcybgd".to_string(),
        ])]
        methods: Vec<String>,
        /// Also write the table to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the invariant battery: per-round consistency, applied-log
    /// replay, untouched-block freshness, post-flush agreement, and the
    /// single-client reduction.
    Check {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate the convergence guarantee against a run's measured
    /// block-gradient series.
    Bound {
        #[arg(long)]
        config: PathBuf,
    },
    /// Compare analytic gradients with central finite differences.
    Gradcheck {
        #[arg(long)]
        config: PathBuf,
        /// Largest acceptable relative error.
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
        /// Finite-difference step.
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        /// Probe points per client.
        #[arg(long, default_value_t = 10)]
        points: usize,
    },
    /// Print the per-client class histogram of the data partition.
    PartitionPreview {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Run {
            config,
            method,
            out_dir,
        } => commands::cmd_run(config, method, out_dir),
        Cmd::Compare {
            config,
            methods,
            out,
        } => commands::cmd_compare(config, methods, out.as_deref()),
        Cmd::Check { config } => commands::cmd_check(config),
        Cmd::Bound { config } => commands::cmd_bound(config),
        Cmd::Gradcheck {
            config,
            tol,
            step,
            points,
        } => commands::cmd_gradcheck(config, *tol, *step, *points),
        Cmd::PartitionPreview { config } => commands::cmd_partition_preview(config),
    };
    if let Err(e) = result {
        eprintln!("error: {}", e.message());
        std::process::exit(e.exit_code());
    }
}
