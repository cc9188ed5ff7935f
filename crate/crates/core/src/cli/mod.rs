//! Command-line experiment runner.
//!
//! Exit codes: 0 when every check passes, 1 when a check fails or a run
//! does not converge, 2 for unreadable or invalid configuration.

pub mod config;
pub mod report;
pub mod run;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{CommandKind, ExperimentConfig, LoadedConfig};
pub use report::{Check, RunReport};
pub use run::{execute, Failure};

#[derive(Debug, Parser)]
#[command(name = "ma-boundary", version, about = "Boundary behaviour experiments for Monge-Ampere problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Select and certify the epsilon of the power barrier.
    VerifyBarrier(CommonArgs),
    /// Solve a Dirichlet problem on a grid.
    Solve(CommonArgs),
    /// Fit the boundary decay exponent of a grid or radial solution.
    FitExponent(CommonArgs),
    /// Tabulate the lambda iteration of the degenerate problem.
    IterateExponents(CommonArgs),
    /// Run a parameter sweep over exponents, grids and certificates.
    Sweep(CommonArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to the hardware parallelism.
    #[arg(long)]
    threads: Option<usize>,
}

/// Parse a config file and run `command` inside a pool of `threads` workers.
pub fn run_file(
    command: CommandKind,
    config: &std::path::Path,
    out: &std::path::Path,
    seed: Option<u64>,
    threads: Option<usize>,
) -> Result<RunReport, Failure> {
    let text = std::fs::read_to_string(config).map_err(|e| {
        Failure::Config(crate::Error::Config {
            line: 0,
            column: 0,
            message: format!("cannot read {}: {e}", config.display()),
        })
    })?;
    let loaded = LoadedConfig::parse(&text).map_err(Failure::Config)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| Failure::Output(crate::Error::Construction(format!("thread pool: {e}"))))?;
    pool.install(|| execute(command, &loaded, out, seed))
}

/// Entry point used by the binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let (kind, a) = match cli.command {
        Command::VerifyBarrier(a) => (CommandKind::VerifyBarrier, a),
        Command::Solve(a) => (CommandKind::Solve, a),
        Command::FitExponent(a) => (CommandKind::FitExponent, a),
        Command::IterateExponents(a) => (CommandKind::IterateExponents, a),
        Command::Sweep(a) => (CommandKind::Sweep, a),
    };
    match run_file(kind, &a.config, &a.out, a.seed, a.threads) {
        Ok(report) => {
            for c in &report.checks {
                println!(
                    "{} {} value={} threshold={} margin={}",
                    if c.pass { "PASS" } else { "FAIL" },
                    c.name,
                    c.value,
                    c.threshold,
                    c.margin
                );
            }
            if let Some(e) = &report.error {
                eprintln!("error: {e}");
            }
            println!("report: {}", a.out.join("report.json").display());
            report.exit_code()
        }
        Err(f) => {
            eprintln!("error: {}: {f}", a.config.display());
            f.exit_code()
        }
    }
}
