use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cns1d::harness::{criterion_id, run_acceptance_suite, CRITERIA};
use cns1d_cli::config::DEFAULTS_TOML;
use cns1d_cli::sweep::{cmd_sweep, Grid};
use cns1d_cli::{output_root, parse_config, run, CliError, EXIT_ACCEPTANCE, EXIT_OK};

#[derive(Parser)]
#[command(name = "cns1d", version, about = "1D compressible Navier-Stokes with vacuum: runs, sweeps and verification")]
#[command(after_help = "Exit codes: 0 success, 1 config/usage error, 2 numerical failure, 3 acceptance failure.\n\
Outputs go under $CNS1D_OUT (default ./cns1d_out) unless --out is given.")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation from a TOML config.
    #[command(after_long_help = defaults_help())]
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory [default: output.dir, else $CNS1D_OUT/<config name>]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the acceptance suite and write acceptance.csv.
    Verify {
        /// Output directory [default: $CNS1D_OUT/verify]
        #[arg(long)]
        out: Option<PathBuf>,
        /// Criterion id or number; repeatable. Runs every criterion when absent.
        #[arg(long)]
        only: Vec<String>,
    },
    /// Run a config template over a parameter grid.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// TOML table of value lists over gamma, beta, mu_star, a0, b0, N.
        #[arg(long)]
        grid: PathBuf,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Output directory [default: $CNS1D_OUT/sweep_<config name>]
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn defaults_help() -> String {
    format!("Config reference with every default (only scenario.kind and run.t_end are required):\n\n{DEFAULTS_TOML}")
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "run".into(), |s| s.to_string_lossy().into_owned())
}

fn execute(cli: Cli) -> Result<u8, CliError> {
    match cli.command {
        Command::Run { config, out } => {
            let cfg = parse_config(&config)?;
            let dir = run::run_dir(out.as_deref(), &cfg, &config, &output_root());
            let summary = run::cmd_run(&cfg, &dir)?;
            println!("{} frames, {} steps -> {}", summary.frames, summary.steps, dir.display());
            Ok(EXIT_OK)
        }
        Command::Verify { out, only } => {
            if let Some(bad) = only.iter().find(|k| criterion_id(k).is_none()) {
                return Err(CliError::Usage(format!(
                    "unknown criterion `{bad}`; known: {} (or 1-{})",
                    CRITERIA.join(", "),
                    CRITERIA.len()
                )));
            }
            let dir = out.unwrap_or_else(|| output_root().join("verify"));
            let keys: Vec<&str> = only.iter().map(String::as_str).collect();
            let report = run_acceptance_suite(&dir, &keys)?;
            for r in &report.results {
                println!("{}", r.line());
            }
            println!("report: {}", dir.join("acceptance.csv").display());
            Ok(if report.all_pass() { EXIT_OK } else { EXIT_ACCEPTANCE })
        }
        Command::Sweep {
            config,
            grid,
            workers,
            out,
        } => {
            let template = parse_config(&config)?;
            let text = std::fs::read_to_string(&grid)
                .map_err(|e| CliError::Usage(format!("cannot read grid `{}`: {e}", grid.display())))?;
            let grid = Grid::parse(&text)?;
            let dir = out.unwrap_or_else(|| output_root().join(format!("sweep_{}", stem(&config))));
            let summary = cmd_sweep(&template, &grid, &dir, workers)?;
            println!("{} grid points -> {}", grid.points().len(), summary.display());
            Ok(EXIT_OK)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
