//! Command-line driver: single runs, sweeps and the equivalence checks.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use async_local_sgd::experiment::{self, EquivalenceOptions, SweepAxis};
use async_local_sgd::metrics::format_row;
use async_local_sgd::{ExperimentConfig, CSV_HEADER};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "alsgd", version, about = "Asynchronous Local-SGD simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its metrics CSV.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one experiment per axis value, in parallel.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// heterogeneity, workers, c_value or strategy
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Run the built-in equivalence checks.
    Validate {
        /// Perturb the async momentum decay in the sync-via-async check.
        #[arg(long, default_value_t = 0.0)]
        perturb_beta: f64,
    },
}

fn load_config(path: &Path) -> Result<ExperimentConfig, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    ExperimentConfig::parse(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn run(config: &Path, out: &Path) -> Result<(), String> {
    let cfg = load_config(config)?;
    let output = experiment::run(&cfg, out).map_err(|e| e.to_string())?;
    if let Some(row) = output.log.last() {
        println!("{CSV_HEADER}");
        println!("{}", format_row(row));
    }
    Ok(())
}

fn sweep(config: &Path, axis: &str, values: &[String], out_dir: &Path) -> Result<(), String> {
    let cfg = load_config(config)?;
    let axis = SweepAxis::parse(axis)
        .ok_or_else(|| format!("unknown axis `{axis}`; expected heterogeneity, workers, c_value or strategy"))?;
    let summary = experiment::sweep(&cfg, axis, values, out_dir).map_err(|e| e.to_string())?;
    for cell in &summary.cells {
        match &cell.outcome {
            Ok(row) => println!("{}={} ok eval_loss={}", axis.name(), cell.value, row.eval_loss),
            Err(msg) => eprintln!("{}={} failed: {msg}", axis.name(), cell.value),
        }
    }
    println!("summary: {}", summary.summary_path.display());
    let failed = summary.failed().len();
    if failed > 0 {
        return Err(format!("{failed} of {} sweep cells failed", summary.cells.len()));
    }
    Ok(())
}

fn validate(perturb_beta: f64) -> Result<(), String> {
    let report = experiment::validate_equivalences(EquivalenceOptions {
        beta_perturbation: perturb_beta,
    })
    .map_err(|e| e.to_string())?;
    for check in &report.checks {
        println!(
            "{} {}: max deviation {:e} (tolerance {:e})",
            if check.passed { "PASS" } else { "FAIL" },
            check.name,
            check.max_deviation,
            check.tolerance
        );
    }
    if report.all_passed() {
        Ok(())
    } else {
        Err("equivalence checks failed".to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config, out } => run(config, out),
        Command::Sweep {
            config,
            axis,
            values,
            out_dir,
        } => sweep(config, axis, values, out_dir),
        Command::Validate { perturb_beta } => validate(*perturb_beta),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
