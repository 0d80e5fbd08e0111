use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use attribution_bench::harness::{BenchmarkConfig, Pipeline, Stage};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(version, about = "Benchmark feature attribution methods on synthetic data with known ground truth")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Benchmark configuration (JSON).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output root; overrides the config.
    #[arg(long, global = true, value_name = "ROOT")]
    out: Option<PathBuf>,
    /// Global seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Cap on explained samples per dataset.
    #[arg(long, global = true)]
    max_samples: Option<usize>,
    /// Suppress progress output.
    #[arg(long, short, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Generate datasets (calibrating alpha where unset).
    Generate,
    /// Run the signal-to-noise calibration only.
    Calibrate,
    /// Train every configured model.
    Train,
    /// Compute importance maps on the correctly-predicted intersection.
    Explain,
    /// Score the maps against ground truth.
    Score,
    /// Rebuild the report from existing score files.
    Report,
    /// All stages.
    Run,
}

fn load(cli: &Cli) -> anyhow::Result<BenchmarkConfig> {
    let path = cli.config.as_ref().context("--config is required")?;
    let mut config = BenchmarkConfig::load(path)?;
    if let Some(out) = &cli.out {
        config.output_root = out.clone();
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if cli.max_samples.is_some() {
        config.max_samples = cli.max_samples;
    }
    config.validate()?;
    Ok(config)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let config = match load(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e:#}");
            return ExitCode::from(1);
        }
    };
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("config error: cannot start {n} workers: {e}");
            return ExitCode::from(1);
        }
    }
    let pipeline = match Pipeline::new(config) {
        Ok(p) => p.verbose(!cli.quiet),
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(1);
        }
    };
    let stage = match cli.command {
        Command::Calibrate => Stage::Calibrate,
        Command::Generate => Stage::Generate,
        Command::Train => Stage::Train,
        Command::Explain => Stage::Explain,
        Command::Score => Stage::Score,
        Command::Run => Stage::Report,
        Command::Report => {
            return match pipeline.report_only() {
                Ok(r) => {
                    println!("report: {} cells in {}", r.cells.len(), pipeline.report_dir().display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(1)
                }
            };
        }
    };
    match pipeline.run(stage) {
        Ok(outcome) if outcome.failures.is_empty() => {
            if let Some(r) = outcome.report {
                println!("report: {} cells in {}", r.cells.len(), pipeline.report_dir().display());
            }
            ExitCode::SUCCESS
        }
        Ok(outcome) => {
            eprintln!(
                "{} cell(s) failed; see {}",
                outcome.failures.len(),
                pipeline.report_dir().join("failures.json").display()
            );
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
