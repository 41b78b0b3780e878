use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use semisplit::harness::{emit_report, run, ExperimentConfig};

/// Splitting-error experiments for classical and semiclassical dynamics.
#[derive(Parser)]
#[command(name = "semisplit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write report.csv and report.json.
    Run {
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (defaults to all cores).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Parse and check a config without running it.
    Validate { config: PathBuf },
    /// Print the bound constants of a config as JSON.
    Constants { config: PathBuf },
}

fn load(path: &PathBuf) -> Result<ExperimentConfig> {
    let cfg = ExperimentConfig::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run { config, out, seed, jobs } => {
            if let Some(n) = jobs {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global()
                    .context("configuring the worker pool")?;
            }
            let mut cfg = load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let output = run(&cfg)?;
            emit_report(&output, &out)?;
            let s = &output.summary;
            for note in &s.notes {
                eprintln!("note: {note}");
            }
            let failed = output.records.iter().filter(|r| r.bound_satisfied == Some(false)).count();
            println!(
                "{} records, {} bound checks, {} failed; report in {}",
                output.records.len(),
                s.bounds_checked,
                failed,
                out.display()
            );
            Ok(output.all_bounds_satisfied())
        }
        Command::Validate { config } => {
            load(&config)?;
            println!("{}: ok", config.display());
            Ok(true)
        }
        Command::Constants { config } => {
            let cfg = load(&config)?;
            let report = cfg.bound_report(cfg.m_prime)?;
            println!("{}", report.to_json_pretty()?);
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
