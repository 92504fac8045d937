use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fedraa::config::{load_config, ExperimentConfig};
use fedraa::experiment::{ablation_table, run_ablation, run_experiment, run_sweep, verify_offline_bound};
use fedraa::sim::fmt_g9;
use fedraa::{Execution, Result};

#[derive(Parser)]
#[command(name = "fedraa", version, about = "Simulated resource-adaptive asynchronous federated learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run one experiment per grid value, e.g. `--grid beta=0.1:0.9:0.2`.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        grid: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Compare gre_raa, random, mp and sync on the same instance.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Check the sorted offline delay bound against exhaustive search and Gre-RAA.
    #[command(name = "verify-theorem2")]
    VerifyOfflineBound {
        #[arg(long, default_value_t = 6)]
        n: usize,
        #[arg(long, default_value_t = 3)]
        m: usize,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = load_config(path)?;
    cfg.apply_seed_overrides(seed)?;
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run { config: path, seed, out } => {
            let cfg = config(&path, seed)?;
            let (_, s) = run_experiment(&cfg, Some(&out))?;
            let acc = s.final_accuracy.map(fmt_g9).unwrap_or_else(|| "-".into());
            println!(
                "merges {} final_tick {} accuracy {} -> {}",
                s.merges,
                fmt_g9(s.final_tick),
                acc,
                out.display()
            );
        }
        Command::Sweep { config: path, grid, seed, out } => {
            let cfg = config(&path, seed)?;
            let rows = run_sweep(&cfg, &grid, Some(&out))?;
            for r in rows {
                let acc = r.final_accuracy.map(fmt_g9).unwrap_or_else(|| "-".into());
                println!("{} accuracy {} final_tick {}", r.label, acc, fmt_g9(r.final_tick));
            }
        }
        Command::Ablate { config: path, seed, out } => {
            let cfg = config(&path, seed)?;
            let rows = run_ablation(&cfg, Some(&out))?;
            print!("{}", ablation_table(&rows));
        }
        Command::VerifyOfflineBound { n, m, trials, seed } => {
            let results = verify_offline_bound(n, m, trials, seed, Execution::Parallel)?;
            let failed: Vec<_> = results.iter().enumerate().filter(|(_, t)| !t.passes()).collect();
            for (i, t) in &failed {
                println!(
                    "trial {i}: K_sorted {} K_opt {} greedy_max {}",
                    fmt_g9(t.k_sorted),
                    fmt_g9(t.k_opt),
                    fmt_g9(t.greedy_max)
                );
            }
            println!("{}/{} trials passed (N={n}, M={m})", results.len() - failed.len(), results.len());
            return Ok(failed.is_empty());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_missing_file() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
