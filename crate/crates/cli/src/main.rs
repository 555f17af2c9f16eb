//! Command-line experiment runner: seeded prediction-interval benchmarks on
//! panel data, synthetic panel generation, and the covid panel fetcher.

mod config;
mod covid;
mod runner;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use lpci::SyntheticSpec;

use config::{ExperimentConfig, Method};

#[derive(Parser)]
#[command(name = "lpci", version, about = "Prediction-interval experiments on panel data")]
struct Cli {
    #[command(subcommand)]
    command: Commands,
}

#[derive(Subcommand)]
enum Commands {
    /// Run every (method, seed) cell of an experiment config and aggregate.
    Run {
        /// Experiment config JSON.
        #[arg(long)]
        config: PathBuf,
        /// Run a single seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory override.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run a single method (lpci, split, cqr, spci_per_group).
        #[arg(long)]
        method: Option<String>,
    },
    /// Draw a synthetic panel from a spec JSON and write it as CSV.
    Generate {
        /// Synthetic spec JSON.
        #[arg(long)]
        spec: PathBuf,
        /// Destination CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Download (or reuse) the cached UK covid panel and print its shape.
    FetchCovid {
        /// Cache directory; defaults to $LPCI_CACHE_DIR, then ./covid_cache.
        #[arg(long)]
        cache: Option<PathBuf>,
    },
    /// Rebuild aggregate.json/aggregate.csv from per-seed reports in a directory.
    Report {
        /// Directory holding report_{method}_{seed}.json files.
        #[arg(long = "in")]
        in_dir: PathBuf,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Commands::Run { config, seed, out, method } => {
            let mut experiment = ExperimentConfig::load(&config)?;
            if let Some(seed) = seed {
                experiment.seeds = vec![seed];
            }
            if let Some(out) = out {
                experiment.out_dir = out;
            }
            if let Some(method) = method {
                experiment.methods = vec![Method::parse(&method)?];
            }
            runner::run_experiment(&experiment)
        }
        Commands::Generate { spec, out } => {
            let text = std::fs::read_to_string(&spec)
                .with_context(|| format!("generate: cannot read {}", spec.display()))?;
            let spec: SyntheticSpec = serde_json::from_str(&text)
                .with_context(|| format!("generate: cannot parse {}", spec.display()))?;
            let panel = lpci::generate_synthetic(&spec).context("generate: drawing panel")?;
            panel
                .write_csv(&out)
                .with_context(|| format!("generate: writing {}", out.display()))?;
            println!(
                "wrote {} groups x {} times to {}",
                panel.n_groups(),
                panel.n_times(),
                out.display()
            );
            Ok(())
        }
        Commands::FetchCovid { cache } => {
            let dir = covid::resolve_cache_dir(cache.as_deref(), None);
            let panel = covid::fetch_covid(&dir)?;
            println!(
                "covid panel: {} authorities x {} days (cache: {})",
                panel.n_groups(),
                panel.n_times(),
                dir.display()
            );
            Ok(())
        }
        Commands::Report { in_dir } => {
            let aggregate = runner::reaggregate_dir(&in_dir)?;
            print!("{}", aggregate.to_text_table());
            Ok(())
        }
    }
}
