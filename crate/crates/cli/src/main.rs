use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mlts::error::Error;
use mlts::harness::{
    run_estimate, run_fit_maps, run_ml_vs_highest, run_mlpf_cmd, run_mlpf_compare, run_oracle, run_plot, run_rates,
    run_sample, ExperimentConfig, RunManifest,
};

/// Multilevel Monte Carlo smoothing of discretely observed SDEs with
/// transport-map couplings.
#[derive(Parser)]
#[command(name = "mlts", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Full-size sample counts and replicate number.
    #[arg(long)]
    paper_scale: bool,
    /// Overrides the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the pair maps of levels 0..=L and write one file per level.
    FitMaps(Common),
    /// Write coupled functional samples per level.
    Sample(Common),
    /// Multilevel estimate with pilot-based allocation.
    Estimate(Common),
    /// Kalman moments and variance proxy per level.
    Oracle(Common),
    /// Coupled-resampling multilevel particle filter.
    Mlpf(Common),
    /// Increment variance and cost per level with rate fits.
    Rates(Common),
    /// MSE versus cost, multilevel against the highest level.
    MlVsHighest(Common),
    /// Increment variances of transport couplings and the particle filter.
    MlpfCompare(Common),
    /// SVG charts of CSV tables.
    Plot {
        #[command(flatten)]
        common: Common,
        /// CSV files to draw; defaults to the known tables in the output directory.
        #[arg(long = "input")]
        inputs: Vec<PathBuf>,
    },
}

fn load(common: &Common) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if common.paper_scale {
        cfg.paper_scale();
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<RunManifest, Error> {
    match cli.command {
        Command::FitMaps(c) => run_fit_maps(&load(&c)?),
        Command::Sample(c) => run_sample(&load(&c)?),
        Command::Estimate(c) => {
            let (report, manifest) = run_estimate(&load(&c)?)?;
            println!("estimate {:.10e} (variance {:.3e})", report.value, report.total_variance);
            Ok(manifest)
        }
        Command::Oracle(c) => run_oracle(&load(&c)?),
        Command::Mlpf(c) => run_mlpf_cmd(&load(&c)?),
        Command::Rates(c) => {
            let (rates, manifest) = run_rates(&load(&c)?)?;
            if let Some(f) = rates.variance_fit {
                println!("variance slope {:.3}", f.slope);
            }
            Ok(manifest)
        }
        Command::MlVsHighest(c) => {
            let (res, manifest) = run_ml_vs_highest(&load(&c)?)?;
            if let Some(r) = res.final_row() {
                println!("final cost {}: mse_ml {:.3e}, mse_highest {:.3e}", r.cost, r.mse_ml, r.mse_highest);
            }
            Ok(manifest)
        }
        Command::MlpfCompare(c) => run_mlpf_compare(&load(&c)?).map(|(_, m)| m),
        Command::Plot { common, inputs } => run_plot(&load(&common)?, &inputs),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(manifest) => {
            for f in &manifest.files {
                println!("wrote {f}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
