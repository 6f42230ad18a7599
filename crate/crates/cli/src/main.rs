//! Command-line front end: run convergence experiments, recompute order
//! tables, probe single cell problems and inspect sweep meshes.

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use glocal::harness::{self, ExperimentConfig, RunOptions};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "glocal", version, about = "Concurrent global-local multiscale parabolic solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration (JSON).
    config: PathBuf,
    /// Output directory for results.csv, plots and caches.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Emit a log-log convergence plot (convergence.svg).
    #[arg(long)]
    plots: bool,
    /// Worker threads; 1 is the bit-exact reference mode.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Dump per-step nodal trajectories of each level solve.
    #[arg(long)]
    dump: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run the sweep described by a config and write results.csv.
    Run(RunArgs),
    /// Recompute the order columns of a results.csv.
    Orders {
        /// A results.csv produced by `run`.
        csv: PathBuf,
    },
    /// Solve one HMM cell problem at a point and compare with the analytic
    /// effective tensor when available.
    Cellprobe {
        config: PathBuf,
        /// Cell center.
        #[arg(long, num_args = 2, value_names = ["X", "Y"])]
        at: Vec<f64>,
    },
    /// Print mesh statistics for one sweep level.
    MeshInfo {
        config: PathBuf,
        /// Sweep level index (0-based).
        #[arg(long, default_value_t = 0)]
        level: usize,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run() {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn load_config(path: &PathBuf) -> anyhow::Result<ExperimentConfig> {
    ExperimentConfig::from_json_file(path)
        .with_context(|| format!("loading config {}", path.display()))
}

fn run() -> anyhow::Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => {
            let config = load_config(&args.config)?;
            let opts = RunOptions {
                out_dir: Some(args.out.clone()),
                threads: args.threads,
                plots: args.plots,
                dump: args.dump,
            };
            let report = harness::run_experiment(&config, &opts)?;
            print!("{}", report.to_csv_string());
            eprintln!("wrote {}", args.out.join("results.csv").display());
            for row in &report.rows {
                if let Some(reason) = &row.failure {
                    eprintln!("level {} (param {}) failed: {reason}", row.level, row.param);
                }
            }
            if report.all_ok() {
                Ok(ExitCode::SUCCESS)
            } else {
                Ok(ExitCode::FAILURE)
            }
        }
        Command::Orders { csv } => {
            let table = harness::recompute_orders_from_csv(&csv)?;
            print!("{table}");
            Ok(ExitCode::SUCCESS)
        }
        Command::Cellprobe { config, at } => {
            let config = load_config(&config)?;
            let probe = harness::cell_probe(&config, [at[0], at[1]])?;
            let t = probe.tensor;
            println!("A_H({}, {}) =", at[0], at[1]);
            println!("  [{:+.8e}  {:+.8e}]", t.a11, t.a12);
            println!("  [{:+.8e}  {:+.8e}]", t.a12, t.a22);
            if let (Some(a), Some(dev)) = (probe.analytic, probe.relative_deviation) {
                println!("analytic A =");
                println!("  [{:+.8e}  {:+.8e}]", a.a11, a.a12);
                println!("  [{:+.8e}  {:+.8e}]", a.a12, a.a22);
                println!("relative deviation (spectral) = {dev:.4e}");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::MeshInfo { config, level } => {
            let config = load_config(&config)?;
            print!("{}", harness::mesh_info(&config, level)?);
            Ok(ExitCode::SUCCESS)
        }
    }
}
