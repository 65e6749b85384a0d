use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use clobs::harness::{self, preset, RunConfig};

#[derive(Parser)]
#[command(name = "clobs", version, about = "Concurrent-learning observer simulations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one run and write its outputs.
    Run {
        /// Named parameter set: noise-free, noise-1e-3 or noise-1e-2.
        #[arg(long, conflicts_with = "config", required_unless_present = "config")]
        preset: Option<String>,
        /// JSON run configuration.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Simulated time in seconds.
        #[arg(long)]
        duration: Option<f64>,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one preset over several seeds in parallel.
    Sweep {
        #[arg(long)]
        preset: String,
        /// Number of seeds, starting at 0.
        #[arg(long)]
        seeds: u64,
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the acceptance checks and report each one.
    Verify,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::Run {
            preset: name,
            config,
            seed,
            duration,
            out,
        } => {
            let mut cfg = match (name, config) {
                (Some(name), _) => preset(&name)?,
                (None, Some(path)) => RunConfig::load(&path)?,
                (None, None) => bail!("either --preset or --config is required"),
            };
            if let Some(seed) = seed {
                cfg.noise.seed = seed;
            }
            if let Some(duration) = duration {
                cfg.duration = duration;
            }
            if let Some(out) = out {
                cfg.output_dir = out;
            }
            cfg.validate()?;
            log::info!("running for {} s, writing to {}", cfg.duration, cfg.output_dir.display());
            let output = harness::run(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&output.summary)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep {
            preset: name,
            seeds,
            duration,
            out,
        } => {
            let mut cfg = preset(&name)?;
            if let Some(duration) = duration {
                cfg.duration = duration;
            }
            let root = out.unwrap_or_else(|| cfg.output_dir.clone());
            cfg.validate()?;
            let seeds: Vec<u64> = (0..seeds).collect();
            let results = harness::sweep(&cfg, &seeds);
            let mut summaries = Vec::new();
            for (seed, result) in seeds.iter().zip(results) {
                let output = result.with_context(|| format!("seed {seed}"))?;
                harness::sim::write_run(&output, &root.join(format!("seed-{seed}")))?;
                summaries.push(output.summary);
            }
            let mut rms: Vec<f64> = summaries.iter().map(|s| s.theta_rms_steady).collect();
            rms.sort_by(f64::total_cmp);
            let median = rms.get(rms.len() / 2).copied();
            let report = serde_json::json!({
                "preset": name,
                "median_theta_rms_steady": median,
                "runs": summaries,
            });
            harness::output::write_json(&report, &root.join("sweep_summary.json"))?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify => {
            let reports = clobs::acceptance::run_all()?;
            for r in &reports {
                println!("{r}");
            }
            Ok(if reports.iter().all(|r| r.passed) {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
    }
}
