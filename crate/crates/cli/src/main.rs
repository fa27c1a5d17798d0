//! Command-line front end for the SMC² engine: run experiments from a JSON
//! config, simulate synthetic datasets, and summarize experiment output.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 bad configuration or
//! arguments, 3 at least one run hit particle degeneracy.

mod config;
mod data;
mod experiment;
mod summary;

use clap::{Parser, Subcommand};
use config::{desk_preset, parse_config, tau_unused_warning, ExperimentConfig, ModelChoice};
use std::path::PathBuf;

const WORKERS_ENV: &str = "SMC2_WORKERS";

#[derive(Parser)]
#[command(name = "smc2", version, about = "SMC^2 particle inference engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config (or a named preset).
    Run {
        /// Path to the experiment config (JSON).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Built-in preset instead of a config file (available: "desk").
        #[arg(long, conflicts_with = "config")]
        preset: Option<String>,
        /// Override the config's seed list, e.g. --seeds 1,2,3.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Output directory for traces, figure tables, and the manifest.
        #[arg(long, default_value = "smc2-out")]
        out: PathBuf,
    },
    /// Simulate a synthetic observation series and write it as CSV.
    Simulate {
        #[arg(long)]
        model: ModelChoice,
        /// Final time index; time runs 0..=T, so the series has T+1 rows.
        #[arg(long = "T", default_value_t = 100)]
        t_max: usize,
        /// Model parameters, e.g. --theta -0.2,0.95,0.1 (defaults per model).
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        theta: Option<Vec<f64>>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// State noise scale (linear-Gaussian model only).
        #[arg(long)]
        sigma_x: Option<f64>,
        /// Observation noise scale (linear-Gaussian model only).
        #[arg(long)]
        sigma_y: Option<f64>,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Digest an experiment directory into per-variant medians and IQRs.
    Summarize {
        /// Experiment output directory (holding the figure tables).
        #[arg(long = "in")]
        input: PathBuf,
        /// Write the JSON summary here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() {
    init_worker_pool();
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run { config, preset, seeds, out } => cmd_run(config, preset, seeds, &out),
        Command::Simulate { model, t_max, theta, seed, sigma_x, sigma_y, out } => {
            cmd_simulate(model, t_max, theta, seed, sigma_x, sigma_y, &out)
        }
        Command::Summarize { input, out } => cmd_summarize(&input, out.as_deref()),
    };
    std::process::exit(code);
}

/// Honors `SMC2_WORKERS` for the global worker pool; silently keeps the
/// default when unset.
fn init_worker_pool() {
    let Ok(raw) = std::env::var(WORKERS_ENV) else { return };
    match raw.parse::<usize>() {
        Ok(n) if n >= 1 => {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                eprintln!("warning: cannot apply {WORKERS_ENV}={n}: {e}");
            }
        }
        _ => eprintln!("warning: ignoring {WORKERS_ENV}={raw:?} (want a positive integer)"),
    }
}

fn fail(code: i32, err: &anyhow::Error) -> i32 {
    eprintln!("error: {err:#}");
    code
}

fn cmd_run(
    config_path: Option<PathBuf>,
    preset: Option<String>,
    seeds: Option<Vec<u64>>,
    out: &std::path::Path,
) -> i32 {
    // Configuration stage: any failure here is exit 2.
    let mut config = match (&config_path, preset.as_deref()) {
        (Some(path), None) => match parse_config(path) {
            Ok(config) => {
                if let Ok(text) = std::fs::read_to_string(path) {
                    if let Some(warning) = tau_unused_warning(&text, &config) {
                        eprintln!("warning: {warning}");
                    }
                }
                config
            }
            Err(e) => return fail(2, &e),
        },
        (None, Some("desk")) => desk_preset(),
        (None, Some(other)) => {
            eprintln!("error: unknown preset {other:?} (available: \"desk\")");
            return 2;
        }
        (None, None) => {
            eprintln!("error: provide --config <path> or --preset desk");
            return 2;
        }
        (Some(_), Some(_)) => unreachable!("clap rejects --config with --preset"),
    };
    if let Some(seeds) = seeds {
        config.seeds = seeds;
    }
    if let Err(e) = config.validate() {
        return fail(2, &e);
    }
    let data = match config.resolve_dataset() {
        Ok(data) => data,
        Err(e) => return fail(2, &e),
    };

    // Execution stage.
    let outcome = match experiment::run_experiment(&config, &data, out) {
        Ok(outcome) => outcome,
        Err(e) => return fail(1, &e),
    };
    let total = outcome.manifest.runs.len();
    let ok = total - outcome.degenerate - outcome.errored;
    println!(
        "{total} runs ({ok} ok, {} degenerate, {} errored) -> {}",
        outcome.degenerate,
        outcome.errored,
        out.join("manifest.json").display()
    );
    for run in &outcome.manifest.runs {
        if run.status != "ok" {
            eprintln!("run {} seed {}: {}", run.label, run.seed, run.status);
        }
    }
    if outcome.degenerate > 0 {
        3
    } else if outcome.errored > 0 {
        1
    } else {
        0
    }
}

fn cmd_simulate(
    model: ModelChoice,
    t_max: usize,
    theta: Option<Vec<f64>>,
    seed: u64,
    sigma_x: Option<f64>,
    sigma_y: Option<f64>,
    out: &std::path::Path,
) -> i32 {
    if model == ModelChoice::Sv && (sigma_x.is_some() || sigma_y.is_some()) {
        eprintln!("error: --sigma-x/--sigma-y only apply to the linear-Gaussian model");
        return 2;
    }
    let mut config = ExperimentConfig {
        model,
        simulate: config::SimulateBlock { t_max, theta, seed },
        ..ExperimentConfig::default()
    };
    if let Some(s) = sigma_x {
        config.lgssm.sigma_x = s;
    }
    if let Some(s) = sigma_y {
        config.lgssm.sigma_y = s;
    }
    if let Err(e) = config.validate() {
        return fail(2, &e);
    }
    let data = match config.resolve_dataset() {
        Ok(data) => data,
        Err(e) => return fail(2, &e),
    };
    let mut csv = String::from("y\n");
    for &y in data.obs() {
        csv.push_str(&format!("{y}\n"));
    }
    if let Err(e) = std::fs::write(out, csv) {
        eprintln!("error: cannot write {}: {e}", out.display());
        return 1;
    }
    println!("wrote {} ({} observations)", out.display(), data.len());
    0
}

fn cmd_summarize(input: &std::path::Path, out: Option<&std::path::Path>) -> i32 {
    let summary = match summary::summarize_dir(input) {
        Ok(summary) => summary,
        Err(e) => return fail(2, &e),
    };
    let json = match serde_json::to_string_pretty(&summary) {
        Ok(json) => json + "\n",
        Err(e) => return fail(1, &anyhow::Error::new(e)),
    };
    match out {
        Some(path) => {
            if let Err(e) = std::fs::write(path, &json) {
                eprintln!("error: cannot write {}: {e}", path.display());
                return 1;
            }
            println!("wrote {}", path.display());
        }
        None => print!("{json}"),
    }
    0
}
