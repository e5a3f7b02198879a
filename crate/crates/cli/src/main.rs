//! `spqrx` — density regression with a spline bulk and a blended GP upper
//! tail. Subcommands cover the full pipeline: simulate benchmark data,
//! fit, predict, interpret (ALE / variable importance), diagnose fits,
//! benchmark against simulation truths, and bootstrap uncertainty.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error,
//! 4 numerical failure.

mod commands;
mod config;
mod io;

use clap::{Parser, Subcommand};
use commands::PredictTargets;
use spqrx::Error as CoreError;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "spqrx", version, about = "Spline-bulk / GP-tail density regression")]
struct Cli {
    /// Worker threads for internal parallelism (grid cells, bootstrap
    /// replicates, batch rows). Overridden by SPQRX_THREADS.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic benchmark dataset and its truth descriptor.
    Simulate {
        /// Design: lognormal | lomax | bounded-gp
        #[arg(long)]
        design: String,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV (a .truth.json sidecar is written next to it).
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a model (single fit, or a grid search when the config has a
    /// [grid] section).
    Fit {
        /// Training data CSV with header row.
        #[arg(long)]
        data: PathBuf,
        /// TOML run configuration.
        #[arg(long)]
        config: PathBuf,
        /// Output model file (JSON).
        #[arg(long)]
        out: PathBuf,
        /// Optional training log CSV (per epoch, or per grid cell).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Evaluate quantiles / CDF / density at covariate rows.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated quantile levels.
        #[arg(long, default_value = "")]
        quantiles: String,
        /// Evaluate the conditional CDF at this response value.
        #[arg(long)]
        cdf_at: Option<f64>,
        /// Evaluate the conditional density at this response value.
        #[arg(long)]
        density_at: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Accumulated-local-effects profile for one covariate.
    Ale {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// 0-based covariate index.
        #[arg(long)]
        covariate: usize,
        /// Quantile level for the effect function (default median).
        #[arg(long)]
        tau: Option<f64>,
        /// Profile the GP shape instead of a quantile.
        #[arg(long)]
        xi: bool,
        #[arg(long, default_value_t = 40)]
        bins: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Variable-importance table over quantile levels (or the GP shape).
    Vi {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated quantile levels; empty = 0.05..0.95 grid.
        #[arg(long, default_value = "")]
        taus: String,
        /// Score importance for the GP shape instead of quantiles.
        #[arg(long)]
        xi: bool,
        #[arg(long, default_value_t = 40)]
        bins: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// PIT-based diagnostics on a test set: PIT, PP, QQ CSVs + summary.
    Diagnose {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Replicated simulation benchmark producing a summary table.
    Bench {
        /// Comma-separated designs.
        #[arg(long)]
        designs: String,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 10)]
        replicates: usize,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Bootstrap refits with percentile intervals for the shape and an
    /// extreme quantile.
    Bootstrap {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 200)]
        n_boot: usize,
        /// Covariate rows at which to evaluate intervals (default: first
        /// training rows).
        #[arg(long)]
        eval: Option<PathBuf>,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();

    let threads = std::env::var("SPQRX_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .or(cli.threads);
    if let Some(t) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("warning: thread pool already initialized: {e}");
        }
    }

    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(classify(&err))
        }
    }
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Simulate {
            design,
            n,
            seed,
            out,
        } => commands::cmd_simulate(&design, n, seed, &out),
        Command::Fit {
            data,
            config,
            out,
            log,
        } => commands::cmd_fit(&data, &config, &out, log.as_deref()),
        Command::Predict {
            model,
            data,
            quantiles,
            cdf_at,
            density_at,
            out,
        } => {
            let targets = PredictTargets {
                quantiles: commands::parse_float_list(&quantiles)?,
                cdf_at,
                density_at,
            };
            commands::cmd_predict(&model, &data, &targets, &out)
        }
        Command::Ale {
            model,
            data,
            covariate,
            tau,
            xi,
            bins,
            out,
        } => commands::cmd_ale(&model, &data, covariate, tau, xi, bins, &out),
        Command::Vi {
            model,
            data,
            taus,
            xi,
            bins,
            out,
        } => {
            let taus = commands::parse_float_list(&taus)?;
            commands::cmd_vi(&model, &data, &taus, xi, bins, &out)
        }
        Command::Diagnose {
            model,
            data,
            out_dir,
        } => commands::cmd_diagnose(&model, &data, &out_dir),
        Command::Bench {
            designs,
            n,
            replicates,
            config,
            out,
        } => commands::cmd_bench(&designs, n, replicates, &config, &out),
        Command::Bootstrap {
            data,
            config,
            n_boot,
            eval,
            level,
            out,
        } => commands::cmd_bootstrap(&data, &config, n_boot, eval.as_deref(), level, &out),
    }
}

/// Map failures to the documented exit codes.
fn classify(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(core) = cause.downcast_ref::<CoreError>() {
            return match core {
                CoreError::InvalidArgument(_) | CoreError::Persistence(_) => 2,
                CoreError::Data(_) | CoreError::Io(_) => 3,
                CoreError::Numerical(_) => 4,
            };
        }
        if cause.downcast_ref::<toml::de::Error>().is_some() {
            return 2;
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 3;
        }
    }
    let text = format!("{err:#}").to_lowercase();
    if text.contains("config") || text.contains("tau") || text.contains("requires") {
        2
    } else {
        3
    }
}
