mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::Loaded;
use crate::error::{CliError, Result};

/// Integrated species distribution models on triangulated domains.
#[derive(Parser)]
#[command(name = "isdm", version)]
struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Log verbosity; repeat for more.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build (or load from cache) the mesh and check its area.
    Mesh { config: PathBuf },
    /// Simulate datasets and write them with a truth file.
    Simulate { config: PathBuf },
    /// Fit the model and write a JSON summary.
    Fit {
        config: PathBuf,
        /// Substituted for `{data_dir}` in dataset paths (default `<out_dir>/sim`).
        #[arg(long)]
        data_dir: Option<PathBuf>,
        /// Summary path (default `<out_dir>/fit.json`).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Write a prediction grid CSV from a fit summary.
    Predict {
        config: PathBuf,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        /// Fit summary (default `<out_dir>/fit.json`).
        #[arg(long)]
        fit: Option<PathBuf>,
        /// Grid path (default `<out_dir>/grid.csv`).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Compare fit summaries with simulation truth.
    Score {
        /// Directories holding `truth.json` and `fit.json`.
        dirs: Vec<PathBuf>,
        #[arg(long, requires = "fit")]
        truth: Option<PathBuf>,
        #[arg(long, requires = "truth")]
        fit: Option<PathBuf>,
        /// Comma-separated parameter names (default: every parameter with a standard error entry).
        #[arg(long, value_delimiter = ',')]
        params: Option<Vec<String>>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Check the configuration and datasets without fitting.
    Validate {
        config: PathBuf,
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    }
    let data_dir =
        |l: &Loaded, d: Option<PathBuf>| d.unwrap_or_else(|| commands::default_data_dir(l));
    match cli.command {
        Command::Mesh { config } => commands::cmd_mesh(&Loaded::read(&config)?),
        Command::Simulate { config } => commands::cmd_simulate(&Loaded::read(&config)?),
        Command::Fit {
            config,
            data_dir: d,
            output,
        } => {
            let l = Loaded::read(&config)?;
            commands::cmd_fit(&l, &data_dir(&l, d), output.as_deref()).map(|_| ())
        }
        Command::Predict {
            config,
            data_dir: d,
            fit,
            output,
        } => {
            let l = Loaded::read(&config)?;
            commands::cmd_predict(&l, &data_dir(&l, d), fit.as_deref(), output.as_deref())
        }
        Command::Score {
            dirs,
            truth,
            fit,
            params,
            output,
        } => {
            let mut pairs: Vec<(PathBuf, PathBuf)> = dirs
                .iter()
                .map(|d| (d.join("truth.json"), d.join("fit.json")))
                .collect();
            if let (Some(t), Some(f)) = (truth, fit) {
                pairs.push((t, f));
            }
            let report = commands::cmd_score(&pairs, params)?;
            commands::write_score(&report, output.as_deref())
        }
        Command::Validate {
            config,
            data_dir: d,
        } => {
            let l = Loaded::read(&config)?;
            commands::cmd_validate(&l, &data_dir(&l, d))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(2);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => e.report(),
    }
}
