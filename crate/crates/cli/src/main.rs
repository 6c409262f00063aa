//! `sevenleague`: data generation, training, simulation, pricing and
//! studies driven by JSON run configs.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 config error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sevenleague::harness::SchemeId;

use commands::Ctx;
use config::ConfigError;

#[derive(Parser)]
#[command(name = "sevenleague", version, about = "Large-time-step SDE simulation with learned collocation points")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    global: Global,
}

#[derive(Args)]
struct Global {
    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Print the plan without writing anything.
    #[arg(long, global = true)]
    dry_run: bool,
    /// Directory for outputs and relative inputs.
    #[arg(long, global = true, env = "SEVENLEAGUE_OUT_DIR", default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labelled training dataset.
    GenData { config: PathBuf },
    /// Train a surrogate on a dataset.
    Train { config: PathBuf },
    /// Simulate a path ensemble.
    Simulate { config: PathBuf },
    /// Build a CDC matrix.
    BuildCdc { config: PathBuf },
    /// Price an Asian or Bermudan option.
    Price { config: PathBuf },
    /// Convergence or timing study.
    Study {
        config: PathBuf,
        /// Comma-separated scheme list replacing the config's.
        #[arg(long, value_delimiter = ',')]
        schemes: Option<Vec<SchemeId>>,
    },
    /// Kolmogorov-Smirnov statistics over time against exact samples.
    Ks {
        config: PathBuf,
        #[arg(long, value_delimiter = ',')]
        schemes: Option<Vec<SchemeId>>,
    },
}

impl Command {
    fn config(&self) -> &PathBuf {
        match self {
            Command::GenData { config }
            | Command::Train { config }
            | Command::Simulate { config }
            | Command::BuildCdc { config }
            | Command::Price { config }
            | Command::Study { config, .. }
            | Command::Ks { config, .. } => config,
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let config = config::load(cli.command.config())?;
    if let Some(n) = cli.global.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global()?;
    }
    std::fs::create_dir_all(&cli.global.out_dir)?;
    let ctx = Ctx {
        seed: cli.global.seed.unwrap_or(config.seed),
        out_dir: cli.global.out_dir,
        dry_run: cli.global.dry_run,
        config,
    };
    match cli.command {
        Command::GenData { .. } => commands::gen_data(&ctx),
        Command::Train { .. } => commands::train(&ctx),
        Command::Simulate { .. } => commands::simulate(&ctx),
        Command::BuildCdc { .. } => commands::build_cdc(&ctx),
        Command::Price { .. } => commands::price(&ctx),
        Command::Study { schemes, .. } => commands::study(&ctx, schemes),
        Command::Ks { schemes, .. } => commands::ks(&ctx, schemes),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if let Some(c) = e.downcast_ref::<ConfigError>() {
                eprintln!("config error: {c}");
                ExitCode::from(2)
            } else {
                eprintln!("error: {e:#}");
                ExitCode::from(1)
            }
        }
    }
}
