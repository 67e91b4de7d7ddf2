use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand};
use ebp_cli::{read_text, usage, CliError};
use ebp_core::{DepotConfig, DepotServer, SystemClock};

#[derive(Debug, Parser)]
#[command(name = "ebp-depot", version, about = "Run an exposed buffer depot")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Serve the depot protocol until killed.
    Serve {
        /// Depot configuration file (`key = value` lines).
        #[arg(long)]
        config: PathBuf,

        /// Seconds between expiry sweeps.
        #[arg(long, default_value_t = 1)]
        sweep_interval: u64,
    },
}

fn serve(config: &Path, sweep_interval: u64) -> Result<(), CliError> {
    let cfg = DepotConfig::parse(&read_text(config)?).map_err(|e| usage(format!("{}: {e}", config.display())))?;
    if sweep_interval == 0 {
        return Err(usage("--sweep-interval must be positive"));
    }
    let _server = DepotServer::start(cfg, Arc::new(SystemClock))?.with_sweeper(Duration::from_secs(sweep_interval));
    loop {
        std::thread::park();
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Serve { config, sweep_interval } => serve(config, *sweep_interval),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => e.report("ebp-depot"),
    }
}
