use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use linchain::experiments::runner::{
    run_compare, run_gradcheck, run_paramcount, run_train, RunnerOptions, EXIT_USAGE,
};

/// Adapter fine-tuning experiments: gradient checks, parameter counts,
/// training runs, and cross-method comparisons, all driven by one TOML
/// config file per experiment.
#[derive(Parser)]
#[command(name = "linchain", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment config file (TOML).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Output root; overrides the config file and LINCHAIN_OUTPUT_DIR.
    #[arg(long, global = true, value_name = "DIR")]
    output_dir: Option<PathBuf>,

    /// Replace the config's seed list with this single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Suppress progress output (warnings still go to stderr).
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Check analytic gradients against the finite-difference oracle.
    Gradcheck,
    /// Report trainable-parameter counts and chain overhead.
    Paramcount,
    /// Train one adapter; writes trace.csv and a checkpoint.
    Train,
    /// Train several adapters on identical data and compare them.
    Compare,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let Some(config_path) = cli.config else {
        eprintln!("error: --config <FILE> is required");
        return ExitCode::from(EXIT_USAGE as u8);
    };
    let opts = RunnerOptions {
        config_path,
        output_dir: cli.output_dir,
        seed: cli.seed,
        quiet: cli.quiet,
    };
    let result = match cli.command {
        Command::Gradcheck => run_gradcheck(&opts),
        Command::Paramcount => run_paramcount(&opts),
        Command::Train => run_train(&opts),
        Command::Compare => run_compare(&opts),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_USAGE as u8)
        }
    }
}
