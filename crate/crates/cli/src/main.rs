use alseg_cli::commands;
use clap::{Parser, Subcommand};
use std::path::PathBuf;

/// Active-learning segmentation experiments on synthetic tasks.
#[derive(Parser)]
#[command(name = "alseg", version, about)]
struct Cli {
    /// Suppress progress output.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory (tensor files + manifest).
    Generate {
        /// Config file; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a full active-learning experiment.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for metrics.csv, manifest.json, model.ckpt.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config strategy (e.g. RAND, UNC, UNC-ID, UNC+ECD).
        #[arg(long)]
        strategy: Option<String>,
    },
    /// Score a stored dataset with a checkpointed model.
    Score {
        /// Model checkpoint written by `run`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset directory written by `generate`.
        #[arg(long)]
        dataset: PathBuf,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Derive MC seeds as the run driver does at this stage.
        #[arg(long, default_value_t = 1)]
        stage: u64,
    },
    /// Compare run directories with one-sided paired t-tests on mean Dice.
    Compare {
        /// Run directories (each holding a metrics.csv).
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Output CSV path for the comparison report.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate { config, out, seed } => {
            commands::cmd_generate(config.as_deref(), out, *seed, cli.quiet)
        }
        Command::Run { config, out, seed, strategy } => commands::cmd_run(
            config.as_deref(),
            out,
            *seed,
            strategy.as_deref(),
            cli.quiet,
        )
        .map(|_| ()),
        Command::Score { checkpoint, dataset, out, config, seed, stage } => commands::cmd_score(
            checkpoint,
            dataset,
            out,
            config.as_deref(),
            *seed,
            *stage,
            cli.quiet,
        ),
        Command::Compare { runs, out } => {
            let dirs: Vec<&std::path::Path> = runs.iter().map(|p| p.as_path()).collect();
            commands::cmd_compare(&dirs, out, cli.quiet)
        }
    };
    if let Err(e) = result {
        eprintln!("{}", e);
        std::process::exit(e.exit_code());
    }
}
