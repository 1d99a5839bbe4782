//! Command-line front end. All logic lives in the library's harness
//! module; this file only parses arguments and forwards them.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use blendfl::harness;

#[derive(Parser)]
#[command(
    name = "blendfl",
    version,
    about = "Federated learning simulator for clients holding paired, partial, or fragmented multimodal data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the configured protocol once per seed; writes rounds.jsonl,
    /// checkpoints, and summary.csv.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep the paired/partial mix and the fleet size; writes grid.csv.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Mix cells as PAIRED/PARTIAL percentages, e.g. 90/10. Omit the
        /// flag for the default five cells; pass it empty to disable the
        /// mix sweep.
        #[arg(long, num_args = 0.., value_name = "P/Q")]
        ratios: Option<Vec<String>>,
        /// Fleet-size cells; same default/disable rules as --ratios.
        #[arg(long, num_args = 0..)]
        clients: Option<Vec<usize>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Race the two aggregation rules to a validation target at several
    /// update intervals; writes speedup.csv.
    Speedup {
        #[arg(long)]
        config: PathBuf,
        /// Local epochs between consecutive aggregations.
        #[arg(long, num_args = 1.., default_values_t = [1usize, 2, 4, 6])]
        intervals: Vec<usize>,
        /// Validation score both arms race to; must lie in (0.5, 1.0).
        #[arg(long, default_value_t = 0.98)]
        target: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Label a sample file with a trained checkpoint, no server involved.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        samples: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run { config, out } => harness::cmd_run(&config, out.as_deref()),
        Command::Ablate {
            config,
            ratios,
            clients,
            out,
        } => harness::cmd_ablate(&config, ratios.as_deref(), clients.as_deref(), out.as_deref()),
        Command::Speedup {
            config,
            intervals,
            target,
            out,
        } => harness::cmd_speedup(&config, &intervals, target, out.as_deref()),
        Command::Infer {
            checkpoint,
            samples,
        } => harness::cmd_infer(&checkpoint, &samples),
    };
    std::process::exit(code);
}
