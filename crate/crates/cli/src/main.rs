use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use nmrl::config::{resolve_output, RunConfig};
use nmrl::experiment::{self, default_results_dir, ExperimentError, TestOptions};

/// Meta-train, meta-test and analyse neuromodulated policy networks.
///
/// Relative output paths resolve against $NMRL_OUTPUT_ROOT when it is set.
#[derive(Parser)]
#[command(name = "nmrl", version)]
struct Cli {
    /// Rollout threads (results do not depend on this).
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Meta-train from a run config.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Meta-test a checkpoint: mean return after 0..=steps inner steps.
    Test {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        tasks: Option<usize>,
        /// Directory for the result tables (default: next to the checkpoint).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Task × task CKA tables for every hidden layer and inner step.
    Analyze {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// SPN vs NPN vs a standard network widened to the NPN's parameter count.
    ///
    /// Each of --spn and --npn is a run config (trained first) or a checkpoint.
    Compare {
        #[arg(long)]
        spn: PathBuf,
        #[arg(long)]
        npn: PathBuf,
        #[arg(long, default_value = "compare")]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), ExperimentError> {
    let workers = cli.workers;
    match cli.command {
        Command::Train { config } => {
            let config = RunConfig::load(&config)?;
            let s = experiment::train(&config, workers)?;
            println!(
                "best iteration {} (post-adaptation return {:.4})",
                s.best_iteration, s.best_post_return
            );
            println!("wrote {}", s.output_dir.display());
        }
        Command::Test {
            checkpoint,
            steps,
            tasks,
            out,
        } => {
            let out = out.map_or_else(|| default_results_dir(&checkpoint), |p| resolve_output(&p));
            let options = TestOptions {
                steps,
                tasks,
                workers,
            };
            let result = experiment::test(&checkpoint, options, &out)?;
            print!("{}", experiment::curve_csv(&result));
        }
        Command::Analyze { checkpoint, out } => {
            let out = out.map_or_else(|| default_results_dir(&checkpoint), |p| resolve_output(&p));
            let matrices = experiment::analyze(&checkpoint, &out, workers)?;
            println!("layer,step,dissimilarity");
            for (m, d) in matrices.iter().zip(nmrl::analysis::dissimilarity_summary(&matrices)) {
                println!("{},{},{d:.6}", m.layer, m.grad_step);
            }
        }
        Command::Compare { spn, npn, out } => {
            let rows = experiment::compare(&spn, &npn, &resolve_output(&out), workers)?;
            print!("{}", experiment::compare_csv(&rows));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
