use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use mgmd::attacks::{Aggregation, AttackTarget};
use mgmd::cli;

#[derive(Parser)]
#[command(
    name = "mgmd",
    about = "Train partitioned GAN ensembles and measure their membership leakage"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a JSON run config and write a checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run membership-inference attacks against a checkpoint.
    Attack {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Attack only this target; default attacks both.
        #[arg(long)]
        target: Option<TargetArg>,
        /// Override the configured discriminator-score aggregation.
        #[arg(long)]
        aggregation: Option<AggregationArg>,
        /// Override the configured attack seed (generator sample pools).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write score distributions and gap metrics for a checkpoint.
    Report {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Fill a method/k/objective comparison grid and emit summary.csv.
    Compare {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum TargetArg {
    Discriminators,
    Generators,
}

#[derive(Clone, Copy, ValueEnum)]
enum AggregationArg {
    Max,
    Mean,
    Own,
}

fn main() -> ExitCode {
    let args = Cli::parse();
    let outcome = match args.command {
        Command::Train { config } => cli::cmd_train(&config).map(|ckpt| {
            println!("wrote {}", ckpt.display());
        }),
        Command::Attack {
            checkpoint,
            target,
            aggregation,
            seed,
        } => {
            let target = target.map(|t| match t {
                TargetArg::Discriminators => AttackTarget::Discriminators,
                TargetArg::Generators => AttackTarget::Generators,
            });
            let aggregation = aggregation.map(|a| match a {
                AggregationArg::Max => Aggregation::Max,
                AggregationArg::Mean => Aggregation::Mean,
                AggregationArg::Own => Aggregation::Own,
            });
            cli::cmd_attack(&checkpoint, target, aggregation, seed).map(|paths| {
                for p in paths {
                    println!("wrote {}", p.display());
                }
            })
        }
        Command::Report { checkpoint } => cli::cmd_report(&checkpoint).map(|paths| {
            for p in paths {
                println!("wrote {}", p.display());
            }
        }),
        Command::Compare { matrix, out } => cli::cmd_compare(&matrix, &out).map(|summary| {
            println!(
                "wrote {} ({} cells trained, {} cached)",
                summary.summary_path.display(),
                summary.cells_trained,
                summary.cells_cached
            );
        }),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
