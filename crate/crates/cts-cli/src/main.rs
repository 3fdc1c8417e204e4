//! `cts` command line: build summaries, sketch them, run inference,
//! train a perceptual model, and verify the error bounds.

mod artifacts;
mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cts_core::Error;

#[derive(Parser)]
#[command(name = "cts", version, about = "Tensor-sketched program summaries: build, sketch, infer, train, verify")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct TaskArg {
    /// Task configuration (JSON).
    #[arg(long)]
    task: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Enumerate summary tensors for every distinct sub-program of a task.
    Build {
        #[command(flatten)]
        task: TaskArg,
        /// Output directory for CTS1 summaries plus the build manifest.
        #[arg(long)]
        out: PathBuf,
    },
    /// Sketch previously built summaries with tensor-train SVD.
    Sketch {
        /// Directory holding a build manifest and its CTS1 summaries.
        #[arg(long)]
        summaries: PathBuf,
        /// Bond rank: a positive integer or "full".
        #[arg(long, default_value = "full")]
        rank: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Forward inference on explicit leaf distributions (JSON in/out).
    Infer {
        #[command(flatten)]
        task: TaskArg,
        /// Directory holding sketches (from `cts sketch`).
        #[arg(long)]
        sketches: PathBuf,
        /// Leaf distributions file (JSON).
        #[arg(long)]
        leaves: PathBuf,
        /// Override the task's RBF width.
        #[arg(long)]
        sigma: Option<f64>,
    },
    /// Weak-supervision training on synthetic perceptual features.
    Train {
        #[command(flatten)]
        task: TaskArg,
        #[arg(long)]
        sketches: PathBuf,
        #[arg(long, default_value_t = 50)]
        epochs: usize,
        #[arg(long, default_value_t = 16)]
        batch_size: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        /// "l1" or "ce".
        #[arg(long, default_value = "l1")]
        loss: String,
        /// Optimizer/shuffle seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Synthetic dataset seed.
        #[arg(long, default_value_t = 0)]
        data_seed: u64,
        #[arg(long, default_value_t = 2000)]
        train_count: usize,
        #[arg(long, default_value_t = 500)]
        test_count: usize,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Bound checks and gradient checks over sketched artifacts.
    Verify {
        #[command(flatten)]
        task: TaskArg,
        #[arg(long)]
        sketches: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Io(_) | Error::Format(_) => 3,
        Error::Verification(_) => 4,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Build { task, out } => commands::build(&task.task, &out),
        Command::Sketch { summaries, rank, seed, out } => {
            commands::sketch(&summaries, &rank, seed, &out)
        }
        Command::Infer { task, sketches, leaves, sigma } => {
            commands::infer(&task.task, &sketches, &leaves, sigma)
        }
        Command::Train {
            task,
            sketches,
            epochs,
            batch_size,
            lr,
            loss,
            seed,
            data_seed,
            train_count,
            test_count,
            sigma,
            out,
        } => commands::train(commands::TrainArgs {
            task: task.task,
            sketches,
            epochs,
            batch_size,
            lr,
            loss,
            seed,
            data_seed,
            train_count,
            test_count,
            sigma,
            out,
        }),
        Command::Verify { task, sketches, seed } => commands::verify(&task.task, &sketches, seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
