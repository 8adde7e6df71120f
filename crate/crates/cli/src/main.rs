//! `despeckler`: dataset synthesis, training, inference, and evaluation for
//! transformer-based SAR despeckling.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

mod cmd_despeckle;
mod cmd_evaluate;
mod cmd_info;
mod cmd_simulate;
mod cmd_train;
mod config;

use clap::error::ErrorKind as ClapErrorKind;
use clap::{Parser, Subcommand};
use despeckler_core::ErrorKind;

#[derive(Parser)]
#[command(
    name = "despeckler",
    about = "Transformer-based SAR image despeckling pipeline",
    version,
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a (clean, speckled) training dataset from a grayscale corpus
    Simulate(cmd_simulate::SimulateArgs),
    /// Train the despeckling network on a simulated dataset
    Train(cmd_train::TrainArgs),
    /// Despeckle images with a trained checkpoint
    Despeckle(cmd_despeckle::DespeckleArgs),
    /// Evaluate despeckling quality (paired PSNR/SSIM or region ENL/Cx)
    Evaluate(cmd_evaluate::EvaluateArgs),
    /// Inspect checkpoints, manifests, and tensor files
    Info(cmd_info::InfoArgs),
}

fn init_thread_pool() {
    if let Ok(v) = std::env::var("DESPECKLER_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n >= 1 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => eprintln!("warning: ignoring DESPECKLER_THREADS={v} (want a positive integer)"),
        }
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version are successful outcomes; everything else is
            // a usage error.
            let code = match e.kind() {
                ClapErrorKind::DisplayHelp | ClapErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    init_thread_pool();
    let result = match cli.command {
        Command::Simulate(args) => cmd_simulate::run(args),
        Command::Train(args) => cmd_train::run(args),
        Command::Despeckle(args) => cmd_despeckle::run(args),
        Command::Evaluate(args) => cmd_evaluate::run(args),
        Command::Info(args) => cmd_info::run(args),
    };
    match result {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e.kind() {
                ErrorKind::Usage => 1,
                ErrorKind::Data => 2,
                ErrorKind::Numeric => 3,
            };
            std::process::exit(code);
        }
    }
}
