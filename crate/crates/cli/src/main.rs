//! Command-line entry point for training, evaluating and inspecting the
//! interleaved restoration network.

mod commands;
mod config;
mod gradcheck_cmd;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::CommonOverrides;
use din_core::Error;

#[derive(Parser)]
#[command(
    name = "din",
    about = "Interleaved multi-branch image restoration: train, evaluate, verify",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Global parallelism bound.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Evaluate a checkpoint on a paired dataset (PSNR/SSIM on the Y channel).
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset root containing hq/ (and optionally lq/).
        #[arg(long)]
        data: PathBuf,
        /// Average predictions over the 8 dihedral transforms.
        #[arg(long)]
        ensemble: bool,
        /// Optional config supplying a [degradation] section for datasets
        /// without an lq/ directory.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Finite-difference verification of every op and composite block.
    Gradcheck {
        /// Run the long version (20 random seeds per primitive).
        #[arg(long)]
        full: bool,
    },
    /// Count trainable parameters for a configuration.
    Params {
        #[arg(long)]
        config: PathBuf,
    },
    /// Count conv multiply-accumulates for a configuration at a given input size.
    Flops {
        #[arg(long)]
        config: PathBuf,
        /// Input height and width.
        #[arg(long, num_args = 2, value_names = ["H", "W"])]
        hw: Vec<usize>,
    },
    /// Apply the configured degradation to every image in a directory.
    Degrade {
        /// Config file with a [degradation] section.
        #[arg(long)]
        config: PathBuf,
        /// Directory of input images (png/ppm/pgm).
        #[arg(long)]
        input: PathBuf,
        /// Output directory for degraded PNGs.
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::InvalidArgument(_) => 1,
        Error::Io(_) | Error::Format(_) | Error::ShapeMismatch { .. } => 2,
        Error::Numerical(_) | Error::Autograd(_) => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train {
            config,
            seed,
            out,
            threads,
        } => commands::cmd_train(&config, CommonOverrides { seed, out, threads }),
        Command::Eval {
            checkpoint,
            data,
            ensemble,
            config,
            out,
            seed,
            threads,
        } => commands::cmd_eval(
            &checkpoint,
            &data,
            ensemble,
            config.as_deref(),
            CommonOverrides { seed, out, threads },
        ),
        Command::Gradcheck { full } => commands::cmd_gradcheck(full),
        Command::Params { config } => commands::cmd_params(&config),
        Command::Flops { config, hw } => {
            if hw.len() != 2 {
                eprintln!("error: --hw takes exactly two values (H W)");
                return ExitCode::from(1);
            }
            commands::cmd_flops(&config, hw[0], hw[1])
        }
        Command::Degrade { config, input, out } => commands::cmd_degrade(&config, &input, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
