//! `rdncnn`: train, prune, evaluate and apply residual denoising networks.

mod commands;
mod evaluate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "rdncnn",
    version,
    about = "Residual CNN denoiser with dense-sparse-dense training"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by the training commands.
#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    /// Run configuration file (`key = value` lines).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the configured training noise level (0-255 scale).
    #[arg(long)]
    pub sigma: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Full pipeline: dense, mask, sparse, optional retrain.
    Dsd {
        #[command(flatten)]
        train: TrainArgs,
        /// Output directory (overrides `out_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dense phase only, from a fresh initialization.
    TrainDense {
        #[command(flatten)]
        train: TrainArgs,
        /// Checkpoint to write (default `<out_dir>/netdense.ckpt`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Computes the magnitude mask for a checkpoint and stores it alongside the weights.
    Mask {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        train: TrainArgs,
        /// Checkpoint to write (default `<out_dir>/netmasked.ckpt`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sparse phase on a masked checkpoint.
    TrainSparse {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        train: TrainArgs,
        /// Checkpoint to write (default `<out_dir>/netsparse.ckpt`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Unmasked retraining of a checkpoint.
    RetrainDense {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        train: TrainArgs,
        /// Checkpoint to write (default `<out_dir>/netretrained.ckpt`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Denoises one PGM image.
    Denoise {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Noisy input image, or the clean image when `--sigma` is given.
        input: PathBuf,
        /// Denoised image to write.
        #[arg(long)]
        out: PathBuf,
        /// Clean image to score against.
        #[arg(long, conflicts_with = "sigma")]
        reference: Option<PathBuf>,
        /// Corrupt the input with this noise level first and score against it.
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// PSNR/SSIM before and after denoising for every clean image and noise level.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory of clean PGM images.
        clean_dir: PathBuf,
        /// Noise levels, comma separated or repeated.
        #[arg(long, value_delimiter = ',', num_args = 1.., default_value = "15,25,50")]
        sigma: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated report to write.
        #[arg(long, default_value = "evaluation.csv")]
        out: PathBuf,
    },
    /// Prints the trainable parameter count.
    ParamCount {
        #[arg(long, conflicts_with = "checkpoint")]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Overrides the network depth.
        #[arg(long, conflicts_with = "checkpoint")]
        depth: Option<usize>,
        /// Overrides the filter count.
        #[arg(long, conflicts_with = "checkpoint")]
        filters: Option<usize>,
    },
    /// Writes synthetic grayscale test images as PGM files.
    Synth {
        /// Directory to create the images in.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long, default_value_t = 180)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Finite-difference gradient checks over every op and a tiny network.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Dsd { train, out } => commands::dsd(&train, out),
        Command::TrainDense { train, out } => commands::train_dense(&train, out),
        Command::Mask {
            checkpoint,
            train,
            out,
        } => commands::mask(&checkpoint, &train, out),
        Command::TrainSparse {
            checkpoint,
            train,
            out,
        } => commands::train_sparse(&checkpoint, &train, out),
        Command::RetrainDense {
            checkpoint,
            train,
            out,
        } => commands::retrain_dense(&checkpoint, &train, out),
        Command::Denoise {
            checkpoint,
            input,
            out,
            reference,
            sigma,
            seed,
        } => commands::denoise(&checkpoint, &input, &out, reference.as_deref(), sigma, seed),
        Command::Evaluate {
            checkpoint,
            clean_dir,
            sigma,
            seed,
            out,
        } => evaluate::run(&checkpoint, &clean_dir, &sigma, seed, &out),
        Command::ParamCount {
            config,
            checkpoint,
            depth,
            filters,
        } => commands::param_count(config.as_deref(), checkpoint.as_deref(), depth, filters),
        Command::Synth {
            out,
            count,
            size,
            seed,
        } => commands::synth(&out, count, size, seed),
        Command::Gradcheck { seed } => commands::gradcheck(seed),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
