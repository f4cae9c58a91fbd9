use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod config;
mod output;
mod viz;

#[derive(Parser)]
#[command(name = "diffeo", version, about = "Diffeomorphic registration and atlas estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
pub struct ConfigArgs {
    /// `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set sigma_g=3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic images.
    GenData {
        #[arg(value_enum)]
        kind: DataKind,
        #[arg(long)]
        out: PathBuf,
        /// Side of the toy images.
        #[arg(long, default_value_t = diffeo_core::datasets::DEFAULT_TOY_SIDE)]
        side: usize,
        /// Number of population images.
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Population image shape, e.g. `32x32`.
        #[arg(long, default_value = "32x32")]
        shape: String,
        #[arg(long, default_value_t = 1.0)]
        deform_scale: f64,
    },
    /// Register a source image onto a target image.
    Register {
        source: Option<PathBuf>,
        target: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Region of interest as `min:max`, e.g. `10,24:16,32`.
        #[arg(long)]
        roi: Option<String>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Estimate a template from every image in a directory.
    Atlas {
        image_dir: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Ground-truth image to compare the template against.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Toy-squares registration sweeps, written as CSV.
    Sweep {
        #[arg(value_enum)]
        scenario: Scenario,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = diffeo_core::datasets::DEFAULT_TOY_SIDE)]
        side: usize,
        /// Kernel widths of the kernel sweep.
        #[arg(long, value_delimiter = ',', default_values_t = diffeo_core::experiments::TOY_KERNEL_WIDTHS)]
        sigmas: Vec<f64>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Haar transform of an image, or a round-trip self-test.
    Wavelet {
        #[command(subcommand)]
        action: WaveletAction,
    },
    /// Compare two images.
    Metrics {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        roi: Option<String>,
        /// Sampling map (RAWF of shape `grid x d`) for Jacobian statistics.
        #[arg(long)]
        map: Option<PathBuf>,
        /// Residual before registration, for the relative residual.
        #[arg(long)]
        initial_residual: Option<f64>,
        /// Write the report here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum WaveletAction {
    /// Round trips and energy checks on random arrays.
    SelfTest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 40)]
        cases: usize,
    },
    /// Forward transform, optional silencing, and reconstruction.
    Transform {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Zero detail coefficients finer than this scale.
        #[arg(long)]
        keep_from: Option<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
pub enum DataKind {
    Toy,
    Blobs,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Scenario {
    ToyS0Sweep,
    ToyKernelSweep,
}

fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("DIFFEO_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .with_context(|| format!("DIFFEO_THREADS must be a positive integer, got {v:?}"))?;
    if n == 0 {
        bail!("DIFFEO_THREADS must be a positive integer, got 0");
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("configuring the worker pool")?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    match cli.command {
        Command::GenData {
            kind,
            out,
            side,
            n,
            seed,
            shape,
            deform_scale,
        } => commands::gen_data(kind, &out, side, n, seed, &shape, deform_scale),
        Command::Register {
            source,
            target,
            out,
            roi,
            cfg,
        } => commands::register(source, target, out, roi.as_deref(), &cfg),
        Command::Atlas {
            image_dir,
            out,
            reference,
            cfg,
        } => commands::atlas(image_dir, out, reference.as_deref(), &cfg),
        Command::Sweep {
            scenario,
            out,
            side,
            sigmas,
            cfg,
        } => commands::sweep(scenario, &out, side, &sigmas, &cfg),
        Command::Wavelet { action } => match action {
            WaveletAction::SelfTest { seed, cases } => commands::wavelet_self_test(seed, cases),
            WaveletAction::Transform { input, out, keep_from } => {
                commands::wavelet_transform(&input, &out, keep_from)
            }
        },
        Command::Metrics {
            a,
            b,
            roi,
            map,
            initial_residual,
            out,
        } => commands::metrics(&a, &b, roi.as_deref(), map.as_deref(), initial_residual, out.as_deref()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
