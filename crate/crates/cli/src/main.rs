//! `dnorm`: generate toy data, train the two networks, sample normals,
//! evaluate them and integrate them into depth.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 i/o or format
//! error, 4 numeric failure, 5 integration did not converge.

mod commands;
mod dataset;
mod error;
mod settings;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "dnorm", version, about = "Low-variance diffusion normal estimation on synthetic scenes")]
#[command(arg_required_else_help = true)]
pub struct Cli {
    /// `key = value` file applied over the defaults; explicit flags win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write synthetic train and test scenes.
    GenData(GenDataArgs),
    /// Train the one-shot initialiser.
    TrainYoso(TrainYosoArgs),
    /// Train the clean-sample refiner.
    TrainRefiner(TrainRefinerArgs),
    /// Predict a normal map with the two-stage sampler.
    Infer(InferArgs),
    /// Angular error of a predicted normal map.
    Evaluate(EvaluateArgs),
    /// Output variance over repeated runs, two-stage against the full chain.
    Variance(VarianceArgs),
    /// Integrate a normal map into depth.
    Integrate(IntegrateArgs),
    /// Sample a 1-D two-mode mixture with its exact denoiser.
    OracleDemo(OracleDemoArgs),
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: u64,
    /// Number of training scenes [default: 32].
    #[arg(long)]
    pub train: Option<usize>,
    /// Number of test scenes [default: 8].
    #[arg(long)]
    pub test: Option<usize>,
    /// [default: 16]
    #[arg(long)]
    pub height: Option<usize>,
    /// [default: 16]
    #[arg(long)]
    pub width: Option<usize>,
    /// Bumps per scene [default: 6].
    #[arg(long)]
    pub bumps: Option<usize>,
    /// Narrow, sharp bumps.
    #[arg(long)]
    pub high_frequency: bool,
}

#[derive(Args, Debug)]
pub struct ScheduleArgs {
    /// Number of diffusion steps [default: 1000].
    #[arg(long = "timesteps")]
    pub timesteps: Option<usize>,
    /// [default: 0.0001]
    #[arg(long)]
    pub beta_start: Option<f64>,
    /// [default: 0.02]
    #[arg(long)]
    pub beta_end: Option<f64>,
    /// linear or scaled_linear [default: linear].
    #[arg(long)]
    pub schedule_kind: Option<String>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset directory written by gen-data.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint path; settings are recorded next to it as `<out>.cfg`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: u64,
    /// [default: 4]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// [default: 1000]
    #[arg(long)]
    pub steps_per_epoch: Option<usize>,
    /// [default: 32]
    #[arg(long)]
    pub batch: Option<usize>,
    /// [default: 0.001]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Hidden layer widths [default: 48,48].
    #[arg(long)]
    pub hidden: Option<String>,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
}

#[derive(Args, Debug)]
pub struct TrainYosoArgs {
    #[command(flatten)]
    pub common: TrainArgs,
    /// Probability of the zero-input branch [default: 0.4].
    #[arg(long)]
    pub lambda: Option<f64>,
    /// One-based start step of the refinement [default: 401].
    #[arg(long)]
    pub t_plus: Option<usize>,
    /// Reuse the target's noise draw as the network input.
    #[arg(long)]
    pub shared_noise: bool,
}

#[derive(Args, Debug)]
pub struct TrainRefinerArgs {
    #[command(flatten)]
    pub common: TrainArgs,
    /// Width of the semantic injection branch [default: 16].
    #[arg(long)]
    pub injection_hidden: Option<usize>,
    /// [default: 1]
    #[arg(long)]
    pub injection_scale: Option<f64>,
    /// Train without semantic features.
    #[arg(long)]
    pub no_semantics: bool,
}

#[derive(Args, Debug)]
pub struct SamplerArgs {
    /// Injected noise scale; 0 is deterministic [default: 0].
    #[arg(long)]
    pub tau: Option<f64>,
    /// Refinement steps [default: 10].
    #[arg(long)]
    pub steps: Option<usize>,
    /// One-based start step of the refinement [default: 401].
    #[arg(long)]
    pub t_plus: Option<usize>,
    /// zero or sampled [default: zero].
    #[arg(long)]
    pub yoso_input: Option<String>,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    #[arg(long)]
    pub yoso: PathBuf,
    #[arg(long)]
    pub refiner: PathBuf,
    #[arg(long)]
    pub shading: PathBuf,
    #[arg(long)]
    pub semantic: PathBuf,
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    /// Write every visited state into this directory.
    #[arg(long)]
    pub trajectory: Option<PathBuf>,
    /// Stop after the one-shot stage.
    #[arg(long)]
    pub yoso_only: bool,
    /// Also write an 8-bit PPM of the prediction.
    #[arg(long)]
    pub ppm: Option<PathBuf>,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub mask: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct VarianceArgs {
    /// [default: 10]
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Base seed; run i uses seed + i. Without checkpoints the scene is
    /// also drawn from it.
    #[arg(long)]
    pub seed: u64,
    /// Trained one-shot checkpoint; the closed-form pair is used otherwise.
    #[arg(long, requires_all = ["refiner", "shading", "semantic"])]
    pub yoso: Option<PathBuf>,
    #[arg(long, requires = "yoso")]
    pub refiner: Option<PathBuf>,
    #[arg(long, requires = "yoso")]
    pub shading: Option<PathBuf>,
    #[arg(long, requires = "yoso")]
    pub semantic: Option<PathBuf>,
    #[arg(long, requires = "yoso")]
    pub mask: Option<PathBuf>,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    /// Steps of the full-chain baseline [default: 50].
    #[arg(long)]
    pub full_steps: Option<usize>,
    /// Noise scale of the full-chain baseline [default: 1].
    #[arg(long)]
    pub full_tau: Option<f64>,
    /// Also write variance maps and the report here.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
}

#[derive(Args, Debug)]
pub struct IntegrateArgs {
    #[arg(long)]
    pub normals: PathBuf,
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Depth raster; invalid pixels hold 0.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write a Wavefront OBJ mesh.
    #[arg(long)]
    pub obj: Option<PathBuf>,
    /// Lower bound on n_z before slopes are down-weighted [default: 0.05].
    #[arg(long)]
    pub z_floor: Option<f64>,
    /// Relative residual target [default: 1e-10].
    #[arg(long)]
    pub tol: Option<f64>,
    /// Iteration cap per component [default: 10*H*W].
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// [default: 1]
    #[arg(long)]
    pub dx: Option<f64>,
    /// [default: 1]
    #[arg(long)]
    pub dy: Option<f64>,
    /// Report the gauge-invariant RMSE against this depth raster.
    #[arg(long)]
    pub gt_depth: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct OracleDemoArgs {
    #[arg(long)]
    pub seed: u64,
    /// [default: 10000]
    #[arg(long)]
    pub samples: Option<usize>,
    /// DDIM steps [default: 50].
    #[arg(long)]
    pub steps: Option<usize>,
    /// ddim or ddpm [default: ddim].
    #[arg(long)]
    pub sampler: Option<String>,
    /// DDIM noise scale [default: 0].
    #[arg(long)]
    pub tau: Option<f64>,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help and version go to stdout with status 0, usage errors to
            // stderr with status 2
            let _ = e.print();
            return ExitCode::from(e.exit_code().clamp(0, 255) as u8);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dnorm: {e}");
            e.exit_code()
        }
    }
}
