use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use poser_cli::commands;
use poser_cli::CliResult;
use poser_core::synth::NoiseSpec;

/// Desk-scale stereo-inertial motion capture: synthesis, shape fitting,
/// staged training, evaluation and streaming inference.
#[derive(Parser)]
#[command(name = "poser", version, about)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize a ground-truth clip with stereo + IMU observation blocks.
    Synth(SynthArgs),
    /// Regenerate the body template data file from its seed.
    GenTemplate(GenTemplateArgs),
    /// Export shape-fitting inputs: a T-pose cloud and observation sequence.
    SynthTpose(SynthTposeArgs),
    /// Estimate body shape from a T-pose sequence (and optional cloud).
    FitShape(FitShapeArgs),
    /// Run one or all training stages over a dataset directory.
    Train(TrainArgs),
    /// Evaluate checkpoints on ground-truth clips under a noise protocol.
    Eval(EvalArgs),
    /// Streaming inference over a sequence with observation blocks.
    Infer(InferArgs),
    /// Measure steady-state single-thread inference throughput (f32 path).
    Bench(BenchArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// walk-circle | idle-sway | squat-jump | figure-eight
    #[arg(long)]
    kind: String,
    /// Clip length in seconds (>= 1).
    #[arg(long, default_value_t = 10.0)]
    duration: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Ten comma-separated shape coefficients.
    #[arg(long)]
    beta: Option<String>,
    /// Sample the shape from this seed instead of --beta.
    #[arg(long)]
    beta_seed: Option<u64>,
    /// Gaussian pixel noise on 2D detections.
    #[arg(long, default_value_t = 0.0)]
    pixel_sigma: f64,
    /// Gaussian noise on detector 3D keypoints, meters.
    #[arg(long, default_value_t = 0.0)]
    kp_sigma: f64,
    /// Probability of crushing a keypoint confidence to zero.
    #[arg(long, default_value_t = 0.0)]
    conf_dropout: f64,
    /// Accelerometer noise, m/s^2.
    #[arg(long, default_value_t = 0.0)]
    imu_acc_sigma: f64,
    /// IMU orientation noise, radians.
    #[arg(long, default_value_t = 0.0)]
    imu_rot_sigma: f64,
    #[arg(long)]
    calib: Option<PathBuf>,
    #[arg(long)]
    template: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthTposeArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Ten comma-separated shape coefficients.
    #[arg(long)]
    beta: Option<String>,
    /// Sample the shape from this seed instead of --beta.
    #[arg(long)]
    beta_seed: Option<u64>,
    #[arg(long, default_value_t = 0.0)]
    pixel_sigma: f64,
    #[arg(long)]
    calib: Option<PathBuf>,
    #[arg(long)]
    template: Option<PathBuf>,
    /// Output sequence file (first frame is the T-pose detection).
    #[arg(long)]
    out: PathBuf,
    /// Optional xyz cloud output for the Chamfer term.
    #[arg(long)]
    cloud_out: Option<PathBuf>,
}

#[derive(Args)]
struct GenTemplateArgs {
    /// 64-bit seed (decimal or 0x-hex); defaults to the shipped template's.
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitShapeArgs {
    /// Sequence whose first frame observes the subject in T-pose.
    #[arg(long)]
    sequence: PathBuf,
    /// Optional xyz point cloud; without it the Chamfer term is dropped.
    #[arg(long)]
    cloud: Option<PathBuf>,
    #[arg(long)]
    calib: Option<PathBuf>,
    #[arg(long)]
    template: Option<PathBuf>,
    #[arg(long, default_value_t = 500)]
    iterations: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Directory of .seq files with observation blocks.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint directory (created if missing; later stages read it).
    #[arg(long)]
    out: PathBuf,
    /// 1 | 2 | 3 | all (default: all)
    #[arg(long)]
    stage: Option<String>,
    #[arg(long)]
    template: Option<PathBuf>,
    #[arg(long)]
    calib: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoints: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// ideal | sigma5 | sigma15 | stereo
    #[arg(long, default_value = "ideal")]
    noise: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Report file; a manifest is written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    template: Option<PathBuf>,
    #[arg(long)]
    calib: Option<PathBuf>,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    checkpoints: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    template: Option<PathBuf>,
    #[arg(long)]
    calib: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Trained checkpoints; omitted = randomly initialized networks.
    #[arg(long)]
    checkpoints: Option<PathBuf>,
    /// Hidden width when running without checkpoints.
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    /// Frames measured after warmup.
    #[arg(long, default_value_t = 2000)]
    frames: usize,
    #[arg(long)]
    template: Option<PathBuf>,
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.cmd {
        Cmd::Synth(a) => {
            let beta = commands::parse_beta(a.beta.as_deref(), a.beta_seed)?;
            let noise = NoiseSpec {
                keypoint_sigma_world: a.kp_sigma,
                pixel_sigma: a.pixel_sigma,
                conf_dropout: a.conf_dropout,
                imu_acc_sigma: a.imu_acc_sigma,
                imu_rot_sigma: a.imu_rot_sigma,
                seed: commands::effective_seed(a.seed) ^ 0x0B5,
            };
            commands::cmd_synth(
                &a.kind,
                a.duration,
                a.seed,
                beta,
                noise,
                a.calib.as_deref(),
                a.template.as_deref(),
                &a.out,
            )
        }
        Cmd::GenTemplate(a) => commands::cmd_gen_template(a.seed, &a.out),
        Cmd::SynthTpose(a) => {
            let beta = commands::parse_beta(a.beta.as_deref(), a.beta_seed)?;
            let noise = NoiseSpec {
                pixel_sigma: a.pixel_sigma,
                seed: 0x7905E,
                ..NoiseSpec::ideal(0x7905E)
            };
            commands::cmd_synth_tpose(
                a.seed,
                beta,
                noise,
                a.calib.as_deref(),
                a.template.as_deref(),
                &a.out,
                a.cloud_out.as_deref(),
            )
        }
        Cmd::FitShape(a) => commands::cmd_fit_shape(
            &a.sequence,
            a.cloud.as_deref(),
            a.calib.as_deref(),
            a.template.as_deref(),
            a.iterations,
            &a.out,
        ),
        Cmd::Train(a) => commands::cmd_train(
            &a.config,
            &a.data,
            &a.out,
            a.stage,
            a.template.as_deref(),
            a.calib.as_deref(),
        ),
        Cmd::Eval(a) => commands::cmd_eval(
            &a.checkpoints,
            &a.data,
            &a.noise,
            a.seed,
            a.out.as_deref(),
            a.template.as_deref(),
            a.calib.as_deref(),
        ),
        Cmd::Infer(a) => commands::cmd_infer(
            &a.input,
            &a.checkpoints,
            &a.out,
            a.template.as_deref(),
            a.calib.as_deref(),
        ),
        Cmd::Bench(a) => {
            commands::cmd_bench(a.checkpoints.as_deref(), a.hidden, a.frames, a.template.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
