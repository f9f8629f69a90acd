use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(name = "octsplat", version, about = "Octree-sampled Gaussian splat fitting and VecSeq tools")]
pub struct Cli {
    /// Run single-threaded; outputs are then byte-reproducible for a fixed seed.
    #[arg(long, global = true)]
    pub serial: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a density and decoder to a scene.
    Fit(FitArgs),
    /// Report PSNR and SSIM of a checkpoint against a scene.
    Eval(EvalArgs),
    /// Render a checkpoint from a camera.
    Render(RenderArgs),
    /// Sample anchors from a checkpoint's density and write them as PLY.
    SampleAnchors(SampleArgs),
    /// Serialize point-indexed tokens against Sobol anchors.
    Vecseq(VecSeqArgs),
    /// Train the toy flow-matching model and write its loss curves.
    FmToy(FmToyArgs),
    /// Compare fused contributions with leave-one-out renders on random scenes.
    OracleCheck(OracleArgs),
}

/// A built-in scene name (`thin-board`, `checker-sphere`) or a scene directory.
#[derive(Debug, Args)]
pub struct SceneArg {
    /// Scene directory containing `scene.txt`, or a built-in name (thin-board, checker-sphere).
    #[arg(long)]
    pub scene: String,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// TOML config; unknown keys are rejected.
    #[arg(long)]
    pub config: PathBuf,
    #[command(flatten)]
    pub scene: SceneArg,
    /// Checkpoint path; the log and manifest are written next to it.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides `run.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint written by `fit`.
    #[arg(long)]
    pub ckpt: PathBuf,
    #[command(flatten)]
    pub scene: SceneArg,
    /// Anchor budget P.
    #[arg(long)]
    pub budget: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Config whose `[scene]` section sizes built-in scenes.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Per-view CSV report.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Checkpoint written by `fit`.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Camera with `position`, `rotation` (world-to-camera rows), `focal`, `width`, `height`.
    #[arg(long)]
    pub camera_json: PathBuf,
    /// `.png` for 8-bit output, `.pfm` for float output.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 512)]
    pub budget: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DequantizeArg {
    Uniform,
    Center,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Checkpoint written by `fit`.
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub budget: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = DequantizeArg::Uniform)]
    pub dequantize: DequantizeArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VecSeqArgs {
    /// Point cloud (ASCII PLY), one point per token row.
    #[arg(long)]
    pub points: PathBuf,
    /// Token CSV with a header row.
    #[arg(long)]
    pub tokens: PathBuf,
    /// Sequence length; larger inputs are reduced by farthest point sampling.
    #[arg(long)]
    pub m: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Direction-number table replacing the bundled one.
    #[arg(long)]
    pub directions: Option<PathBuf>,
    /// Positional embedding width, a multiple of 6.
    #[arg(long, default_value_t = 6)]
    pub pe_dim: usize,
    /// Accepted for uniformity; the serialization is deterministic.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum VariantArg {
    Reordered,
    Unordered,
}

#[derive(Debug, Args)]
pub struct FmToyArgs {
    #[arg(long, value_enum)]
    pub variant: VariantArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// TOML with toy-trainer keys; unknown keys are rejected.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 50)]
    pub trials: usize,
    #[arg(long, default_value_t = 20)]
    pub max_primitives: usize,
    #[arg(long, default_value_t = 32)]
    pub size: u32,
    /// Per-trial CSV report.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
