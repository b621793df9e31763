use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ubs::optim::{RegReduction, TrainConfig};
use ubs::sceneio::Split;

#[derive(Debug, Parser)]
#[command(name = "ubs", version, about = "Universal Beta Splatting: train, render and inspect N-dimensional Beta splat scenes")]
pub struct Cli {
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,

    /// Seed for every stochastic step of the command.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset (PNG targets, transforms.json, gt.ubs).
    Synth(SynthArgs),
    /// Fit a scene to a dataset.
    Train(Box<TrainArgs>),
    /// Render a scene to PNG or float planar (.ubsf).
    Render(RenderArgs),
    /// PSNR and SSIM of a scene against a dataset split, as JSON.
    Eval(EvalArgs),
    /// Shape-parameter heatmaps (b_x, b_d, b_t, opacity).
    Decompose(DecomposeArgs),
    /// Finite-difference check of the analytic gradients, as JSON.
    CheckGrad(CheckGradArgs),
    /// Dump a scene as JSON.
    ExportJson(ExportArgs),
    /// Run again from a resolved-config JSON written by an earlier command.
    Rerun(RerunArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Static,
    Viewdep,
    Dynamic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum)]
    pub kind: KindArg,
    #[arg(long)]
    pub out: PathBuf,
}

/// Overrides for [`TrainConfig`]; unset flags keep the config file or default value.
#[derive(Debug, Args, Default)]
pub struct TrainFlags {
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub lr_position: Option<f64>,
    #[arg(long)]
    pub lr_opacity: Option<f64>,
    #[arg(long)]
    pub lr_scale: Option<f64>,
    #[arg(long)]
    pub lr_other: Option<f64>,
    #[arg(long)]
    pub lambda_ssim: Option<f64>,
    #[arg(long)]
    pub lambda_o: Option<f64>,
    #[arg(long)]
    pub lambda_sigma: Option<f64>,
    #[arg(long)]
    pub lambda_eps: Option<f64>,
    /// `sum` or `mean` over primitives for the regularizers.
    #[arg(long, value_parser = parse_reduction)]
    pub reg_reduction: Option<RegReduction>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub target_primitive_count: Option<usize>,
    #[arg(long)]
    pub relocation_period: Option<usize>,
    #[arg(long)]
    pub dead_opacity: Option<f64>,
    #[arg(long)]
    pub growth_rate: Option<f64>,
    #[arg(long)]
    pub noise_gate_sharpness: Option<f64>,
    #[arg(long)]
    pub freeze_shapes: bool,
    #[arg(long)]
    pub symmetric_gate: bool,
    #[arg(long)]
    pub log_every: Option<usize>,
}

fn parse_reduction(s: &str) -> Result<RegReduction, String> {
    match s {
        "sum" => Ok(RegReduction::Sum),
        "mean" => Ok(RegReduction::Mean),
        _ => Err(format!("expected 'sum' or 'mean', got '{s}'")),
    }
}

impl TrainFlags {
    pub fn apply(&self, cfg: &mut TrainConfig) {
        macro_rules! set {
            ($($f:ident),*) => {$(
                if let Some(v) = self.$f { cfg.$f = v; }
            )*};
        }
        set!(
            iterations,
            lr_position,
            lr_opacity,
            lr_scale,
            lr_other,
            lambda_ssim,
            lambda_o,
            lambda_sigma,
            lambda_eps,
            reg_reduction,
            batch_size,
            target_primitive_count,
            relocation_period,
            dead_opacity,
            growth_rate,
            noise_gate_sharpness,
            log_every
        );
        cfg.freeze_shapes |= self.freeze_shapes;
        cfg.symmetric_gate |= self.symmetric_gate;
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset manifest (transforms.json).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Start from this scene instead of a random initialization.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Scene dimensionality; defaults to 7 when the manifest has times, else 6.
    #[arg(long)]
    pub n_dims: Option<usize>,
    /// Primitive count of the random initialization.
    #[arg(long, default_value_t = 150)]
    pub count: usize,
    /// Half extent of the cube the initial positions are drawn from.
    #[arg(long, default_value_t = 1.0)]
    pub bounds: f64,
    /// Draw initial direction means on the unit sphere.
    #[arg(long)]
    pub normalize_dirs: bool,
    /// Base TrainConfig JSON; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint period in iterations; 0 disables.
    #[arg(long, default_value_t = 0)]
    pub checkpoint_every: usize,
    #[command(flatten)]
    pub flags: TrainFlags,
}

#[derive(Debug, Args)]
pub struct CameraArgs {
    /// Take the camera from this manifest instead of --eye/--target.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Frame index within the manifest.
    #[arg(long, default_value_t = 0)]
    pub frame: usize,
    #[arg(long, value_parser = parse_vec3, default_value = "0,-3.2,0")]
    pub eye: [f64; 3],
    #[arg(long, value_parser = parse_vec3, default_value = "0,0,0")]
    pub target: [f64; 3],
    #[arg(long, value_parser = parse_vec3, default_value = "0,0,1")]
    pub up: [f64; 3],
    /// Horizontal field of view in radians.
    #[arg(long, default_value_t = 0.9)]
    pub fov_x: f64,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    /// Time query in [0, 1] (N = 7).
    #[arg(long)]
    pub time: Option<f64>,
    /// View direction query; defaults to the camera's optical axis.
    #[arg(long, value_parser = parse_vec3, allow_hyphen_values = true)]
    pub dir: Option<[f64; 3]>,
    #[arg(long)]
    pub symmetric_gate: bool,
}

pub fn parse_vec3(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected x,y,z, got '{s}'"));
    }
    let mut out = [0.0; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.trim().parse().map_err(|_| format!("'{p}' is not a number"))?;
    }
    Ok(out)
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub scene: PathBuf,
    /// Output image; `.ubsf` writes float planar, anything else PNG.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub camera: CameraArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// Report path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub symmetric_gate: bool,
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    #[arg(long)]
    pub scene: PathBuf,
    /// Output directory for `<channel>.png`.
    #[arg(long)]
    pub out: PathBuf,
    /// Channels to draw; every channel the scene has when empty.
    #[arg(long, value_delimiter = ',')]
    pub channels: Vec<String>,
    #[command(flatten)]
    pub camera: CameraArgs,
}

#[derive(Debug, Args)]
pub struct CheckGradArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "train")]
    pub split: SplitArg,
    /// Number of views in the loss.
    #[arg(long, default_value_t = 2)]
    pub views: usize,
    /// Check only the first this many primitives; 0 checks all.
    #[arg(long, default_value_t = 8)]
    pub primitives: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub eps: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub tol: f64,
    /// Multiplier on the image loss; defaults to the pixel count times 3.
    #[arg(long)]
    pub loss_scale: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RerunArgs {
    /// Resolved-config JSON.
    pub config: PathBuf,
}
