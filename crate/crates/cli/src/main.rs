//! `pplx`: batch driver for the plane + parallax pipeline.
//!
//! Every subcommand reads its inputs, writes its outputs atomically and
//! prints one `key=value` line on success.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::Vector3;

#[derive(Debug, Parser)]
#[command(name = "pplx", version, about = "Plane + parallax depth toolkit")]
struct Cli {
    /// Seed for every random choice (RANSAC, correspondence sampling, trials).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads; defaults to one per core.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a ground + wall scene seen from a target and two source cameras.
    RenderSynthetic(RenderArgs),
    /// Robustly fit the road homography to a match list.
    EstimateHomography(EstimateArgs),
    /// Warp a source image onto the target by the road homography.
    Align(AlignArgs),
    /// Synthesize the target from an aligned source and a depth map.
    Synthesize(SynthesizeArgs),
    /// Photometric, smoothness and total loss of a reconstruction.
    Loss(LossArgs),
    /// Plane-sweep depth from a target and two aligned sources.
    SolveDepth(SolveArgs),
    /// Depth metrics of a prediction against ground truth.
    Evaluate(EvaluateArgs),
    /// Compare the residual-parallax formula against full reprojection.
    VerifyDerivation(VerifyArgs),
}

#[derive(Debug, Args)]
struct RenderArgs {
    /// Output directory, created if missing.
    #[arg(long)]
    out_dir: PathBuf,
    /// Distance of the wall in front of the target camera, meters.
    #[arg(long, default_value_t = 8.0)]
    wall_distance: f64,
    /// Source cameras sit this far behind and ahead of the target, meters.
    #[arg(long, default_value_t = 0.5)]
    baseline: f64,
    /// Exact ground matches written per source.
    #[arg(long, default_value_t = 200)]
    inliers: usize,
    /// Random matches appended per source.
    #[arg(long, default_value_t = 50)]
    outliers: usize,
}

#[derive(Debug, Args)]
struct RansacArgs {
    /// Symmetric transfer error threshold, pixels.
    #[arg(long, default_value_t = 1.0)]
    threshold: f64,
    #[arg(long, default_value_t = 2000)]
    iterations: usize,
    #[arg(long, default_value_t = 0.999)]
    confidence: f64,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    /// CSV with header `us,vs,ut,vt`.
    #[arg(long)]
    matches: PathBuf,
    /// Homography output, 9 numbers row-major.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    ransac: RansacArgs,
}

#[derive(Debug, Args)]
struct AlignArgs {
    #[arg(long)]
    src: PathBuf,
    #[arg(long)]
    tgt: PathBuf,
    /// Estimate the homography from these matches.
    #[arg(long, conflicts_with = "homography", required_unless_present = "homography")]
    matches: Option<PathBuf>,
    /// Use a stored homography instead of estimating one.
    #[arg(long)]
    homography: Option<PathBuf>,
    /// Aligned image output.
    #[arg(long)]
    out: PathBuf,
    /// Homography output; defaults to the image path with a `.txt` extension.
    #[arg(long)]
    h_out: Option<PathBuf>,
    /// Validity mask output (white = valid).
    #[arg(long)]
    mask_out: Option<PathBuf>,
    #[command(flatten)]
    ransac: RansacArgs,
}

#[derive(Debug, Args)]
struct SynthesizeArgs {
    /// Aligned source image.
    #[arg(long)]
    aligned: PathBuf,
    #[arg(long)]
    aligned_mask: Option<PathBuf>,
    /// Target depth (16-bit PNG, raw / 256 m).
    #[arg(long)]
    depth: PathBuf,
    /// Camera and road plane description (TOML).
    #[arg(long)]
    intrinsics: PathBuf,
    /// Source→target translation `x,y,z` in meters.
    #[arg(long, value_parser = parse_vector, allow_hyphen_values = true)]
    translation: Vector3<f64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    mask_out: Option<PathBuf>,
    /// Report the mean absolute error against this target.
    #[arg(long)]
    tgt: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct LossArgs {
    #[arg(long)]
    tgt: PathBuf,
    /// Reconstruction from the previous frame.
    #[arg(long)]
    prev: PathBuf,
    #[arg(long)]
    prev_mask: Option<PathBuf>,
    /// Reconstruction from the next frame.
    #[arg(long, requires = "prev")]
    next: Option<PathBuf>,
    #[arg(long)]
    next_mask: Option<PathBuf>,
    /// Depth map for the smoothness term.
    #[arg(long)]
    depth: Option<PathBuf>,
    #[arg(long, default_value_t = 0.85)]
    alpha: f64,
    #[arg(long, default_value_t = 1e-3)]
    lambda: f64,
}

#[derive(Debug, Args)]
struct SolveArgs {
    #[arg(long)]
    tgt: PathBuf,
    /// Previous frame aligned onto the target.
    #[arg(long)]
    prev: PathBuf,
    #[arg(long)]
    prev_mask: Option<PathBuf>,
    /// Next frame aligned onto the target.
    #[arg(long)]
    next: PathBuf,
    #[arg(long)]
    next_mask: Option<PathBuf>,
    /// Previous→target translation `x,y,z` in meters.
    #[arg(long, value_parser = parse_vector, allow_hyphen_values = true)]
    t_prev: Vector3<f64>,
    /// Next→target translation `x,y,z` in meters.
    #[arg(long, value_parser = parse_vector, allow_hyphen_values = true)]
    t_next: Vector3<f64>,
    #[arg(long)]
    intrinsics: PathBuf,
    /// Depth output (16-bit PNG, raw / 256 m).
    #[arg(long)]
    out: PathBuf,
    /// Low-confidence mask output (white = low confidence).
    #[arg(long)]
    low_confidence_out: Option<PathBuf>,
    #[arg(long, default_value_t = 128)]
    hypotheses: usize,
    /// Patch half-size.
    #[arg(long, default_value_t = 1)]
    patch_radius: usize,
    #[arg(long, default_value_t = 0.85)]
    alpha: f64,
    /// Report only the discrete winning hypothesis.
    #[arg(long)]
    no_refine: bool,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Rescale the prediction so its median matches the ground truth.
    #[arg(long)]
    median_scale: bool,
    /// Ground truth beyond this depth is ignored; predictions are clamped to it.
    #[arg(long, default_value_t = planar_parallax::depth_solver::DEFAULT_EVAL_CAP)]
    cap: f64,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 10_000)]
    trials: usize,
    /// Also write the result line to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_vector(s: &str) -> Result<Vector3<f64>, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected `x,y,z`, got `{s}`"));
    }
    let mut v = [0.0; 3];
    for (slot, part) in v.iter_mut().zip(&parts) {
        *slot = part
            .parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .ok_or_else(|| format!("`{part}` is not a finite number"))?;
    }
    Ok(Vector3::from(v))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} worker threads: {e}");
            return ExitCode::FAILURE;
        }
    }
    match commands::run(cli.command, cli.seed) {
        Ok(line) => {
            println!("{line}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
