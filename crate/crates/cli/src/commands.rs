use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use nalgebra::Vector3;
use planar_parallax::depth_solver::{eval_metrics, median_scale, plane_sweep_gamma, AlignedSource, SweepConfig};
use planar_parallax::homography::{estimate_homography_ransac, warp_image_homography};
use planar_parallax::image::masked_mean_abs_diff;
use planar_parallax::io::{
    read_correspondences, read_depth_png, read_homography, read_image, read_intrinsics, write_atomic,
    write_correspondences, write_depth_png, write_homography, write_image, write_intrinsics, BitDepth,
};
use planar_parallax::losses::{min_reprojection, photometric_loss, smoothness_loss, total_loss, LossConfig};
use planar_parallax::parallax::{planar_parallax_map, synthesize_target, verify_derivation};
use planar_parallax::synthetic::{default_intrinsics, ground_correspondences, render_synthetic, SceneSpec};
use planar_parallax::{Homography, ImageBuffer, LossMap, RansacConfig};

use crate::{
    AlignArgs, Command, EstimateArgs, EvaluateArgs, LossArgs, RansacArgs, RenderArgs, SolveArgs, SynthesizeArgs,
    VerifyArgs,
};

/// Runs one subcommand and returns its result line.
pub fn run(command: Command, seed: u64) -> Result<String> {
    match command {
        Command::RenderSynthetic(a) => render(a, seed),
        Command::EstimateHomography(a) => estimate(a, seed),
        Command::Align(a) => align(a, seed),
        Command::Synthesize(a) => synthesize(a),
        Command::Loss(a) => loss(a),
        Command::SolveDepth(a) => solve(a),
        Command::Evaluate(a) => evaluate(a),
        Command::VerifyDerivation(a) => verify(a, seed),
    }
}

fn fmt_vector(v: &Vector3<f64>) -> String {
    format!("{},{},{}", v.x, v.y, v.z)
}

fn ransac_config(args: &RansacArgs, seed: u64) -> RansacConfig {
    RansacConfig {
        threshold: args.threshold,
        max_iterations: args.iterations,
        confidence: args.confidence,
        seed,
    }
}

fn read_mask(path: &Path, width: usize, height: usize) -> Result<Vec<bool>> {
    let img = read_image(path)?;
    img.ensure_dims(width, height)
        .with_context(|| format!("mask {}", path.display()))?;
    let c = img.channels();
    Ok(img.data().chunks(c).map(|px| px[0] > 0.5).collect())
}

fn read_optional_mask(path: Option<&PathBuf>, width: usize, height: usize) -> Result<Option<Vec<bool>>> {
    path.map(|p| read_mask(p, width, height)).transpose()
}

fn write_mask(path: &Path, mask: &[bool], width: usize, height: usize) -> Result<()> {
    let data = mask.iter().map(|v| if *v { 1.0 } else { 0.0 }).collect();
    write_image(path, &ImageBuffer::new(width, height, 1, data)?, BitDepth::Eight)?;
    Ok(())
}

fn count(mask: &[bool]) -> usize {
    mask.iter().filter(|v| **v).count()
}

fn render(args: RenderArgs, seed: u64) -> Result<String> {
    ensure!(args.baseline > 0.0, "baseline must be positive, got {}", args.baseline);
    fs::create_dir_all(&args.out_dir).with_context(|| format!("cannot create {}", args.out_dir.display()))?;
    let k = default_intrinsics();
    let dir = &args.out_dir;
    let mut translations = Vec::new();
    for (name, offset, stream) in [("prev", -args.baseline, 0), ("next", args.baseline, 1)] {
        let spec = SceneSpec::ground_and_wall(k, args.wall_distance, Vector3::new(0.0, 0.0, offset));
        let frames = render_synthetic(&spec)?;
        if stream == 0 {
            write_image(&dir.join("target.png"), &frames.target.image, BitDepth::Sixteen)?;
            write_depth_png(&dir.join("target_depth.png"), &frames.target.depth)?;
            write_intrinsics(&dir.join("intrinsics.toml"), &k, &frames.plane)?;
        }
        write_image(&dir.join(format!("{name}.png")), &frames.source.image, BitDepth::Sixteen)?;
        let matches = ground_correspondences(&spec, &frames, args.inliers, args.outliers, seed ^ stream)?;
        write_correspondences(&dir.join(format!("matches_{name}.csv")), &matches)?;
        translations.push(*frames.motion.translation());
    }
    let motion = format!(
        "t_prev = [{}]\nt_next = [{}]\n",
        fmt_vector(&translations[0]).replace(',', ", "),
        fmt_vector(&translations[1]).replace(',', ", ")
    );
    write_atomic(&dir.join("motion.toml"), motion.as_bytes())?;
    Ok(format!(
        "width={} height={} t_prev={} t_next={} matches={}",
        k.width,
        k.height,
        fmt_vector(&translations[0]),
        fmt_vector(&translations[1]),
        args.inliers + args.outliers
    ))
}

fn estimate(args: EstimateArgs, seed: u64) -> Result<String> {
    let matches = read_correspondences(&args.matches)?;
    let outcome = estimate_homography_ransac(&matches, &ransac_config(&args.ransac, seed))?;
    write_homography(&args.out, &outcome.homography)?;
    Ok(format!(
        "inliers={} matches={} iterations={}",
        outcome.inlier_count(),
        matches.len(),
        outcome.iterations
    ))
}

fn align(args: AlignArgs, seed: u64) -> Result<String> {
    let src = read_image(&args.src)?;
    let tgt = read_image(&args.tgt)?;
    tgt.ensure_same_shape(&src)
        .with_context(|| format!("{} vs {}", args.src.display(), args.tgt.display()))?;
    let (h, inliers): (Homography, Option<usize>) = match (&args.matches, &args.homography) {
        (Some(m), None) => {
            let outcome = estimate_homography_ransac(&read_correspondences(m)?, &ransac_config(&args.ransac, seed))?;
            let n = outcome.inlier_count();
            (outcome.homography, Some(n))
        }
        (None, Some(p)) => (read_homography(p)?, None),
        _ => bail!("give exactly one of --matches or --homography"),
    };
    let (aligned, mask) = warp_image_homography(&src, &h)?;
    write_image(&args.out, &aligned, BitDepth::Sixteen)?;
    let h_out = args.h_out.clone().unwrap_or_else(|| args.out.with_extension("txt"));
    write_homography(&h_out, &h)?;
    let (w, hgt) = tgt.dims();
    if let Some(p) = &args.mask_out {
        write_mask(p, &mask, w, hgt)?;
    }
    let diff = masked_mean_abs_diff(&tgt, &aligned, &mask)?;
    let mut line = format!("valid={} mean_abs_diff={diff}", count(&mask));
    if let Some(n) = inliers {
        line = format!("inliers={n} {line}");
    }
    Ok(line)
}

fn synthesize(args: SynthesizeArgs) -> Result<String> {
    let aligned = read_image(&args.aligned)?;
    let (w, h) = aligned.dims();
    let aligned_mask = read_optional_mask(args.aligned_mask.as_ref(), w, h)?;
    let depth = read_depth_png(&args.depth)?;
    let (k, plane) = read_intrinsics(&args.intrinsics)?;
    let field = planar_parallax_map(&depth, &args.translation, &plane, &k)?;
    let (synth, mask) = synthesize_target(&aligned, aligned_mask.as_deref(), &field)?;
    write_image(&args.out, &synth, BitDepth::Sixteen)?;
    if let Some(p) = &args.mask_out {
        write_mask(p, &mask, w, h)?;
    }
    let mut line = format!("valid={} max_displacement={}", count(&mask), field.max_displacement());
    if let Some(t) = &args.tgt {
        let diff = masked_mean_abs_diff(&read_image(t)?, &synth, &mask)?;
        line.push_str(&format!(" mean_abs_diff={diff}"));
    }
    Ok(line)
}

fn loss(args: LossArgs) -> Result<String> {
    let config = LossConfig {
        alpha: args.alpha,
        lambda: args.lambda,
        ..LossConfig::default()
    };
    config.validate()?;
    let tgt = read_image(&args.tgt)?;
    let (w, h) = tgt.dims();
    let all_valid = || vec![true; w * h];
    let photo_of = |path: &Path, mask: Option<&PathBuf>| -> Result<LossMap> {
        let img = read_image(path)?;
        let mask = read_optional_mask(mask, w, h)?.unwrap_or_else(all_valid);
        Ok(photometric_loss(&tgt, &img, &mask, &config)?)
    };
    let mut photo = photo_of(&args.prev, args.prev_mask.as_ref())?;
    if let Some(next) = &args.next {
        photo = min_reprojection(&photo, &photo_of(next, args.next_mask.as_ref())?)?;
    }
    let smooth = match &args.depth {
        Some(p) => smoothness_loss(&read_depth_png(p)?, &tgt)?,
        None => LossMap::filled(w, h, 0.0),
    };
    let total = total_loss(&photo, &smooth, &config)?;
    let photo_mean = photo.valid_mean().context("no valid photometric pixels")?;
    let smooth_mean = smooth.valid_mean().unwrap_or(0.0);
    Ok(format!(
        "photometric={photo_mean} smoothness={smooth_mean} total={total} valid={}",
        photo.valid_count()
    ))
}

fn solve(args: SolveArgs) -> Result<String> {
    let tgt = read_image(&args.tgt)?;
    let (w, h) = tgt.dims();
    let prev = read_image(&args.prev)?;
    let next = read_image(&args.next)?;
    let prev_mask = read_optional_mask(args.prev_mask.as_ref(), w, h)?;
    let next_mask = read_optional_mask(args.next_mask.as_ref(), w, h)?;
    let (k, plane) = read_intrinsics(&args.intrinsics)?;
    let config = SweepConfig {
        num_hypotheses: args.hypotheses,
        patch_radius: args.patch_radius,
        alpha: args.alpha,
        refine: !args.no_refine,
        ..SweepConfig::default()
    };
    let mut prev_src = AlignedSource::new(&prev, args.t_prev);
    if let Some(m) = &prev_mask {
        prev_src = prev_src.with_mask(m);
    }
    let mut next_src = AlignedSource::new(&next, args.t_next);
    if let Some(m) = &next_mask {
        next_src = next_src.with_mask(m);
    }
    let out = plane_sweep_gamma(
        &tgt,
        prev_src,
        next_src,
        &plane,
        &k,
        &config,
    )?;
    write_depth_png(&args.out, &out.depth)?;
    if let Some(p) = &args.low_confidence_out {
        write_mask(p, &out.low_confidence, w, h)?;
    }
    let confident: Vec<f64> = (0..w * h)
        .filter(|&i| out.depth.valid()[i] && !out.low_confidence[i])
        .map(|i| out.depth.values()[i])
        .collect();
    let mean = if confident.is_empty() {
        0.0
    } else {
        planar_parallax::maps::pairwise_sum(&confident) / confident.len() as f64
    };
    Ok(format!(
        "valid={} low_confidence={} mean_confident_depth={mean}",
        out.depth.valid_count(),
        count(&out.low_confidence)
    ))
}

fn evaluate(args: EvaluateArgs) -> Result<String> {
    let pred = read_depth_png(&args.pred)?;
    let gt = read_depth_png(&args.gt)?;
    let (pred, scale) = if args.median_scale {
        median_scale(&pred, &gt)?
    } else {
        (pred, 1.0)
    };
    let m = eval_metrics(&pred, &gt, args.cap)?;
    Ok(format!(
        "abs_rel={} sq_rel={} rmse={} rmse_log={} d1={} d2={} d3={} count={} scale={scale}",
        m.abs_rel, m.sq_rel, m.rmse, m.rmse_log, m.d1, m.d2, m.d3, m.count
    ))
}

fn verify(args: VerifyArgs, seed: u64) -> Result<String> {
    ensure!(args.trials > 0, "need at least one trial");
    let report = verify_derivation(args.trials, seed);
    ensure!(report.valid > 0, "none of the {} trials produced a valid sample", args.trials);
    let line = format!(
        "trials={} valid={} max_err_px={} mean_err_px={}",
        report.trials, report.valid, report.max_err_px, report.mean_err_px
    );
    if let Some(p) = &args.out {
        write_atomic(p, format!("{line}\n").as_bytes())?;
    }
    Ok(line)
}
