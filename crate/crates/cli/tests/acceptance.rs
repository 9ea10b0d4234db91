//! Acceptance suite. Each criterion prints one `PASS` or `FAIL` line; the
//! process exits non-zero when any criterion fails.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use nalgebra::{Matrix3, Vector3};
use planar_parallax::depth_solver::{
    eval_metrics, fit_plane_normal, median_scale, plane_sweep_gamma, AlignedSource, SweepConfig,
};
use planar_parallax::homography::{
    compose_plane_homography, estimate_homography_dlt, estimate_homography_ransac, warp_image_homography,
};
use planar_parallax::image::masked_mean_abs_diff;
use planar_parallax::losses::{min_reprojection, photometric_loss, smoothness_loss, ssim_map, total_loss, LossConfig};
use planar_parallax::parallax::{planar_parallax_map, residual_parallax, synthesize_target, verify_derivation};
use planar_parallax::rng::stream;
use planar_parallax::synthetic::{default_intrinsics, render_synthetic, SceneSpec, SyntheticFrames};
use planar_parallax::{
    CameraIntrinsics, Correspondence, CorrespondenceSet, DepthMap, Homography, ImageBuffer, LossMap, PixelPoint,
    PlaneModel, Point3, RansacConfig, RigidMotion,
};
use rand::Rng;
use rand_distr::{Distribution, Normal};

type Outcome = Result<String, String>;

const SEED: u64 = 20240601;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn fail<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn random_unit(rng: &mut impl Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

fn random_intrinsics(rng: &mut impl Rng) -> CameraIntrinsics {
    let base = CameraIntrinsics::kitti_like(1242, 375);
    CameraIntrinsics::new(
        base.fx * rng.random_range(0.8..1.2),
        base.fy * rng.random_range(0.8..1.2),
        base.cx + rng.random_range(-30.0..30.0),
        base.cy + rng.random_range(-30.0..30.0),
        base.width,
        base.height,
    )
    .expect("valid intrinsics")
}

fn in_image(p: &PixelPoint, k: &CameraIntrinsics) -> bool {
    (0.0..k.width as f64).contains(&p.x) && (0.0..k.height as f64).contains(&p.y)
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed())
}

fn derivation_equivalence() -> Outcome {
    let (report, elapsed) = timed(|| verify_derivation(10_000, SEED));
    let detail = format!(
        "{} of {} configurations valid, max error {:.3e} px, {:.2} s",
        report.valid,
        report.trials,
        report.max_err_px,
        elapsed.as_secs_f64()
    );
    check(
        report.valid > 9_000 && report.max_err_px < 1e-6 && elapsed < Duration::from_secs(5),
        detail,
    )
}

/// Up to `count` plane points seen by both cameras, as (source pixel,
/// target pixel) pairs; `None` when the plane is barely visible.
fn visible_plane_points(
    motion: &RigidMotion,
    plane: &PlaneModel,
    k_t: &CameraIntrinsics,
    k_s: &CameraIntrinsics,
    count: usize,
    rng: &mut impl Rng,
) -> Option<Vec<(PixelPoint, PixelPoint)>> {
    let mut pairs = Vec::with_capacity(count);
    for _ in 0..20 * count {
        let ps = PixelPoint::new(
            rng.random_range(0.0..k_s.width as f64),
            rng.random_range(0.0..k_s.height as f64),
        );
        let ray = k_s.ray(&ps);
        let along = plane.normal().dot(&ray);
        if along <= 0.0 {
            continue;
        }
        let x_src = Point3::from(ray * (plane.distance() / along));
        if x_src.z > 100.0 {
            continue;
        }
        let Ok(pt) = k_t.project(&motion.transform(&x_src)) else {
            continue;
        };
        if in_image(&pt, k_t) {
            pairs.push((ps, pt));
            if pairs.len() == count {
                return Some(pairs);
            }
        }
    }
    None
}

fn homography_transfer() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut redrawn = 0;
    let mut rng = stream(SEED, 100);
    let mut configs = 0;
    while configs < 100 {
        let motion = RigidMotion::from_axis_angle(
            random_unit(&mut rng) * rng.random_range(0.0..0.3),
            random_unit(&mut rng) * rng.random_range(0.0..2.0),
        );
        let tilt = Vector3::new(rng.random_range(-0.3..0.3), 1.0, rng.random_range(-0.3..0.3));
        let plane = PlaneModel::new(tilt, rng.random_range(1.0..3.0)).map_err(fail)?;
        let (k_t, k_s) = (random_intrinsics(&mut rng), random_intrinsics(&mut rng));
        let Some(pairs) = visible_plane_points(&motion, &plane, &k_t, &k_s, 1000, &mut rng) else {
            redrawn += 1;
            continue;
        };
        let h = compose_plane_homography(&motion, &plane, &k_t, &k_s).map_err(fail)?;
        for (ps, pt) in pairs {
            worst = worst.max((h.apply(&ps).map_err(fail)? - pt).norm());
        }
        configs += 1;
    }
    let elapsed = start.elapsed();
    check(
        worst < 1e-9 && elapsed < Duration::from_secs(5),
        format!(
            "100 configurations x 1000 points ({redrawn} redrawn for lack of shared plane view), \
             max error {worst:.3e} px, {:.2} s",
            elapsed.as_secs_f64()
        ),
    )
}

fn plane_fixed_point() -> Outcome {
    let k = CameraIntrinsics::new(60.0, 60.0, 31.5, 31.5, 64, 64).map_err(fail)?;
    let mut rng = stream(SEED, 200);
    let (mut on_plane, mut static_cam) = (0.0f64, 0.0f64);
    for y in 0..64 {
        for x in 0..64 {
            let p = PixelPoint::new(x as f64, y as f64);
            let t = random_unit(&mut rng) * rng.random_range(0.0..2.0);
            let d_c = rng.random_range(1.0..3.0);
            on_plane = on_plane.max(residual_parallax(&p, 0.0, &t, d_c, &k).map_err(fail)?.norm());
            let gamma = rng.random_range(-0.5..0.9);
            static_cam = static_cam.max(residual_parallax(&p, gamma, &Vector3::zeros(), d_c, &k).map_err(fail)?.norm());
        }
    }
    check(
        on_plane < 1e-9 && static_cam < 1e-12,
        format!("64x64 grid: gamma=0 max {on_plane:.3e} px, t=0 max {static_cam:.3e} px"),
    )
}

fn ransac_robustness() -> Outcome {
    let truth = Homography::new(Matrix3::new(
        0.92, -0.12, 31.0, //
        0.03, 0.81, 18.5, //
        -1.1e-4, -6.0e-4, 1.0,
    ))
    .map_err(fail)?;
    let mut rng = stream(SEED, 300);
    let (w, h) = (1242.0, 375.0);
    let mut matches = Vec::new();
    while matches.len() < 70 {
        let s = PixelPoint::new(rng.random_range(0.0..w), rng.random_range(0.0..h));
        let t = truth.apply(&s).map_err(fail)?;
        matches.push(Correspondence::new(s, t));
    }
    let inliers: Vec<Correspondence> = matches.clone();
    for _ in 0..30 {
        let s = PixelPoint::new(rng.random_range(0.0..w), rng.random_range(0.0..h));
        let t = PixelPoint::new(rng.random_range(0.0..w), rng.random_range(0.0..h));
        matches.push(Correspondence::new(s, t));
    }
    let config = RansacConfig {
        threshold: 1.0,
        seed: SEED,
        ..RansacConfig::default()
    };
    let outcome = estimate_homography_ransac(&CorrespondenceSet::new(matches).map_err(fail)?, &config).map_err(fail)?;
    let mut transfer = 0.0f64;
    for m in &inliers {
        let got = outcome.homography.apply(&m.source).map_err(fail)?;
        transfer = transfer.max((got - m.target).norm());
    }
    let dlt = estimate_homography_dlt(&CorrespondenceSet::new(inliers).map_err(fail)?).map_err(fail)?;
    let rel = dlt.relative_error(&truth);
    check(
        transfer < 0.5 && rel < 1e-8,
        format!(
            "{} inliers kept, max inlier transfer error {transfer:.3e} px, noise-free DLT relative error {rel:.3e}",
            outcome.inlier_count()
        ),
    )
}

fn synthetic_frames(offset: f64) -> Result<SyntheticFrames, String> {
    let spec = SceneSpec::ground_and_wall(default_intrinsics(), 8.0, Vector3::new(0.0, 0.0, offset));
    render_synthetic(&spec).map_err(fail)
}

fn aligned(f: &SyntheticFrames) -> Result<(ImageBuffer, Vec<bool>), String> {
    let k = default_intrinsics();
    let h = compose_plane_homography(&f.motion, &f.plane, &k, &k).map_err(fail)?;
    warp_image_homography(&f.source.image, &h).map_err(fail)
}

fn random_image(width: usize, height: usize, channels: usize, rng: &mut impl Rng) -> ImageBuffer {
    let data = (0..width * height * channels).map(|_| rng.random::<f32>()).collect();
    ImageBuffer::new(width, height, channels, data).expect("valid image")
}

fn synthesis_fidelity(prev: &SyntheticFrames, next: &SyntheticFrames) -> Outcome {
    let k = default_intrinsics();
    let mut errors = Vec::new();
    for f in [prev, next] {
        let (al, al_mask) = aligned(f)?;
        let field = planar_parallax_map(&f.target.depth, f.motion.translation(), &f.plane, &k).map_err(fail)?;
        let (synth, mask) = synthesize_target(&al, Some(&al_mask), &field).map_err(fail)?;
        errors.push(masked_mean_abs_diff(&f.target.image, &synth, &mask).map_err(fail)?);
    }
    let config = LossConfig::default();
    let mut rng = stream(SEED, 500);
    let mut identities = true;
    for img in [prev.target.image.clone(), random_image(37, 23, 3, &mut rng)] {
        let mask = vec![true; img.width() * img.height()];
        let photo = photometric_loss(&img, &img, &mask, &config).map_err(fail)?;
        let ssim = ssim_map(&img, &img, &config).map_err(fail)?;
        identities &= photo.values().iter().all(|v| *v == 0.0) && ssim.values().iter().all(|v| *v == 1.0);
    }
    let worst = errors.iter().copied().fold(0.0, f64::max);
    check(
        worst < 0.01 && identities,
        format!(
            "mean |I_t - I_w| prev {:.4}, next {:.4}; photometric(x,x)=0 and ssim(x,x)=1 exactly: {identities}",
            errors[0], errors[1]
        ),
    )
}

/// Pixels of `label` whose 3x3 neighbourhood shares the label and that keep
/// `margin` pixels from the border.
fn interior(labels: &[Option<usize>], label: usize, margin: usize, k: &CameraIntrinsics) -> Vec<usize> {
    let (w, h) = (k.width, k.height);
    (0..w * h)
        .filter(|&i| {
            let (x, y) = (i % w, i / w);
            x >= margin
                && y >= margin
                && x + margin < w
                && y + margin < h
                && (y - 1..=y + 1).all(|yy| (x - 1..=x + 1).all(|xx| labels[yy * w + xx] == Some(label)))
        })
        .collect()
}

fn self_supervision_signal(prev: &SyntheticFrames, next: &SyntheticFrames) -> Outcome {
    const GROUND: usize = 0;
    const WALL: usize = 1;
    // patch radius + bilinear footprint + one hypothesis step at the image corners
    const ROAD_MARGIN: usize = 4;
    let k = default_intrinsics();
    let (ap, mp) = aligned(prev)?;
    let (an, mn) = aligned(next)?;
    let config = SweepConfig::default();
    let (out, elapsed) = timed(|| {
        plane_sweep_gamma(
            &prev.target.image,
            AlignedSource::new(&ap, *prev.motion.translation()).with_mask(&mp),
            AlignedSource::new(&an, *next.motion.translation()).with_mask(&mn),
            &prev.plane,
            &k,
            &config,
        )
    });
    let out = out.map_err(fail)?;
    let labels = &prev.target.labels;

    let wall: Vec<usize> = interior(labels, WALL, 1, &k)
        .into_iter()
        .filter(|&i| !out.low_confidence[i])
        .collect();
    let mut values = vec![0.0; k.pixel_count()];
    let mut valid = vec![false; k.pixel_count()];
    for &i in &wall {
        values[i] = out.depth.values()[i];
        valid[i] = out.depth.valid()[i];
    }
    let pred = DepthMap::new(k.width, k.height, values, valid).map_err(fail)?;
    let abs_rel = eval_metrics(&pred, &prev.target.depth, 80.0).map_err(fail)?.abs_rel;

    let road: Vec<usize> = interior(labels, GROUND, ROAD_MARGIN, &k)
        .into_iter()
        .filter(|&i| !out.low_confidence[i])
        .collect();
    let mut worst = 0.0f64;
    let mut outside = 0;
    for &i in &road {
        let p = PixelPoint::new((i % k.width) as f64, (i / k.width) as f64);
        let mut shift = 0.0f64;
        for f in [prev, next] {
            let d = residual_parallax(&p, out.gamma.values()[i], f.motion.translation(), f.plane.distance(), &k)
                .map_err(fail)?;
            shift = shift.max(d.norm());
        }
        worst = worst.max(shift);
        if shift >= 0.5 {
            outside += 1;
        }
    }
    check(
        abs_rel < 0.05 && outside == 0 && !road.is_empty() && elapsed < Duration::from_secs(60),
        format!(
            "wall Abs Rel {abs_rel:.4} over {} pixels; {outside} of {} road pixels at >= 0.5 px from gamma=0 \
             (worst {worst:.3} px); {:.1} s",
            wall.len(),
            road.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn loss_identities() -> Outcome {
    let (w, h) = (40, 30);
    let mut rng = stream(SEED, 700);
    let image = random_image(w, h, 3, &mut rng);
    let depth = DepthMap::from_values(w, h, (0..w * h).map(|_| rng.random_range(1.0..20.0)).collect()).map_err(fail)?;
    let base = smoothness_loss(&depth, &image).map_err(fail)?;
    let mut scale_err = 0.0f64;
    for s in [0.5, 2.0, 3.7] {
        let scaled = DepthMap::from_values(w, h, depth.values().iter().map(|z| z * s).collect()).map_err(fail)?;
        let loss = smoothness_loss(&scaled, &image).map_err(fail)?;
        for (a, b) in base.values().iter().zip(loss.values()) {
            scale_err = scale_err.max((a - b).abs());
        }
    }

    let (a, b) = (random_loss(w, h, &mut rng).map_err(fail)?, random_loss(w, h, &mut rng).map_err(fail)?);
    let m = min_reprojection(&a, &b).map_err(fail)?;
    let below = (0..w * h).all(|i| {
        let le = |x: &LossMap| !x.valid()[i] || (m.valid()[i] && m.values()[i] <= x.values()[i]);
        le(&a) && le(&b)
    });

    let config = LossConfig::default();
    let flat = DepthMap::filled(w, h, 7.5).map_err(fail)?;
    let photo = photometric_loss(&image, &image, &vec![true; w * h], &config).map_err(fail)?;
    let smooth = smoothness_loss(&flat, &image).map_err(fail)?;
    let total = total_loss(&photo, &smooth, &config).map_err(fail)?;
    check(
        scale_err < 1e-12 && below && total == 0.0,
        format!("smoothness scale drift {scale_err:.3e}; min reprojection below inputs: {below}; perfect total {total}"),
    )
}

fn random_loss(width: usize, height: usize, rng: &mut impl Rng) -> planar_parallax::Result<LossMap> {
    let values = (0..width * height).map(|_| rng.random_range(0.0..1.0)).collect();
    let valid = (0..width * height).map(|_| rng.random_bool(0.8)).collect();
    LossMap::new(width, height, values, valid)
}

fn lower_median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[(v.len() - 1) / 2]
}

fn metrics_sanity() -> Outcome {
    let (w, h) = (32, 24);
    let mut rng = stream(SEED, 800);
    let gt_values: Vec<f64> = (0..w * h).map(|_| rng.random_range(256..16384) as f64 / 256.0).collect();
    let gt = DepthMap::from_values(w, h, gt_values.clone()).map_err(fail)?;
    let same = eval_metrics(&gt, &gt, 80.0).map_err(fail)?;
    let exact = same.abs_rel == 0.0
        && same.sq_rel == 0.0
        && same.rmse == 0.0
        && same.rmse_log == 0.0
        && same.d1 == 1.0
        && same.d2 == 1.0
        && same.d3 == 1.0;
    let far = DepthMap::from_values(w, h, gt_values.iter().map(|g| g * 1.25).collect()).map_err(fail)?;
    let off = eval_metrics(&far, &gt, 80.0).map_err(fail)?;

    let pred = DepthMap::from_values(w, h, (0..w * h).map(|_| rng.random_range(0.5..30.0)).collect()).map_err(fail)?;
    let (scaled, _) = median_scale(&pred, &gt).map_err(fail)?;
    let joint = |m: &DepthMap| -> Vec<f64> {
        (0..w * h)
            .filter(|&i| scaled.valid()[i] && gt.valid()[i])
            .map(|i| m.values()[i])
            .collect()
    };
    let (med_pred, med_gt) = (lower_median(joint(&scaled)), lower_median(joint(&gt)));
    check(
        exact && off.d1 == 0.0 && off.abs_rel == 0.25 && med_pred == med_gt,
        format!(
            "identical maps exact: {exact}; 1.25x: d1 {} abs_rel {}; scaled median {med_pred} vs {med_gt}",
            off.d1, off.abs_rel
        ),
    )
}

fn plane_fitting() -> Outcome {
    let mut rng = stream(SEED, 900);
    let mut exact_err = 0.0f64;
    for _ in 0..20 {
        let truth = PlaneModel::new(
            Vector3::new(rng.random_range(-0.3..0.3), 1.0, rng.random_range(-0.3..0.3)),
            rng.random_range(1.0..3.0),
        )
        .map_err(fail)?;
        let n = *truth.normal();
        let e1 = n.cross(&Vector3::z()).normalize();
        let e2 = e1.cross(&n);
        let points: Vec<Point3> = (0..200)
            .map(|_| Point3::from(n * truth.distance() + e1 * rng.random_range(-10.0..10.0) + e2 * rng.random_range(-20.0..20.0)))
            .collect();
        let fit = fit_plane_normal(&points).map_err(fail)?;
        exact_err = exact_err
            .max((fit.normal() - truth.normal()).norm())
            .max((fit.distance() - truth.distance()).abs());
    }

    let noise = Normal::new(0.0, 0.01).map_err(fail)?;
    let points: Vec<Point3> = (0..1000)
        .map(|_| {
            let clean = Vector3::new(rng.random_range(-10.0..10.0), 1.65, rng.random_range(3.0..40.0));
            let jitter = Vector3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng));
            Point3::from(clean + jitter)
        })
        .collect();
    let fit = fit_plane_normal(&points).map_err(fail)?;
    let angle = fit.normal().dot(&Vector3::y()).clamp(-1.0, 1.0).acos().to_degrees();
    let height_err = (fit.distance() - 1.65).abs();
    check(
        exact_err < 1e-9 && angle < 0.5 && height_err < 0.01,
        format!(
            "exact planes max error {exact_err:.3e}; noisy fit {angle:.4} deg from vertical, d_c {:.5} m",
            fit.distance()
        ),
    )
}

fn pplx(dir: &Path, args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_pplx"))
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(fail)?;
    if !out.status.success() {
        return Err(format!("pplx {} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)));
    }
    Ok(out.stdout)
}

fn read(dir: &Path, name: &str) -> Result<Vec<u8>, String> {
    std::fs::read(dir.join(name)).map_err(|e| format!("{name}: {e}"))
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(fail)?;
    let dir = tmp.path();
    pplx(dir, &["--seed", "11", "render-synthetic", "--out-dir", "."])?;
    for name in ["prev", "next"] {
        pplx(
            dir,
            &[
                "--seed", "11", "align", "--src", &format!("{name}.png"), "--tgt", "target.png", "--matches",
                &format!("matches_{name}.csv"), "--out", &format!("aligned_{name}.png"), "--mask-out",
                &format!("mask_{name}.png"),
            ],
        )?;
    }
    let mut runs = Vec::new();
    for run in 0..2 {
        let verify_out = format!("verify_{run}.txt");
        let depth_out = format!("depth_{run}.png");
        let verify = pplx(dir, &["--seed", "7", "verify-derivation", "--trials", "10000", "--out", &verify_out])?;
        let solve = pplx(
            dir,
            &[
                "--seed", "7", "solve-depth", "--tgt", "target.png", "--prev", "aligned_prev.png", "--prev-mask",
                "mask_prev.png", "--next", "aligned_next.png", "--next-mask", "mask_next.png", "--t-prev",
                "0,0,-0.5", "--t-next", "0,0,0.5", "--intrinsics", "intrinsics.toml", "--out", &depth_out,
            ],
        )?;
        runs.push((verify, read(dir, &verify_out)?, solve, read(dir, &depth_out)?));
    }
    let (a, b) = (&runs[0], &runs[1]);
    check(
        a == b && !a.3.is_empty(),
        format!(
            "verify-derivation stdout+file identical: {}; solve-depth stdout+depth PNG ({} bytes) identical: {}",
            a.0 == b.0 && a.1 == b.1,
            a.3.len(),
            a.2 == b.2 && a.3 == b.3
        ),
    )
}

fn main() -> ExitCode {
    let scene = synthetic_frames(-0.5).and_then(|p| Ok((p, synthetic_frames(0.5)?)));
    let with_scene = |f: fn(&SyntheticFrames, &SyntheticFrames) -> Outcome| match &scene {
        Ok((prev, next)) => f(prev, next),
        Err(e) => Err(format!("cannot render the synthetic scene: {e}")),
    };
    let criteria: Vec<(&str, Outcome)> = vec![
        ("derivation equivalence", derivation_equivalence()),
        ("plane homography transfer", homography_transfer()),
        ("plane fixed point", plane_fixed_point()),
        ("RANSAC robustness", ransac_robustness()),
        ("synthesis fidelity", with_scene(synthesis_fidelity)),
        ("self-supervision signal", with_scene(self_supervision_signal)),
        ("loss identities", loss_identities()),
        ("metrics sanity", metrics_sanity()),
        ("plane fitting", plane_fitting()),
        ("determinism", determinism()),
    ];
    let mut failed = 0;
    for (i, (name, outcome)) in criteria.iter().enumerate() {
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
