use nalgebra::Vector3;
use planar_parallax::depth_solver::{eval_metrics, plane_sweep_gamma, AlignedSource, SweepConfig, SweepOutput};
use planar_parallax::homography::{compose_plane_homography, warp_image_homography};
use planar_parallax::image::masked_mean_abs_diff;
use planar_parallax::parallax::{planar_parallax_map, residual_parallax, synthesize_target};
use planar_parallax::synthetic::{default_intrinsics, render_synthetic, SceneSpec, SyntheticFrames};
use planar_parallax::{DepthMap, ImageBuffer, PixelPoint};

const WALL_DISTANCE: f64 = 8.0;
const GROUND: usize = 0;
const WALL: usize = 1;

/// Target at the origin, source camera `offset` meters along the optical axis.
fn frames(offset: f64) -> SyntheticFrames {
    let spec = SceneSpec::ground_and_wall(default_intrinsics(), WALL_DISTANCE, Vector3::new(0.0, 0.0, offset));
    render_synthetic(&spec).unwrap()
}

fn aligned(f: &SyntheticFrames) -> (ImageBuffer, Vec<bool>) {
    let k = default_intrinsics();
    let h = compose_plane_homography(&f.motion, &f.plane, &k, &k).unwrap();
    warp_image_homography(&f.source.image, &h).unwrap()
}

fn sweep(prev: &SyntheticFrames, next: &SyntheticFrames) -> SweepOutput {
    let (ap, mp) = aligned(prev);
    let (an, mn) = aligned(next);
    plane_sweep_gamma(
        &prev.target.image,
        AlignedSource::new(&ap, *prev.motion.translation()).with_mask(&mp),
        AlignedSource::new(&an, *next.motion.translation()).with_mask(&mn),
        &prev.plane,
        &default_intrinsics(),
        &SweepConfig::default(),
    )
    .unwrap()
}

/// Pixels of `label` whose 3x3 neighbourhood shares the label and that stay
/// `margin` pixels away from the border.
fn interior(labels: &[Option<usize>], label: usize, margin: usize) -> Vec<usize> {
    let k = default_intrinsics();
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

#[test]
fn ground_truth_synthesis_reproduces_target() {
    let k = default_intrinsics();
    for offset in [-0.5, 0.5] {
        let f = frames(offset);
        let (al, al_mask) = aligned(&f);
        let field = planar_parallax_map(&f.target.depth, f.motion.translation(), &f.plane, &k).unwrap();
        let (synth, mask) = synthesize_target(&al, Some(&al_mask), &field).unwrap();
        let covered = mask.iter().filter(|v| **v).count();
        assert!(covered > k.pixel_count() / 2, "only {covered} synthesized pixels");
        let err = masked_mean_abs_diff(&f.target.image, &synth, &mask).unwrap();
        assert!(err < 0.01, "offset {offset}: mean error {err}");
    }
}

#[test]
fn sweep_recovers_wall_depth_and_road_plane() {
    let k = default_intrinsics();
    let (prev, next) = (frames(-0.5), frames(0.5));
    let out = sweep(&prev, &next);
    let labels = &prev.target.labels;

    let wall: Vec<usize> = interior(labels, WALL, 1)
        .into_iter()
        .filter(|&i| !out.low_confidence[i])
        .collect();
    assert!(wall.len() > 30_000, "{} confident wall pixels", wall.len());
    let mut values = vec![0.0; k.pixel_count()];
    let mut valid = vec![false; k.pixel_count()];
    for &i in &wall {
        values[i] = out.depth.values()[i];
        valid[i] = true;
    }
    let pred = DepthMap::new(k.width, k.height, values, valid).unwrap();
    let metrics = eval_metrics(&pred, &prev.target.depth, 80.0).unwrap();
    assert!(metrics.abs_rel < 0.05, "wall abs rel {}", metrics.abs_rel);

    let road: Vec<usize> = interior(labels, GROUND, 4)
        .into_iter()
        .filter(|&i| !out.low_confidence[i])
        .collect();
    assert!(road.len() > 10_000, "{} confident road pixels", road.len());
    let mut shifts: Vec<f64> = road
        .iter()
        .map(|&i| {
            let p = PixelPoint::new((i % k.width) as f64, (i / k.width) as f64);
            residual_parallax(&p, out.gamma.values()[i], next.motion.translation(), next.plane.distance(), &k)
                .unwrap()
                .norm()
        })
        .collect();
    shifts.sort_by(f64::total_cmp);
    let median = shifts[shifts.len() / 2];
    let within = shifts.iter().filter(|d| **d < 0.5).count() as f64 / shifts.len() as f64;
    assert!(median < 0.1, "median road shift {median}");
    assert!(within > 0.999, "only {within} of road pixels within 0.5 px");
    assert!(*shifts.last().unwrap() < 1.0, "worst road shift {}", shifts.last().unwrap());
}
