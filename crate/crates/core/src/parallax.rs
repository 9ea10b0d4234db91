//! Residual parallax after plane alignment, and target-view synthesis from
//! the aligned source image.
//!
//! Conventions: `t` and `R` map source-camera coordinates to target-camera
//! coordinates (`x = R x' + t`). The structure `γ = h / Z` uses the depth `Z`
//! of the point in the *target* camera, while `d_c` is the distance from the
//! *source* camera to the plane. With these conventions the displacement
//! between the homography-warped source pixel `p_w` and the target pixel `p`
//! is
//!
//! ```text
//! p_w - p = γ / (d_c - γ t_z) · (t_z p - K t)
//! ```
//!
//! which involves the translation only. [`full_reprojection_oracle`]
//! computes the same `p_w` the long way (backproject, move, reproject, apply
//! the plane homography) and serves as the independent check.

use nalgebra::{Vector2, Vector3};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, PixelPoint, PlaneModel, Point3, RigidMotion};
use crate::homography::compose_plane_homography;
use crate::image::{Footprint, ImageBuffer};
use crate::maps::{gamma_from_depth, DepthMap, GammaMap};
use crate::rng;

/// Guard on `|d_c - γ t_z|`, meters.
pub const PARALLAX_EPS: f64 = 1e-6;

/// Displacement `p_w - p` for target pixel `p` with structure `gamma`.
#[inline]
pub fn residual_parallax(
    p: &PixelPoint,
    gamma: f64,
    t: &Vector3<f64>,
    plane_distance: f64,
    k_target: &CameraIntrinsics,
) -> Result<Vector2<f64>> {
    let denominator = plane_distance - gamma * t.z;
    if !(denominator.abs() > PARALLAX_EPS) {
        return Err(Error::ParallaxSingularity { denominator });
    }
    let kt = k_target.apply(t);
    let v = Vector3::new(t.z * p.x, t.z * p.y, t.z) - kt;
    debug_assert!(v.z == 0.0, "homogeneous component must cancel");
    let s = gamma / denominator;
    Ok(Vector2::new(s * v.x, s * v.y))
}

/// The epipole `K t / t_z`, the point all residual-parallax vectors pass
/// through. `None` for sideways motion (`t_z = 0`).
pub fn epipole(t: &Vector3<f64>, k_target: &CameraIntrinsics) -> Option<PixelPoint> {
    if t.z == 0.0 {
        return None;
    }
    let kt = k_target.apply(t);
    Some(PixelPoint::new(kt.x / t.z, kt.y / t.z))
}

/// Dense per-pixel `p_w` coordinates into the aligned image.
#[derive(Debug, Clone, PartialEq)]
pub struct ParallaxField {
    width: usize,
    height: usize,
    coords: Vec<PixelPoint>,
    valid: Vec<bool>,
}

impl ParallaxField {
    pub fn new(width: usize, height: usize, coords: Vec<PixelPoint>, valid: Vec<bool>) -> Result<Self> {
        if coords.len() != width * height || valid.len() != width * height {
            return Err(Error::InvalidConfig("parallax field size does not match its grid".into()));
        }
        Ok(Self {
            width,
            height,
            coords,
            valid,
        })
    }

    /// `p_w = p` everywhere.
    pub fn identity(width: usize, height: usize) -> Self {
        let coords = (0..width * height)
            .map(|i| PixelPoint::new((i % width) as f64, (i / width) as f64))
            .collect();
        Self {
            width,
            height,
            coords,
            valid: vec![true; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn coords(&self) -> &[PixelPoint] {
        &self.coords
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    /// `p_w` at `(x, y)` if valid.
    pub fn get(&self, x: usize, y: usize) -> Option<PixelPoint> {
        let i = y * self.width + x;
        self.valid[i].then_some(self.coords[i])
    }

    /// Largest `|p_w - p|` over valid pixels.
    pub fn max_displacement(&self) -> f64 {
        self.coords
            .iter()
            .zip(&self.valid)
            .enumerate()
            .filter(|(_, (_, ok))| **ok)
            .map(|(i, (c, _))| {
                (c - PixelPoint::new((i % self.width) as f64, (i / self.width) as f64)).norm()
            })
            .fold(0.0, f64::max)
    }
}

/// `p_w` for every target pixel from a structure map.
pub fn parallax_field_from_gamma(
    gamma: &GammaMap,
    t: &Vector3<f64>,
    plane_distance: f64,
    k_target: &CameraIntrinsics,
) -> ParallaxField {
    let (w, h) = gamma.dims();
    let (coords, valid): (Vec<PixelPoint>, Vec<bool>) = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let p = PixelPoint::new((i % w) as f64, (i / w) as f64);
            match gamma
                .get(i % w, i / w)
                .map(|g| residual_parallax(&p, g, t, plane_distance, k_target))
            {
                Some(Ok(d)) => (PixelPoint::from(p.coords + d), true),
                _ => (p, false),
            }
        })
        .unzip();
    ParallaxField {
        width: w,
        height: h,
        coords,
        valid,
    }
}

/// Structure from depth, then `p_w = p + residual_parallax(p)` per pixel.
/// Invalid depth or the singularity guard make a pixel invalid.
pub fn planar_parallax_map(
    depth: &DepthMap,
    t: &Vector3<f64>,
    plane: &PlaneModel,
    k_target: &CameraIntrinsics,
) -> Result<ParallaxField> {
    let gamma = gamma_from_depth(depth, k_target, plane)?;
    Ok(parallax_field_from_gamma(&gamma, t, plane.distance(), k_target))
}

/// `Î_w(p) = I_w(p_w)` by bilinear sampling. Returns the synthesized image
/// and its validity mask. When `aligned_valid` is given, samples touching an
/// invalid aligned pixel are invalid too.
pub fn synthesize_target(
    aligned: &ImageBuffer,
    aligned_valid: Option<&[bool]>,
    field: &ParallaxField,
) -> Result<(ImageBuffer, Vec<bool>)> {
    aligned.ensure_dims(field.width, field.height)?;
    let c = aligned.channels();
    let n = field.width * field.height;
    if aligned_valid.is_some_and(|m| m.len() != n) {
        return Err(Error::InvalidConfig("aligned mask size does not match image".into()));
    }
    let mut data = vec![0.0f32; n * c];
    let mut mask = vec![false; n];
    data.par_chunks_mut(c)
        .zip(mask.par_iter_mut())
        .enumerate()
        .for_each(|(i, (out, ok))| {
            if field.valid[i] {
                let q = field.coords[i];
                let covered = aligned_valid.is_none_or(|m| {
                    Footprint::new(field.width, field.height, q.x, q.y).is_some_and(|fp| fp.inside(m))
                });
                *ok = covered && aligned.sample_bilinear(q.x, q.y, out);
            }
        });
    Ok((ImageBuffer::new(field.width, field.height, c, data)?, mask))
}

/// `p_w` without the residual-parallax formula: backproject `p` at `depth`,
/// move the point into the source camera, project with `K'`, then apply the
/// plane homography.
pub fn full_reprojection_oracle(
    p: &PixelPoint,
    depth: f64,
    motion: &RigidMotion,
    plane: &PlaneModel,
    k_target: &CameraIntrinsics,
    k_source: &CameraIntrinsics,
) -> Result<PixelPoint> {
    let x = k_target.backproject(p, depth)?;
    let x_src = motion.inverse_transform(&x);
    let p_src = k_source.project(&x_src)?;
    let h = compose_plane_homography(motion, plane, k_target, k_source)?;
    h.apply(&p_src)
}

/// Exact structure of the point seen at `p` with target depth `depth`: the
/// height is measured in the source frame, where the plane is defined.
pub fn source_frame_gamma(
    p: &PixelPoint,
    depth: f64,
    motion: &RigidMotion,
    plane: &PlaneModel,
    k_target: &CameraIntrinsics,
) -> Result<f64> {
    let x: Point3 = k_target.backproject(p, depth)?;
    Ok(plane.height_of(&motion.inverse_transform(&x)) / depth)
}

/// Result of a randomized comparison between the residual-parallax formula
/// and the full reprojection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivationReport {
    pub trials: usize,
    pub valid: usize,
    pub max_err_px: f64,
    pub mean_err_px: f64,
}

/// Draws `trials` random configurations (rotation up to 0.3 rad about a
/// random axis, `‖t‖ ≤ 2 m`, plane tilted up to ~0.2 rad from horizontal with
/// `d_c ∈ [1, 3]`, target depth in `[2, 80]`, KITTI-like intrinsics with
/// distinct source calibration) and compares both routes to `p_w`.
/// Configurations where either route is undefined are skipped.
pub fn verify_derivation(trials: usize, seed: u64) -> DerivationReport {
    let errors: Vec<Option<f64>> = (0..trials)
        .into_par_iter()
        .map(|i| derivation_trial(&mut rng::stream(seed, i as u64)))
        .collect();
    let valid: Vec<f64> = errors.into_iter().flatten().collect();
    let max_err_px = valid.iter().copied().fold(0.0, f64::max);
    let mean_err_px = if valid.is_empty() {
        0.0
    } else {
        crate::maps::pairwise_sum(&valid) / valid.len() as f64
    };
    DerivationReport {
        trials,
        valid: valid.len(),
        max_err_px,
        mean_err_px,
    }
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

fn derivation_trial(rng: &mut impl Rng) -> Option<f64> {
    let angle = rng.random_range(0.0..0.3);
    let translation = random_unit(rng) * 2.0 * rng.random::<f64>().cbrt();
    let motion = RigidMotion::from_axis_angle(random_unit(rng) * angle, translation);
    let tilt = Vector3::new(rng.random_range(-0.2..0.2), 1.0, rng.random_range(-0.2..0.2));
    let plane = PlaneModel::new(tilt, rng.random_range(1.0..3.0)).ok()?;
    let k_target = CameraIntrinsics::kitti_like(1242, 375);
    let k_source = CameraIntrinsics {
        fx: k_target.fx * rng.random_range(0.95..1.05),
        fy: k_target.fy * rng.random_range(0.95..1.05),
        cx: k_target.cx + rng.random_range(-10.0..10.0),
        cy: k_target.cy + rng.random_range(-10.0..10.0),
        ..k_target
    };
    let p = PixelPoint::new(
        rng.random_range(0.0..k_target.width as f64),
        rng.random_range(0.0..k_target.height as f64),
    );
    let depth = rng.random_range(2.0..80.0);

    let oracle = full_reprojection_oracle(&p, depth, &motion, &plane, &k_target, &k_source).ok()?;
    // the source point must be comfortably in front of the source camera
    let x_src = motion.inverse_transform(&k_target.backproject(&p, depth).ok()?);
    if x_src.z < 0.1 {
        return None;
    }
    let gamma = source_frame_gamma(&p, depth, &motion, &plane, &k_target).ok()?;
    let d = residual_parallax(&p, gamma, motion.translation(), plane.distance(), &k_target).ok()?;
    let predicted = p.coords + d;
    Some((predicted - oracle.coords).norm())
}
