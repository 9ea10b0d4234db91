//! Ray-cast synthetic scenes with exact ground truth.
//!
//! A scene is a set of finite textured planes seen by pinhole cameras. Every
//! pixel casts one ray, takes the nearest plane hit inside that plane's
//! extent and reports its depth and texture value. Textures are sums of a few
//! low-frequency sinusoids, so bilinear resampling of the rendered images is
//! accurate and photometric cost curves are smooth.

use nalgebra::{Vector2, Vector3};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, PixelPoint, PlaneModel, Point3, RigidMotion};
use crate::homography::{Correspondence, CorrespondenceSet};
use crate::image::ImageBuffer;
use crate::maps::DepthMap;
use crate::rng;

/// Intensity of rays that hit no plane.
pub const BACKGROUND: f32 = 0.5;

/// Tolerance for axis orthonormality and for a camera lying on a plane.
const GEOMETRY_TOL: f64 = 1e-9;

/// One sinusoidal component; frequencies are in cycles per meter along the
/// plane's two in-plane axes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wave {
    pub amplitude: f64,
    pub freq_u: f64,
    pub freq_v: f64,
    pub phase: f64,
}

impl Wave {
    pub fn new(amplitude: f64, freq_u: f64, freq_v: f64, phase: f64) -> Self {
        Self {
            amplitude,
            freq_u,
            freq_v,
            phase,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Texture {
    Constant(f64),
    Sinusoid { base: f64, waves: Vec<Wave> },
}

impl Texture {
    /// Intensity at in-plane coordinates `(u, v)`, meters.
    pub fn value(&self, u: f64, v: f64) -> f64 {
        match self {
            Texture::Constant(c) => *c,
            Texture::Sinusoid { base, waves } => {
                base + waves
                    .iter()
                    .map(|w| {
                        w.amplitude
                            * (std::f64::consts::TAU * (w.freq_u * u + w.freq_v * v) + w.phase).sin()
                    })
                    .sum::<f64>()
            }
        }
    }

    /// Smallest and largest value the texture can take.
    pub fn bounds(&self) -> (f64, f64) {
        match self {
            Texture::Constant(c) => (*c, *c),
            Texture::Sinusoid { base, waves } => {
                let a: f64 = waves.iter().map(|w| w.amplitude.abs()).sum();
                (base - a, base + a)
            }
        }
    }
}

/// A finite plane: `origin + a·axis_u + b·axis_v` for `(a, b)` inside
/// `extent = [a_min, a_max, b_min, b_max]`, all in world coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct TexturedPlane {
    pub origin: Point3,
    pub axis_u: Vector3<f64>,
    pub axis_v: Vector3<f64>,
    pub extent: [f64; 4],
    pub texture: Texture,
}

impl TexturedPlane {
    pub fn normal(&self) -> Vector3<f64> {
        self.axis_u.cross(&self.axis_v)
    }

    /// In-plane coordinates of a world point.
    pub fn local(&self, x: &Point3) -> Vector2<f64> {
        let d = x - self.origin;
        Vector2::new(d.dot(&self.axis_u), d.dot(&self.axis_v))
    }

    fn contains(&self, local: &Vector2<f64>) -> bool {
        let [a0, a1, b0, b1] = self.extent;
        (a0..=a1).contains(&local.x) && (b0..=b1).contains(&local.y)
    }

    /// The plane expressed in the frame of a camera with world→camera pose
    /// `pose`, oriented so that its distance is positive.
    pub fn in_camera(&self, pose: &RigidMotion) -> Result<PlaneModel> {
        let n = pose.rotation() * self.normal();
        let d = n.dot(&pose.transform(&self.origin).coords);
        if d >= 0.0 {
            PlaneModel::new(n, d)
        } else {
            PlaneModel::new(-n, -d)
        }
    }

    fn validate(&self, index: usize) -> Result<()> {
        let (u, v) = (&self.axis_u, &self.axis_v);
        if (u.norm() - 1.0).abs() > GEOMETRY_TOL
            || (v.norm() - 1.0).abs() > GEOMETRY_TOL
            || u.dot(v).abs() > GEOMETRY_TOL
        {
            return Err(Error::InvalidConfig(format!("plane {index}: axes are not orthonormal")));
        }
        let [a0, a1, b0, b1] = self.extent;
        if !(a0 < a1 && b0 < b1) {
            return Err(Error::InvalidConfig(format!("plane {index}: empty extent {:?}", self.extent)));
        }
        let (lo, hi) = self.texture.bounds();
        if !(lo >= 0.0 && hi <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "plane {index}: texture range [{lo}, {hi}] leaves [0, 1]"
            )));
        }
        Ok(())
    }
}

/// Textured planes seen by a target and a source camera. `planes[0]` is the
/// ground. Poses map world to camera coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub planes: Vec<TexturedPlane>,
    pub intrinsics: CameraIntrinsics,
    pub target_pose: RigidMotion,
    pub source_pose: RigidMotion,
}

/// Intrinsics of the default 256x192 synthetic camera.
pub fn default_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics {
        fx: 200.0,
        fy: 200.0,
        cx: 128.0,
        cy: 96.0,
        width: 256,
        height: 192,
    }
}

/// Camera height above the ground in the default scenes, meters.
pub const DEFAULT_CAMERA_HEIGHT: f64 = 1.65;

fn ground_plane(height: f64) -> TexturedPlane {
    TexturedPlane {
        origin: Point3::new(0.0, height, 0.0),
        axis_u: Vector3::x(),
        axis_v: Vector3::z(),
        extent: [-30.0, 30.0, -10.0, 60.0],
        texture: Texture::Sinusoid {
            base: 0.5,
            waves: vec![
                Wave::new(0.14, 0.0, 1.0 / 5.0, 0.7),
                Wave::new(0.12, 1.0 / 3.0, 1.0 / 7.0, 0.2),
                Wave::new(0.10, 1.0 / 2.2, 0.0, 1.9),
            ],
        },
    }
}

fn wall_plane(distance: f64, ground_height: f64) -> TexturedPlane {
    TexturedPlane {
        origin: Point3::new(0.0, 0.0, distance),
        axis_u: Vector3::x(),
        axis_v: Vector3::y(),
        extent: [-6.0, 6.0, -5.0, ground_height],
        texture: Texture::Sinusoid {
            base: 0.5,
            waves: vec![
                Wave::new(0.15, 1.0 / 1.1, 0.0, 0.3),
                Wave::new(0.12, 0.0, 1.0 / 0.95, 1.1),
                Wave::new(0.10, 1.0 / 1.6, 1.0 / 1.3, 2.0),
            ],
        },
    }
}

impl SceneSpec {
    /// Textured ground `DEFAULT_CAMERA_HEIGHT` below the target camera. The
    /// target camera sits at the world origin; the source camera is
    /// translated so that its center is at `source_center`.
    pub fn ground_only(intrinsics: CameraIntrinsics, source_center: Vector3<f64>) -> Self {
        Self {
            planes: vec![ground_plane(DEFAULT_CAMERA_HEIGHT)],
            intrinsics,
            target_pose: RigidMotion::identity(),
            source_pose: RigidMotion::from_translation(-source_center),
        }
    }

    /// Ground plus a fronto-parallel textured wall `wall_distance` meters in
    /// front of the target camera, wide and tall enough to fill every row
    /// above the ground from cameras near the origin.
    pub fn ground_and_wall(
        intrinsics: CameraIntrinsics,
        wall_distance: f64,
        source_center: Vector3<f64>,
    ) -> Self {
        let mut spec = Self::ground_only(intrinsics, source_center);
        spec.planes.push(wall_plane(wall_distance, DEFAULT_CAMERA_HEIGHT));
        spec
    }

    /// Checks plane definitions, that the ground is horizontal in the source
    /// camera, and that neither camera lies on a plane.
    pub fn validate(&self) -> Result<()> {
        if self.planes.is_empty() {
            return Err(Error::InvalidConfig("scene has no planes".into()));
        }
        for (i, p) in self.planes.iter().enumerate() {
            p.validate(i)?;
        }
        let n = self.source_pose.rotation() * self.planes[0].normal();
        if n.x.abs() > GEOMETRY_TOL || n.z.abs() > GEOMETRY_TOL {
            return Err(Error::InvalidConfig(format!(
                "ground normal in the source camera is {n:?}, expected (0, ±1, 0)"
            )));
        }
        for pose in [&self.target_pose, &self.source_pose] {
            check_camera_clear(&self.planes, pose)?;
        }
        Ok(())
    }

    /// Source→target motion, `x_t = R x_s + t`.
    pub fn relative_motion(&self) -> RigidMotion {
        relative_motion(&self.target_pose, &self.source_pose)
    }
}

/// Source→target motion between two world→camera poses.
pub fn relative_motion(target_pose: &RigidMotion, source_pose: &RigidMotion) -> RigidMotion {
    target_pose.compose(&source_pose.inverse())
}

fn camera_center(pose: &RigidMotion) -> Point3 {
    pose.inverse_transform(&Point3::origin())
}

fn check_camera_clear(planes: &[TexturedPlane], pose: &RigidMotion) -> Result<()> {
    let c = camera_center(pose);
    for (i, p) in planes.iter().enumerate() {
        let n = p.normal();
        if n.dot(&(c - p.origin)).abs() <= GEOMETRY_TOL && p.contains(&p.local(&c)) {
            return Err(Error::InvalidConfig(format!("camera center {c:?} lies on plane {i}")));
        }
    }
    Ok(())
}

/// One rendered camera.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedView {
    pub image: ImageBuffer,
    pub depth: DepthMap,
    /// Index of the plane seen at each pixel.
    pub labels: Vec<Option<usize>>,
}

/// Renders the planes from a camera with world→camera pose `pose`.
pub fn render_view(
    planes: &[TexturedPlane],
    intrinsics: &CameraIntrinsics,
    pose: &RigidMotion,
) -> Result<RenderedView> {
    check_camera_clear(planes, pose)?;
    let (w, h) = (intrinsics.width, intrinsics.height);
    let center = camera_center(pose);
    let rt = pose.rotation().transpose();
    let hits: Vec<Option<(f64, f64, usize)>> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let ray_cam = intrinsics.ray(&PixelPoint::new((i % w) as f64, (i / w) as f64));
            let dir = rt * ray_cam;
            let mut best: Option<(f64, f64, usize)> = None;
            for (k, plane) in planes.iter().enumerate() {
                let n = plane.normal();
                let denom = n.dot(&dir);
                if denom == 0.0 {
                    continue;
                }
                let s = n.dot(&(plane.origin - center)) / denom;
                if !(s > 0.0) || best.is_some_and(|(b, _, _)| b <= s) {
                    continue;
                }
                let local = plane.local(&(center + dir * s));
                if plane.contains(&local) {
                    best = Some((s, plane.texture.value(local.x, local.y), k));
                }
            }
            best
        })
        .collect();

    let mut data = Vec::with_capacity(w * h);
    let mut depth = Vec::with_capacity(w * h);
    let mut valid = Vec::with_capacity(w * h);
    let mut labels = Vec::with_capacity(w * h);
    for hit in hits {
        match hit {
            Some((s, value, k)) => {
                data.push(value as f32);
                depth.push(s);
                valid.push(true);
                labels.push(Some(k));
            }
            None => {
                data.push(BACKGROUND);
                depth.push(0.0);
                valid.push(false);
                labels.push(None);
            }
        }
    }
    Ok(RenderedView {
        image: ImageBuffer::new(w, h, 1, data)?,
        depth: DepthMap::new(w, h, depth, valid)?,
        labels,
    })
}

/// Everything known about a rendered image pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticFrames {
    pub target: RenderedView,
    pub source: RenderedView,
    /// Source→target motion.
    pub motion: RigidMotion,
    /// Ground plane in the source camera frame.
    pub plane: PlaneModel,
}

/// Renders both views of a scene together with the relative motion and the
/// ground plane.
pub fn render_synthetic(spec: &SceneSpec) -> Result<SyntheticFrames> {
    spec.validate()?;
    Ok(SyntheticFrames {
        target: render_view(&spec.planes, &spec.intrinsics, &spec.target_pose)?,
        source: render_view(&spec.planes, &spec.intrinsics, &spec.source_pose)?,
        motion: spec.relative_motion(),
        plane: spec.planes[0].in_camera(&spec.source_pose)?,
    })
}

/// Exact matches between ground pixels of the target and their images in the
/// source view, followed by `outliers` random pixel pairs. Target pixels are
/// drawn from the `seed` stream until `inliers` matches land inside the
/// source image.
pub fn ground_correspondences(
    spec: &SceneSpec,
    frames: &SyntheticFrames,
    inliers: usize,
    outliers: usize,
    seed: u64,
) -> Result<CorrespondenceSet> {
    let k = &spec.intrinsics;
    let ground: Vec<usize> = (0..frames.target.labels.len())
        .filter(|&i| frames.target.labels[i] == Some(0) && frames.target.depth.valid()[i])
        .collect();
    if ground.is_empty() {
        return Err(Error::NoValidPixels("no ground pixels in the target view"));
    }
    let mut rng = rng::stream(seed, 0);
    let (w, h) = (k.width as f64, k.height as f64);
    let mut matches = Vec::with_capacity(inliers + outliers);
    let mut attempts = 0usize;
    while matches.len() < inliers {
        attempts += 1;
        if attempts > 100 * inliers.max(1) {
            return Err(Error::EstimationFailed(
                "too few ground pixels are visible in both views".into(),
            ));
        }
        let i = ground[rng.random_range(0..ground.len())];
        let target = PixelPoint::new(
            (i % k.width) as f64 + rng.random_range(-0.5..0.5),
            (i / k.width) as f64 + rng.random_range(-0.5..0.5),
        );
        let ray = spec.target_pose.rotation().transpose() * k.ray(&target);
        let center = camera_center(&spec.target_pose);
        let g = &spec.planes[0];
        let s = g.normal().dot(&(g.origin - center)) / g.normal().dot(&ray);
        if !(s > 0.0) {
            continue;
        }
        let Ok(source) = k.project(&spec.source_pose.transform(&(center + ray * s))) else {
            continue;
        };
        if (0.0..=w - 1.0).contains(&source.x) && (0.0..=h - 1.0).contains(&source.y) {
            matches.push(Correspondence::new(source, target));
        }
    }
    for _ in 0..outliers {
        let source = PixelPoint::new(rng.random_range(0.0..w - 1.0), rng.random_range(0.0..h - 1.0));
        let target = PixelPoint::new(rng.random_range(0.0..w - 1.0), rng.random_range(0.0..h - 1.0));
        matches.push(Correspondence::new(source, target));
    }
    CorrespondenceSet::new(matches)
}
