//! Pinhole camera, rigid motion and reference-plane primitives.
//!
//! Coordinates follow the usual computer vision convention: x right, y down,
//! z forward. A camera mounted above a flat road therefore sees the road as
//! the plane `y = d_c` with normal `(0, 1, 0)`.

use nalgebra::{Matrix3, Point2, Point3 as NaPoint3, Vector3};

use crate::error::{Error, Result};

/// Camera-frame 3D point, meters.
pub type Point3 = NaPoint3<f64>;

/// Continuous pixel coordinates `(u, v)`.
pub type PixelPoint = Point2<f64>;

/// Smallest admissible depth, meters.
pub const DEPTH_MIN: f64 = 0.1;

/// Largest admissible depth, meters. Matches the output range of a depth
/// decoder whose sigmoid is scaled by 250.
pub const DEPTH_MAX: f64 = 250.0;

/// Nominal KITTI camera height above the road, meters.
pub const KITTI_CAMERA_HEIGHT: f64 = 1.65;

const ROTATION_TOL: f64 = 1e-9;

/// Zero-skew pinhole calibration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(Error::InvalidIntrinsics(format!(
                "focal lengths must be positive and finite (fx = {fx}, fy = {fy})"
            )));
        }
        if !(cx.is_finite() && cy.is_finite()) {
            return Err(Error::InvalidIntrinsics("principal point must be finite".into()));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidIntrinsics(format!(
                "image size must be at least 1x1, got {width}x{height}"
            )));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// KITTI-like calibration rescaled to `width x height`.
    pub fn kitti_like(width: usize, height: usize) -> Self {
        let sx = width as f64 / 1242.0;
        let sy = height as f64 / 375.0;
        Self {
            fx: 721.5377 * sx,
            fy: 721.5377 * sy,
            cx: 609.5593 * sx,
            cy: 172.854 * sy,
            width,
            height,
        }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    /// `K⁻¹ [u, v, 1]ᵀ`, the viewing ray with unit z component.
    #[inline]
    pub fn ray(&self, pixel: &PixelPoint) -> Vector3<f64> {
        Vector3::new(
            (pixel.x - self.cx) / self.fx,
            (pixel.y - self.cy) / self.fy,
            1.0,
        )
    }

    /// `K t` for a translation vector.
    #[inline]
    pub fn apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        Vector3::new(
            self.fx * v.x + self.cx * v.z,
            self.fy * v.y + self.cy * v.z,
            v.z,
        )
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Projects a camera-frame point to pixel coordinates.
    pub fn project(&self, point: &Point3) -> Result<PixelPoint> {
        if !(point.z > 0.0) {
            return Err(Error::BehindCamera { z: point.z });
        }
        Ok(PixelPoint::new(
            self.fx * point.x / point.z + self.cx,
            self.fy * point.y / point.z + self.cy,
        ))
    }

    /// Lifts a pixel to the 3D point at depth `depth` along its ray.
    pub fn backproject(&self, pixel: &PixelPoint, depth: f64) -> Result<Point3> {
        if !(depth > 0.0) {
            return Err(Error::NonPositiveDepth(depth));
        }
        Ok(Point3::from(self.ray(pixel) * depth))
    }
}

/// Free-function form of [`CameraIntrinsics::project`].
pub fn project(point: &Point3, intrinsics: &CameraIntrinsics) -> Result<PixelPoint> {
    intrinsics.project(point)
}

/// Free-function form of [`CameraIntrinsics::backproject`].
pub fn backproject(pixel: &PixelPoint, depth: f64, intrinsics: &CameraIntrinsics) -> Result<Point3> {
    intrinsics.backproject(pixel, depth)
}

/// Rigid transform mapping source-camera coordinates to target-camera
/// coordinates: `x = R x' + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidMotion {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl RigidMotion {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if !(ortho <= ROTATION_TOL) {
            return Err(Error::InvalidRotation(format!("|RᵀR - I| = {ortho:e}")));
        }
        let det = rotation.determinant();
        if !((det - 1.0).abs() <= ROTATION_TOL) {
            return Err(Error::InvalidRotation(format!("det(R) = {det}")));
        }
        if !translation.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidRotation("translation is not finite".into()));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Rotation by `axis_angle` (direction = axis, norm = angle in radians).
    pub fn from_axis_angle(axis_angle: Vector3<f64>, translation: Vector3<f64>) -> Self {
        let rotation = *nalgebra::Rotation3::new(axis_angle).matrix();
        Self {
            rotation,
            translation,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn transform(&self, point: &Point3) -> Point3 {
        Point3::from(self.rotation * point.coords + self.translation)
    }

    /// `R⁻¹ (x - t)`.
    pub fn inverse_transform(&self, point: &Point3) -> Point3 {
        Point3::from(self.rotation.transpose() * (point.coords - self.translation))
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidMotion) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }
}

/// Reference plane `Nᵀ x = d_c` in the source camera frame. `d_c` is the
/// perpendicular distance from the camera center to the plane, so the camera
/// lies on the side opposite to `N`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneModel {
    normal: Vector3<f64>,
    distance: f64,
}

impl PlaneModel {
    /// Builds a plane from any non-zero normal; the normal is rescaled to unit
    /// length.
    pub fn new(normal: Vector3<f64>, distance: f64) -> Result<Self> {
        let norm = normal.norm();
        if !(norm > 1e-12 && norm.is_finite()) {
            return Err(Error::InvalidPlane(format!("normal has norm {norm}")));
        }
        if !(distance > 0.0 && distance.is_finite()) {
            return Err(Error::InvalidPlane(format!(
                "camera-to-plane distance must be positive, got {distance}"
            )));
        }
        Ok(Self {
            normal: normal / norm,
            distance,
        })
    }

    /// Horizontal road `y = height` below a level camera.
    pub fn road(height: f64) -> Result<Self> {
        Self::new(Vector3::new(0.0, 1.0, 0.0), height)
    }

    pub fn kitti_road() -> Self {
        Self {
            normal: Vector3::new(0.0, 1.0, 0.0),
            distance: KITTI_CAMERA_HEIGHT,
        }
    }

    pub fn normal(&self) -> &Vector3<f64> {
        &self.normal
    }

    pub fn distance(&self) -> f64 {
        self.distance
    }

    /// Height of `point` above the plane, `d_c - Nᵀ x`. Negative below the
    /// plane; never clamped.
    #[inline]
    pub fn height_of(&self, point: &Point3) -> f64 {
        self.distance - self.normal.dot(&point.coords)
    }
}

/// Free-function form of [`PlaneModel::height_of`].
pub fn point_plane_height(point: &Point3, plane: &PlaneModel) -> f64 {
    plane.height_of(point)
}
