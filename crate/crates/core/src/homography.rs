//! Plane-induced homographies: analytic composition, robust estimation from
//! point matches, and inverse warping of images.

use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::seq::index;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, PixelPoint, PlaneModel, RigidMotion};
use crate::image::ImageBuffer;
use crate::rng;

const SINGULAR_DET: f64 = 1e-12;
const INFINITY_EPS: f64 = 1e-12;
/// Relative size of the second smallest singular value below which the DLT
/// system is treated as rank deficient.
const RANK_TOL: f64 = 1e-10;
const MIN_SAMPLE: usize = 4;

/// 3x3 projective map, stored scale-normalized: `H[2][2] = 1` when that entry
/// is not vanishing, unit Frobenius norm otherwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    matrix: Matrix3<f64>,
}

impl Homography {
    pub fn new(matrix: Matrix3<f64>) -> Result<Self> {
        if !matrix.iter().all(|v| v.is_finite()) {
            return Err(Error::SingularHomography);
        }
        let scale = if matrix[(2, 2)].abs() > 1e-12 {
            matrix[(2, 2)]
        } else {
            matrix.norm()
        };
        if scale == 0.0 {
            return Err(Error::SingularHomography);
        }
        let matrix = matrix / scale;
        if !(matrix.determinant().abs() > SINGULAR_DET) {
            return Err(Error::SingularHomography);
        }
        Ok(Self { matrix })
    }

    pub fn identity() -> Self {
        Self {
            matrix: Matrix3::identity(),
        }
    }

    /// Pure pixel translation `p ↦ p + (du, dv)`.
    pub fn translation(du: f64, dv: f64) -> Self {
        Self {
            matrix: Matrix3::new(1.0, 0.0, du, 0.0, 1.0, dv, 0.0, 0.0, 1.0),
        }
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.matrix
    }

    /// Row-major entries.
    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.matrix;
        [
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
        ]
    }

    pub fn from_row_major(v: &[f64; 9]) -> Result<Self> {
        Self::new(Matrix3::from_row_slice(v))
    }

    pub fn inverse(&self) -> Result<Self> {
        let inv = self.matrix.try_inverse().ok_or(Error::SingularHomography)?;
        Self::new(inv)
    }

    /// Perspective-divided image of `p`.
    #[inline]
    pub fn apply(&self, p: &PixelPoint) -> Result<PixelPoint> {
        let q = self.matrix * Vector3::new(p.x, p.y, 1.0);
        if !(q.z.abs() > INFINITY_EPS) {
            return Err(Error::PointAtInfinity);
        }
        Ok(PixelPoint::new(q.x / q.z, q.y / q.z))
    }

    /// Relative Frobenius distance after normalizing both to unit norm and a
    /// common sign.
    pub fn relative_error(&self, other: &Homography) -> f64 {
        let a = self.matrix / self.matrix.norm();
        let b = other.matrix / other.matrix.norm();
        (a - b).norm().min((a + b).norm())
    }
}

/// Free-function form of [`Homography::apply`].
pub fn apply_homography(h: &Homography, p: &PixelPoint) -> Result<PixelPoint> {
    h.apply(p)
}

/// `H = K (R + t Nᵀ / d_c) K'⁻¹`, mapping source pixels of plane points onto
/// their target pixels.
pub fn compose_plane_homography(
    motion: &RigidMotion,
    plane: &PlaneModel,
    k_target: &CameraIntrinsics,
    k_source: &CameraIntrinsics,
) -> Result<Homography> {
    let euclidean =
        motion.rotation() + motion.translation() * plane.normal().transpose() / plane.distance();
    Homography::new(k_target.matrix() * euclidean * k_source.inverse_matrix())
}

/// One source/target pixel match.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub source: PixelPoint,
    pub target: PixelPoint,
}

impl Correspondence {
    pub fn new(source: PixelPoint, target: PixelPoint) -> Self {
        Self { source, target }
    }
}

/// Ordered list of pixel matches with finite coordinates.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorrespondenceSet {
    matches: Vec<Correspondence>,
}

impl CorrespondenceSet {
    pub fn new(matches: Vec<Correspondence>) -> Result<Self> {
        if let Some(i) = matches.iter().position(|m| {
            ![m.source.x, m.source.y, m.target.x, m.target.y]
                .iter()
                .all(|v| v.is_finite())
        }) {
            return Err(Error::InvalidConfig(format!(
                "correspondence {i} has non-finite coordinates"
            )));
        }
        Ok(Self { matches })
    }

    pub fn len(&self) -> usize {
        self.matches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matches.is_empty()
    }

    pub fn matches(&self) -> &[Correspondence] {
        &self.matches
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Correspondence> {
        self.matches.iter()
    }

    fn subset(&self, keep: impl Iterator<Item = usize>) -> Vec<Correspondence> {
        keep.map(|i| self.matches[i]).collect()
    }
}

impl FromIterator<Correspondence> for CorrespondenceSet {
    fn from_iter<I: IntoIterator<Item = Correspondence>>(iter: I) -> Self {
        Self {
            matches: iter.into_iter().collect(),
        }
    }
}

/// Similarity taking points to zero centroid and RMS distance √2.
fn hartley_normalization(points: impl Iterator<Item = PixelPoint> + Clone) -> Result<Matrix3<f64>> {
    let n = points.clone().count() as f64;
    let (sx, sy) = points.clone().fold((0.0, 0.0), |(sx, sy), p| (sx + p.x, sy + p.y));
    let (cx, cy) = (sx / n, sy / n);
    let ms = points.fold(0.0, |acc, p| acc + (p.x - cx).powi(2) + (p.y - cy).powi(2)) / n;
    let rms = ms.sqrt();
    if !(rms > 1e-12) {
        return Err(Error::Degenerate("all points coincide".into()));
    }
    let s = std::f64::consts::SQRT_2 / rms;
    Ok(Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0))
}

fn dlt(matches: &[Correspondence]) -> Result<Homography> {
    if matches.len() < MIN_SAMPLE {
        return Err(Error::NotEnoughCorrespondences {
            needed: MIN_SAMPLE,
            got: matches.len(),
        });
    }
    let t_src = hartley_normalization(matches.iter().map(|m| m.source))?;
    let t_dst = hartley_normalization(matches.iter().map(|m| m.target))?;

    // SVD needs at least as many rows as unknowns to expose the null vector.
    let rows = (2 * matches.len()).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, m) in matches.iter().enumerate() {
        let s = t_src * Vector3::new(m.source.x, m.source.y, 1.0);
        let d = t_dst * Vector3::new(m.target.x, m.target.y, 1.0);
        let (x, y) = (s.x, s.y);
        let (xp, yp) = (d.x, d.y);
        let r = 2 * i;
        a.row_mut(r)
            .copy_from_slice(&[-x, -y, -1.0, 0.0, 0.0, 0.0, xp * x, xp * y, xp]);
        a.row_mut(r + 1)
            .copy_from_slice(&[0.0, 0.0, 0.0, -x, -y, -1.0, yp * x, yp * y, yp]);
    }

    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| Error::Degenerate("SVD did not converge".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    let largest = svd.singular_values[order[order.len() - 1]];
    let second_smallest = svd.singular_values[order[1]];
    if !(second_smallest > RANK_TOL * largest) {
        return Err(Error::Degenerate(format!(
            "rank-deficient DLT system (σ₈/σ₁ = {:e})",
            second_smallest / largest
        )));
    }
    let h = v_t.row(order[0]);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let t_dst_inv = t_dst.try_inverse().ok_or(Error::SingularHomography)?;
    Homography::new(t_dst_inv * hn * t_src)
}

/// Normalized direct linear transform over all matches.
pub fn estimate_homography_dlt(matches: &CorrespondenceSet) -> Result<Homography> {
    dlt(matches.matches())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacConfig {
    /// Symmetric transfer error threshold, pixels.
    pub threshold: f64,
    pub max_iterations: usize,
    /// Early-exit confidence in `(0, 1)`.
    pub confidence: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            threshold: 1.0,
            max_iterations: 2000,
            confidence: 0.999,
            seed: 0,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0) {
            return Err(Error::InvalidConfig("RANSAC threshold must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("RANSAC needs at least one iteration".into()));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::InvalidConfig("RANSAC confidence must be in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacOutcome {
    pub homography: Homography,
    pub inliers: Vec<bool>,
    pub iterations: usize,
}

impl RansacOutcome {
    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|v| **v).count()
    }
}

/// `d(x', H x)² + d(x, H⁻¹ x')²`, or `None` when either side maps to infinity.
pub fn symmetric_transfer_error_sq(
    h: &Homography,
    h_inv: &Homography,
    m: &Correspondence,
) -> Option<f64> {
    let fwd = h.apply(&m.source).ok()?;
    let bwd = h_inv.apply(&m.target).ok()?;
    Some((fwd - m.target).norm_squared() + (bwd - m.source).norm_squared())
}

struct Score {
    inliers: Vec<bool>,
    count: usize,
    error_sum: f64,
}

fn score(h: &Homography, matches: &[Correspondence], threshold_sq: f64) -> Option<Score> {
    let h_inv = h.inverse().ok()?;
    let mut inliers = vec![false; matches.len()];
    let mut count = 0;
    let mut error_sum = 0.0;
    for (flag, m) in inliers.iter_mut().zip(matches) {
        if let Some(e) = symmetric_transfer_error_sq(h, &h_inv, m) {
            if e <= threshold_sq {
                *flag = true;
                count += 1;
                error_sum += e.sqrt();
            }
        }
    }
    Some(Score {
        inliers,
        count,
        error_sum,
    })
}

fn required_iterations(inlier_ratio: f64, confidence: f64) -> usize {
    let all_good = inlier_ratio.powi(MIN_SAMPLE as i32);
    if all_good >= 1.0 {
        return 0;
    }
    if all_good <= 0.0 {
        return usize::MAX;
    }
    let n = (1.0 - confidence).ln() / (1.0 - all_good).ln();
    if n.is_finite() {
        n.ceil() as usize
    } else {
        usize::MAX
    }
}

/// RANSAC over minimal 4-point DLT fits, scored by inlier count under the
/// symmetric transfer error (ties go to the lower summed error), then refit
/// by DLT on the winning inlier set.
///
/// Iteration `i` draws its sample from its own generator stream derived from
/// `config.seed`, so results are reproducible bit for bit.
pub fn estimate_homography_ransac(
    matches: &CorrespondenceSet,
    config: &RansacConfig,
) -> Result<RansacOutcome> {
    config.validate()?;
    let n = matches.len();
    if n < MIN_SAMPLE {
        return Err(Error::NotEnoughCorrespondences {
            needed: MIN_SAMPLE,
            got: n,
        });
    }
    let all = matches.matches();
    let threshold_sq = config.threshold * config.threshold;

    let mut best: Option<(Homography, Score)> = None;
    let mut needed = config.max_iterations;
    let mut iterations = 0;
    while iterations < needed.min(config.max_iterations) {
        let mut stream = rng::stream(config.seed, iterations as u64);
        iterations += 1;
        let sample = index::sample(&mut stream, n, MIN_SAMPLE);
        let Ok(h) = dlt(&matches.subset(sample.iter())) else {
            continue;
        };
        let Some(s) = score(&h, all, threshold_sq) else {
            continue;
        };
        let better = match &best {
            None => true,
            Some((_, b)) => {
                s.count > b.count || (s.count == b.count && s.error_sum < b.error_sum)
            }
        };
        if better {
            needed = required_iterations(s.count as f64 / n as f64, config.confidence);
            best = Some((h, s));
        }
    }

    let Some((hypothesis, best_score)) = best.filter(|(_, s)| s.count >= MIN_SAMPLE) else {
        return Err(Error::EstimationFailed(format!(
            "no hypothesis with at least {MIN_SAMPLE} inliers after {iterations} iterations"
        )));
    };
    let inlier_set = matches.subset(
        best_score
            .inliers
            .iter()
            .enumerate()
            .filter(|(_, ok)| **ok)
            .map(|(i, _)| i),
    );
    let homography = dlt(&inlier_set).unwrap_or(hypothesis);
    Ok(RansacOutcome {
        homography,
        inliers: best_score.inliers,
        iterations,
    })
}

/// Inverse warp into an output grid of `width x height`:
/// `out(p) = image(H⁻¹ p)`, bilinearly sampled. Pixels whose footprint leaves
/// the source are invalid and hold 0.
pub fn warp_image_homography_to(
    image: &ImageBuffer,
    h: &Homography,
    width: usize,
    height: usize,
) -> Result<(ImageBuffer, Vec<bool>)> {
    let h_inv = h.inverse()?;
    let c = image.channels();
    let rows: Vec<(Vec<f32>, Vec<bool>)> = (0..height)
        .into_par_iter()
        .map(|y| {
            let mut data = vec![0.0f32; width * c];
            let mut valid = vec![false; width];
            for x in 0..width {
                if let Ok(q) = h_inv.apply(&PixelPoint::new(x as f64, y as f64)) {
                    valid[x] = image.sample_bilinear(q.x, q.y, &mut data[x * c..(x + 1) * c]);
                }
            }
            (data, valid)
        })
        .collect();
    let mut data = Vec::with_capacity(width * height * c);
    let mut mask = Vec::with_capacity(width * height);
    for (d, v) in rows {
        data.extend(d);
        mask.extend(v);
    }
    Ok((ImageBuffer::new(width, height, c, data)?, mask))
}

/// [`warp_image_homography_to`] on the source image's own grid.
pub fn warp_image_homography(image: &ImageBuffer, h: &Homography) -> Result<(ImageBuffer, Vec<bool>)> {
    warp_image_homography_to(image, h, image.width(), image.height())
}
