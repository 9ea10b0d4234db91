use nalgebra::{DMatrix, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{PlaneModel, Point3};

/// Ratio of the two largest singular values below which the points are
/// treated as collinear.
const COLLINEAR_TOL: f64 = 1e-9;

/// Least-squares plane through `points`: centroid plus the direction of the
/// smallest singular value of the centered point matrix. The normal is
/// oriented so that `N_y ≥ 0` and the distance is `Nᵀ centroid`.
pub fn fit_plane_normal(points: &[Point3]) -> Result<PlaneModel> {
    if points.len() < 3 {
        return Err(Error::Degenerate(format!(
            "plane fit needs at least 3 points, got {}",
            points.len()
        )));
    }
    let n = points.len() as f64;
    let centroid = points.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords) / n;
    let centered = DMatrix::from_fn(points.len(), 3, |i, j| points[i].coords[j] - centroid[j]);
    let svd = centered.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Degenerate("SVD did not converge".into()))?;
    let s = &svd.singular_values;
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| s[a].total_cmp(&s[b]));
    let (smallest, middle, largest) = (order[0], order[1], order[2]);
    if !(s[largest] > 0.0 && s[middle] > COLLINEAR_TOL * s[largest]) {
        return Err(Error::Degenerate("points are collinear or coincident".into()));
    }
    let mut normal = Vector3::new(v_t[(smallest, 0)], v_t[(smallest, 1)], v_t[(smallest, 2)]);
    if normal.y < 0.0 {
        normal = -normal;
    }
    PlaneModel::new(normal, normal.dot(&centroid))
}
