//! Dense per-pixel scalar fields with validity masks: depth, structure (γ)
//! and loss maps.

use std::ops::Deref;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, PixelPoint, PlaneModel, DEPTH_MAX, DEPTH_MIN};

/// Relative slack applied at the depth range bounds so that values that only
/// miss a bound through rounding (e.g. `1 / (1 / 250)`) stay valid.
const RANGE_SLACK: f64 = 1e-9;

/// Row-major scalar grid with a per-pixel validity flag. Invalid pixels hold
/// `0.0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl ScalarMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        let n = width * height;
        if values.len() != n || valid.len() != n {
            return Err(Error::InvalidConfig(format!(
                "map of {width}x{height} needs {n} values and flags, got {} and {}",
                values.len(),
                valid.len()
            )));
        }
        let mut map = Self {
            width,
            height,
            values,
            valid,
        };
        map.zero_invalid();
        Ok(map)
    }

    /// All pixels valid.
    pub fn from_values(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        let valid = vec![true; values.len()];
        Self::new(width, height, values, valid)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            values: vec![value; width * height],
            valid: vec![true; width * height],
        }
    }

    fn zero_invalid(&mut self) {
        for (v, ok) in self.values.iter_mut().zip(&self.valid) {
            if !*ok || !v.is_finite() {
                *v = 0.0;
            }
        }
        for (v, ok) in self.values.iter().zip(self.valid.iter_mut()) {
            if !v.is_finite() {
                *ok = false;
            }
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    /// Value at `(x, y)` if valid.
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        let i = self.index(x, y);
        self.valid[i].then_some(self.values[i])
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Mean over valid pixels using deterministic pairwise summation.
    pub fn valid_mean(&self) -> Option<f64> {
        let vals: Vec<f64> = self
            .values
            .iter()
            .zip(&self.valid)
            .filter_map(|(v, ok)| ok.then_some(*v))
            .collect();
        if vals.is_empty() {
            None
        } else {
            Some(pairwise_sum(&vals) / vals.len() as f64)
        }
    }

    pub fn ensure_dims(&self, width: usize, height: usize) -> Result<()> {
        if (self.width, self.height) != (width, height) {
            return Err(Error::DimensionMismatch {
                expected: (width, height),
                got: (self.width, self.height),
            });
        }
        Ok(())
    }

    pub fn into_parts(self) -> (usize, usize, Vec<f64>, Vec<bool>) {
        (self.width, self.height, self.values, self.valid)
    }
}

/// Per-pixel loss values.
pub type LossMap = ScalarMap;

/// Metric depth `Z` per pixel. Valid values always lie in
/// [`DEPTH_MIN`, `DEPTH_MAX`]; anything else is marked invalid on
/// construction.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap(ScalarMap);

impl DepthMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        let mut values = values;
        let mut valid = valid;
        if values.len() == valid.len() {
            for (z, ok) in values.iter_mut().zip(valid.iter_mut()) {
                match snap_depth(*z) {
                    Some(snapped) => *z = snapped,
                    None => *ok = false,
                }
            }
        }
        ScalarMap::new(width, height, values, valid).map(DepthMap)
    }

    /// Validity inferred from the range check alone.
    pub fn from_values(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        let valid = vec![true; values.len()];
        Self::new(width, height, values, valid)
    }

    pub fn filled(width: usize, height: usize, depth: f64) -> Result<Self> {
        Self::from_values(width, height, vec![depth; width * height])
    }

    pub fn as_map(&self) -> &ScalarMap {
        &self.0
    }
}

impl Deref for DepthMap {
    type Target = ScalarMap;

    fn deref(&self) -> &ScalarMap {
        &self.0
    }
}

fn snap_depth(z: f64) -> Option<f64> {
    if !z.is_finite() {
        return None;
    }
    if (DEPTH_MIN..=DEPTH_MAX).contains(&z) {
        Some(z)
    } else if (DEPTH_MIN * (1.0 - RANGE_SLACK)..DEPTH_MIN).contains(&z) {
        Some(DEPTH_MIN)
    } else if z > DEPTH_MAX && z <= DEPTH_MAX * (1.0 + RANGE_SLACK) {
        Some(DEPTH_MAX)
    } else {
        None
    }
}

/// Structure variable `γ = h / Z` per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaMap(ScalarMap);

impl GammaMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        ScalarMap::new(width, height, values, valid).map(GammaMap)
    }

    pub fn as_map(&self) -> &ScalarMap {
        &self.0
    }
}

impl Deref for GammaMap {
    type Target = ScalarMap;

    fn deref(&self) -> &ScalarMap {
        &self.0
    }
}

/// `γ̂ = (d_c - Nᵀ x̂) / Ẑ` with `x̂ = Ẑ K⁻¹ p`.
///
/// The height is evaluated with the plane as given, using the target-frame
/// point. This matches the source-frame height exactly when the plane is
/// unchanged by the camera motion (e.g. level forward driving on a flat road).
pub fn gamma_from_depth(
    depth: &DepthMap,
    intrinsics: &CameraIntrinsics,
    plane: &PlaneModel,
) -> Result<GammaMap> {
    let (w, h) = depth.dims();
    let (values, valid): (Vec<f64>, Vec<bool>) = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let Some(z) = depth.get(i % w, i / w) else {
                return (0.0, false);
            };
            let p = PixelPoint::new((i % w) as f64, (i / w) as f64);
            match intrinsics.backproject(&p, z) {
                Ok(x) => (plane.height_of(&x) / z, true),
                Err(_) => (0.0, false),
            }
        })
        .unzip();
    GammaMap::new(w, h, values, valid)
}

/// Inverts [`gamma_from_depth`]: `Z = d_c / (γ + Nᵀ K⁻¹ p)`.
///
/// Pixels whose ray makes the denominator vanish, or whose depth falls outside
/// the admissible range, come back invalid.
pub fn depth_from_gamma(
    gamma: &GammaMap,
    intrinsics: &CameraIntrinsics,
    plane: &PlaneModel,
) -> Result<DepthMap> {
    let (w, h) = gamma.dims();
    let (values, valid): (Vec<f64>, Vec<bool>) = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let Some(g) = gamma.get(i % w, i / w) else {
                return (0.0, false);
            };
            let ray = intrinsics.ray(&PixelPoint::new((i % w) as f64, (i / w) as f64));
            let denom = g + plane.normal().dot(&ray);
            if denom == 0.0 {
                return (0.0, false);
            }
            (plane.distance() / denom, true)
        })
        .unzip();
    DepthMap::new(w, h, values, valid)
}

/// Deterministic pairwise summation (fixed split points, row-major order).
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 16;
    if values.len() <= BLOCK {
        values.iter().sum()
    } else {
        let mid = values.len() / 2;
        pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
    }
}
