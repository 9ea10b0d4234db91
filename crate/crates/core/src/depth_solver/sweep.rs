use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, PixelPoint, PlaneModel, DEPTH_MIN};
use crate::image::{Footprint, ImageBuffer, MAX_CHANNELS};
use crate::losses::window_ssim;
use crate::maps::{depth_from_gamma, DepthMap, GammaMap};
use crate::parallax::residual_parallax;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepConfig {
    pub num_hypotheses: usize,
    /// Inverse-depth range swept uniformly, 1/m.
    pub inv_depth_min: f64,
    pub inv_depth_max: f64,
    /// Patch half-size; the patch is `(2r+1)²` pixels.
    pub patch_radius: usize,
    /// Score with SSIM + L1; plain L1 otherwise.
    pub use_ssim: bool,
    pub alpha: f64,
    pub ssim_c1: f64,
    pub ssim_c2: f64,
    /// Best / runner-up cost ratio above which a pixel is flagged
    /// low-confidence.
    pub low_confidence_ratio: f64,
    /// Refine the winning inverse depth by a parabola through the winner's
    /// cost and its two neighbours.
    pub refine: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            num_hypotheses: 128,
            inv_depth_min: 1.0 / 250.0,
            inv_depth_max: 1.0 / 0.5,
            patch_radius: 1,
            use_ssim: true,
            alpha: 0.85,
            ssim_c1: 0.01 * 0.01,
            ssim_c2: 0.03 * 0.03,
            low_confidence_ratio: 0.95,
            refine: true,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_hypotheses < 2 {
            return Err(Error::InvalidConfig(format!(
                "need at least 2 depth hypotheses, got {}",
                self.num_hypotheses
            )));
        }
        if !(self.inv_depth_min > 0.0
            && self.inv_depth_min < self.inv_depth_max
            && self.inv_depth_max <= 1.0 / DEPTH_MIN * (1.0 + 1e-12))
        {
            return Err(Error::InvalidConfig(format!(
                "inverse depth range [{}, {}] is empty or outside (0, {}]",
                self.inv_depth_min,
                self.inv_depth_max,
                1.0 / DEPTH_MIN
            )));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidConfig(format!("alpha {} not in [0, 1]", self.alpha)));
        }
        Ok(())
    }

    /// Inverse depth of hypothesis `i`.
    pub fn inverse_depth(&self, i: usize) -> f64 {
        let step = (self.inv_depth_max - self.inv_depth_min) / (self.num_hypotheses - 1) as f64;
        self.inv_depth_min + step * i as f64
    }
}

/// One aligned source view: the source frame warped onto the target by the
/// plane homography, its validity mask and the source→target translation.
#[derive(Debug, Clone, Copy)]
pub struct AlignedSource<'a> {
    pub image: &'a ImageBuffer,
    pub valid: Option<&'a [bool]>,
    pub translation: Vector3<f64>,
}

impl<'a> AlignedSource<'a> {
    pub fn new(image: &'a ImageBuffer, translation: Vector3<f64>) -> Self {
        Self {
            image,
            valid: None,
            translation,
        }
    }

    pub fn with_mask(mut self, valid: &'a [bool]) -> Self {
        self.valid = Some(valid);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutput {
    pub gamma: GammaMap,
    pub depth: DepthMap,
    /// Winning hypothesis index per pixel (`None` where nothing was valid).
    pub hypothesis: Vec<Option<usize>>,
    /// Winning combined cost (0 where invalid).
    pub cost: Vec<f64>,
    /// Pixels whose cost curve is too flat to trust, e.g. textureless areas
    /// or pixels near the epipole.
    pub low_confidence: Vec<bool>,
}

/// Per-pixel winner-take-all search over depth hypotheses spaced uniformly
/// in inverse depth.
///
/// For hypothesis `ρ = 1/Z` the center pixel `p` gets `γ = d_c ρ - Nᵀ K⁻¹ p`.
/// Every pixel of the patch around `p` is moved with that `γ` through the
/// residual-parallax formula and sampled from each aligned source. The patch
/// cost of the two sources is combined by minimum (ties keep the previous
/// frame). No smoothness prior is applied.
///
/// A pixel is low-confidence when the winning cost is more than
/// `low_confidence_ratio` times the best cost of any other hypothesis. With
/// `refine`, the reported `γ` and depth come from the vertex of a parabola
/// fitted to the winning source's costs at the winner and its neighbours,
/// limited to half a hypothesis step; `hypothesis` still holds the discrete
/// winner.
pub fn plane_sweep_gamma(
    target: &ImageBuffer,
    prev: AlignedSource<'_>,
    next: AlignedSource<'_>,
    plane: &PlaneModel,
    k: &CameraIntrinsics,
    config: &SweepConfig,
) -> Result<SweepOutput> {
    config.validate()?;
    let (w, h) = target.dims();
    for src in [&prev, &next] {
        target.ensure_same_shape(src.image)?;
        if let Some(m) = src.valid {
            if m.len() != w * h {
                return Err(Error::InvalidConfig("aligned mask size does not match image".into()));
            }
        }
        if src.translation == Vector3::zeros() {
            return Err(Error::InvalidConfig(
                "zero translation carries no parallax signal".into(),
            ));
        }
    }
    if (k.width, k.height) != (w, h) {
        return Err(Error::DimensionMismatch {
            expected: (k.width, k.height),
            got: (w, h),
        });
    }

    let inv_depths: Vec<f64> = (0..config.num_hypotheses).map(|i| config.inverse_depth(i)).collect();
    let sources = [prev, next];
    let results: Vec<PixelResult> = (0..w * h)
        .into_par_iter()
        .map(|i| sweep_pixel(i % w, i / w, target, &sources, plane, k, config, &inv_depths))
        .collect();

    let mut gamma = vec![0.0; w * h];
    let mut valid = vec![false; w * h];
    let mut hypothesis = vec![None; w * h];
    let mut cost = vec![0.0; w * h];
    let mut low_confidence = vec![true; w * h];
    for (i, r) in results.into_iter().enumerate() {
        if let Some(best) = r.best {
            let ray = k.ray(&PixelPoint::new((i % w) as f64, (i / w) as f64));
            let rho = inv_depths[best] + r.offset * (inv_depths[1] - inv_depths[0]);
            gamma[i] = plane.distance() * rho - plane.normal().dot(&ray);
            valid[i] = true;
            hypothesis[i] = Some(best);
            cost[i] = r.cost;
            low_confidence[i] = r.low_confidence;
        }
    }
    let gamma = GammaMap::new(w, h, gamma, valid)?;
    let depth = depth_from_gamma(&gamma, k, plane)?;
    Ok(SweepOutput {
        gamma,
        depth,
        hypothesis,
        cost,
        low_confidence,
    })
}

struct PixelResult {
    best: Option<usize>,
    offset: f64,
    cost: f64,
    low_confidence: bool,
}

#[allow(clippy::too_many_arguments)]
fn sweep_pixel(
    x: usize,
    y: usize,
    target: &ImageBuffer,
    sources: &[AlignedSource<'_>; 2],
    plane: &PlaneModel,
    k: &CameraIntrinsics,
    config: &SweepConfig,
    inv_depths: &[f64],
) -> PixelResult {
    let (w, h) = target.dims();
    let c = target.channels();
    let r = config.patch_radius as isize;

    // patch pixels (border replicated) and their target values
    let mut patch: Vec<PixelPoint> = Vec::new();
    let mut tgt: Vec<Vec<f64>> = vec![Vec::new(); c];
    for dy in -r..=r {
        let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
        for dx in -r..=r {
            let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
            let q = PixelPoint::new(xx as f64, yy as f64);
            patch.push(q);
            for (ch, t) in tgt.iter_mut().enumerate() {
                t.push(target.get(xx, yy, ch) as f64);
            }
        }
    }

    let n_dot_ray = plane.normal().dot(&k.ray(&PixelPoint::new(x as f64, y as f64)));
    let mut warped: Vec<Vec<f64>> = vec![vec![0.0; patch.len()]; c];
    // per hypothesis: (combined cost, winning source), plus every source's cost
    let mut costs: Vec<Option<(f64, usize)>> = Vec::with_capacity(inv_depths.len());
    let mut per_source: Vec<[Option<f64>; 2]> = Vec::with_capacity(inv_depths.len());
    for &rho in inv_depths {
        let gamma = plane.distance() * rho - n_dot_ray;
        let mut combined: Option<(f64, usize)> = None;
        let mut each = [None; 2];
        for (s, src) in sources.iter().enumerate() {
            each[s] = patch_cost(gamma, &patch, &tgt, &mut warped, src, plane, k, config);
            if let Some(cost) = each[s] {
                if combined.is_none_or(|(prev, _)| cost < prev) {
                    combined = Some((cost, s));
                }
            }
        }
        costs.push(combined);
        per_source.push(each);
    }

    let mut best: Option<(usize, f64, usize)> = None;
    for (i, cost) in costs.iter().enumerate() {
        if let Some((v, s)) = *cost {
            if best.is_none_or(|(_, b, _)| v < b) {
                best = Some((i, v, s));
            }
        }
    }
    let Some((best_idx, best_cost, best_source)) = best else {
        return PixelResult {
            best: None,
            offset: 0.0,
            cost: 0.0,
            low_confidence: true,
        };
    };
    let runner_up = costs
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != best_idx)
        .filter_map(|(_, v)| v.map(|(cost, _)| cost))
        .fold(f64::INFINITY, f64::min);
    let low_confidence = if runner_up.is_finite() && runner_up > 0.0 {
        best_cost / runner_up > config.low_confidence_ratio
    } else {
        true
    };
    let offset = if config.refine && best_idx > 0 && best_idx + 1 < costs.len() {
        match (
            per_source[best_idx - 1][best_source],
            per_source[best_idx + 1][best_source],
        ) {
            (Some(lo), Some(hi)) => parabola_vertex(lo, best_cost, hi),
            _ => 0.0,
        }
    } else {
        0.0
    };
    PixelResult {
        best: Some(best_idx),
        offset,
        cost: best_cost,
        low_confidence,
    }
}

/// Vertex offset, in steps and within `[-0.5, 0.5]`, of the parabola through
/// `(-1, lo)`, `(0, mid)` and `(1, hi)`; 0 unless `mid` is a strict minimum.
fn parabola_vertex(lo: f64, mid: f64, hi: f64) -> f64 {
    let curvature = lo - 2.0 * mid + hi;
    if curvature > 0.0 && mid <= lo && mid <= hi {
        (0.5 * (lo - hi) / curvature).clamp(-0.5, 0.5)
    } else {
        0.0
    }
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn patch_cost(
    gamma: f64,
    patch: &[PixelPoint],
    tgt: &[Vec<f64>],
    warped: &mut [Vec<f64>],
    src: &AlignedSource<'_>,
    plane: &PlaneModel,
    k: &CameraIntrinsics,
    config: &SweepConfig,
) -> Option<f64> {
    let img = src.image;
    let c = img.channels();
    let mut sample = [0.0f32; MAX_CHANNELS];
    for (j, q) in patch.iter().enumerate() {
        let d = residual_parallax(q, gamma, &src.translation, plane.distance(), k).ok()?;
        let (u, v) = (q.x + d.x, q.y + d.y);
        if let Some(mask) = src.valid {
            if !Footprint::new(img.width(), img.height(), u, v)?.inside(mask) {
                return None;
            }
        }
        if !img.sample_bilinear(u, v, &mut sample[..c]) {
            return None;
        }
        for ch in 0..c {
            warped[ch][j] = sample[ch] as f64;
        }
    }

    let n = patch.len() as f64;
    let mut l1 = 0.0;
    let mut ssim = 0.0;
    for ch in 0..c {
        l1 += tgt[ch].iter().zip(&warped[ch]).map(|(a, b)| (a - b).abs()).sum::<f64>() / n;
        if config.use_ssim {
            ssim += window_ssim(&tgt[ch], &warped[ch], config.ssim_c1, config.ssim_c2);
        }
    }
    l1 /= c as f64;
    if config.use_ssim {
        ssim /= c as f64;
        Some((1.0 - config.alpha) * l1 + 0.5 * config.alpha * (1.0 - ssim))
    } else {
        Some(l1)
    }
}
