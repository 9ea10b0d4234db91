//! Self-supervised objective: SSIM + L1 photometric error, per-pixel minimum
//! over the previous/next aligned sources, edge-aware smoothness on
//! mean-normalized inverse depth, and the weighted total.

use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::maps::{pairwise_sum, DepthMap, LossMap};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    /// SSIM weight; the L1 term gets `1 - alpha`.
    pub alpha: f64,
    /// Smoothness weight.
    pub lambda: f64,
    pub ssim_c1: f64,
    pub ssim_c2: f64,
    /// Side of the square SSIM window, odd.
    pub ssim_window: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 0.85,
            lambda: 1e-3,
            ssim_c1: 0.01 * 0.01,
            ssim_c2: 0.03 * 0.03,
            ssim_window: 3,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidConfig(format!("alpha {} not in [0, 1]", self.alpha)));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::InvalidConfig(format!("lambda {} is negative", self.lambda)));
        }
        if !(self.ssim_c1 >= 0.0 && self.ssim_c2 >= 0.0) {
            return Err(Error::InvalidConfig("SSIM constants must be non-negative".into()));
        }
        if self.ssim_window < 3 || self.ssim_window.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!(
                "SSIM window must be odd and at least 3, got {}",
                self.ssim_window
            )));
        }
        Ok(())
    }
}

/// SSIM from first and second moments of two sample windows.
#[inline]
pub fn ssim_from_moments(
    mean_a: f64,
    mean_b: f64,
    var_a: f64,
    var_b: f64,
    cov: f64,
    c1: f64,
    c2: f64,
) -> f64 {
    let num = (2.0 * mean_a * mean_b + c1) * (2.0 * cov + c2);
    let den = (mean_a * mean_a + mean_b * mean_b + c1) * (var_a + var_b + c2);
    if den == 0.0 {
        // both windows constant and zero-valued with c1 = c2 = 0
        1.0
    } else {
        num / den
    }
}

/// SSIM of two equally sized sample sets (one window).
pub fn window_ssim(a: &[f64], b: &[f64], c1: f64, c2: f64) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sa += x;
        sb += y;
        saa += x * x;
        sbb += y * y;
        sab += x * y;
    }
    let (ma, mb) = (sa / n, sb / n);
    ssim_from_moments(ma, mb, saa / n - ma * ma, sbb / n - mb * mb, sab / n - ma * mb, c1, c2)
}

fn ensure_shapes(a: &ImageBuffer, b: &ImageBuffer) -> Result<()> {
    b.ensure_dims(a.width(), a.height())?;
    if a.channels() != b.channels() {
        return Err(Error::InvalidImage(format!(
            "channel mismatch: {} vs {}",
            a.channels(),
            b.channels()
        )));
    }
    Ok(())
}

/// Per-pixel SSIM over a box window, averaged across channels. Window
/// positions outside the image replicate the nearest border pixel.
pub fn ssim_map(a: &ImageBuffer, b: &ImageBuffer, config: &LossConfig) -> Result<LossMap> {
    config.validate()?;
    ensure_shapes(a, b)?;
    let (w, h, c) = (a.width(), a.height(), a.channels());
    let r = (config.ssim_window / 2) as isize;
    let count = (config.ssim_window * config.ssim_window) as f64;
    let mut values = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let mut total = 0.0;
            for ch in 0..c {
                let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for dy in -r..=r {
                    let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                    for dx in -r..=r {
                        let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                        let va = a.get(xx, yy, ch) as f64;
                        let vb = b.get(xx, yy, ch) as f64;
                        sa += va;
                        sb += vb;
                        saa += va * va;
                        sbb += vb * vb;
                        sab += va * vb;
                    }
                }
                let (ma, mb) = (sa / count, sb / count);
                total += ssim_from_moments(
                    ma,
                    mb,
                    saa / count - ma * ma,
                    sbb / count - mb * mb,
                    sab / count - ma * mb,
                    config.ssim_c1,
                    config.ssim_c2,
                );
            }
            values.push(total / c as f64);
        }
    }
    LossMap::from_values(w, h, values)
}

/// `(1 - α) |I_t - Î_w| + (α / 2)(1 - SSIM)` per pixel, the L1 term averaged
/// over channels. Pixels outside `mask` are invalid in the result.
pub fn photometric_loss(
    target: &ImageBuffer,
    synthesized: &ImageBuffer,
    mask: &[bool],
    config: &LossConfig,
) -> Result<LossMap> {
    ensure_shapes(target, synthesized)?;
    let (w, h, c) = (target.width(), target.height(), target.channels());
    if mask.len() != w * h {
        return Err(Error::InvalidConfig(format!(
            "mask has {} entries for a {w}x{h} image",
            mask.len()
        )));
    }
    let ssim = ssim_map(target, synthesized, config)?;
    let values = (0..w * h)
        .map(|i| {
            let l1 = (0..c)
                .map(|k| (target.data()[i * c + k] as f64 - synthesized.data()[i * c + k] as f64).abs())
                .sum::<f64>()
                / c as f64;
            (1.0 - config.alpha) * l1 + 0.5 * config.alpha * (1.0 - ssim.values()[i])
        })
        .collect();
    LossMap::new(w, h, values, mask.to_vec())
}

/// Per-pixel minimum of two loss maps. A pixel valid in only one input takes
/// that value; ties keep the previous-frame value.
pub fn min_reprojection(loss_prev: &LossMap, loss_next: &LossMap) -> Result<LossMap> {
    loss_next.ensure_dims(loss_prev.width(), loss_prev.height())?;
    let (values, valid): (Vec<f64>, Vec<bool>) = loss_prev
        .values()
        .iter()
        .zip(loss_prev.valid())
        .zip(loss_next.values().iter().zip(loss_next.valid()))
        .map(|((&a, &va), (&b, &vb))| match (va, vb) {
            (true, true) => (if b < a { b } else { a }, true),
            (true, false) => (a, true),
            (false, true) => (b, true),
            (false, false) => (0.0, false),
        })
        .unzip();
    LossMap::new(loss_prev.width(), loss_prev.height(), values, valid)
}

/// Edge-aware first-order smoothness of the mean-normalized inverse depth
/// `d* = (1/Z) / mean(1/Z)`:
/// `|∂x d*| e^(-|∂x Ī|) + |∂y d*| e^(-|∂y Ī|)` with forward differences and
/// `Ī` the channel mean. Differences that would reach past the image or into
/// an invalid depth pixel contribute zero.
pub fn smoothness_loss(depth: &DepthMap, image: &ImageBuffer) -> Result<LossMap> {
    let (w, h) = depth.dims();
    image.ensure_dims(w, h)?;
    let inv: Vec<f64> = depth
        .values()
        .iter()
        .zip(depth.valid())
        .map(|(z, ok)| if *ok { 1.0 / z } else { 0.0 })
        .collect();
    let valid_inv: Vec<f64> = inv
        .iter()
        .zip(depth.valid())
        .filter_map(|(d, ok)| ok.then_some(*d))
        .collect();
    if valid_inv.is_empty() {
        return Err(Error::NoValidPixels("smoothness needs at least one valid depth"));
    }
    let mean = pairwise_sum(&valid_inv) / valid_inv.len() as f64;
    let norm: Vec<f64> = inv.iter().map(|d| d / mean).collect();
    let valid = depth.valid();

    let mut values = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !valid[i] {
                continue;
            }
            let mut loss = 0.0;
            if x + 1 < w && valid[i + 1] {
                let grad_img = (image.intensity(x + 1, y) - image.intensity(x, y)).abs();
                loss += (norm[i + 1] - norm[i]).abs() * (-grad_img).exp();
            }
            if y + 1 < h && valid[i + w] {
                let grad_img = (image.intensity(x, y + 1) - image.intensity(x, y)).abs();
                loss += (norm[i + w] - norm[i]).abs() * (-grad_img).exp();
            }
            values[i] = loss;
        }
    }
    LossMap::new(w, h, values, valid.to_vec())
}

/// Mean over valid photometric pixels of `λ · smooth + photo`. Invalid
/// smoothness pixels contribute zero to their term.
pub fn total_loss(photo: &LossMap, smooth: &LossMap, config: &LossConfig) -> Result<f64> {
    smooth.ensure_dims(photo.width(), photo.height())?;
    let terms: Vec<f64> = photo
        .values()
        .iter()
        .zip(photo.valid())
        .zip(smooth.values())
        .filter(|((_, ok), _)| **ok)
        .map(|((p, _), s)| config.lambda * s + p)
        .collect();
    if terms.is_empty() {
        return Err(Error::NoValidPixels("total loss needs at least one valid pixel"));
    }
    Ok(pairwise_sum(&terms) / terms.len() as f64)
}
