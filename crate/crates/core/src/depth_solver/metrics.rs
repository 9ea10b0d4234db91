use crate::error::{Error, Result};
use crate::maps::{pairwise_sum, DepthMap};

/// Depth cap applied during evaluation, meters.
pub const DEFAULT_EVAL_CAP: f64 = 80.0;

/// Standard monocular depth error and accuracy scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthMetrics {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    /// Fraction of pixels with `max(p/g, g/p) < 1.25`.
    pub d1: f64,
    /// Same with `1.25²`.
    pub d2: f64,
    /// Same with `1.25³`.
    pub d3: f64,
    /// Number of pixels evaluated.
    pub count: usize,
}

fn joint_valid(pred: &DepthMap, gt: &DepthMap) -> Result<Vec<usize>> {
    gt.ensure_dims(pred.width(), pred.height())?;
    Ok((0..pred.values().len())
        .filter(|&i| pred.valid()[i] && gt.valid()[i])
        .collect())
}

/// Lower median (element `⌊(n-1)/2⌋` of the sorted values).
fn lower_median(mut values: Vec<f64>) -> f64 {
    let k = (values.len() - 1) / 2;
    let (_, m, _) = values.select_nth_unstable_by(k, f64::total_cmp);
    *m
}

/// Rescales `pred` so that its median over the pixels valid in both maps
/// equals the ground-truth median over the same pixels.
///
/// Medians are lower medians, so the median is always an actual sample. The
/// scaled samples that straddle it are clamped by at most one rounding step
/// so the equality holds bit for bit. Scaled depths that leave the admissible
/// range become invalid.
pub fn median_scale(pred: &DepthMap, gt: &DepthMap) -> Result<(DepthMap, f64)> {
    let idx = joint_valid(pred, gt)?;
    if idx.is_empty() {
        return Err(Error::NoValidPixels("median scaling needs jointly valid pixels"));
    }
    let med_pred = lower_median(idx.iter().map(|&i| pred.values()[i]).collect());
    let med_gt = lower_median(idx.iter().map(|&i| gt.values()[i]).collect());
    if !(med_pred > 0.0 && med_gt > 0.0) {
        return Err(Error::NoValidPixels("zero median"));
    }
    let scale = med_gt / med_pred;
    let values: Vec<f64> = pred
        .values()
        .iter()
        .map(|&z| {
            let s = z * scale;
            if z == med_pred {
                med_gt
            } else if z < med_pred {
                s.min(med_gt)
            } else {
                s.max(med_gt)
            }
        })
        .collect();
    let scaled = DepthMap::new(pred.width(), pred.height(), values, pred.valid().to_vec())?;
    Ok((scaled, scale))
}

/// Error metrics over pixels valid in both maps with ground truth in
/// `(0, cap]`. Predictions are clamped to `cap`.
pub fn eval_metrics(pred: &DepthMap, gt: &DepthMap, cap: f64) -> Result<DepthMetrics> {
    if !(cap > 0.0) {
        return Err(Error::InvalidConfig(format!("evaluation cap must be positive, got {cap}")));
    }
    let idx: Vec<usize> = joint_valid(pred, gt)?
        .into_iter()
        .filter(|&i| gt.values()[i] <= cap)
        .collect();
    if idx.is_empty() {
        return Err(Error::NoValidPixels("no pixels to evaluate"));
    }
    let n = idx.len() as f64;
    let pairs: Vec<(f64, f64)> = idx
        .iter()
        .map(|&i| (pred.values()[i].min(cap), gt.values()[i]))
        .collect();
    let mean = |f: &dyn Fn(f64, f64) -> f64| {
        pairwise_sum(&pairs.iter().map(|&(p, g)| f(p, g)).collect::<Vec<_>>()) / n
    };
    let frac = |thr: f64| pairs.iter().filter(|&&(p, g)| (p / g).max(g / p) < thr).count() as f64 / n;
    Ok(DepthMetrics {
        abs_rel: mean(&|p, g| (p - g).abs() / g),
        sq_rel: mean(&|p, g| (p - g).powi(2) / g),
        rmse: mean(&|p, g| (p - g).powi(2)).sqrt(),
        rmse_log: mean(&|p, g| (p.ln() - g.ln()).powi(2)).sqrt(),
        d1: frac(1.25),
        d2: frac(1.25 * 1.25),
        d3: frac(1.25 * 1.25 * 1.25),
        count: idx.len(),
    })
}
