//! Interleaved floating point images and bilinear sampling.

use crate::error::{Error, Result};

/// Maximum number of channels; images are grayscale or RGB.
pub const MAX_CHANNELS: usize = 3;

/// Slack allowed when deciding whether a sample position lies on the image
/// border; positions within it are clamped onto the last row/column.
const BORDER_EPS: f64 = 1e-9;

/// Row-major, channel-interleaved image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidImage(format!(
                "expected 1 or 3 channels, got {channels}"
            )));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!("empty image {width}x{height}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::InvalidImage(format!(
                "{width}x{height}x{channels} image needs {} samples, got {}",
                width * height * channels,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidImage(format!(
                "intensity {} at sample {bad} is outside [0, 1]",
                data[bad]
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    /// Grayscale image from a per-pixel function.
    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f32) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, 1, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
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

    pub fn ensure_same_shape(&self, other: &ImageBuffer) -> Result<()> {
        other.ensure_dims(self.width, self.height)?;
        if other.channels != self.channels {
            return Err(Error::InvalidImage(format!(
                "channel mismatch: {} vs {}",
                self.channels, other.channels
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Channel mean at an integer pixel.
    #[inline]
    pub fn intensity(&self, x: usize, y: usize) -> f64 {
        let px = self.pixel(x, y);
        px.iter().map(|v| *v as f64).sum::<f64>() / self.channels as f64
    }

    /// Bilinear sample at continuous position `(x, y)` into `out`
    /// (length = channels). Returns `false`, leaving `out` untouched, when the
    /// 2x2 footprint leaves the image.
    #[inline]
    pub fn sample_bilinear(&self, x: f64, y: f64, out: &mut [f32]) -> bool {
        let Some(fp) = Footprint::new(self.width, self.height, x, y) else {
            return false;
        };
        let c = self.channels;
        for (k, o) in out.iter_mut().enumerate().take(c) {
            let v = fp.weights[0] * self.data[fp.indices[0] * c + k] as f64
                + fp.weights[1] * self.data[fp.indices[1] * c + k] as f64
                + fp.weights[2] * self.data[fp.indices[2] * c + k] as f64
                + fp.weights[3] * self.data[fp.indices[3] * c + k] as f64;
            *o = v as f32;
        }
        true
    }

    /// Applies `f` to every sample, clamping the result into `[0, 1]`.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> ImageBuffer {
        ImageBuffer {
            data: self.data.iter().map(|v| f(*v).clamp(0.0, 1.0)).collect(),
            ..self.clone()
        }
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }
}

/// The four pixels (row-major indices) and weights of a bilinear sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Footprint {
    pub indices: [usize; 4],
    pub weights: [f64; 4],
}

impl Footprint {
    /// `None` when `(x, y)` lies outside `[0, width-1] x [0, height-1]`.
    #[inline]
    pub fn new(width: usize, height: usize, x: f64, y: f64) -> Option<Self> {
        let max_x = (width - 1) as f64;
        let max_y = (height - 1) as f64;
        if !(x >= -BORDER_EPS && x <= max_x + BORDER_EPS && y >= -BORDER_EPS && y <= max_y + BORDER_EPS)
        {
            return None;
        }
        let x = x.clamp(0.0, max_x);
        let y = y.clamp(0.0, max_y);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(width - 1);
        let y1 = (y0 + 1).min(height - 1);
        let ax = x - x0 as f64;
        let ay = y - y0 as f64;
        Some(Self {
            indices: [y0 * width + x0, y0 * width + x1, y1 * width + x0, y1 * width + x1],
            weights: [
                (1.0 - ax) * (1.0 - ay),
                ax * (1.0 - ay),
                (1.0 - ax) * ay,
                ax * ay,
            ],
        })
    }

    /// True when every pixel carrying weight is flagged in `mask`.
    #[inline]
    pub fn inside(&self, mask: &[bool]) -> bool {
        self.indices
            .iter()
            .zip(&self.weights)
            .all(|(i, w)| *w == 0.0 || mask[*i])
    }
}

/// Mean absolute difference over pixels flagged in `mask` (all channels).
pub fn masked_mean_abs_diff(a: &ImageBuffer, b: &ImageBuffer, mask: &[bool]) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let c = a.channels();
    let diffs: Vec<f64> = mask
        .iter()
        .enumerate()
        .filter(|(_, ok)| **ok)
        .flat_map(|(i, _)| {
            (0..c).map(move |k| (a.data[i * c + k] as f64 - b.data[i * c + k] as f64).abs())
        })
        .collect();
    if diffs.is_empty() {
        return Err(Error::NoValidPixels("mean absolute difference"));
    }
    Ok(crate::maps::pairwise_sum(&diffs) / diffs.len() as f64)
}
