//! File formats: PNG images and depth maps, intrinsics files, match lists and
//! homographies. Every writer replaces its target atomically.

use std::fs;
use std::io::Write;
use std::path::Path;

use image::{codecs::png::PngEncoder, DynamicImage, ExtendedColorType, ImageEncoder, ImageReader};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, PixelPoint, PlaneModel, KITTI_CAMERA_HEIGHT};
use crate::homography::{Correspondence, CorrespondenceSet, Homography};
use crate::image::ImageBuffer;
use crate::maps::DepthMap;

/// Depth PNG scale: stored value = meters × 256.
pub const DEPTH_SCALE: f64 = 256.0;

/// Sample precision used when writing images.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BitDepth {
    #[default]
    Eight,
    Sixteen,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |error| Error::Io {
        path: path.to_path_buf(),
        error,
    }
}

/// Writes `bytes` to a temporary file next to `path`, then renames it over
/// `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(path))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| io_err(path)(e.error))?;
    Ok(())
}

fn decode(path: &Path) -> Result<DynamicImage> {
    let len = fs::metadata(path).map_err(io_err(path))?.len();
    let reader = ImageReader::open(path)
        .map_err(io_err(path))?
        .with_guessed_format()
        .map_err(io_err(path))?;
    reader
        .decode()
        .map_err(|e| Error::format(path, format!("cannot decode {len}-byte file: {e}")))
}

/// Reads an 8- or 16-bit grayscale or RGB image, mapping samples linearly
/// onto `[0, 1]`.
pub fn read_image(path: &Path) -> Result<ImageBuffer> {
    let img = decode(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (channels, data): (usize, Vec<f32>) = match img {
        DynamicImage::ImageLuma8(b) => (1, b.into_raw().into_iter().map(|v| v as f32 / 255.0).collect()),
        DynamicImage::ImageRgb8(b) => (3, b.into_raw().into_iter().map(|v| v as f32 / 255.0).collect()),
        DynamicImage::ImageLuma16(b) => (1, b.into_raw().into_iter().map(|v| v as f32 / 65535.0).collect()),
        DynamicImage::ImageRgb16(b) => (3, b.into_raw().into_iter().map(|v| v as f32 / 65535.0).collect()),
        other => {
            return Err(Error::format(
                path,
                format!("unsupported color type {:?}; expected gray or RGB", other.color()),
            ))
        }
    };
    ImageBuffer::new(w, h, channels, data).map_err(|e| Error::format(path, e.to_string()))
}

fn encode_png(path: &Path, width: usize, height: usize, bytes: &[u8], color: ExtendedColorType) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    PngEncoder::new(&mut out)
        .write_image(bytes, width as u32, height as u32, color)
        .map_err(|e| Error::format(path, format!("cannot encode PNG: {e}")))?;
    Ok(out)
}

/// Writes a PNG, quantizing intensities to the nearest level of `depth`.
pub fn write_image(path: &Path, image: &ImageBuffer, depth: BitDepth) -> Result<()> {
    let rgb = image.channels() == 3;
    let (bytes, color) = match depth {
        BitDepth::Eight => (
            image.data().iter().map(|v| (v * 255.0).round() as u8).collect::<Vec<u8>>(),
            if rgb { ExtendedColorType::Rgb8 } else { ExtendedColorType::L8 },
        ),
        BitDepth::Sixteen => (
            image
                .data()
                .iter()
                .flat_map(|v| ((v * 65535.0).round() as u16).to_ne_bytes())
                .collect(),
            if rgb { ExtendedColorType::Rgb16 } else { ExtendedColorType::L16 },
        ),
    };
    let png = encode_png(path, image.width(), image.height(), &bytes, color)?;
    write_atomic(path, &png)
}

/// Reads a 16-bit single-channel depth PNG: meters = raw / 256, raw 0 marks
/// a missing value and depths outside the admissible range are invalid.
pub fn read_depth_png(path: &Path) -> Result<DepthMap> {
    let img = decode(path)?;
    let DynamicImage::ImageLuma16(buf) = img else {
        return Err(Error::format(
            path,
            format!("depth maps must be 16-bit single-channel, got {:?}", img.color()),
        ));
    };
    let (w, h) = (buf.width() as usize, buf.height() as usize);
    let raw = buf.into_raw();
    let values = raw.iter().map(|&r| r as f64 / DEPTH_SCALE).collect();
    let valid = raw.iter().map(|&r| r != 0).collect();
    DepthMap::new(w, h, values, valid).map_err(|e| Error::format(path, e.to_string()))
}

/// Writes a depth map as a 16-bit PNG (raw = round(256 · meters), 0 where
/// invalid).
pub fn write_depth_png(path: &Path, depth: &DepthMap) -> Result<()> {
    let bytes: Vec<u8> = depth
        .values()
        .iter()
        .zip(depth.valid())
        .flat_map(|(z, ok)| {
            let raw = if *ok {
                (z * DEPTH_SCALE).round().clamp(1.0, u16::MAX as f64) as u16
            } else {
                0
            };
            raw.to_ne_bytes()
        })
        .collect();
    let png = encode_png(path, depth.width(), depth.height(), &bytes, ExtendedColorType::L16)?;
    write_atomic(path, &png)
}

fn default_plane_distance() -> f64 {
    KITTI_CAMERA_HEIGHT
}

fn default_normal() -> [f64; 3] {
    [0.0, 1.0, 0.0]
}

/// On-disk camera description: TOML with `fx`, `fy`, `cx`, `cy`, `width`,
/// `height` and optionally the reference plane `d_c` (meters) and `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntrinsicsFile {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    #[serde(default = "default_plane_distance")]
    pub d_c: f64,
    #[serde(default = "default_normal")]
    pub n: [f64; 3],
}

impl IntrinsicsFile {
    pub fn from_parts(k: &CameraIntrinsics, plane: &PlaneModel) -> Self {
        let n = plane.normal();
        Self {
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            width: k.width,
            height: k.height,
            d_c: plane.distance(),
            n: [n.x + 0.0, n.y + 0.0, n.z + 0.0],
        }
    }

    pub fn intrinsics(&self) -> Result<CameraIntrinsics> {
        CameraIntrinsics::new(self.fx, self.fy, self.cx, self.cy, self.width, self.height)
    }

    pub fn plane(&self) -> Result<PlaneModel> {
        PlaneModel::new(Vector3::from(self.n), self.d_c)
    }
}

pub fn read_intrinsics(path: &Path) -> Result<(CameraIntrinsics, PlaneModel)> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let file: IntrinsicsFile = toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
    let k = file.intrinsics().map_err(|e| Error::format(path, e.to_string()))?;
    let plane = file.plane().map_err(|e| Error::format(path, e.to_string()))?;
    Ok((k, plane))
}

pub fn write_intrinsics(path: &Path, k: &CameraIntrinsics, plane: &PlaneModel) -> Result<()> {
    let text = toml::to_string(&IntrinsicsFile::from_parts(k, plane))
        .map_err(|e| Error::format(path, e.to_string()))?;
    write_atomic(path, text.as_bytes())
}

const MATCH_HEADER: [&str; 4] = ["us", "vs", "ut", "vt"];

/// Reads a CSV match list with header `us,vs,ut,vt`; `(us, vs)` is the
/// source pixel. Errors name the offending line.
pub fn read_correspondences(path: &Path) -> Result<CorrespondenceSet> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::format(path, e.to_string()))?;
    let header = reader.headers().map_err(|e| Error::format(path, e.to_string()))?;
    if header.iter().ne(MATCH_HEADER) {
        return Err(Error::format(
            path,
            format!("line 1: expected header `us,vs,ut,vt`, got `{}`", header.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    let mut matches = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::format(path, format!("line {line}: {e}"))
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let mut v = [0.0; 4];
        for (j, field) in record.iter().enumerate() {
            v[j] = field
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| {
                    Error::format(path, format!("line {line}: `{field}` in column {} is not a finite number", MATCH_HEADER[j]))
                })?;
        }
        matches.push(Correspondence::new(PixelPoint::new(v[0], v[1]), PixelPoint::new(v[2], v[3])));
    }
    CorrespondenceSet::new(matches).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_correspondences(path: &Path, matches: &CorrespondenceSet) -> Result<()> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::format(path, e.to_string());
    writer.write_record(MATCH_HEADER).map_err(csv_err)?;
    for m in matches.iter() {
        writer
            .write_record([m.source.x, m.source.y, m.target.x, m.target.y].map(|v| v.to_string()))
            .map_err(csv_err)?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::format(path, e.to_string()))?;
    write_atomic(path, &bytes)
}

/// Text form of a homography: three lines of three numbers, row-major,
/// normalized so that `H[2][2] = 1` when it is nonzero. Numbers use the
/// shortest representation that parses back to the same value.
pub fn format_homography(h: &Homography) -> String {
    h.to_row_major()
        .chunks(3)
        .map(|row| format!("{} {} {}\n", row[0], row[1], row[2]))
        .collect()
}

pub fn write_homography(path: &Path, h: &Homography) -> Result<()> {
    write_atomic(path, format_homography(h).as_bytes())
}

pub fn read_homography(path: &Path) -> Result<Homography> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let values = text
        .split_whitespace()
        .enumerate()
        .map(|(i, s)| {
            s.parse::<f64>()
                .map_err(|_| Error::format(path, format!("entry {}: `{s}` is not a number", i + 1)))
        })
        .collect::<Result<Vec<f64>>>()?;
    let values: [f64; 9] = values
        .try_into()
        .map_err(|v: Vec<f64>| Error::format(path, format!("expected 9 numbers, got {}", v.len())))?;
    Homography::from_row_major(&values).map_err(|e| Error::format(path, e.to_string()))
}
