use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("point is behind the camera (z = {z})")]
    BehindCamera { z: f64 },

    #[error("depth must be positive, got {0}")]
    NonPositiveDepth(f64),

    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),

    #[error("rotation is not orthonormal with unit determinant: {0}")]
    InvalidRotation(String),

    #[error("invalid plane: {0}")]
    InvalidPlane(String),

    #[error("point maps to infinity under the homography")]
    PointAtInfinity,

    #[error("homography is singular")]
    SingularHomography,

    #[error("need at least {needed} correspondences, got {got}")]
    NotEnoughCorrespondences { needed: usize, got: usize },

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("robust estimation failed: {0}")]
    EstimationFailed(String),

    #[error("dimension mismatch: expected {expected:?}, got {got:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("parallax denominator {denominator:e} is below the singularity guard")]
    ParallaxSingularity { denominator: f64 },

    #[error("no valid pixels: {0}")]
    NoValidPixels(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("{path}: {error}")]
    Io {
        path: PathBuf,
        error: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}
