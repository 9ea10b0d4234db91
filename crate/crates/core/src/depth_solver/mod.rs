//! Direct depth recovery and evaluation: a per-pixel plane sweep over
//! inverse-depth hypotheses scored by the photometric loss under the
//! residual-parallax warp, least-squares plane fitting, median scaling and
//! the standard depth error metrics.

mod metrics;
mod plane_fit;
mod sweep;

pub use metrics::{eval_metrics, median_scale, DepthMetrics, DEFAULT_EVAL_CAP};
pub use plane_fit::fit_plane_normal;
pub use sweep::{plane_sweep_gamma, AlignedSource, SweepConfig, SweepOutput};
