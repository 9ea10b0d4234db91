//! Plane + parallax geometry for self-supervised metric depth.
//!
//! Two frames are first aligned by the homography induced by a reference
//! plane (the road). What remains is a residual parallax field that depends
//! only on the camera translation and the per-pixel structure `γ = h / Z`,
//! where `h` is the height above the plane. With a known camera height this
//! gives depth in meters.
//!
//! The crate covers the geometry ([`geometry`], [`maps`]), homography
//! estimation and alignment ([`homography`]), residual-parallax view
//! synthesis ([`parallax`]), the photometric objective ([`losses`]), a direct
//! plane-sweep depth solver with evaluation tools ([`depth_solver`]), a
//! ray-cast synthetic scene renderer ([`synthetic`]) and file formats ([`io`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod depth_solver;
pub mod error;
pub mod geometry;
pub mod homography;
pub mod image;
pub mod io;
pub mod losses;
pub mod maps;
pub mod parallax;
pub mod rng;
pub mod synthetic;

pub use error::{Error, Result};
pub use geometry::{CameraIntrinsics, PixelPoint, PlaneModel, Point3, RigidMotion};
pub use homography::{Correspondence, CorrespondenceSet, Homography, RansacConfig};
pub use image::ImageBuffer;
pub use maps::{DepthMap, GammaMap, LossMap, ScalarMap};
