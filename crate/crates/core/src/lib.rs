//! Mesh-to-scene similarity registration, camera trajectory synthesis and
//! masked autoregressive segment scheduling.
//!
//! The numerical core is generic over [`Real`] (`f32` / `f64`); the aliases
//! at the bottom of this file fix the scalar to `f64`, which is what the
//! file formats and the command-line driver use.

// `!(x > 0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ablation;
pub mod align;
pub mod cvm;
pub mod error;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod refine;
pub mod render;
pub mod scalar;
pub mod scene;
pub mod sdf;
pub mod spatial;
pub mod trajectory;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Vec3d = geometry::Vec3<f64>;
pub type Quatd = geometry::UnitQuaternion<f64>;
pub type Sim3d = geometry::Sim3Transform<f64>;
pub type Meshd = geometry::TriangleMesh<f64>;
pub type Cloudd = geometry::PointCloud<f64>;
pub type Camerad = geometry::CameraView<f64>;
pub type Depthd = geometry::DepthMap<f64>;
