//! Geometric primitives shared by the alignment, trajectory and masking code.

mod camera;
mod cloud;
mod image;
mod mat3;
pub(crate) mod mesh;
mod quat;
mod sim3;
mod vec3;

pub use camera::{CameraView, Intrinsics};
pub use cloud::PointCloud;
pub(crate) use image::ensure_dims;
pub use image::{BinaryMask, DepthMap, RgbImage};
pub use mat3::{symmetric_eigen, Mat3};
pub use mesh::{box_corners, TriangleMesh};
pub use quat::{so3_left_jacobian, UnitQuaternion};
pub use sim3::Sim3Transform;
pub use vec3::Vec3;
