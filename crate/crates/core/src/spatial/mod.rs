//! Read-only acceleration structures, built once and shared across threads.

mod bvh;
mod filter;
mod kdtree;

pub use bvh::{closest_point_on_triangle, TriangleBvh};
pub use filter::statistical_outlier_filter;
pub use kdtree::KdTree;
