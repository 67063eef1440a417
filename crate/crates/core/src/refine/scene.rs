use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{symmetric_eigen, Mat3, PointCloud, Vec3};
use crate::scalar::Real;
use crate::spatial::KdTree;

/// Neighbors used for normal estimation.
pub const NORMAL_NEIGHBORS: usize = 16;
/// Fewer neighbors than this makes a normal degenerate.
pub const MIN_NORMAL_NEIGHBORS: usize = 8;

/// Scene point cloud with oriented normals, used as a locally planar
/// signed-distance proxy.
#[derive(Debug, Clone)]
pub struct SceneSurface<T> {
    points: Vec<Vec3<T>>,
    normals: Vec<Vec3<T>>,
    valid: Vec<bool>,
    tree: KdTree<T>,
}

impl<T: Real> SceneSurface<T> {
    /// Uses the cloud's own normals when present; otherwise estimates them
    /// by local PCA over `neighbors` nearest points and orients each one
    /// toward the side most `viewpoints` lie on.
    pub fn estimate(cloud: &PointCloud<T>, viewpoints: &[Vec3<T>], neighbors: usize) -> Result<Self> {
        cloud.require_non_empty("scene cloud")?;
        let points = cloud.points().to_vec();
        let tree = KdTree::build(&points);
        if let Some(ns) = cloud.normals() {
            let normals: Vec<_> = ns.iter().map(|n| n.normalized()).collect();
            let valid = normals.iter().map(|n| n.norm_squared() > T::zero()).collect();
            return Ok(Self { points, normals, valid, tree });
        }
        let k = neighbors.max(MIN_NORMAL_NEIGHBORS);
        let (normals, valid): (Vec<_>, Vec<_>) = points
            .par_iter()
            .map(|&p| {
                let nn = tree.k_nearest(p, k + 1);
                if nn.len() < MIN_NORMAL_NEIGHBORS + 1 {
                    return (Vec3::zero(), false);
                }
                let pts: Vec<_> = nn.iter().map(|&(i, _)| tree.point(i)).collect();
                let c = Vec3::centroid(&pts).expect("non-empty");
                let cov = pts.iter().fold(Mat3::zero(), |acc, &q| acc + Mat3::outer(q - c, q - c));
                let (vals, vecs) = symmetric_eigen(cov.m);
                if !(vals[0] > T::zero()) || vals[1] <= T::lit(1e-10) * vals[0] {
                    return (Vec3::zero(), false);
                }
                let mut n = Vec3::from_array(vecs[2]).normalized();
                let votes: i64 = viewpoints
                    .iter()
                    .map(|&v| {
                        let s = n.dot(v - p);
                        if s > T::zero() {
                            1
                        } else if s < T::zero() {
                            -1
                        } else {
                            0
                        }
                    })
                    .sum();
                if votes < 0 {
                    n = -n;
                }
                (n, true)
            })
            .unzip();
        Ok(Self { points, normals, valid, tree })
    }

    pub fn from_parts(points: Vec<Vec3<T>>, normals: Vec<Vec3<T>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Empty("scene cloud"));
        }
        Self::estimate(&PointCloud::with_normals(points, normals)?, &[], NORMAL_NEIGHBORS)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn normals(&self) -> &[Vec3<T>] {
        &self.normals
    }

    pub fn degenerate_count(&self) -> usize {
        self.valid.iter().filter(|&&v| !v).count()
    }

    /// Point-to-plane signed distance against the nearest scene point, or
    /// `None` when that point has no usable normal.
    pub fn signed_distance(&self, x: Vec3<T>) -> Option<(T, Vec3<T>)> {
        let (i, _) = self.tree.nearest(x)?;
        if !self.valid[i] {
            return None;
        }
        let n = self.normals[i];
        Some(((x - self.points[i]).dot(n), n))
    }
}
