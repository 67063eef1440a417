use crate::error::{Error, Result};
use crate::geometry::mesh::{aabb_of, box_corners};
use crate::geometry::{Sim3Transform, Vec3};
use crate::scalar::Real;

/// Unordered point set with optional per-point normals.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud<T> {
    points: Vec<Vec3<T>>,
    normals: Option<Vec<Vec3<T>>>,
}

impl<T: Real> PointCloud<T> {
    pub fn new(points: Vec<Vec3<T>>) -> Self {
        Self { points, normals: None }
    }

    pub fn with_normals(points: Vec<Vec3<T>>, normals: Vec<Vec3<T>>) -> Result<Self> {
        if points.len() != normals.len() {
            return Err(Error::InvalidArgument(format!("{} normals for {} points", normals.len(), points.len())));
        }
        Ok(Self { points, normals: Some(normals) })
    }

    pub fn points(&self) -> &[Vec3<T>] {
        &self.points
    }

    pub fn normals(&self) -> Option<&[Vec3<T>]> {
        self.normals.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Errors unless the cloud has at least one point.
    pub fn require_non_empty(&self, what: &'static str) -> Result<()> {
        if self.points.is_empty() {
            Err(Error::Empty(what))
        } else {
            Ok(())
        }
    }

    pub fn transformed(&self, pose: &Sim3Transform<T>) -> Self {
        Self {
            points: self.points.iter().map(|&p| pose.apply(p)).collect(),
            normals: self.normals.as_ref().map(|ns| ns.iter().map(|&n| pose.rotation().rotate(n)).collect()),
        }
    }

    pub fn centroid(&self) -> Option<Vec3<T>> {
        Vec3::centroid(&self.points)
    }

    pub fn aabb(&self) -> Option<(Vec3<T>, Vec3<T>)> {
        aabb_of(&self.points)
    }

    /// Canonical bounding-box corners, same order as the mesh variant.
    pub fn aabb_corners(&self) -> Result<[Vec3<T>; 8]> {
        let (lo, hi) = self.aabb().ok_or(Error::Empty("point cloud"))?;
        Ok(box_corners(lo, hi))
    }

    pub fn extend(&mut self, other: &Self) {
        self.points.extend_from_slice(&other.points);
        self.normals = None;
    }
}

impl<T: Real> FromIterator<Vec3<T>> for PointCloud<T> {
    fn from_iter<I: IntoIterator<Item = Vec3<T>>>(iter: I) -> Self {
        Self::new(iter.into_iter().collect())
    }
}
