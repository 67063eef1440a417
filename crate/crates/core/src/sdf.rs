//! Signed distance to a triangle mesh.
//!
//! Magnitude is the exact distance to the closest triangle (BVH search);
//! the sign comes from the generalized winding number, negative inside
//! (winding ≥ 0.5). On meshes that are not watertight the sign is an
//! approximation and results are flagged as such.

use crate::error::{Error, Result};
use crate::geometry::{TriangleMesh, Vec3};
use crate::scalar::Real;
use crate::spatial::TriangleBvh;

/// Winding-number threshold separating inside from outside.
pub const INSIDE_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignedDistance<T> {
    pub value: T,
    /// True when the mesh is not watertight and the sign is approximate.
    pub approximate: bool,
}

/// Distance query structure; build once, query from any thread.
#[derive(Debug, Clone)]
pub struct MeshSdf<T> {
    tris: Vec<[Vec3<T>; 3]>,
    bvh: TriangleBvh<T>,
    watertight: bool,
}

impl<T: Real> MeshSdf<T> {
    pub fn new(mesh: &TriangleMesh<T>) -> Result<Self> {
        if mesh.is_empty() {
            return Err(Error::Empty("mesh has no faces"));
        }
        Ok(Self { tris: mesh.triangles().collect(), bvh: TriangleBvh::build(mesh), watertight: mesh.is_watertight() })
    }

    pub fn is_watertight(&self) -> bool {
        self.watertight
    }

    pub fn unsigned_distance(&self, p: Vec3<T>) -> T {
        self.bvh.closest_point(p).map(|(_, _, d)| d.sqrt()).unwrap_or_else(T::infinity)
    }

    pub fn winding_number(&self, p: Vec3<T>) -> T {
        winding_number(&self.tris, p)
    }

    pub fn signed_distance(&self, p: Vec3<T>) -> SignedDistance<T> {
        let d = self.unsigned_distance(p);
        let inside = self.winding_number(p) >= T::lit(INSIDE_THRESHOLD);
        SignedDistance { value: if inside { -d } else { d }, approximate: !self.watertight }
    }
}

/// Generalized winding number of `p` with respect to a triangle soup:
/// the summed signed solid angle over `4π`.
pub fn winding_number<T: Real>(tris: &[[Vec3<T>; 3]], p: Vec3<T>) -> T {
    let mut total = T::zero();
    for &[a, b, c] in tris {
        let (a, b, c) = (a - p, b - p, c - p);
        let (la, lb, lc) = (a.norm(), b.norm(), c.norm());
        let det = a.dot(b.cross(c));
        let denom = la * lb * lc + a.dot(b) * lc + b.dot(c) * la + c.dot(a) * lb;
        total += det.atan2(denom);
    }
    total * T::lit(2.0) / (T::lit(4.0) * T::PI())
}

/// Signed distance from `p` to `mesh` (negative inside).
pub fn point_to_mesh_sdf<T: Real>(p: Vec3<T>, mesh: &TriangleMesh<T>) -> Result<T> {
    Ok(MeshSdf::new(mesh)?.signed_distance(p).value)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn icosphere_center_and_outside() {
        let sphere = TriangleMesh::<f64>::icosphere(1.0, 3);
        // Chord tolerance: the flat faces sit at most 1 - inradius below the sphere.
        let max_sag = 0.02;
        let inside = point_to_mesh_sdf(Vec3::zero(), &sphere).unwrap();
        assert!(inside < 0.0 && (inside + 1.0).abs() < max_sag, "{inside}");
        let outside = point_to_mesh_sdf(Vec3::new(0.0, 0.0, 2.0), &sphere).unwrap();
        assert!(outside > 0.0 && (outside - 1.0).abs() < max_sag, "{outside}");
    }

    #[test]
    fn query_on_vertex_is_zero() {
        let sphere = TriangleMesh::<f64>::icosphere(1.0, 1);
        let v = sphere.vertices()[7];
        assert_eq!(point_to_mesh_sdf(v, &sphere).unwrap().abs(), 0.0);
    }

    #[test]
    fn magnitude_matches_brute_force_distance() {
        let cube = TriangleMesh::<f64>::unit_cube();
        let sdf = MeshSdf::new(&cube).unwrap();
        for p in [Vec3::new(0.1, 0.2, -0.1), Vec3::new(1.0, 0.3, 0.2), Vec3::new(0.9, 0.9, 0.9)] {
            let brute = cube
                .triangles()
                .map(|[a, b, c]| crate::spatial::closest_point_on_triangle(p, a, b, c).distance(p))
                .fold(f64::INFINITY, f64::min);
            assert!((sdf.signed_distance(p).value.abs() - brute).abs() < 1e-12);
        }
        assert!((sdf.signed_distance(Vec3::new(0.1, 0.0, 0.0)).value + 0.4).abs() < 1e-12);
    }

    #[test]
    fn open_mesh_is_flagged_approximate() {
        let cube = TriangleMesh::<f64>::unit_cube();
        let open = TriangleMesh::new(cube.vertices().to_vec(), cube.faces()[..10].to_vec()).unwrap();
        let sdf = MeshSdf::new(&open).unwrap();
        assert!(sdf.signed_distance(Vec3::zero()).approximate);
        assert!(!MeshSdf::new(&cube).unwrap().signed_distance(Vec3::zero()).approximate);
    }

    #[test]
    fn empty_mesh_is_error() {
        let m = TriangleMesh::<f64>::new(vec![], vec![]).unwrap();
        assert!(point_to_mesh_sdf(Vec3::zero(), &m).is_err());
    }

    #[test]
    fn sign_flips_once_along_crossing_ray() {
        let sphere = TriangleMesh::<f64>::icosphere(1.0, 2);
        let sdf = MeshSdf::new(&sphere).unwrap();
        let dir = Vec3::new(0.3, -0.5, 0.8).normalized();
        let mut flips = 0;
        let mut prev = sdf.signed_distance(Vec3::zero()).value.signum();
        for i in 1..=400 {
            let s = sdf.signed_distance(dir * (i as f64 * 0.005)).value.signum();
            if s != prev {
                flips += 1;
            }
            prev = s;
        }
        assert_eq!(flips, 1);
    }
}
