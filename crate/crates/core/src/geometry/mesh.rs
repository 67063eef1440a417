use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, Sim3Transform, Vec3};
use crate::scalar::Real;

/// Indexed triangle mesh.
///
/// Face indices are validated at construction; zero-area faces are dropped
/// and counted in [`TriangleMesh::dropped_faces`].
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh<T> {
    vertices: Vec<Vec3<T>>,
    faces: Vec<[usize; 3]>,
    normals: Option<Vec<Vec3<T>>>,
    dropped_faces: usize,
}

impl<T: Real> TriangleMesh<T> {
    pub fn new(vertices: Vec<Vec3<T>>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        if let Some((i, f)) = faces.iter().enumerate().find(|(_, f)| f.iter().any(|&v| v >= n)) {
            return Err(Error::InvalidMesh(format!("face {i} {f:?} references a vertex beyond count {n}")));
        }
        if let Some(i) = vertices.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidMesh(format!("vertex {i} is not finite")));
        }
        let before = faces.len();
        let faces: Vec<[usize; 3]> = faces
            .into_iter()
            .filter(|f| {
                let [a, b, c] = f.map(|i| vertices[i]);
                let area2 = (b - a).cross(c - a).norm_squared();
                let scale = (b - a).norm_squared().max((c - a).norm_squared());
                area2 > T::epsilon() * T::epsilon() * scale * scale
            })
            .collect();
        let dropped_faces = before - faces.len();
        if dropped_faces > 0 {
            log::warn!("dropped {dropped_faces} degenerate faces");
        }
        Ok(Self { vertices, faces, normals: None, dropped_faces })
    }

    pub fn with_normals(mut self, normals: Vec<Vec3<T>>) -> Result<Self> {
        if normals.len() != self.vertices.len() {
            return Err(Error::InvalidMesh(format!("{} normals for {} vertices", normals.len(), self.vertices.len())));
        }
        self.normals = Some(normals);
        Ok(self)
    }

    pub fn vertices(&self) -> &[Vec3<T>] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn normals(&self) -> Option<&[Vec3<T>]> {
        self.normals.as_deref()
    }

    pub fn dropped_faces(&self) -> usize {
        self.dropped_faces
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    #[inline]
    pub fn triangle(&self, f: usize) -> [Vec3<T>; 3] {
        self.faces[f].map(|i| self.vertices[i])
    }

    pub fn triangles(&self) -> impl Iterator<Item = [Vec3<T>; 3]> + '_ {
        (0..self.faces.len()).map(move |f| self.triangle(f))
    }

    pub fn transformed(&self, pose: &Sim3Transform<T>) -> Self {
        Self {
            vertices: self.vertices.iter().map(|&v| pose.apply(v)).collect(),
            faces: self.faces.clone(),
            normals: self.normals.as_ref().map(|ns| ns.iter().map(|&n| pose.rotation().rotate(n)).collect()),
            dropped_faces: self.dropped_faces,
        }
    }

    /// Axis-aligned bounds of the vertices, `None` if there are none.
    pub fn aabb(&self) -> Option<(Vec3<T>, Vec3<T>)> {
        aabb_of(&self.vertices)
    }

    pub fn center(&self) -> Option<Vec3<T>> {
        self.aabb().map(|(lo, hi)| (lo + hi) * T::lit(0.5))
    }

    /// Largest vertex distance from the bounding-box center.
    pub fn bounding_radius(&self) -> T {
        let Some(c) = self.center() else { return T::zero() };
        self.vertices.iter().map(|&v| v.distance(c)).fold(T::zero(), T::max)
    }

    pub fn surface_area(&self) -> T {
        self.triangles().map(|[a, b, c]| (b - a).cross(c - a).norm() * T::lit(0.5)).sum()
    }

    /// Eight corners of the bounding box of the posed vertices.
    pub fn aabb_corners(&self, pose: &Sim3Transform<T>) -> Result<[Vec3<T>; 8]> {
        let posed: Vec<_> = self.vertices.iter().map(|&v| pose.apply(v)).collect();
        let (lo, hi) = aabb_of(&posed).ok_or(Error::Empty("mesh has no vertices"))?;
        Ok(box_corners(lo, hi))
    }

    /// True when every undirected edge is shared by exactly two faces with
    /// opposite orientation.
    pub fn is_watertight(&self) -> bool {
        if self.faces.is_empty() {
            return false;
        }
        let mut edges: HashMap<(usize, usize), i32> = HashMap::new();
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                let (key, sign) = if a < b { ((a, b), 1) } else { ((b, a), -1) };
                let e = edges.entry(key).or_insert(0);
                *e += sign * 8 + 1;
            }
        }
        // count 2 and net orientation 0 encode to exactly 2.
        edges.values().all(|&v| v == 2)
    }

    /// Area-weighted uniform samples on the surface, deterministic per seed.
    pub fn sample_surface(&self, count: usize, seed: u64) -> PointCloud<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cumulative = Vec::with_capacity(self.faces.len());
        let mut total = 0.0f64;
        for [a, b, c] in self.triangles() {
            total += (b - a).cross(c - a).norm().as_f64();
            cumulative.push(total);
        }
        if total <= 0.0 || count == 0 {
            return PointCloud::new(Vec::new());
        }
        let mut points = Vec::with_capacity(count);
        for _ in 0..count {
            let r: f64 = rng.random::<f64>() * total;
            let f = cumulative.partition_point(|&c| c < r).min(self.faces.len() - 1);
            let [a, b, c] = self.triangle(f);
            let (u, v): (f64, f64) = (rng.random(), rng.random());
            let su = u.sqrt();
            let (wa, wb, wc) = (1.0 - su, su * (1.0 - v), su * v);
            points.push(a * T::lit(wa) + b * T::lit(wb) + c * T::lit(wc));
        }
        PointCloud::new(points)
    }

    /// Concatenates meshes, reindexing faces.
    pub fn merge(parts: &[&Self]) -> Result<Self> {
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        for part in parts {
            let off = vertices.len();
            vertices.extend_from_slice(&part.vertices);
            faces.extend(part.faces.iter().map(|f| f.map(|i| i + off)));
        }
        Self::new(vertices, faces)
    }

    /// Same surface with the face list permuted by `order`.
    pub fn with_face_order(&self, order: &[usize]) -> Self {
        Self { faces: order.iter().map(|&i| self.faces[i]).collect(), ..self.clone() }
    }

    /// Axis-aligned box with outward-facing counter-clockwise triangles.
    pub fn cuboid(center: Vec3<T>, half_extents: Vec3<T>) -> Self {
        let vertices = (0..8)
            .map(|k| {
                let sx = if k & 4 != 0 { T::one() } else { -T::one() };
                let sy = if k & 2 != 0 { T::one() } else { -T::one() };
                let sz = if k & 1 != 0 { T::one() } else { -T::one() };
                center + half_extents.component_mul(Vec3::new(sx, sy, sz))
            })
            .collect();
        // Vertex index bits: x=4, y=2, z=1.
        let faces = vec![
            [0, 1, 3],
            [0, 3, 2], // -x
            [4, 6, 7],
            [4, 7, 5], // +x
            [0, 4, 5],
            [0, 5, 1], // -y
            [2, 3, 7],
            [2, 7, 6], // +y
            [0, 2, 6],
            [0, 6, 4], // -z
            [1, 5, 7],
            [1, 7, 3], // +z
        ];
        Self::new(vertices, faces).expect("static cuboid topology")
    }

    /// Side-1 cube centered at the origin.
    pub fn unit_cube() -> Self {
        Self::cuboid(Vec3::zero(), Vec3::splat(T::lit(0.5)))
    }

    /// Subdivided icosahedron projected onto a sphere.
    pub fn icosphere(radius: T, subdivisions: usize) -> Self {
        let t = (1.0 + 5.0f64.sqrt()) / 2.0;
        let mut verts: Vec<[f64; 3]> = vec![
            [-1.0, t, 0.0],
            [1.0, t, 0.0],
            [-1.0, -t, 0.0],
            [1.0, -t, 0.0],
            [0.0, -1.0, t],
            [0.0, 1.0, t],
            [0.0, -1.0, -t],
            [0.0, 1.0, -t],
            [t, 0.0, -1.0],
            [t, 0.0, 1.0],
            [-t, 0.0, -1.0],
            [-t, 0.0, 1.0],
        ];
        let mut faces: Vec<[usize; 3]> = vec![
            [0, 11, 5],
            [0, 5, 1],
            [0, 1, 7],
            [0, 7, 10],
            [0, 10, 11],
            [1, 5, 9],
            [5, 11, 4],
            [11, 10, 2],
            [10, 7, 6],
            [7, 1, 8],
            [3, 9, 4],
            [3, 4, 2],
            [3, 2, 6],
            [3, 6, 8],
            [3, 8, 9],
            [4, 9, 5],
            [2, 4, 11],
            [6, 2, 10],
            [8, 6, 7],
            [9, 8, 1],
        ];
        let norm = |v: [f64; 3]| {
            let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            [v[0] / n, v[1] / n, v[2] / n]
        };
        for v in verts.iter_mut() {
            *v = norm(*v);
        }
        for _ in 0..subdivisions {
            let mut cache: HashMap<(usize, usize), usize> = HashMap::new();
            let mut next = Vec::with_capacity(faces.len() * 4);
            let mut midpoint = |a: usize, b: usize, verts: &mut Vec<[f64; 3]>| {
                let key = (a.min(b), a.max(b));
                *cache.entry(key).or_insert_with(|| {
                    let (p, q) = (verts[a], verts[b]);
                    verts.push(norm([(p[0] + q[0]) / 2.0, (p[1] + q[1]) / 2.0, (p[2] + q[2]) / 2.0]));
                    verts.len() - 1
                })
            };
            for &[a, b, c] in &faces {
                let ab = midpoint(a, b, &mut verts);
                let bc = midpoint(b, c, &mut verts);
                let ca = midpoint(c, a, &mut verts);
                next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
            }
            faces = next;
        }
        let vertices =
            verts.into_iter().map(|v| Vec3::new(T::lit(v[0]), T::lit(v[1]), T::lit(v[2])) * radius).collect();
        Self::new(vertices, faces).expect("static icosphere topology")
    }
}

pub(crate) fn aabb_of<T: Real>(points: &[Vec3<T>]) -> Option<(Vec3<T>, Vec3<T>)> {
    let first = *points.first()?;
    Some(points.iter().fold((first, first), |(lo, hi), &p| (lo.min(p), hi.max(p))))
}

/// Corners in lexicographic order over `(±x, ±y, ±z)` with `-` first:
/// index bit 2 selects x, bit 1 selects y, bit 0 selects z.
pub fn box_corners<T: Real>(lo: Vec3<T>, hi: Vec3<T>) -> [Vec3<T>; 8] {
    std::array::from_fn(|k| {
        Vec3::new(
            if k & 4 != 0 { hi.x } else { lo.x },
            if k & 2 != 0 { hi.y } else { lo.y },
            if k & 1 != 0 { hi.z } else { lo.z },
        )
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::UnitQuaternion;

    #[test]
    fn rejects_out_of_range_indices() {
        let v = vec![Vec3::<f64>::zero(), Vec3::unit_x(), Vec3::unit_y()];
        assert!(TriangleMesh::new(v, vec![[0, 1, 3]]).is_err());
    }

    #[test]
    fn drops_degenerate_faces() {
        let v = vec![Vec3::<f64>::zero(), Vec3::unit_x(), Vec3::unit_y(), Vec3::unit_x() * 2.0];
        let m = TriangleMesh::new(v, vec![[0, 1, 2], [0, 1, 3]]).unwrap();
        assert_eq!(m.faces().len(), 1);
        assert_eq!(m.dropped_faces(), 1);
    }

    #[test]
    fn cube_is_watertight_with_outward_faces() {
        let m = TriangleMesh::<f64>::unit_cube();
        assert!(m.is_watertight());
        assert!((m.surface_area() - 6.0).abs() < 1e-12);
        for [a, b, c] in m.triangles() {
            let n = (b - a).cross(c - a);
            let centroid = (a + b + c) / 3.0;
            assert!(n.dot(centroid) > 0.0);
        }
        let open = TriangleMesh::new(m.vertices().to_vec(), m.faces()[..11].to_vec()).unwrap();
        assert!(!open.is_watertight());
    }

    #[test]
    fn icosphere_is_closed_and_outward() {
        let m = TriangleMesh::<f64>::icosphere(1.0, 2);
        assert_eq!(m.faces().len(), 320);
        assert!(m.is_watertight());
        for [a, b, c] in m.triangles() {
            assert!((b - a).cross(c - a).dot(a + b + c) > 0.0);
        }
    }

    #[test]
    fn unit_cube_corners_identity_and_scaled() {
        let m = TriangleMesh::<f64>::unit_cube();
        let c = m.aabb_corners(&Sim3Transform::identity()).unwrap();
        assert_eq!(c[0], Vec3::splat(-0.5));
        assert_eq!(c[7], Vec3::splat(0.5));
        assert_eq!(c[4], Vec3::new(0.5, -0.5, -0.5));
        assert_eq!(c[1], Vec3::new(-0.5, -0.5, 0.5));
        let s2 = Sim3Transform::new(2.0, UnitQuaternion::identity(), Vec3::zero()).unwrap();
        let c2 = m.aabb_corners(&s2).unwrap();
        for k in 0..8 {
            assert_eq!(c2[k], c[k] * 2.0);
            assert!(c2[k].x.abs() == 1.0 && c2[k].y.abs() == 1.0 && c2[k].z.abs() == 1.0);
        }
    }

    #[test]
    fn corners_bound_every_posed_vertex() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let verts: Vec<Vec3<f64>> = (0..60)
            .map(|_| Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-1.0..3.0), rng.random_range(-1.0..1.0)))
            .collect();
        let faces = (0..58).map(|i| [i, i + 1, i + 2]).collect();
        let m = TriangleMesh::new(verts, faces).unwrap();
        let pose = Sim3Transform::new(
            1.7,
            UnitQuaternion::from_axis_angle(Vec3::new(1.0, 2.0, 3.0), 0.8),
            Vec3::new(0.5, -1.0, 2.0),
        )
        .unwrap();
        let c = m.aabb_corners(&pose).unwrap();
        let (lo, hi) = (c[0], c[7]);
        for &v in m.vertices() {
            let p = pose.apply(v);
            for a in 0..3 {
                assert!(p[a] >= lo[a] && p[a] <= hi[a]);
            }
        }
        // Each bound is attained by some vertex.
        for a in 0..3 {
            assert!(m.vertices().iter().any(|&v| pose.apply(v)[a] == lo[a]));
            assert!(m.vertices().iter().any(|&v| pose.apply(v)[a] == hi[a]));
        }
    }

    #[test]
    fn surface_samples_are_deterministic_and_on_surface() {
        let m = TriangleMesh::<f64>::unit_cube();
        let a = m.sample_surface(500, 42);
        let b = m.sample_surface(500, 42);
        assert_eq!(a.points(), b.points());
        for p in a.points() {
            let inf = p.x.abs().max(p.y.abs()).max(p.z.abs());
            assert!((inf - 0.5).abs() < 1e-12);
        }
    }
}
