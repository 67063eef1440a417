//! Discrete orientation search over the 24 proper rotations of the cube.
//!
//! Each candidate orients the asset, renders its silhouette in every
//! reference camera, rescales the silhouette onto the reference mask's
//! bounding box and scores the overlap by normalized cross-correlation.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BinaryMask, CameraView, Mat3, Sim3Transform, TriangleMesh, UnitQuaternion, Vec3};
use crate::render::rasterize_silhouette;
use crate::scalar::Real;

/// Scores closer than this are ties; the smaller-angle candidate wins.
pub const SCORE_TIE_TOLERANCE: f64 = 1e-9;

/// Signed permutation matrix with determinant +1: row `i` has `sign[i]` in
/// column `perm[i]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CubeRotation {
    perm: [usize; 3],
    sign: [i8; 3],
}

impl CubeRotation {
    /// Applies the rotation by permuting and negating coordinates, which
    /// is exact in floating point.
    pub fn apply<T: Real>(&self, v: Vec3<T>) -> Vec3<T> {
        let c = |i: usize| if self.sign[i] > 0 { v[self.perm[i]] } else { -v[self.perm[i]] };
        Vec3::new(c(0), c(1), c(2))
    }

    pub fn inverse(&self) -> Self {
        let mut perm = [0; 3];
        let mut sign = [0; 3];
        for i in 0..3 {
            perm[self.perm[i]] = i;
            sign[self.perm[i]] = self.sign[i];
        }
        Self { perm, sign }
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &Self) -> Self {
        let mut perm = [0; 3];
        let mut sign = [0; 3];
        for i in 0..3 {
            perm[i] = other.perm[self.perm[i]];
            sign[i] = self.sign[i] * other.sign[self.perm[i]];
        }
        Self { perm, sign }
    }

    pub fn matrix<T: Real>(&self) -> Mat3<T> {
        let mut m = [[T::zero(); 3]; 3];
        for i in 0..3 {
            m[i][self.perm[i]] = T::lit(f64::from(self.sign[i]));
        }
        Mat3::from_rows(m)
    }

    pub fn quaternion<T: Real>(&self) -> UnitQuaternion<T> {
        UnitQuaternion::from_matrix(&self.matrix())
    }

    pub fn angle(&self) -> f64 {
        self.quaternion::<f64>().angle()
    }
}

/// The 24 cube rotations ordered by rotation angle from the identity
/// (index 0), ties broken by matrix entries.
pub fn cube_group() -> &'static [CubeRotation; 24] {
    static GROUP: OnceLock<[CubeRotation; 24]> = OnceLock::new();
    GROUP.get_or_init(|| {
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let mut all = Vec::with_capacity(24);
        for perm in perms {
            for bits in 0..8u8 {
                let sign = [0, 1, 2].map(|i| if bits & (1 << i) != 0 { -1i8 } else { 1 });
                let r = CubeRotation { perm, sign };
                if r.matrix::<f64>().determinant() > 0.0 {
                    all.push(r);
                }
            }
        }
        all.sort_by(|a, b| {
            let key = |r: &CubeRotation| {
                let entries: Vec<i64> = r.matrix::<f64>().m.iter().flatten().map(|&v| v as i64).collect();
                ((r.angle() * 1e9).round() as i64, entries)
            };
            key(a).cmp(&key(b))
        });
        all.try_into().expect("24 proper cube rotations")
    })
}

/// Position of `r` in [`cube_group`].
pub fn cube_index(r: &CubeRotation) -> usize {
    cube_group().iter().position(|g| g == r).expect("member of the cube group")
}

/// One scored orientation hypothesis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientationCandidate {
    /// Index into [`cube_group`].
    pub index: usize,
    /// Mean normalized cross-correlation in `[-1, 1]`.
    pub score: f64,
}

impl OrientationCandidate {
    pub fn identity() -> Self {
        Self { index: 0, score: 1.0 }
    }

    pub fn cube_rotation(&self) -> CubeRotation {
        cube_group()[self.index]
    }

    pub fn rotation<T: Real>(&self) -> UnitQuaternion<T> {
        self.cube_rotation().quaternion()
    }
}

/// Mesh vertices rotated about the bounding-box center, with the center
/// moved to the origin.
fn oriented_vertices<T: Real>(mesh: &TriangleMesh<T>, rot: &CubeRotation) -> Vec<Vec3<T>> {
    let c = mesh.center().unwrap_or_else(Vec3::zero);
    mesh.vertices().iter().map(|&v| rot.apply(v - c)).collect()
}

/// Bounding radius invariant under coordinate permutation.
fn symmetric_radius<T: Real>(verts: &[Vec3<T>]) -> T {
    verts
        .iter()
        .map(|v| {
            let mut a = [v.x.abs(), v.y.abs(), v.z.abs()];
            a.sort_by(|p, q| p.partial_cmp(q).unwrap_or(std::cmp::Ordering::Equal));
            (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
        })
        .fold(T::zero(), T::max)
}

/// Silhouette of the centered, rotated mesh placed on the ray through the
/// reference mask's centroid at the depth where its bounding sphere spans
/// the mask's bounding box.
pub fn candidate_silhouette<T: Real>(
    mesh: &TriangleMesh<T>,
    rot: &CubeRotation,
    cam: &CameraView<T>,
    reference: &BinaryMask,
) -> Result<BinaryMask> {
    let (x0, y0, x1, y1) = reference.bbox().ok_or(Error::Empty("reference mask"))?;
    let (cu, cv) = reference.centroid().expect("non-empty mask has a centroid");
    let verts = oriented_vertices(mesh, rot);
    let radius = symmetric_radius(&verts);
    let half_px = ((x1 - x0 + 1).max(y1 - y0 + 1) as f64 * 0.5).max(1.0);
    let k = cam.intrinsics();
    let depth = k.fx.max(k.fy) * radius / T::lit(half_px) + radius;
    let at = cam.unproject(T::lit(cu), T::lit(cv), depth);
    let posed = TriangleMesh::new(verts, mesh.faces().to_vec())?;
    rasterize_silhouette(&posed, &Sim3Transform::from_translation(at), cam)
}

/// Fraction of the reference bounding box added on each side of the
/// correlation window, so the background takes part in the score.
pub const WINDOW_MARGIN: f64 = 0.25;

/// Normalized cross-correlation between the rendered silhouette and the
/// reference mask after an isotropic rescale that matches their areas,
/// with centroids aligned. The window is the reference bounding box padded
/// by [`WINDOW_MARGIN`] on each side.
pub fn bbox_ncc(rendered: &BinaryMask, reference: &BinaryMask) -> f64 {
    let (Some((rcx, rcy)), Some((tcx, tcy)), Some((tx0, ty0, tx1, ty1))) =
        (rendered.centroid(), reference.centroid(), reference.bbox())
    else {
        return 0.0;
    };
    let k = (reference.count() as f64 / rendered.count() as f64).sqrt();
    let (tw, th) = ((tx1 - tx0 + 1) as f64, (ty1 - ty0 + 1) as f64);
    let mx = (tw * WINDOW_MARGIN).ceil().max(2.0) as isize;
    let my = (th * WINDOW_MARGIN).ceil().max(2.0) as isize;
    let mut a = Vec::new();
    let mut b = Vec::new();
    for y in (ty0 as isize - my)..=(ty1 as isize + my) {
        let sy = (rcy + (y as f64 - tcy) / k).round() as isize;
        for x in (tx0 as isize - mx)..=(tx1 as isize + mx) {
            let sx = (rcx + (x as f64 - tcx) / k).round() as isize;
            a.push(f64::from(u8::from(rendered.get_signed(sx, sy))));
            b.push(f64::from(u8::from(reference.get_signed(x, y))));
        }
    }
    ncc(&a, &b)
}

/// Pearson correlation; two constant signals correlate to 1 if equal, else 0.
fn ncc(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return if a == b { 1.0 } else { 0.0 };
    }
    (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)
}

/// Picks the cube rotation whose silhouettes best correlate with the
/// reference masks, averaged over views with non-empty masks.
pub fn resolve_up_vector<T: Real>(
    mesh: &TriangleMesh<T>,
    ref_views: &[(CameraView<T>, BinaryMask)],
) -> Result<OrientationCandidate> {
    Ok(score_orientations(mesh, ref_views)?
        .into_iter()
        .fold(None::<OrientationCandidate>, |best, c| match best {
            Some(b) if c.score <= b.score + SCORE_TIE_TOLERANCE => Some(b),
            _ => Some(c),
        })
        .expect("24 candidates"))
}

/// Scores of all 24 candidates in [`cube_group`] order.
pub fn score_orientations<T: Real>(
    mesh: &TriangleMesh<T>,
    ref_views: &[(CameraView<T>, BinaryMask)],
) -> Result<Vec<OrientationCandidate>> {
    if mesh.is_empty() {
        return Err(Error::Empty("mesh has no faces"));
    }
    let views: Vec<_> = ref_views.iter().filter(|(_, m)| !m.is_empty()).collect();
    if views.is_empty() {
        return Err(Error::Empty("all reference masks are empty"));
    }
    for (cam, m) in &views {
        crate::geometry::ensure_dims((cam.width(), cam.height()), m.dims())?;
    }
    use rayon::prelude::*;
    cube_group()
        .par_iter()
        .enumerate()
        .map(|(index, rot)| {
            let mut total = 0.0;
            for (cam, reference) in &views {
                let sil = candidate_silhouette(mesh, rot, cam, reference)?;
                total += bbox_ncc(&sil, reference);
            }
            Ok(OrientationCandidate { index, score: total / views.len() as f64 })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn group_has_24_distinct_proper_rotations() {
        let g = cube_group();
        let set: HashSet<_> = g.iter().collect();
        assert_eq!(set.len(), 24);
        assert_eq!(g[0].angle(), 0.0);
        for r in g {
            assert!((r.matrix::<f64>().determinant() - 1.0).abs() < 1e-12);
            let q: UnitQuaternion<f64> = r.quaternion();
            let v = Vec3::new(0.3, -1.1, 2.0);
            assert!((q.rotate(v) - r.apply(v)).norm() < 1e-12);
            assert_eq!(r.compose(&r.inverse()), g[0]);
        }
        for w in g.windows(2) {
            assert!(w[0].angle() <= w[1].angle() + 1e-12);
        }
    }

    #[test]
    fn ncc_edge_cases() {
        assert_eq!(ncc(&[1.0, 1.0], &[1.0, 1.0]), 1.0);
        assert_eq!(ncc(&[1.0, 1.0], &[0.0, 1.0]), 0.0);
        assert!((ncc(&[0.0, 1.0, 0.0], &[1.0, 0.0, 1.0]) + 1.0).abs() < 1e-12);
    }
}
