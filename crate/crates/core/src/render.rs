//! CPU rasterization of posed meshes: silhouettes and z-buffered depth, plus
//! the inverse operation of lifting a depth map back into world space.
//!
//! Coverage is tested at pixel centers (integer pixel coordinates) with
//! inclusive edge functions, so a pixel on a shared edge is covered by both
//! triangles. Triangles are clipped against the near plane before
//! projection. No antialiasing.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{ensure_dims, BinaryMask, CameraView, DepthMap, PointCloud, Sim3Transform, TriangleMesh, Vec3};
use crate::scalar::Real;

/// Near clipping distance along the optical axis, in scene units.
pub const NEAR_PLANE: f64 = 1e-3;

/// Visits every covered pixel of one camera-space triangle after near-plane
/// clipping: `visit(x, y, depth)`.
fn raster_triangle<T: Real>(cam: &CameraView<T>, tri: [Vec3<T>; 3], mut visit: impl FnMut(usize, usize, T)) {
    let near = T::lit(NEAR_PLANE);
    if tri.iter().all(|p| p.z < near) {
        return;
    }
    let mut poly: Vec<Vec3<T>> = Vec::with_capacity(4);
    for i in 0..3 {
        let (a, b) = (tri[i], tri[(i + 1) % 3]);
        let (ina, inb) = (a.z >= near, b.z >= near);
        if ina {
            poly.push(a);
        }
        if ina != inb {
            let t = (near - a.z) / (b.z - a.z);
            let mut p = a.lerp(b, t);
            p.z = near;
            poly.push(p);
        }
    }
    if poly.len() < 3 {
        return;
    }
    let (w, h) = (cam.width(), cam.height());
    let screen: Vec<(T, T, T)> = poly
        .iter()
        .map(|&p| {
            let (u, v) = cam.project_camera(p);
            (u, v, p.z)
        })
        .collect();
    for k in 1..screen.len() - 1 {
        let (p0, p1, p2) = (screen[0], screen[k], screen[k + 1]);
        let area = (p1.0 - p0.0) * (p2.1 - p0.1) - (p1.1 - p0.1) * (p2.0 - p0.0);
        if area == T::zero() || !area.is_finite() {
            continue;
        }
        let min_x = p0.0.min(p1.0).min(p2.0).ceil().max(T::zero());
        let max_x = p0.0.max(p1.0).max(p2.0).floor().min(T::from_count(w - 1));
        let min_y = p0.1.min(p1.1).min(p2.1).ceil().max(T::zero());
        let max_y = p0.1.max(p1.1).max(p2.1).floor().min(T::from_count(h - 1));
        if min_x > max_x || min_y > max_y {
            continue;
        }
        let (x0, x1) = (min_x.as_f64() as usize, max_x.as_f64() as usize);
        let (y0, y1) = (min_y.as_f64() as usize, max_y.as_f64() as usize);
        let inv_area = T::one() / area;
        let edge = |a: (T, T, T), b: (T, T, T), x: T, y: T| (b.0 - a.0) * (y - a.1) - (b.1 - a.1) * (x - a.0);
        for y in y0..=y1 {
            let py = T::from_count(y);
            for x in x0..=x1 {
                let px = T::from_count(x);
                let w0 = edge(p1, p2, px, py);
                let w1 = edge(p2, p0, px, py);
                let w2 = edge(p0, p1, px, py);
                let inside = (w0 >= T::zero() && w1 >= T::zero() && w2 >= T::zero())
                    || (w0 <= T::zero() && w1 <= T::zero() && w2 <= T::zero());
                if !inside {
                    continue;
                }
                let (l0, l1, l2) = (w0 * inv_area, w1 * inv_area, w2 * inv_area);
                let inv_z = l0 / p0.2 + l1 / p1.2 + l2 / p2.2;
                visit(x, y, T::one() / inv_z);
            }
        }
    }
}

fn camera_space_triangles<'a, T: Real>(
    mesh: &'a TriangleMesh<T>,
    pose: &'a Sim3Transform<T>,
    cam: &'a CameraView<T>,
) -> impl Iterator<Item = [Vec3<T>; 3]> + 'a {
    let verts: Vec<Vec3<T>> = mesh.vertices().iter().map(|&v| cam.world_to_camera(pose.apply(v))).collect();
    mesh.faces().iter().map(move |f| f.map(|i| verts[i]))
}

/// Binary silhouette of `mesh` under `pose` seen from `cam`. Both front and
/// back faces count; a mesh entirely behind the camera yields an empty mask.
pub fn rasterize_silhouette<T: Real>(
    mesh: &TriangleMesh<T>,
    pose: &Sim3Transform<T>,
    cam: &CameraView<T>,
) -> Result<BinaryMask> {
    if mesh.is_empty() {
        return Err(Error::Empty("mesh has no faces"));
    }
    let mut mask = BinaryMask::new(cam.width(), cam.height());
    for tri in camera_space_triangles(mesh, pose, cam) {
        raster_triangle(cam, tri, |x, y, _| mask.set(x, y, true));
    }
    Ok(mask)
}

/// Z-buffered depth render; uncovered pixels stay `0`.
pub fn render_depth<T: Real>(mesh: &TriangleMesh<T>, pose: &Sim3Transform<T>, cam: &CameraView<T>) -> DepthMap<T> {
    render_depth_and_faces(mesh, pose, cam).0
}

/// Depth render plus the index of the visible face per pixel.
pub fn render_depth_and_faces<T: Real>(
    mesh: &TriangleMesh<T>,
    pose: &Sim3Transform<T>,
    cam: &CameraView<T>,
) -> (DepthMap<T>, Vec<Option<usize>>) {
    let mut depth = DepthMap::new(cam.width(), cam.height());
    let mut faces = vec![None; cam.width() * cam.height()];
    for (f, tri) in camera_space_triangles(mesh, pose, cam).enumerate() {
        raster_triangle(cam, tri, |x, y, z| {
            let cur = depth.get(x, y);
            if cur == T::zero() || z < cur {
                depth.set(x, y, z);
                faces[y * cam.width() + x] = Some(f);
            }
        });
    }
    (depth, faces)
}

/// Silhouettes for several cameras, evaluated in parallel.
pub fn rasterize_views<T: Real>(
    mesh: &TriangleMesh<T>,
    pose: &Sim3Transform<T>,
    cams: &[CameraView<T>],
) -> Result<Vec<BinaryMask>> {
    cams.par_iter().map(|c| rasterize_silhouette(mesh, pose, c)).collect()
}

/// Lifts every valid pixel (`depth > 0`, and `mask` set when given) to a
/// world-space point through the inverse intrinsics and extrinsics.
pub fn unproject_depth<T: Real>(
    depth: &DepthMap<T>,
    cam: &CameraView<T>,
    mask: Option<&BinaryMask>,
) -> Result<PointCloud<T>> {
    ensure_dims((cam.width(), cam.height()), depth.dims())?;
    if let Some(m) = mask {
        ensure_dims((cam.width(), cam.height()), m.dims())?;
    }
    let mut points = Vec::new();
    for y in 0..depth.height() {
        for x in 0..depth.width() {
            let d = depth.get(x, y);
            if d > T::zero() && mask.is_none_or(|m| m.get(x, y)) {
                points.push(cam.unproject(T::from_count(x), T::from_count(y), d));
            }
        }
    }
    if points.is_empty() {
        return Err(Error::Empty("depth map has no valid pixels"));
    }
    Ok(PointCloud::new(points))
}

/// Lifts masked depth from several views into one cloud, keeping only
/// points that project inside the mask of every other view that sees them
/// in frame, after growing those masks by `slack_px`. Occluders in front of
/// the object and depth outliers far off the surface fail that test in at
/// least one view.
pub fn fuse_masked_views<T: Real>(
    views: &[(CameraView<T>, DepthMap<T>, BinaryMask)],
    slack_px: usize,
) -> Result<PointCloud<T>> {
    let grown: Vec<BinaryMask> = views.iter().map(|(_, _, m)| crate::cvm::dilate_disk(m, slack_px)).collect();
    let mut points = Vec::new();
    for (i, (cam, depth, mask)) in views.iter().enumerate() {
        let lifted = match unproject_depth(depth, cam, Some(mask)) {
            Ok(c) => c,
            Err(Error::Empty(_)) => continue,
            Err(e) => return Err(e),
        };
        points.extend(lifted.points().iter().copied().filter(|&p| {
            views.iter().zip(&grown).enumerate().all(|(j, ((other, _, _), m))| {
                if i == j {
                    return true;
                }
                match other.project(p) {
                    Some((u, v, _)) => {
                        let (x, y) = (u.as_f64().round(), v.as_f64().round());
                        let inside = x >= 0.0 && y >= 0.0 && (x as usize) < m.width() && (y as usize) < m.height();
                        !inside || m.get(x as usize, y as usize)
                    }
                    None => true,
                }
            })
        }));
    }
    if points.is_empty() {
        return Err(Error::Empty("no mask-consistent depth"));
    }
    Ok(PointCloud::new(points))
}
