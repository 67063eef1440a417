//! Projection and volumetric overlap between a posed mesh and ground truth.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BinaryMask, CameraView, Sim3Transform, TriangleMesh, Vec3};
use crate::render::rasterize_silhouette;
use crate::scalar::Real;

pub const DEFAULT_VOXEL_RES: usize = 128;
pub const MIN_VOXEL_RES: usize = 8;

/// `|a ∧ b| / |a ∨ b|`, and 1 when both are empty.
pub fn mask_iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let union = a.union_count(b)?;
    if union == 0 {
        return Ok(1.0);
    }
    Ok(a.intersection_count(b)? as f64 / union as f64)
}

/// Per-view IoU of the posed silhouette against each ground-truth mask.
pub fn iou_2d_per_view<T: Real>(
    mesh: &TriangleMesh<T>,
    pose: &Sim3Transform<T>,
    gt_masks: &[(CameraView<T>, BinaryMask)],
) -> Result<Vec<f64>> {
    if gt_masks.is_empty() {
        return Err(Error::InvalidArgument("2D IoU needs at least one view".into()));
    }
    gt_masks.par_iter().map(|(cam, gt)| mask_iou(&rasterize_silhouette(mesh, pose, cam)?, gt)).collect()
}

pub fn iou_2d<T: Real>(
    mesh: &TriangleMesh<T>,
    pose: &Sim3Transform<T>,
    gt_masks: &[(CameraView<T>, BinaryMask)],
) -> Result<f64> {
    let v = iou_2d_per_view(mesh, pose, gt_masks)?;
    Ok(v.iter().sum::<f64>() / v.len() as f64)
}

/// Solid occupancy of posed meshes on a regular grid.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub lo: Vec3<f64>,
    pub hi: Vec3<f64>,
    pub res: usize,
    /// Index `x + res * (y + res * z)`.
    pub occupied: Vec<bool>,
}

impl VoxelGrid {
    pub fn count(&self) -> usize {
        self.occupied.iter().filter(|&&o| o).count()
    }
}

fn is_top_left(d: (f64, f64)) -> bool {
    d.1 > 0.0 || (d.1 == 0.0 && d.0 < 0.0)
}

/// Ray crossings along +x for the column at `(y, z)`: `(x, sign)` with
/// sign +1 where the surface normal has positive x. Points on shared edges
/// go to exactly one triangle (top-left rule).
fn crossing(tri: &[Vec3<f64>; 3], y: f64, z: f64) -> Option<(f64, i32)> {
    let p: [(f64, f64); 3] = tri.map(|v| (v.y, v.z));
    let area = (p[1].0 - p[0].0) * (p[2].1 - p[0].1) - (p[1].1 - p[0].1) * (p[2].0 - p[0].0);
    if area == 0.0 {
        return None;
    }
    let (order, sign) = if area > 0.0 { ([0, 1, 2], 1) } else { ([0, 2, 1], -1) };
    let mut w = [0.0; 3];
    for e in 0..3 {
        let a = p[order[e]];
        let b = p[order[(e + 1) % 3]];
        let edge = (b.0 - a.0) * (z - a.1) - (b.1 - a.1) * (y - a.0);
        let inside = edge > 0.0 || (edge == 0.0 && is_top_left((b.0 - a.0, b.1 - a.1)));
        if !inside {
            return None;
        }
        w[order[(e + 2) % 3]] = edge;
    }
    let total = w[0] + w[1] + w[2];
    let x = (w[0] * tri[0].x + w[1] * tri[1].x + w[2] * tri[2].x) / total;
    Some((x, sign))
}

/// Winding-parity occupancy of voxel centers, exact for closed meshes.
pub fn voxelize<T: Real>(
    mesh: &TriangleMesh<T>,
    pose: &Sim3Transform<T>,
    lo: Vec3<f64>,
    hi: Vec3<f64>,
    res: usize,
) -> VoxelGrid {
    let pose64: Sim3Transform<f64> = pose.cast();
    let tris: Vec<[Vec3<f64>; 3]> = mesh.triangles().map(|t| t.map(|v| pose64.apply(v.cast()))).collect();
    let step = (hi - lo) / res as f64;
    let center = |i: usize, axis: usize| lo[axis] + (i as f64 + 0.5) * step[axis];

    // Bucket triangles by the z-slabs their bounding boxes touch.
    let index_range = |min: f64, max: f64, axis: usize| -> (usize, usize) {
        let a = ((min - lo[axis]) / step[axis] - 0.5).ceil().max(0.0) as usize;
        let b = ((max - lo[axis]) / step[axis] - 0.5).floor();
        if b < 0.0 {
            return (1, 0);
        }
        (a, (b as usize).min(res - 1))
    };
    let slabs: Vec<Vec<usize>> = {
        let mut s = vec![Vec::new(); res];
        for (k, t) in tris.iter().enumerate() {
            let (zmin, zmax) = t.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v.z), b.max(v.z)));
            let (z0, z1) = index_range(zmin, zmax, 2);
            for slab in s.iter_mut().take(z1 + 1).skip(z0) {
                slab.push(k);
            }
        }
        s
    };

    let occupied: Vec<bool> = (0..res)
        .into_par_iter()
        .flat_map_iter(|iz| {
            let z = center(iz, 2);
            let mut plane = vec![false; res * res];
            let mut columns: Vec<Vec<(f64, i32)>> = vec![Vec::new(); res];
            for &k in &slabs[iz] {
                let t = &tris[k];
                let (ymin, ymax) =
                    t.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v.y), b.max(v.y)));
                let (y0, y1) = index_range(ymin, ymax, 1);
                for (iy, col) in columns.iter_mut().enumerate().take(y1 + 1).skip(y0) {
                    if let Some(c) = crossing(t, center(iy, 1), z) {
                        col.push(c);
                    }
                }
            }
            for (iy, col) in columns.iter_mut().enumerate() {
                if col.is_empty() {
                    continue;
                }
                col.sort_by(|a, b| a.0.total_cmp(&b.0));
                let mut winding = 0;
                let mut next = 0;
                for ix in 0..res {
                    let x = center(ix, 0);
                    while next < col.len() && col[next].0 < x {
                        winding += col[next].1;
                        next += 1;
                    }
                    plane[ix + res * iy] = winding != 0;
                }
            }
            plane
        })
        .collect();
    VoxelGrid { lo, hi, res, occupied }
}

/// Volumetric IoU of two posed meshes on a shared `res³` grid spanning the
/// union of their bounding boxes.
pub fn iou_3d<T: Real>(
    mesh: &TriangleMesh<T>,
    pose: &Sim3Transform<T>,
    gt_mesh: &TriangleMesh<T>,
    gt_pose: &Sim3Transform<T>,
    voxel_res: usize,
) -> Result<f64> {
    if voxel_res < MIN_VOXEL_RES {
        return Err(Error::InvalidArgument(format!("voxel_res must be >= {MIN_VOXEL_RES}, got {voxel_res}")));
    }
    let bounds = |m: &TriangleMesh<T>, p: &Sim3Transform<T>| -> Result<(Vec3<f64>, Vec3<f64>)> {
        let c = m.aabb_corners(p)?;
        let c: Vec<Vec3<f64>> = c.iter().map(|v| v.cast()).collect();
        Ok((c[0], c[7]))
    };
    let (a_lo, a_hi) = bounds(mesh, pose)?;
    let (b_lo, b_hi) = bounds(gt_mesh, gt_pose)?;
    let (lo, hi) = (a_lo.min(b_lo), a_hi.max(b_hi));
    let ext = hi - lo;
    if !(ext.x > 0.0 && ext.y > 0.0 && ext.z > 0.0) || !ext.is_finite() {
        return Err(Error::Degenerate("union of the posed meshes has zero volume".into()));
    }
    let a = voxelize(mesh, pose, lo, hi, voxel_res);
    let b = voxelize(gt_mesh, gt_pose, lo, hi, voxel_res);
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.occupied.iter().zip(&b.occupied) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    if union == 0 {
        return Err(Error::Degenerate("neither mesh occupies any voxel".into()));
    }
    Ok(inter as f64 / union as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IoUReport {
    pub per_view_2d: Vec<f64>,
    pub mean_2d: f64,
    pub iou_3d: f64,
    pub voxel_res: usize,
    /// Views where both silhouettes were empty and scored 1 by convention.
    pub empty_views: Vec<usize>,
}

/// Scores `pose` against ground truth rendered from `gt_pose` in `cameras`.
pub fn evaluate<T: Real>(
    mesh: &TriangleMesh<T>,
    pose: &Sim3Transform<T>,
    gt_mesh: &TriangleMesh<T>,
    gt_pose: &Sim3Transform<T>,
    cameras: &[CameraView<T>],
    voxel_res: usize,
) -> Result<IoUReport> {
    let gt_masks =
        cameras.par_iter().map(|c| Ok((*c, rasterize_silhouette(gt_mesh, gt_pose, c)?))).collect::<Result<Vec<_>>>()?;
    evaluate_with_masks(mesh, pose, gt_mesh, gt_pose, &gt_masks, voxel_res)
}

pub fn evaluate_with_masks<T: Real>(
    mesh: &TriangleMesh<T>,
    pose: &Sim3Transform<T>,
    gt_mesh: &TriangleMesh<T>,
    gt_pose: &Sim3Transform<T>,
    gt_masks: &[(CameraView<T>, BinaryMask)],
    voxel_res: usize,
) -> Result<IoUReport> {
    let per_view_2d = iou_2d_per_view(mesh, pose, gt_masks)?;
    let empty_views = gt_masks
        .iter()
        .enumerate()
        .filter(|(_, (c, m))| {
            m.is_empty() && rasterize_silhouette(mesh, pose, c).map(|s| s.is_empty()).unwrap_or(false)
        })
        .map(|(i, _)| i)
        .collect();
    let mean_2d = per_view_2d.iter().sum::<f64>() / per_view_2d.len() as f64;
    Ok(IoUReport {
        mean_2d,
        per_view_2d,
        iou_3d: iou_3d(mesh, pose, gt_mesh, gt_pose, voxel_res)?,
        voxel_res,
        empty_views,
    })
}
