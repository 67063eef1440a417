//! Loss terms of the pose refinement objective. Each returns the value
//! and the gradient with respect to the seven pose parameters.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BinaryMask, CameraView, PointCloud, TriangleMesh, Vec3};
use crate::refine::pose::{PoseGrad, PoseMap, PoseParams};
use crate::refine::scene::SceneSurface;
use crate::render::rasterize_silhouette;
use crate::scalar::Real;
use crate::spatial::KdTree;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue<T> {
    pub value: T,
    pub grad: PoseGrad<T>,
}

impl<T: Real> LossValue<T> {
    pub fn zero() -> Self {
        Self { value: T::zero(), grad: PoseGrad::zero() }
    }
}

/// Symmetric Chamfer distance with a prebuilt target index.
pub(crate) fn chamfer_with_tree<T: Real>(
    samples: &[Vec3<T>],
    target: &KdTree<T>,
    pose: &PoseParams<T>,
) -> LossValue<T> {
    let mut map = PoseMap::new(pose);
    let rotated: Vec<Vec3<T>> = samples.iter().map(|&p| map.rotated(p)).collect();
    let posed: Vec<Vec3<T>> = samples.iter().map(|&p| map.apply(p)).collect();
    let n = T::from_count(samples.len());
    let m = T::from_count(target.len());
    let two = T::lit(2.0);

    let forward: Vec<(T, Vec3<T>)> = posed
        .par_iter()
        .map(|&x| {
            let (j, d2) = target.nearest(x).expect("non-empty target");
            (d2, x - target.point(j))
        })
        .collect();
    let mut value = T::zero();
    let mut grads = vec![Vec3::zero(); samples.len()];
    for (i, &(d2, diff)) in forward.iter().enumerate() {
        value += d2 / n;
        grads[i] += diff * (two / n);
    }

    let sample_tree = KdTree::build(&posed);
    let backward: Vec<(usize, T, Vec3<T>)> = (0..target.len())
        .into_par_iter()
        .map(|j| {
            let y = target.point(j);
            let (i, d2) = sample_tree.nearest(y).expect("non-empty samples");
            (i, d2, posed[i] - y)
        })
        .collect();
    for &(i, d2, diff) in &backward {
        value += d2 / m;
        grads[i] += diff * (two / m);
    }

    for (z, g) in rotated.iter().zip(&grads) {
        map.accumulate(*z, *g);
    }
    LossValue { value, grad: map.gradient() }
}

/// Symmetric Chamfer loss: mean squared nearest-neighbor distance from the
/// posed samples to `target` plus the same from `target` to the samples.
/// Correspondences are fixed within one evaluation.
pub fn chamfer_loss<T: Real>(
    mesh_samples: &PointCloud<T>,
    target: &PointCloud<T>,
    pose: &PoseParams<T>,
) -> Result<LossValue<T>> {
    mesh_samples.require_non_empty("mesh samples")?;
    target.require_non_empty("target cloud")?;
    Ok(chamfer_with_tree(mesh_samples.points(), &KdTree::build(target.points()), pose))
}

/// Mean squared distance between matching canonical bounding-box corners of
/// the posed mesh and the target. Each corner coordinate is a min or max
/// over vertices, so its gradient flows to the extremal vertex.
pub(crate) fn corner_with_target<T: Real>(
    vertices: &[Vec3<T>],
    target_corners: &[Vec3<T>; 8],
    pose: &PoseParams<T>,
) -> LossValue<T> {
    let mut map = PoseMap::new(pose);
    let posed: Vec<Vec3<T>> = vertices.iter().map(|&p| map.apply(p)).collect();
    let mut lo_idx = [0usize; 3];
    let mut hi_idx = [0usize; 3];
    for (i, x) in posed.iter().enumerate() {
        for a in 0..3 {
            if x[a] < posed[lo_idx[a]][a] {
                lo_idx[a] = i;
            }
            if x[a] > posed[hi_idx[a]][a] {
                hi_idx[a] = i;
            }
        }
    }
    let eighth = T::lit(0.125);
    let mut value = T::zero();
    // Per-axis gradient with respect to min / max coordinate.
    let mut g_lo = [T::zero(); 3];
    let mut g_hi = [T::zero(); 3];
    for (k, target) in target_corners.iter().enumerate() {
        for a in 0..3 {
            let hi = k & (4 >> a) != 0;
            let c = if hi { posed[hi_idx[a]][a] } else { posed[lo_idx[a]][a] };
            let d = c - target[a];
            value += d * d * eighth;
            let g = d * T::lit(2.0) * eighth;
            if hi {
                g_hi[a] += g;
            } else {
                g_lo[a] += g;
            }
        }
    }
    for a in 0..3 {
        let mut e = [T::zero(); 3];
        e[a] = g_lo[a];
        map.accumulate(map.rotated(vertices[lo_idx[a]]), Vec3::from_array(e));
        e[a] = g_hi[a];
        map.accumulate(map.rotated(vertices[hi_idx[a]]), Vec3::from_array(e));
    }
    LossValue { value, grad: map.gradient() }
}

pub fn corner_loss<T: Real>(
    mesh: &TriangleMesh<T>,
    target_cloud: &PointCloud<T>,
    pose: &PoseParams<T>,
) -> Result<LossValue<T>> {
    if mesh.vertices().is_empty() {
        return Err(Error::Empty("mesh has no vertices"));
    }
    let corners = target_cloud.aabb_corners()?;
    Ok(corner_with_target(mesh.vertices(), &corners, pose))
}

/// Step sizes for the finite-difference mask gradient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskFdSteps {
    pub rot: f64,
    pub trans: f64,
    pub log_scale: f64,
}

impl MaskFdSteps {
    fn for_index(&self, i: usize) -> f64 {
        match i {
            0..=2 => self.rot,
            3..=5 => self.trans,
            _ => self.log_scale,
        }
    }
}

/// Mean over views of `1 − IoU(silhouette, target)`. A view whose target
/// is empty contributes 1.
pub fn mask_value<T: Real>(
    mesh: &TriangleMesh<T>,
    pose: &PoseParams<T>,
    views: &[(CameraView<T>, BinaryMask)],
) -> Result<T> {
    if views.is_empty() {
        return Err(Error::InvalidArgument("mask loss needs at least one view".into()));
    }
    let tf = pose.to_sim3();
    let per_view: Vec<f64> = views
        .par_iter()
        .map(|(cam, target)| -> Result<f64> {
            if target.is_empty() {
                return Ok(1.0);
            }
            let sil = rasterize_silhouette(mesh, &tf, cam)?;
            let inter = sil.intersection_count(target)? as f64;
            let union = sil.union_count(target)? as f64;
            Ok(1.0 - inter / union)
        })
        .collect::<Result<_>>()?;
    Ok(T::lit(per_view.iter().sum::<f64>() / views.len() as f64))
}

/// Mask loss with a central finite-difference gradient over the parameters
/// flagged in `active` (order: rot xyz, t xyz, log scale).
pub fn mask_loss<T: Real>(
    mesh: &TriangleMesh<T>,
    pose: &PoseParams<T>,
    views: &[(CameraView<T>, BinaryMask)],
    steps: &MaskFdSteps,
    active: [bool; 7],
) -> Result<LossValue<T>> {
    let empty = views.iter().filter(|(_, m)| m.is_empty()).count();
    if empty > 0 {
        log::warn!("{empty} of {} mask views have an empty target", views.len());
    }
    let value = mask_value(mesh, pose, views)?;
    let base = pose.to_array();
    let grad: Vec<T> = (0..7)
        .into_par_iter()
        .map(|i| -> Result<T> {
            if !active[i] {
                return Ok(T::zero());
            }
            let h = T::lit(steps.for_index(i));
            let (mut plus, mut minus) = (base, base);
            plus[i] += h;
            minus[i] -= h;
            let fp = mask_value(mesh, &pose.with_array(plus), views)?;
            let fm = mask_value(mesh, &pose.with_array(minus), views)?;
            Ok((fp - fm) / (h * T::lit(2.0)))
        })
        .collect::<Result<_>>()?;
    Ok(LossValue { value, grad: PoseGrad::from_array(grad.try_into().expect("seven entries")) })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdfLoss<T> {
    pub loss: LossValue<T>,
    /// Samples whose nearest scene point had no usable normal; those fall
    /// back to unsigned clearance and are never penalized.
    pub unsigned_fallbacks: usize,
}

/// Mean of `max(0, −d)²` over posed samples, where `d` is the point-to-plane
/// distance to the nearest scene point.
pub fn sdf_penetration_loss<T: Real>(
    mesh_samples: &PointCloud<T>,
    scene: &SceneSurface<T>,
    pose: &PoseParams<T>,
) -> Result<SdfLoss<T>> {
    mesh_samples.require_non_empty("mesh samples")?;
    Ok(sdf_on_samples(mesh_samples.points(), scene, pose))
}

pub(crate) fn sdf_on_samples<T: Real>(
    samples: &[Vec3<T>],
    scene: &SceneSurface<T>,
    pose: &PoseParams<T>,
) -> SdfLoss<T> {
    let mut map = PoseMap::new(pose);
    let n = T::from_count(samples.len());
    let hits: Vec<Option<(T, Vec3<T>)>> = samples.par_iter().map(|&p| scene.signed_distance(map.apply(p))).collect();
    let mut value = T::zero();
    let mut fallbacks = 0;
    for (&p, hit) in samples.iter().zip(&hits) {
        match *hit {
            None => fallbacks += 1,
            Some((d, normal)) if d < T::zero() => {
                value += d * d / n;
                map.accumulate(map.rotated(p), normal * (T::lit(2.0) * d / n));
            }
            Some(_) => {}
        }
    }
    SdfLoss { loss: LossValue { value, grad: map.gradient() }, unsigned_fallbacks: fallbacks }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegTerms<T> {
    /// Squared geodesic rotation angle to the anchor.
    pub rot: LossValue<T>,
    /// Squared translation deviation.
    pub trans: LossValue<T>,
    /// Squared log-scale deviation.
    pub scale: LossValue<T>,
}

/// Drift regularizers relative to `anchor` (same base rotation assumed).
pub fn reg_terms<T: Real>(pose: &PoseParams<T>, anchor: &PoseParams<T>) -> RegTerms<T> {
    let rel = pose.rotation() * anchor.rotation().inverse();
    let phi = rel.rotation_vector();
    let jl = crate::geometry::so3_left_jacobian(pose.rot);
    let rot = LossValue {
        value: phi.norm_squared(),
        grad: PoseGrad { rot: jl.transpose().mul_vec(phi) * T::lit(2.0), ..PoseGrad::zero() },
    };
    let dt = pose.t - anchor.t;
    let trans = LossValue { value: dt.norm_squared(), grad: PoseGrad { t: dt * T::lit(2.0), ..PoseGrad::zero() } };
    let ds = pose.log_scale - anchor.log_scale;
    let scale = LossValue { value: ds * ds, grad: PoseGrad { log_scale: ds * T::lit(2.0), ..PoseGrad::zero() } };
    RegTerms { rot, trans, scale }
}
