use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{BinaryMask, CameraView, Sim3Transform, TriangleMesh};
use crate::render::rasterize_silhouette;
use crate::scalar::Real;

/// Editing region of one frame: the mesh silhouette grown to cover nearby
/// shadows and reflections.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextualMask {
    pub frame: usize,
    pub base: BinaryMask,
    pub dilated: BinaryMask,
    pub dilation_px: usize,
    pub shadow_px: usize,
}

impl ContextualMask {
    pub fn from_base(frame: usize, base: BinaryMask, dilation_px: usize, shadow_px: usize) -> Self {
        let dilated = grow_mask(&base, dilation_px, shadow_px);
        Self { frame, base, dilated, dilation_px, shadow_px }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.base.dims()
    }
}

/// Disk dilation (`dx² + dy² ≤ r²`).
pub fn dilate_disk(mask: &BinaryMask, radius: usize) -> BinaryMask {
    if radius == 0 {
        return mask.clone();
    }
    let r = radius as isize;
    let offsets: Vec<(isize, isize)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
        .filter(|(dx, dy)| dx * dx + dy * dy <= r * r)
        .collect();
    let (w, h) = mask.dims();
    let mut out = BinaryMask::new(w, h);
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            for &(dx, dy) in &offsets {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                if nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h {
                    out.set(nx as usize, ny as usize, true);
                }
            }
        }
    }
    out
}

/// Disk dilation of `base`, united with `base` shifted down by 1..=shadow_px rows.
pub fn grow_mask(base: &BinaryMask, dilation_px: usize, shadow_px: usize) -> BinaryMask {
    let mut out = dilate_disk(base, dilation_px);
    let (w, h) = base.dims();
    for y in 0..h {
        for x in 0..w {
            if base.get(x, y) {
                for s in 1..=shadow_px.min(h.saturating_sub(y + 1)) {
                    out.set(x, y + s, true);
                }
            }
        }
    }
    out
}

/// One contextual mask per view, rendered in parallel.
pub fn make_contextual_masks<T: Real>(
    mesh: &TriangleMesh<T>,
    pose: &Sim3Transform<T>,
    views: &[CameraView<T>],
    dilation_px: usize,
    shadow_px: usize,
) -> Result<Vec<ContextualMask>> {
    if mesh.faces().is_empty() {
        return Err(Error::Empty("mesh has no faces"));
    }
    views
        .par_iter()
        .enumerate()
        .map(|(i, cam)| {
            Ok(ContextualMask::from_base(i, rasterize_silhouette(mesh, pose, cam)?, dilation_px, shadow_px))
        })
        .collect()
}
