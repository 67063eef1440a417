//! Initial pose alignment: discrete up-vector resolution followed by a
//! similarity ICP against a point cloud lifted from a reference depth map.

mod icp;
mod orientation;
mod umeyama;

pub use icp::{icp_sim3, icp_sim3_visible, IcpConfig, Phase1Result, SCALE_BOUNDS};
pub use orientation::{
    bbox_ncc, candidate_silhouette, cube_group, cube_index, resolve_up_vector, score_orientations, CubeRotation,
    OrientationCandidate, SCORE_TIE_TOLERANCE, WINDOW_MARGIN,
};
pub use umeyama::{rms_residual, umeyama_sim3};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BinaryMask, CameraView, PointCloud, Sim3Transform, TriangleMesh, Vec3};
use crate::scalar::Real;

/// Per-axis quantile used for the extents matched by [`initial_guess`].
pub const EXTENT_QUANTILE: f64 = 0.05;
const EXTENT_SAMPLES: usize = 2048;

/// Initial transform for an oriented candidate: rotate about the mesh
/// center, match extent diagonals and centroids. Extents are per-axis
/// [`EXTENT_QUANTILE`] boxes (mesh surface samples for the mesh) so a few
/// stray target points cannot inflate the scale.
pub fn initial_guess<T: Real>(
    mesh: &TriangleMesh<T>,
    orientation: &OrientationCandidate,
    target: &PointCloud<T>,
) -> Result<Sim3Transform<T>> {
    let rotation = orientation.rotation::<T>();
    let (mlo, mhi) = mesh.aabb().ok_or(Error::Empty("mesh has no vertices"))?;
    target.require_non_empty("target cloud")?;
    let samples: Vec<Vec3<T>> =
        mesh.sample_surface(EXTENT_SAMPLES, 0).points().iter().map(|&p| rotation.rotate(p)).collect();
    let mesh_diag = quantile_diagonal(&samples);
    let target_diag = quantile_diagonal(target.points());
    let scale = if mesh_diag > T::zero() && target_diag > T::zero() { target_diag / mesh_diag } else { T::one() };
    let center = (mlo + mhi) * T::lit(0.5);
    let tc = target.centroid().expect("non-empty");
    Sim3Transform::new(scale, rotation, tc - rotation.rotate(center) * scale)
}

fn quantile_diagonal<T: Real>(points: &[Vec3<T>]) -> T {
    if points.is_empty() {
        return T::zero();
    }
    let mut sq = T::zero();
    for axis in 0..3 {
        let mut v: Vec<T> = points.iter().map(|p| p[axis]).collect();
        v.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        let at = |q: f64| v[((v.len() - 1) as f64 * q).round() as usize];
        let ext = at(1.0 - EXTENT_QUANTILE) - at(EXTENT_QUANTILE);
        sq += ext * ext;
    }
    sq.sqrt()
}

/// Orientation search, initialization and ICP in one call. When
/// `ref_camera` is given, ICP uses only samples visible from it.
pub fn align_phase1<T: Real>(
    mesh: &TriangleMesh<T>,
    target: &PointCloud<T>,
    ref_views: &[(CameraView<T>, BinaryMask)],
    ref_camera: Option<&CameraView<T>>,
    cfg: &IcpConfig,
) -> Result<Phase1Result<T>> {
    let orientation = resolve_up_vector(mesh, ref_views)?;
    let init = initial_guess(mesh, &orientation, target)?;
    let mut result = match ref_camera {
        Some(cam) => icp_sim3_visible(mesh, target, &init, cam, cfg)?,
        None => icp_sim3(mesh, target, &init, cfg)?,
    };
    result.chosen_orientation = orientation;
    Ok(result)
}

/// JSON form: `{s, q, t, residual, iterations, orientation_index, orientation_score}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase1Record {
    pub s: f64,
    pub q: [f64; 4],
    pub t: [f64; 3],
    pub residual: f64,
    pub iterations: usize,
    pub orientation_index: usize,
    pub orientation_score: f64,
}

impl<T: Real> From<&Phase1Result<T>> for Phase1Record {
    fn from(r: &Phase1Result<T>) -> Self {
        let tf = r.transform.cast::<f64>();
        Self {
            s: tf.scale(),
            q: tf.rotation().to_wxyz(),
            t: tf.translation().to_array(),
            residual: r.residual.as_f64(),
            iterations: r.iterations,
            orientation_index: r.chosen_orientation.index,
            orientation_score: r.chosen_orientation.score,
        }
    }
}

impl Phase1Record {
    pub fn into_result<T: Real>(self) -> Result<Phase1Result<T>> {
        if self.orientation_index >= 24 {
            return Err(Error::InvalidArgument(format!("orientation_index {} out of range", self.orientation_index)));
        }
        let q = crate::geometry::UnitQuaternion::from_wxyz(self.q[0], self.q[1], self.q[2], self.q[3])?;
        let tf = Sim3Transform::new(self.s, q, Vec3::from_array(self.t))?.cast::<T>();
        Ok(Phase1Result {
            transform: tf,
            residual: T::lit(self.residual),
            iterations: self.iterations,
            chosen_orientation: OrientationCandidate { index: self.orientation_index, score: self.orientation_score },
            residual_history: vec![T::lit(self.residual)],
        })
    }
}
