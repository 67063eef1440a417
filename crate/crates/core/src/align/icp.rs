use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::align::orientation::OrientationCandidate;
use crate::align::umeyama::{rms_residual, umeyama_points};
use crate::error::{Error, Result};
use crate::geometry::{CameraView, PointCloud, Sim3Transform, TriangleMesh, Vec3};
use crate::render::render_depth;
use crate::scalar::Real;
use crate::spatial::KdTree;

/// Allowed scale range; leaving it aborts the iteration.
pub const SCALE_BOUNDS: (f64, f64) = (1e-3, 1e3);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IcpConfig {
    pub max_iters: usize,
    /// Stop once the relative residual improvement drops below this.
    pub convergence_eps: f64,
    pub sample_count: usize,
    pub seed: u64,
    /// Also pair every target point with its nearest posed sample. Plain
    /// sample-to-target matching lets the scale shrink onto a partial
    /// target.
    pub symmetric: bool,
    /// Fraction of the worst pairs dropped each iteration, in [0, 1).
    pub trim_fraction: f64,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self { max_iters: 50, convergence_eps: 1e-6, sample_count: 4096, seed: 0, symmetric: true, trim_fraction: 0.2 }
    }
}

/// Outcome of the initial similarity alignment.
#[derive(Debug, Clone, PartialEq)]
pub struct Phase1Result<T> {
    pub transform: Sim3Transform<T>,
    /// RMS correspondence distance at the returned transform.
    pub residual: T,
    pub iterations: usize,
    pub chosen_orientation: OrientationCandidate,
    /// Residual before each update, then the final one.
    pub residual_history: Vec<T>,
}

/// Similarity ICP: nearest-neighbor correspondences from mesh surface
/// samples into `target`, re-solved in closed form until the relative
/// improvement falls below `convergence_eps` or `max_iters` is reached.
pub fn icp_sim3<T: Real>(
    mesh: &TriangleMesh<T>,
    target: &PointCloud<T>,
    init: &Sim3Transform<T>,
    cfg: &IcpConfig,
) -> Result<Phase1Result<T>> {
    let samples = mesh.sample_surface(cfg.sample_count, cfg.seed);
    icp_on_samples(samples.points(), target, init, cfg)
}

/// Like [`icp_sim3`] but restricted to samples visible from `camera` at the
/// initial pose, for targets lifted from a single depth image. The initial
/// translation is first shifted so the visible samples' centroid lands on
/// the target centroid; a single view only sees the near side, so the
/// bounding-box placement sits too far back.
pub fn icp_sim3_visible<T: Real>(
    mesh: &TriangleMesh<T>,
    target: &PointCloud<T>,
    init: &Sim3Transform<T>,
    camera: &CameraView<T>,
    cfg: &IcpConfig,
) -> Result<Phase1Result<T>> {
    let samples = mesh.sample_surface(cfg.sample_count, cfg.seed);
    let visible = visible_samples(mesh, samples.points(), init, camera);
    if visible.len() < 3 {
        return icp_on_samples(samples.points(), target, init, cfg);
    }
    target.require_non_empty("ICP target")?;
    let seen = Vec3::centroid(&visible.iter().map(|&p| init.apply(p)).collect::<Vec<_>>()).expect("non-empty");
    let shift = target.centroid().expect("non-empty") - seen;
    let start = Sim3Transform::new(init.scale(), init.rotation(), init.translation() + shift)?;
    icp_on_samples(&visible, target, &start, cfg)
}

fn visible_samples<T: Real>(
    mesh: &TriangleMesh<T>,
    samples: &[Vec3<T>],
    pose: &Sim3Transform<T>,
    cam: &CameraView<T>,
) -> Vec<Vec3<T>> {
    let depth = render_depth(mesh, pose, cam);
    let tol = T::lit(1e-3) * pose.scale() * mesh.bounding_radius().max(T::epsilon());
    samples
        .iter()
        .copied()
        .filter(|&p| {
            let Some((u, v, z)) = cam.project(pose.apply(p)) else { return false };
            let (x, y) = (u.round(), v.round());
            if x < T::zero() || y < T::zero() {
                return false;
            }
            let (x, y) = (x.as_f64() as usize, y.as_f64() as usize);
            if x >= depth.width() || y >= depth.height() {
                return false;
            }
            let d = depth.get(x, y);
            d > T::zero() && z <= d + tol * T::lit(10.0)
        })
        .collect()
}

/// Keeps the `1 - fraction` closest pairs under `pose`; ties resolve by
/// pair index so the selection is deterministic.
fn trim<T: Real>(
    pose: &Sim3Transform<T>,
    src: Vec<Vec3<T>>,
    dst: Vec<Vec3<T>>,
    fraction: f64,
) -> (Vec<Vec3<T>>, Vec<Vec3<T>>) {
    let keep = ((1.0 - fraction) * src.len() as f64).ceil() as usize;
    if keep >= src.len() {
        return (src, dst);
    }
    let d: Vec<T> = src.iter().zip(&dst).map(|(&a, &b)| pose.apply(a).distance_squared(b)).collect();
    let mut order: Vec<usize> = (0..src.len()).collect();
    order.sort_unstable_by(|&a, &b| d[a].partial_cmp(&d[b]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    order.truncate(keep.max(3));
    order.sort_unstable();
    (order.iter().map(|&i| src[i]).collect(), order.iter().map(|&i| dst[i]).collect())
}

fn icp_on_samples<T: Real>(
    samples: &[Vec3<T>],
    target: &PointCloud<T>,
    init: &Sim3Transform<T>,
    cfg: &IcpConfig,
) -> Result<Phase1Result<T>> {
    target.require_non_empty("ICP target")?;
    if !(0.0..1.0).contains(&cfg.trim_fraction) {
        return Err(Error::InvalidArgument(format!("trim_fraction {} outside [0, 1)", cfg.trim_fraction)));
    }
    if samples.is_empty() {
        return Err(Error::Empty("mesh produced no surface samples"));
    }
    let tree = KdTree::build(target.points());
    // Source/destination pairs for a pose: forward matches, then (when
    // symmetric) backward matches from every target point.
    let correspond = |pose: &Sim3Transform<T>| -> (Vec<Vec3<T>>, Vec<Vec3<T>>) {
        let mut src = samples.to_vec();
        let mut dst: Vec<Vec3<T>> =
            samples.par_iter().map(|&p| tree.point(tree.nearest(pose.apply(p)).expect("non-empty tree").0)).collect();
        if cfg.symmetric {
            let posed: Vec<Vec3<T>> = samples.iter().map(|&p| pose.apply(p)).collect();
            let back = KdTree::build(&posed);
            let nearest: Vec<usize> =
                target.points().par_iter().map(|&q| back.nearest(q).expect("non-empty tree").0).collect();
            src.extend(nearest.iter().map(|&i| samples[i]));
            dst.extend_from_slice(target.points());
        }
        trim(pose, src, dst, cfg.trim_fraction)
    };

    let mut pose = *init;
    let (mut src, mut dst) = correspond(&pose);
    let mut residual = rms_residual(&pose, &src, &dst);
    let mut history = vec![residual];
    let mut iterations = 0;

    while iterations < cfg.max_iters {
        let next = umeyama_points(&src, &dst)?;
        let s = next.scale().as_f64();
        if !(SCALE_BOUNDS.0..=SCALE_BOUNDS.1).contains(&s) {
            return Err(Error::Diverged(format!(
                "ICP scale {s:.3e} left [{:.0e}, {:.0e}] after {iterations} iterations (residual {residual})",
                SCALE_BOUNDS.0, SCALE_BOUNDS.1
            )));
        }
        let (next_src, next_dst) = correspond(&next);
        let next_residual = rms_residual(&next, &next_src, &next_dst);
        if next_residual > residual {
            // Only rounding can cause this; keep the better iterate.
            break;
        }
        iterations += 1;
        let improvement = residual - next_residual;
        pose = next;
        src = next_src;
        dst = next_dst;
        residual = next_residual;
        history.push(residual);
        if residual == T::zero() || improvement <= T::lit(cfg.convergence_eps) * (residual + improvement) {
            break;
        }
    }

    Ok(Phase1Result {
        transform: pose,
        residual,
        iterations,
        chosen_orientation: OrientationCandidate::identity(),
        residual_history: history,
    })
}
