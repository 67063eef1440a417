//! Camera trajectories: angular sampling density, key-view selection,
//! SLERP densification, spherical view sampling and view-pair filtering.
//!
//! Density uses the half-angle convention throughout: the log of a unit
//! quaternion rotating by `θ` has norm `θ / 2`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraView, Intrinsics, UnitQuaternion, Vec3};
use crate::scalar::Real;

/// Neighbors used for the camera-center density estimate.
pub const DENSITY_NEIGHBORS: usize = 4;
/// Relative score difference below which two candidates count as tied.
pub const SCORE_TIE_TOLERANCE: f64 = 1e-9;
/// Slack on the insertion-count ceiling so exact multiples of the step
/// limit do not gain a frame through rounding.
pub const CEIL_TOLERANCE: f64 = 1e-9;
/// Slack on the pair-disparity threshold, in degrees.
pub const DISPARITY_TOLERANCE_DEG: f64 = 1e-9;

/// Mean half-angle between consecutive rotations.
pub fn angular_density<T: Real>(poses: &[UnitQuaternion<T>]) -> Result<T> {
    if poses.len() < 2 {
        return Err(Error::InvalidArgument(format!("angular density needs >= 2 poses, got {}", poses.len())));
    }
    let sum: T = poses.windows(2).map(|w| (w[0].inverse() * w[1]).log().norm()).sum();
    Ok(sum / T::from_count(poses.len() - 1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real + Serialize", deserialize = "T: Real + Deserialize<'de>"))]
pub struct Trajectory<T> {
    pub views: Vec<CameraView<T>>,
    /// Angular sampling density of `views`, radians per step.
    pub rho: T,
    /// Positions of the original key views within `views`.
    pub key_indices: Vec<usize>,
}

impl<T: Real> Trajectory<T> {
    pub fn rotations(&self) -> Vec<UnitQuaternion<T>> {
        self.views.iter().map(|v| v.rotation()).collect()
    }

    pub fn recompute_rho(&self) -> Result<T> {
        angular_density(&self.rotations())
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }
}

/// Frames inserted between two rotations `angle` apart so that every step
/// has half-angle at most `rho_max`.
pub fn insertion_count<T: Real>(angle: T, rho_max: T) -> usize {
    let ratio = (angle / (T::lit(2.0) * rho_max)).as_f64();
    ((ratio - CEIL_TOLERANCE).ceil() as i64 - 1).max(0) as usize
}

/// Camera between `a` and `b`: SLERP on rotation, linear on center, with
/// `a`'s intrinsics.
pub fn interpolate_view<T: Real>(a: &CameraView<T>, b: &CameraView<T>, s: T) -> CameraView<T> {
    let q = a.rotation().slerp(&b.rotation(), s);
    let c = a.center().lerp(b.center(), s);
    a.with_pose(q, -q.rotate(c))
}

/// Inserts SLERP frames between consecutive keys until each step's
/// half-angle is at most `rho_max`.
pub fn densify_trajectory<T: Real>(keys: &[CameraView<T>], rho_max: T) -> Result<Trajectory<T>> {
    if keys.len() < 2 {
        return Err(Error::InvalidArgument(format!("densify needs >= 2 keys, got {}", keys.len())));
    }
    if !(rho_max > T::zero() && rho_max.is_finite()) {
        return Err(Error::InvalidArgument(format!("rho_max must be positive, got {rho_max}")));
    }
    let mut views = vec![keys[0]];
    let mut key_indices = vec![0];
    for pair in keys.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        let n = insertion_count(a.rotation().angle_to(&b.rotation()), rho_max);
        for i in 1..=n {
            views.push(interpolate_view(a, b, T::from_count(i) / T::from_count(n + 1)));
        }
        key_indices.push(views.len());
        views.push(*b);
    }
    let rho = angular_density(&views.iter().map(|v| v.rotation()).collect::<Vec<_>>())?;
    Ok(Trajectory { views, rho, key_indices })
}

fn lexicographic_key<T: Real>(v: &CameraView<T>) -> [f64; 7] {
    let c = v.center();
    let q = v.rotation().canonical().to_wxyz();
    [c.x, c.y, c.z, q[0], q[1], q[2], q[3]].map(|x| x.as_f64())
}

fn direction_angle<T: Real>(a: Vec3<T>, b: Vec3<T>) -> f64 {
    let (a, b) = (a.normalized(), b.normalized());
    a.cross(b).norm().as_f64().atan2(a.dot(b).as_f64())
}

/// Local density of each camera center: inverse mean distance to its
/// nearest neighbors.
pub fn center_density<T: Real>(views: &[CameraView<T>]) -> Vec<f64> {
    let centers: Vec<Vec3<f64>> = views.iter().map(|v| v.center().cast()).collect();
    let k = DENSITY_NEIGHBORS.min(centers.len().saturating_sub(1));
    centers
        .iter()
        .enumerate()
        .map(|(i, c)| {
            if k == 0 {
                return 1.0;
            }
            let mut d: Vec<f64> =
                centers.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, o)| c.distance(*o)).collect();
            d.sort_by(f64::total_cmp);
            1.0 / (d[..k].iter().sum::<f64>() / k as f64 + 1e-12)
        })
        .collect()
}

/// Greedy key-view selection. Score is center density divided by
/// `1 + distance to scene_center`; candidates closer than `π / count` (as
/// seen from the scene center) to a chosen view are skipped while any other
/// candidate remains. Returns indices ordered by azimuth around the center.
pub fn select_key_views<T: Real>(views: &[CameraView<T>], scene_center: Vec3<T>, count: usize) -> Result<Vec<usize>> {
    if count > views.len() {
        return Err(Error::InvalidArgument(format!("requested {count} key views from {}", views.len())));
    }
    if count == 0 {
        return Ok(Vec::new());
    }
    let density = center_density(views);
    let dirs: Vec<Vec3<T>> = views.iter().map(|v| v.center() - scene_center).collect();
    let score: Vec<f64> = density.iter().zip(&dirs).map(|(d, dir)| d / (1.0 + dir.norm().as_f64())).collect();
    let keys: Vec<[f64; 7]> = views.iter().map(lexicographic_key).collect();
    let min_sep = std::f64::consts::PI / count as f64;

    let mut chosen: Vec<usize> = Vec::with_capacity(count);
    let mut free: Vec<bool> = vec![true; views.len()];
    while chosen.len() < count {
        let sep: Vec<f64> = (0..views.len())
            .map(|i| chosen.iter().map(|&c| direction_angle(dirs[i], dirs[c])).fold(f64::INFINITY, f64::min))
            .collect();
        let any_separated = (0..views.len()).any(|i| free[i] && sep[i] >= min_sep);
        let eligible = |i: usize| free[i] && (!any_separated || sep[i] >= min_sep);
        // Score first (up to tolerance), then angular spread, then a total
        // order on pose values so the result ignores input order.
        let better = |a: usize, b: usize| -> bool {
            let tol = SCORE_TIE_TOLERANCE * score[a].abs().max(score[b].abs());
            if any_separated && (score[a] - score[b]).abs() > tol {
                return score[a] > score[b];
            }
            if sep[a] != sep[b] && (sep[a] - sep[b]).abs() > 1e-12 {
                return sep[a] > sep[b];
            }
            if !any_separated && (score[a] - score[b]).abs() > tol {
                return score[a] > score[b];
            }
            keys[a] < keys[b]
        };
        let mut best: Option<usize> = None;
        for i in (0..views.len()).filter(|&i| eligible(i)) {
            if best.is_none_or(|b| better(i, b)) {
                best = Some(i);
            }
        }
        let b = best.expect("count <= views");
        free[b] = false;
        chosen.push(b);
    }
    let azimuth = |i: usize| dirs[i].y.as_f64().atan2(dirs[i].x.as_f64());
    chosen.sort_by(|&a, &b| azimuth(a).total_cmp(&azimuth(b)).then(keys[a].partial_cmp(&keys[b]).unwrap()));
    Ok(chosen)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SphericalSamplingSpec {
    pub radius: f64,
    /// Polar (from +z) bins.
    pub n_theta: usize,
    /// Azimuth bins.
    pub n_phi: usize,
    pub center: [f64; 3],
    pub budget: usize,
    #[serde(default = "default_image_size")]
    pub width: usize,
    #[serde(default = "default_image_size")]
    pub height: usize,
    #[serde(default = "default_focal")]
    pub focal: f64,
}

fn default_image_size() -> usize {
    128
}

fn default_focal() -> f64 {
    128.0
}

impl Default for SphericalSamplingSpec {
    fn default() -> Self {
        Self {
            radius: 3.0,
            n_theta: 8,
            n_phi: 12,
            center: [0.0; 3],
            budget: 96,
            width: default_image_size(),
            height: default_image_size(),
            focal: default_focal(),
        }
    }
}

/// Cameras on a sphere around `spec.center`, all looking at it. Grid cells
/// are `θ_i = π (i + ½) / n_θ`, `φ_j = 2π j / n_φ`; a budget below the grid
/// size takes evenly spaced cells in row-major order, and a budget of one
/// is the +z pole.
pub fn sample_sphere<T: Real>(spec: &SphericalSamplingSpec) -> Result<Vec<CameraView<T>>> {
    let cells = spec.n_theta * spec.n_phi;
    if spec.budget == 0 {
        return Err(Error::InvalidArgument("view budget must be at least 1".into()));
    }
    if !(spec.radius > 0.0 && spec.radius.is_finite()) {
        return Err(Error::InvalidArgument(format!("radius must be positive, got {}", spec.radius)));
    }
    let intr = Intrinsics::centered(T::lit(spec.focal), spec.width, spec.height);
    let center = Vec3::from_array(spec.center.map(T::lit));
    let up = Vec3::unit_z();
    let r = T::lit(spec.radius);
    if spec.budget == 1 {
        return Ok(vec![CameraView::look_at(intr, center + up * r, center, up)?]);
    }
    if spec.budget > cells {
        return Err(Error::InvalidArgument(format!(
            "budget {} exceeds {}x{} grid",
            spec.budget, spec.n_theta, spec.n_phi
        )));
    }
    (0..spec.budget)
        .map(|k| {
            let cell = k * cells / spec.budget;
            let (i, j) = (cell / spec.n_phi, cell % spec.n_phi);
            let theta = std::f64::consts::PI * (i as f64 + 0.5) / spec.n_theta as f64;
            let phi = std::f64::consts::TAU * j as f64 / spec.n_phi as f64;
            let dir = Vec3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()).cast::<T>();
            CameraView::look_at(intr, center + dir * r, center, up)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewPair {
    pub a: usize,
    pub b: usize,
    pub disparity_deg: f64,
}

/// Unordered pairs whose relative rotation is at least `min_disparity_deg`,
/// most disparate first.
pub fn filter_view_pairs<T: Real>(views: &[CameraView<T>], min_disparity_deg: f64) -> Result<Vec<ViewPair>> {
    filter_view_pairs_where(views, min_disparity_deg, |_| true)
}

/// [`filter_view_pairs`] restricted to views accepted by `usable`, e.g.
/// those whose object mask is non-empty.
pub fn filter_view_pairs_where<T: Real>(
    views: &[CameraView<T>],
    min_disparity_deg: f64,
    usable: impl Fn(usize) -> bool,
) -> Result<Vec<ViewPair>> {
    if views.len() < 2 {
        return Err(Error::InvalidArgument(format!("pair filtering needs >= 2 views, got {}", views.len())));
    }
    let mut pairs = Vec::new();
    for a in (0..views.len()).filter(|&i| usable(i)) {
        for b in (a + 1..views.len()).filter(|&i| usable(i)) {
            let d = views[a].rotation().angle_to(&views[b].rotation()).as_f64().to_degrees();
            if d >= min_disparity_deg - DISPARITY_TOLERANCE_DEG {
                pairs.push(ViewPair { a, b, disparity_deg: d });
            }
        }
    }
    pairs.sort_by(|x, y| y.disparity_deg.total_cmp(&x.disparity_deg).then((x.a, x.b).cmp(&(y.a, y.b))));
    Ok(pairs)
}
