//! Seeded synthetic scenes with known ground truth: a ground plane with
//! clutter, one asset at a known similarity pose and a ring of cameras,
//! plus the imperfect observations the alignment stages consume.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::align::cube_group;
use crate::error::{Error, Result};
use crate::geometry::{
    BinaryMask, CameraView, DepthMap, Intrinsics, PointCloud, RgbImage, Sim3Transform, TriangleMesh, UnitQuaternion,
    Vec3,
};
use crate::io;
use crate::render::{fuse_masked_views, rasterize_silhouette, render_depth, render_depth_and_faces, unproject_depth};
use crate::spatial::statistical_outlier_filter;

pub const RING_VIEWS: usize = 12;
pub const IMAGE_SIZE: usize = 128;
pub const FOCAL: f64 = 128.0;
pub const RING_RADIUS: f64 = 4.0;
/// Views used by the optimizers; the full ring is kept for evaluation.
pub const OPTIMIZATION_VIEWS: [usize; 6] = [0, 2, 4, 6, 8, 10];
/// Views whose metric depth forms the sparse multi-view target.
pub const SPARSE_VIEWS: [usize; 3] = [0, 4, 8];
pub const REFERENCE_VIEW: usize = 0;
/// Fraction of depth pixels corrupted on hard scenes, and the maximum
/// relative error applied to them.
pub const NOISY_FRACTION: f64 = 0.2;
pub const NOISE_MAGNITUDE: f64 = 0.2;
const OUTLIER_NEIGHBORS: usize = 16;
const OUTLIER_STD_RATIO: f64 = 1.0;
const CARVE_SLACK_PX: usize = 1;
/// Only scene points within this distance of the asset are kept.
const SCENE_POINT_RADIUS: f64 = 3.0;
const GROUND_HALF_SIZE: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    /// Convex asset on an open plane, clean depth.
    Easy,
    /// Non-convex asset, a partial occluder in the reference view,
    /// background clutter and corrupted depth.
    Hard,
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Easy => "easy",
            Self::Hard => "hard",
        })
    }
}

impl FromStr for Difficulty {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "easy" => Ok(Self::Easy),
            "hard" => Ok(Self::Hard),
            _ => Err(Error::InvalidArgument(format!("unknown difficulty {s:?}, expected easy or hard"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub seed: u64,
    pub difficulty: Difficulty,
    /// Ground plane and clutter, without the asset.
    pub scene_mesh: TriangleMesh<f64>,
    /// Asset in its own canonical frame.
    pub asset: TriangleMesh<f64>,
    pub gt_pose: Sim3Transform<f64>,
    pub cameras: Vec<CameraView<f64>>,
    /// Clean depth of scene plus posed asset, per camera.
    pub depths: Vec<DepthMap<f64>>,
    /// Asset silhouettes at the ground-truth pose, per camera.
    pub masks: Vec<BinaryMask>,
    /// Unknown global factor on the reference view's relative depth.
    pub monocular_scale: f64,
}

/// Deterministic scene for `seed`.
pub fn generate_scene(seed: u64, difficulty: Difficulty) -> SyntheticScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ce4_e5ce_4e5c_e000);
    let asset = match difficulty {
        Difficulty::Easy => wedge(&mut rng),
        Difficulty::Hard => {
            if rng.random_bool(0.5) {
                chair(&mut rng)
            } else {
                sofa(&mut rng)
            }
        }
    };

    let cube = cube_group()[rng.random_range(0..24)].quaternion::<f64>();
    let yaw = rng.random_range(-15.0f64..15.0).to_radians();
    let rotation = UnitQuaternion::from_axis_angle(Vec3::unit_z(), yaw) * cube;
    let scale = rng.random_range(0.8..1.3);
    let (lo, hi) = asset.transformed(&Sim3Transform::new(scale, rotation, Vec3::zero()).unwrap()).aabb().unwrap();
    let dir = rng.random_range(0.0..TAU);
    let dist = rng.random_range(6.0..8.0);
    let base = Vec3::new(dist * dir.cos(), dist * dir.sin(), 0.0);
    let mid = (lo + hi) * 0.5;
    let gt_pose = Sim3Transform::new(scale, rotation, Vec3::new(base.x - mid.x, base.y - mid.y, -lo.z)).unwrap();
    let center = Vec3::new(base.x, base.y, (hi.z - lo.z) * 0.5);
    let radius = ((hi - lo) * 0.5).norm();

    let a0 = rng.random_range(0.0..TAU);
    let cameras = ring_cameras(center, a0, center.z + 1.5);

    let ground = ground_plane(base);
    let mut parts = vec![ground];
    if difficulty == Difficulty::Hard {
        let to_cam = Vec3::new(a0.cos(), a0.sin(), 0.0);
        let side = Vec3::new(-a0.sin(), a0.cos(), 0.0);
        let lateral = if rng.random_bool(0.5) { 1.0 } else { -1.0 } * rng.random_range(0.25..0.45) * radius;
        let at = base + to_cam * (radius + 0.3 + rng.random_range(0.2..0.4)) + side * lateral;
        let h = rng.random_range(0.8..1.0) * (hi.z - lo.z);
        parts.push(TriangleMesh::cuboid(Vec3::new(at.x, at.y, h * 0.5), Vec3::new(0.3, 0.3, h * 0.5)));
        for _ in 0..rng.random_range(3..6) {
            let ang = a0 + rng.random_range(0.6..TAU - 0.6);
            let r = rng.random_range(radius + 0.5..2.8f64.max(radius + 0.9));
            let he = Vec3::new(rng.random_range(0.1..0.3), rng.random_range(0.1..0.3), rng.random_range(0.1..0.5));
            let p = base + Vec3::new(ang.cos(), ang.sin(), 0.0) * r;
            parts.push(TriangleMesh::cuboid(Vec3::new(p.x, p.y, he.z), he));
        }
    }
    let scene_mesh = TriangleMesh::merge(&parts.iter().collect::<Vec<_>>()).unwrap();

    let composite = TriangleMesh::merge(&[&scene_mesh, &asset.transformed(&gt_pose)]).unwrap();
    let identity = Sim3Transform::identity();
    let depths = cameras.iter().map(|c| render_depth(&composite, &identity, c)).collect();
    let masks = cameras.iter().map(|c| rasterize_silhouette(&asset, &gt_pose, c).unwrap()).collect();

    let monocular_scale = if rng.random_bool(0.5) { rng.random_range(0.75..0.9) } else { rng.random_range(1.12..1.3) };

    SyntheticScene { seed, difficulty, scene_mesh, asset, gt_pose, cameras, depths, masks, monocular_scale }
}

fn ring_cameras(center: Vec3<f64>, a0: f64, height: f64) -> Vec<CameraView<f64>> {
    (0..RING_VIEWS)
        .map(|i| {
            let a = a0 + TAU * i as f64 / RING_VIEWS as f64;
            let eye = Vec3::new(center.x + RING_RADIUS * a.cos(), center.y + RING_RADIUS * a.sin(), height);
            CameraView::look_at(Intrinsics::centered(FOCAL, IMAGE_SIZE, IMAGE_SIZE), eye, center, Vec3::unit_z())
                .expect("ring camera is never degenerate")
        })
        .collect()
}

fn ground_plane(at: Vec3<f64>) -> TriangleMesh<f64> {
    let g = GROUND_HALF_SIZE;
    let v = vec![
        Vec3::new(at.x - g, at.y - g, 0.0),
        Vec3::new(at.x + g, at.y - g, 0.0),
        Vec3::new(at.x + g, at.y + g, 0.0),
        Vec3::new(at.x - g, at.y + g, 0.0),
    ];
    TriangleMesh::new(v, vec![[0, 1, 2], [0, 2, 3]]).unwrap()
}

/// Convex ramp: a box whose top face slopes down toward +x.
fn wedge(rng: &mut ChaCha8Rng) -> TriangleMesh<f64> {
    let a = rng.random_range(0.4..0.6);
    let b = rng.random_range(0.25..0.4);
    let h = rng.random_range(0.5..0.8);
    let low = h * rng.random_range(0.15..0.4);
    let cube = TriangleMesh::cuboid(Vec3::new(0.0, 0.0, h * 0.5), Vec3::new(a, b, h * 0.5));
    // Vertex index bits: x=4, z=1; lower the high-x top edge.
    let verts = cube
        .vertices()
        .iter()
        .enumerate()
        .map(|(k, &v)| if k & 5 == 5 { Vec3::new(v.x, v.y, low) } else { v })
        .collect();
    TriangleMesh::new(verts, cube.faces().to_vec()).unwrap()
}

fn boxes(parts: &[(Vec3<f64>, Vec3<f64>)]) -> TriangleMesh<f64> {
    let meshes: Vec<_> = parts.iter().map(|&(c, h)| TriangleMesh::cuboid(c, h)).collect();
    TriangleMesh::merge(&meshes.iter().collect::<Vec<_>>()).unwrap()
}

fn chair(rng: &mut ChaCha8Rng) -> TriangleMesh<f64> {
    let w = rng.random_range(0.3..0.4);
    let d = rng.random_range(0.3..0.4);
    let seat = rng.random_range(0.35..0.5);
    let back = rng.random_range(0.4..0.6);
    let t = 0.04;
    let leg = 0.035;
    let mut parts = vec![(Vec3::new(0.0, 0.0, seat), Vec3::new(w, d, t))];
    for (sx, sy) in [(-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0), (1.0, 1.0)] {
        let c = Vec3::new(sx * (w - leg), sy * (d - leg), (seat - t) * 0.5);
        parts.push((c, Vec3::new(leg, leg, (seat - t) * 0.5)));
    }
    parts.push((Vec3::new(0.0, -d + t, seat + t + back * 0.5), Vec3::new(w, t, back * 0.5)));
    boxes(&parts)
}

/// Sofa with a single armrest, so it has no mirror symmetry.
fn sofa(rng: &mut ChaCha8Rng) -> TriangleMesh<f64> {
    let w = rng.random_range(0.6..0.8);
    let d = rng.random_range(0.3..0.4);
    let base = rng.random_range(0.18..0.25);
    let back = rng.random_range(0.25..0.4);
    let arm = rng.random_range(0.12..0.2);
    boxes(&[
        (Vec3::new(0.0, 0.0, base), Vec3::new(w, d, base)),
        (Vec3::new(0.0, -d + 0.08, 2.0 * base + back * 0.5), Vec3::new(w, 0.08, back * 0.5)),
        (Vec3::new(w - 0.08, 0.0, 2.0 * base + arm * 0.5), Vec3::new(0.08, d, arm * 0.5)),
    ])
}

impl SyntheticScene {
    fn observation_rng(&self, purpose: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ purpose)
    }

    /// Depth as a sensor would report it: clean on easy scenes; on hard
    /// ones a fraction of pixels carry a large relative error.
    pub fn observed_depth(&self, view: usize) -> DepthMap<f64> {
        let mut d = self.depths[view].clone();
        if self.difficulty == Difficulty::Hard {
            let mut rng = self.observation_rng(1000 + view as u64);
            for v in d.data_mut() {
                let hit = rng.random_bool(NOISY_FRACTION);
                let e: f64 = rng.random_range(-NOISE_MAGNITUDE..NOISE_MAGNITUDE);
                if hit && *v > 0.0 {
                    *v *= 1.0 + e;
                }
            }
        }
        d
    }

    pub fn view_pairs(&self, views: &[usize]) -> Vec<(CameraView<f64>, BinaryMask)> {
        views.iter().map(|&i| (self.cameras[i], self.masks[i].clone())).collect()
    }

    /// Ground-truth masks for every ring camera.
    pub fn all_view_pairs(&self) -> Vec<(CameraView<f64>, BinaryMask)> {
        self.view_pairs(&(0..self.cameras.len()).collect::<Vec<_>>())
    }

    pub fn camera_centers(&self) -> Vec<Vec3<f64>> {
        self.cameras.iter().map(|c| c.center()).collect()
    }

    pub fn reference_camera(&self) -> &CameraView<f64> {
        &self.cameras[REFERENCE_VIEW]
    }

    /// Points lifted from the reference view inside its mask, with depth
    /// known only up to `monocular_scale`. Occluders in front of the asset
    /// leak into it on hard scenes. No density filtering: with one view,
    /// obliquely seen faces are sparse and would be stripped.
    pub fn monocular_target(&self) -> PointCloud<f64> {
        let mut d = self.observed_depth(REFERENCE_VIEW);
        d.data_mut().iter_mut().for_each(|v| *v *= self.monocular_scale);
        unproject_depth(&d, self.reference_camera(), Some(&self.masks[REFERENCE_VIEW]))
            .expect("asset is visible in the reference view")
    }

    /// Metric points fused from a few views with silhouette-consistency
    /// carving and outlier filtering.
    pub fn sparse_target(&self) -> PointCloud<f64> {
        let views: Vec<_> =
            SPARSE_VIEWS.iter().map(|&i| (self.cameras[i], self.observed_depth(i), self.masks[i].clone())).collect();
        let fused = fuse_masked_views(&views, CARVE_SLACK_PX).expect("asset is visible in the sparse views");
        statistical_outlier_filter(&fused, OUTLIER_NEIGHBORS, OUTLIER_STD_RATIO).0
    }

    /// Scene points around the asset from every view, with the asset's own
    /// pixels removed; stands in for the reconstructed scene.
    pub fn scene_points(&self) -> PointCloud<f64> {
        let center = self.gt_pose.apply(self.asset.center().unwrap());
        let mut points = Vec::new();
        for (i, cam) in self.cameras.iter().enumerate() {
            let depth = self.observed_depth(i);
            let keep = crate::cvm::dilate_disk(&self.masks[i], 2);
            for y in (0..depth.height()).step_by(2) {
                for x in (0..depth.width()).step_by(2) {
                    let d = depth.get(x, y);
                    if d > 0.0 && !keep.get(x, y) {
                        let p = cam.unproject(x as f64, y as f64, d);
                        let flat = Vec3::new(p.x - center.x, p.y - center.y, 0.0);
                        if flat.norm() < SCENE_POINT_RADIUS {
                            points.push(p);
                        }
                    }
                }
            }
        }
        PointCloud::new(points)
    }

    /// Flat-shaded color render of the scene without the asset.
    pub fn render_background(&self, cam: &CameraView<f64>) -> RgbImage {
        shade(&self.scene_mesh, cam)
    }

    /// Writes the scene as plain files and returns the manifest.
    pub fn write_dir(&self, dir: &Path) -> Result<SceneManifest> {
        std::fs::create_dir_all(dir)?;
        io::save_mesh(&dir.join("scene.obj"), &self.scene_mesh)?;
        io::save_mesh(&dir.join("asset.obj"), &self.asset)?;
        std::fs::write(dir.join("gt_pose.json"), serde_json::to_vec_pretty(&self.gt_pose)?)?;
        io::save_cameras(&dir.join("cameras.json"), &self.cameras)?;
        let mut masks = Vec::new();
        let mut depths = Vec::new();
        let mut frames = Vec::new();
        for (i, cam) in self.cameras.iter().enumerate() {
            let (m, d, f) = (format!("mask_{i:02}.png"), format!("depth_{i:02}.png"), format!("frame_{i:02}.png"));
            io::save_mask(&dir.join(&m), &self.masks[i])?;
            io::save_depth(&dir.join(&d), &self.observed_depth(i), io::DepthEncoding::default())?;
            io::save_rgb(&dir.join(&f), &self.render_background(cam))?;
            masks.push(m);
            depths.push(d);
            frames.push(f);
        }
        io::save_cloud(&dir.join("monocular.ply"), &self.monocular_target())?;
        io::save_cloud(&dir.join("sparse.ply"), &self.sparse_target())?;
        io::save_cloud(&dir.join("scene_points.ply"), &self.scene_points())?;
        let manifest = SceneManifest {
            seed: self.seed,
            difficulty: self.difficulty,
            scene_mesh: "scene.obj".into(),
            asset: "asset.obj".into(),
            gt_pose: "gt_pose.json".into(),
            cameras: "cameras.json".into(),
            masks,
            depths,
            frames,
            reference_view: REFERENCE_VIEW,
            optimization_views: OPTIMIZATION_VIEWS.to_vec(),
            monocular_target: "monocular.ply".into(),
            sparse_target: "sparse.ply".into(),
            scene_points: "scene_points.ply".into(),
        };
        std::fs::write(dir.join("scene.json"), serde_json::to_vec_pretty(&manifest)?)?;
        Ok(manifest)
    }
}

/// Relative file names of a scene written by [`SyntheticScene::write_dir`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneManifest {
    pub seed: u64,
    pub difficulty: Difficulty,
    pub scene_mesh: String,
    pub asset: String,
    pub gt_pose: String,
    pub cameras: String,
    pub masks: Vec<String>,
    pub depths: Vec<String>,
    pub frames: Vec<String>,
    pub reference_view: usize,
    pub optimization_views: Vec<usize>,
    pub monocular_target: String,
    pub sparse_target: String,
    pub scene_points: String,
}

/// Lambert shading from a fixed light, ground tinted by a checkerboard.
pub fn shade(mesh: &TriangleMesh<f64>, cam: &CameraView<f64>) -> RgbImage {
    let (depth, faces) = render_depth_and_faces(mesh, &Sim3Transform::identity(), cam);
    let light = Vec3::new(0.4, 0.3, 1.0).normalized();
    let mut img = RgbImage::filled(cam.width(), cam.height(), [150, 180, 215]);
    for y in 0..cam.height() {
        for x in 0..cam.width() {
            let Some(f) = faces[y * cam.width() + x] else { continue };
            let [a, b, c] = mesh.triangle(f);
            let n = (b - a).cross(c - a).normalized();
            let lit = 0.35 + 0.65 * n.dot(light).abs();
            let p = cam.unproject(x as f64, y as f64, depth.get(x, y));
            let base = if n.z.abs() > 0.99 && p.z.abs() < 1e-6 {
                if ((p.x.floor() + p.y.floor()) as i64).rem_euclid(2) == 0 {
                    [120.0, 140.0, 100.0]
                } else {
                    [95.0, 115.0, 80.0]
                }
            } else {
                [170.0, 150.0, 130.0]
            };
            img.set(x, y, base.map(|v| (v * lit).round().clamp(0.0, 255.0) as u8));
        }
    }
    img
}

/// Angle in radians between the asset's ground-truth rotation and `pose`.
pub fn rotation_error(scene: &SyntheticScene, pose: &Sim3Transform<f64>) -> f64 {
    scene.gt_pose.rotation().angle_to(&pose.rotation()).min(PI)
}
