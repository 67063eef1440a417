//! Stage implementations shared by the single-purpose subcommands and the
//! `run` pipeline.

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, ensure, Context};

use geoanchor_core::align::{align_phase1, IcpConfig, Phase1Result};
use geoanchor_core::cvm::{
    make_contextual_masks, plan_segments, ContextualMask, IdentityBackend, InpaintBackend, ProcessBackend,
    ScheduleCheckpoint, Scheduler, CHECKPOINT_VERSION,
};
use geoanchor_core::geometry::{BinaryMask, CameraView, PointCloud, RgbImage, Sim3Transform, TriangleMesh, Vec3};
use geoanchor_core::io;
use geoanchor_core::metrics::{evaluate, iou_2d_per_view};
use geoanchor_core::refine::{refine, RefineConfig, RefineOutcome, SceneSurface};
use geoanchor_core::render::unproject_depth;
use geoanchor_core::trajectory::{densify_trajectory, select_key_views, Trajectory};

use crate::artifacts::{
    read_json, write_json, EvalRecord, EvalReference, FrameEntry, MasksManifest, ScheduleManifest, SCHEMA_VERSION,
};
use crate::config::{MaskSection, ReferenceSource, ScheduleSection};

pub type Pairs = Vec<(CameraView<f64>, BinaryMask)>;

/// Loads one mask per camera and checks that the sizes agree.
pub fn load_masks(paths: &[PathBuf], cameras: &[CameraView<f64>]) -> anyhow::Result<Vec<BinaryMask>> {
    ensure!(paths.len() == cameras.len(), "{} masks for {} cameras", paths.len(), cameras.len());
    paths
        .iter()
        .zip(cameras)
        .map(|(p, c)| {
            let m = io::load_mask(p).with_context(|| format!("cannot load mask {}", p.display()))?;
            ensure!(
                m.dims() == (c.width(), c.height()),
                "mask {} is {}x{}, camera is {}x{}",
                p.display(),
                m.width(),
                m.height(),
                c.width(),
                c.height()
            );
            Ok(m)
        })
        .collect()
}

pub fn load_cameras(path: &Path) -> anyhow::Result<Vec<CameraView<f64>>> {
    let cams = io::load_cameras(path).with_context(|| format!("cannot load cameras {}", path.display()))?;
    ensure!(!cams.is_empty(), "{} lists no cameras", path.display());
    Ok(cams)
}

pub fn load_mesh(path: &Path) -> anyhow::Result<TriangleMesh<f64>> {
    let mesh = io::load_mesh(path).with_context(|| format!("cannot load mesh {}", path.display()))?;
    ensure!(!mesh.faces().is_empty(), "mesh {} has no faces", path.display());
    Ok(mesh)
}

pub fn load_cloud(path: &Path) -> anyhow::Result<PointCloud<f64>> {
    let cloud = io::load_cloud(path).with_context(|| format!("cannot load point cloud {}", path.display()))?;
    ensure!(!cloud.is_empty(), "point cloud {} is empty", path.display());
    Ok(cloud)
}

/// Reads a Sim(3) pose from any JSON object with `s`, `q` and `t` keys,
/// such as the output of `align`, `refine` or a ground-truth pose file.
pub fn load_pose(path: &Path) -> anyhow::Result<Sim3Transform<f64>> {
    read_json(path)
}

/// Alignment target lifted from the reference view.
pub fn reference_target(
    source: &ReferenceSource,
    cameras: &[CameraView<f64>],
    masks: &[BinaryMask],
    reference_view: usize,
) -> anyhow::Result<PointCloud<f64>> {
    match source {
        ReferenceSource::Cloud(p) => load_cloud(p),
        ReferenceSource::Depth(p) => {
            let depth = io::load_depth(p).with_context(|| format!("cannot load depth {}", p.display()))?;
            let cam = cameras.get(reference_view).context("reference view out of range")?;
            let mask = masks.get(reference_view).context("reference view has no mask")?;
            Ok(unproject_depth(&depth, cam, Some(mask))?)
        }
    }
}

pub fn view_pairs(cameras: &[CameraView<f64>], masks: &[BinaryMask], views: Option<&[usize]>) -> anyhow::Result<Pairs> {
    let all: Vec<usize> = (0..cameras.len()).collect();
    let views = views.unwrap_or(&all);
    ensure!(!views.is_empty(), "no optimization views selected");
    views
        .iter()
        .map(|&i| {
            ensure!(i < cameras.len(), "view {i} out of range (have {})", cameras.len());
            Ok((cameras[i], masks[i].clone()))
        })
        .collect()
}

pub fn align(
    mesh: &TriangleMesh<f64>,
    target: &PointCloud<f64>,
    pairs: &Pairs,
    reference_camera: Option<&CameraView<f64>>,
    cfg: &IcpConfig,
) -> anyhow::Result<Phase1Result<f64>> {
    Ok(align_phase1(mesh, target, pairs, reference_camera, cfg)?)
}

pub fn refine_pose(
    mesh: &TriangleMesh<f64>,
    target: &PointCloud<f64>,
    scene_cloud: Option<&PointCloud<f64>>,
    cameras: &[CameraView<f64>],
    pairs: &Pairs,
    init: &Phase1Result<f64>,
    cfg: &RefineConfig,
) -> anyhow::Result<RefineOutcome<f64>> {
    cfg.validate()?;
    let centers: Vec<Vec3<f64>> = cameras.iter().map(|c| c.center()).collect();
    let surface = scene_cloud.map(|c| SceneSurface::estimate(c, &centers, cfg.normal_neighbors)).transpose()?;
    let out = refine(mesh, target, surface.as_ref(), pairs, init, cfg)?;
    if let Some(reason) = &out.aborted {
        log::warn!("refinement stopped early: {reason}");
    }
    Ok(out)
}

/// Center of the mesh's bounding box after `pose`.
pub fn placed_center(mesh: &TriangleMesh<f64>, pose: &Sim3Transform<f64>) -> anyhow::Result<Vec3<f64>> {
    let c = mesh.center().context("mesh has no vertices")?;
    Ok(pose.apply(c))
}

/// Key views picked from `cameras`, then densified. Returns the trajectory
/// and the chosen camera indices.
pub fn build_trajectory(
    cameras: &[CameraView<f64>],
    center: Vec3<f64>,
    key_views: usize,
    rho_max: f64,
) -> anyhow::Result<(Trajectory<f64>, Vec<usize>)> {
    ensure!(rho_max.is_finite() && rho_max > 0.0, "rho_max must be positive, got {rho_max}");
    ensure!(key_views >= 2, "need at least 2 key views, got {key_views}");
    let chosen = select_key_views(cameras, center, key_views)?;
    let keys: Vec<_> = chosen.iter().map(|&i| cameras[i]).collect();
    Ok((densify_trajectory(&keys, rho_max)?, chosen))
}

pub fn write_masks(dir: &Path, masks: &[ContextualMask], cfg: &MaskSection) -> anyhow::Result<MasksManifest> {
    std::fs::create_dir_all(dir)?;
    let (w, h) = masks.first().map(|m| m.dims()).unwrap_or((0, 0));
    let mut manifest = MasksManifest {
        schema_version: SCHEMA_VERSION,
        frame_count: masks.len(),
        width: w,
        height: h,
        dilation_px: cfg.dilation_px,
        shadow_px: cfg.shadow_px,
        base: Vec::new(),
        dilated: Vec::new(),
    };
    for m in masks {
        let (b, d) = (format!("base_{:04}.png", m.frame), format!("mask_{:04}.png", m.frame));
        io::save_mask(&dir.join(&b), &m.base)?;
        io::save_mask(&dir.join(&d), &m.dilated)?;
        manifest.base.push(b);
        manifest.dilated.push(d);
    }
    write_json(&dir.join("masks.json"), &manifest)?;
    Ok(manifest)
}

pub fn make_masks(
    mesh: &TriangleMesh<f64>,
    pose: &Sim3Transform<f64>,
    views: &[CameraView<f64>],
    cfg: &MaskSection,
) -> anyhow::Result<Vec<ContextualMask>> {
    Ok(make_contextual_masks(mesh, pose, views, cfg.dilation_px, cfg.shadow_px)?)
}

/// Reads a directory written by [`write_masks`].
pub fn read_masks(dir: &Path) -> anyhow::Result<Vec<ContextualMask>> {
    let manifest: MasksManifest = read_json(&dir.join("masks.json"))?;
    ensure!(
        manifest.base.len() == manifest.frame_count && manifest.dilated.len() == manifest.frame_count,
        "masks.json lists {} frames but {} base and {} dilated files",
        manifest.frame_count,
        manifest.base.len(),
        manifest.dilated.len()
    );
    manifest
        .base
        .iter()
        .zip(&manifest.dilated)
        .enumerate()
        .map(|(i, (b, d))| {
            let base = io::load_mask(&dir.join(b))?;
            let dilated = io::load_mask(&dir.join(d))?;
            ensure!(base.dims() == dilated.dims(), "mask sizes differ for frame {i}");
            ensure!(dilated.contains(&base), "dilated mask of frame {i} does not cover its base");
            Ok(ContextualMask {
                frame: i,
                base,
                dilated,
                dilation_px: manifest.dilation_px,
                shadow_px: manifest.shadow_px,
            })
        })
        .collect()
}

/// Sorted PNG files of a directory, decoded.
pub fn read_frames(dir: &Path) -> anyhow::Result<Vec<RgbImage>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("cannot list {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    ensure!(!files.is_empty(), "no PNG frames in {}", dir.display());
    files.iter().map(|p| io::load_rgb(p).with_context(|| format!("cannot load frame {}", p.display()))).collect()
}

pub fn write_frames(dir: &Path, frames: &[RgbImage]) -> anyhow::Result<Vec<FrameEntry>> {
    std::fs::create_dir_all(dir)?;
    frames
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let file = frame_name(i);
            io::save_rgb(&dir.join(&file), f)?;
            Ok(FrameEntry { file, sha256: io::image_digest(f) })
        })
        .collect()
}

pub fn frame_name(i: usize) -> String {
    format!("frame_{i:04}.png")
}

/// Built-in `identity` or an external command speaking the wire protocol.
pub fn make_backend(spec: &str, timeout: Duration) -> anyhow::Result<Box<dyn InpaintBackend>> {
    match spec.trim() {
        "identity" => Ok(Box::new(IdentityBackend)),
        "" => bail!("backend command is empty"),
        cmd => Ok(Box::new(ProcessBackend::from_command_line(cmd, timeout)?)),
    }
}

/// Runs the segment schedule, writing each committed segment and a
/// checkpoint to `out` as it goes. With `resume`, a matching checkpoint in
/// `out` is picked up and only the remaining segments run.
pub fn schedule_to_dir(
    frames: &[RgbImage],
    masks: &[ContextualMask],
    cfg: &ScheduleSection,
    backend: &mut dyn InpaintBackend,
    out: &Path,
    resume: bool,
) -> anyhow::Result<ScheduleManifest> {
    let n = frames.len();
    ensure!(n > 0, "no frames to schedule");
    ensure!(masks.len() == n, "{} masks for {n} frames", masks.len());
    ensure!(cfg.segment_length > 0, "segment_length must be positive");
    let length = cfg.segment_length.min(n);
    let overlap = cfg.overlap.min(length - 1);
    if (length, overlap) != (cfg.segment_length, cfg.overlap) {
        log::warn!("{n} frames: segments shortened to length {length}, overlap {overlap}");
    }
    let plan = plan_segments(n, length, overlap)?;
    std::fs::create_dir_all(out)?;
    let ckpt_path = out.join("checkpoint.json");

    let mut scheduler = Scheduler::new(frames, masks, &plan, cfg.prompt.clone(), cfg.retries)?;
    if resume && ckpt_path.exists() {
        let ckpt: ScheduleCheckpoint = read_json(&ckpt_path)?;
        ensure!(ckpt.version == CHECKPOINT_VERSION, "checkpoint version {} unsupported", ckpt.version);
        ensure!(
            (ckpt.frame_count, ckpt.segment_length, ckpt.overlap) == (n, length, overlap),
            "checkpoint was written for a different plan"
        );
        ensure!(ckpt.frame_sha256.len() == n, "checkpoint lists {} frames, expected {n}", ckpt.frame_sha256.len());
        let committed = ckpt
            .frame_sha256
            .iter()
            .enumerate()
            .map(|(i, sha)| {
                let Some(sha) = sha else { return Ok(None) };
                let img = io::load_rgb(&out.join(frame_name(i)))?;
                ensure!(&io::image_digest(&img) == sha, "committed frame {i} does not match the checkpoint");
                Ok(Some(img))
            })
            .collect::<anyhow::Result<Vec<_>>>()?;
        scheduler.resume(committed, ckpt.completed_segments)?;
        log::info!("resuming after {} of {} segments", ckpt.completed_segments, plan.len());
    }

    let outputs = scheduler.run(backend, |s, j| {
        for f in plan.segments[j].clone() {
            let img = s.committed()[f].as_ref().expect("segment frames are committed");
            io::save_rgb(&out.join(frame_name(f)), img)?;
        }
        let tmp = out.join("checkpoint.json.tmp");
        std::fs::write(&tmp, serde_json::to_vec_pretty(&s.checkpoint())?)?;
        std::fs::rename(&tmp, &ckpt_path)?;
        Ok(())
    })?;

    let manifest = ScheduleManifest {
        schema_version: SCHEMA_VERSION,
        frame_count: n,
        segment_length: length,
        overlap,
        segments: plan.segments.iter().map(|r| [r.start, r.end]).collect(),
        prompt: cfg.prompt.clone(),
        report: scheduler.report(),
        frames: outputs
            .iter()
            .enumerate()
            .map(|(i, f)| FrameEntry { file: frame_name(i), sha256: io::image_digest(f) })
            .collect(),
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// IoU against the asset at a ground-truth pose when one is known, else
/// 2D IoU against the supplied masks only.
pub fn evaluate_pose(
    mesh: &TriangleMesh<f64>,
    pose: &Sim3Transform<f64>,
    gt: Option<(&TriangleMesh<f64>, &Sim3Transform<f64>)>,
    cameras: &[CameraView<f64>],
    masks: Option<&[BinaryMask]>,
    voxel_res: usize,
) -> anyhow::Result<EvalRecord> {
    match (gt, masks) {
        (Some((gt_mesh, gt_pose)), _) => {
            Ok(EvalRecord::from_report(evaluate(mesh, pose, gt_mesh, gt_pose, cameras, voxel_res)?))
        }
        (None, Some(masks)) => {
            let pairs: Pairs = cameras.iter().copied().zip(masks.iter().cloned()).collect();
            let per_view = iou_2d_per_view(mesh, pose, &pairs)?;
            let mean = per_view.iter().sum::<f64>() / per_view.len() as f64;
            let rendered = geoanchor_core::render::rasterize_views(mesh, pose, cameras)?;
            let empty_views = masks
                .iter()
                .zip(&rendered)
                .enumerate()
                .filter(|(_, (m, r))| m.is_empty() && r.is_empty())
                .map(|(i, _)| i)
                .collect();
            Ok(EvalRecord {
                schema_version: SCHEMA_VERSION,
                reference: EvalReference::InputMasks,
                per_view_2d: per_view,
                mean_2d: mean,
                iou_3d: None,
                voxel_res,
                empty_views,
            })
        }
        (None, None) => bail!("evaluation needs a ground-truth pose or reference masks"),
    }
}
