//! `run`: align -> refine -> trajectory -> masks -> schedule -> eval, with
//! every intermediate artifact and a summary written to one directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{ensure, Context};

use geoanchor_core::align::{Phase1Record, Phase1Result};
use geoanchor_core::geometry::{BinaryMask, CameraView, PointCloud, Sim3Transform, TriangleMesh, Vec3};
use geoanchor_core::io;
use geoanchor_core::scene::shade;

use crate::artifacts::{
    read_json, write_json, EvalRecord, RefineRecord, RunResults, RunState, RunStatus, StageEntry, StageFailure,
    Summary, TrajectoryMeta, SCHEMA_VERSION,
};
use crate::config::{Config, FrameSource, ResolvedInputs};
use crate::stages::{self, Pairs};
use crate::Failure;

pub struct RunOptions {
    pub out_dir: PathBuf,
    pub resume: bool,
    /// Backend after flag and environment overrides.
    pub backend: String,
}

/// Everything loaded and checked before the first stage runs.
struct Validated {
    mesh: TriangleMesh<f64>,
    cameras: Vec<CameraView<f64>>,
    masks: Vec<BinaryMask>,
    reference_view: usize,
    reference: PointCloud<f64>,
    target: Option<PointCloud<f64>>,
    scene_cloud: Option<PointCloud<f64>>,
    pairs: Pairs,
    frames: FrameSource,
    gt_pose: Option<Sim3Transform<f64>>,
    rho_max: f64,
}

fn validate(cfg: &Config, inputs: &ResolvedInputs) -> anyhow::Result<Validated> {
    let mesh = stages::load_mesh(&inputs.mesh)?;
    let cameras = stages::load_cameras(&inputs.cameras)?;
    let masks = stages::load_masks(&inputs.masks, &cameras)?;
    ensure!(
        inputs.reference_view < cameras.len(),
        "reference_view {} out of range (have {} cameras)",
        inputs.reference_view,
        cameras.len()
    );
    let reference = stages::reference_target(&inputs.reference, &cameras, &masks, inputs.reference_view)?;
    let target = inputs.target_cloud.as_deref().map(stages::load_cloud).transpose()?;
    let scene_cloud = inputs.scene_cloud.as_deref().map(stages::load_cloud).transpose()?;
    let pairs = stages::view_pairs(&cameras, &masks, inputs.optimization_views.as_deref())?;
    let gt_pose = inputs.gt_pose.as_deref().map(stages::load_pose).transpose()?;

    ensure!((0.0..1.0).contains(&cfg.align.trim_fraction), "align.trim_fraction must be in [0, 1)");
    cfg.refine.validate()?;
    let rho_max = cfg.trajectory.rho_max.context("trajectory.rho_max is required")?;
    ensure!(rho_max.is_finite() && rho_max > 0.0, "trajectory.rho_max must be positive");
    ensure!(
        (2..=cameras.len()).contains(&cfg.trajectory.key_views),
        "trajectory.key_views must be in 2..={}",
        cameras.len()
    );
    ensure!(cfg.schedule.segment_length > 0, "schedule.segment_length must be positive");
    ensure!(cfg.schedule.overlap < cfg.schedule.segment_length, "schedule.overlap must be < segment_length");
    ensure!(cfg.eval.voxel_res >= geoanchor_core::metrics::MIN_VOXEL_RES, "eval.voxel_res too small");
    Ok(Validated {
        mesh,
        cameras,
        masks,
        reference_view: inputs.reference_view,
        reference,
        target,
        scene_cloud,
        pairs,
        frames: inputs.frames.clone(),
        gt_pose,
        rho_max,
    })
}

struct Run<'a> {
    out: &'a Path,
    cfg: &'a Config,
    config_sha: String,
    state: RunState,
    /// Stages reused from an earlier run when resuming.
    reusable: Vec<StageEntry>,
}

impl Run<'_> {
    fn outputs(&self, files: &[&str]) -> anyhow::Result<BTreeMap<String, String>> {
        files.iter().map(|f| Ok((f.to_string(), io::file_digest(&self.out.join(f))?))).collect()
    }

    /// Recorded outputs of `stage` from the earlier run, if they are all
    /// still present and unchanged.
    fn reuse(&self, stage: &str) -> Option<StageEntry> {
        let entry = self.reusable.iter().find(|e| e.name == stage)?;
        let intact = entry.outputs.iter().all(|(f, sha)| io::file_digest(&self.out.join(f)).is_ok_and(|d| &d == sha));
        intact.then(|| entry.clone())
    }

    fn complete(&mut self, entry: StageEntry) -> anyhow::Result<()> {
        self.state.completed.push(entry);
        write_json(&self.out.join("run_state.json"), &self.state)
    }
}

pub fn run(config_path: &Path, mut cfg: Config, opts: &RunOptions) -> Result<Summary, Failure> {
    cfg.schedule.backend = opts.backend.clone();
    let config_sha = {
        // The backend command is an environment detail, not part of the
        // experiment.
        let mut hashed = cfg.clone();
        hashed.schedule.backend = String::new();
        io::bytes_digest(&hashed.to_canonical_json())
    };
    cfg.apply_seed();
    let base = config_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let inputs = cfg.inputs.resolve(&base).map_err(Failure::Validation)?;
    let v = validate(&cfg, &inputs).map_err(Failure::Validation)?;

    let out = opts.out_dir.as_path();
    std::fs::create_dir_all(out).map_err(|e| Failure::Validation(e.into()))?;
    let mut reusable = Vec::new();
    if opts.resume {
        if let Ok(prev) = read_json::<RunState>(&out.join("run_state.json")) {
            if prev.config_sha256 == config_sha {
                reusable = prev.completed;
            } else {
                log::warn!("configuration changed since the last run; starting over");
            }
        }
    }
    let mut run = Run {
        out,
        cfg: &cfg,
        config_sha: config_sha.clone(),
        state: RunState {
            schema_version: SCHEMA_VERSION,
            config_sha256: config_sha,
            completed: Vec::new(),
            failure: None,
        },
        reusable,
    };
    let mut results = RunResults { phase1: None, refine: None, trajectory: None, schedule: None, eval: None };
    let outcome = run_stages(&mut run, &v, opts, &mut results);

    let failure =
        outcome.as_ref().err().map(|(stage, e)| StageFailure { stage: stage.to_string(), message: format!("{e:#}") });
    run.state.failure = failure.clone();
    let summary = Summary {
        schema_version: SCHEMA_VERSION,
        status: if failure.is_some() { RunStatus::Failed } else { RunStatus::Complete },
        seed: cfg.seed,
        config_sha256: run.config_sha.clone(),
        stages: run.state.completed.clone(),
        failure,
        results,
    };
    let written = write_json(&out.join("run_state.json"), &run.state)
        .and_then(|_| write_json(&out.join("summary.json"), &summary));
    match outcome {
        Err((stage, error)) => Err(Failure::Stage { stage: stage.to_string(), error }),
        Ok(()) => {
            written.map_err(|error| Failure::Stage { stage: "summary".into(), error })?;
            Ok(summary)
        }
    }
}

type StageResult<T> = Result<T, (&'static str, anyhow::Error)>;

fn at<T>(stage: &'static str, r: anyhow::Result<T>) -> StageResult<T> {
    r.map_err(|e| (stage, e))
}

fn run_stages(run: &mut Run, v: &Validated, opts: &RunOptions, results: &mut RunResults) -> StageResult<()> {
    let out = run.out;
    let cfg = run.cfg;

    // align
    let p1: Phase1Result<f64> = at(
        "align",
        (|| {
            if let Some(entry) = run.reuse("align") {
                let rec: Phase1Record = read_json(&out.join("phase1.json"))?;
                run.complete(entry)?;
                return Ok(rec.into_result()?);
            }
            let r = stages::align(&v.mesh, &v.reference, &v.pairs, Some(&v.cameras[v.reference_view]), &cfg.align)?;
            write_json(&out.join("phase1.json"), &Phase1Record::from(&r))?;
            io::save_cloud(&out.join("align_target.ply"), &v.reference)?;
            let entry =
                StageEntry { name: "align".into(), outputs: run.outputs(&["phase1.json", "align_target.ply"])? };
            run.complete(entry)?;
            Ok(r)
        })(),
    )?;
    results.phase1 = Some(Phase1Record::from(&p1));

    // refine
    let refined: Sim3Transform<f64> = at(
        "refine",
        (|| {
            if let Some(entry) = run.reuse("refine") {
                let rec: RefineRecord = read_json(&out.join("refine.json"))?;
                results.refine = Some(rec);
                run.complete(entry)?;
                return stages::load_pose(&out.join("refine.json"));
            }
            let target = v.target.as_ref().unwrap_or(&v.reference);
            let o =
                stages::refine_pose(&v.mesh, target, v.scene_cloud.as_ref(), &v.cameras, &v.pairs, &p1, &cfg.refine)?;
            let rec = RefineRecord::from(&o);
            write_json(&out.join("refine.json"), &rec)?;
            let mut csv = Vec::new();
            o.trace.write_csv(&mut csv)?;
            std::fs::write(out.join("refine_trace.csv"), csv)?;
            io::save_mesh(&out.join("placed_asset.obj"), &v.mesh.transformed(&o.transform))?;
            let entry = StageEntry {
                name: "refine".into(),
                outputs: run.outputs(&["refine.json", "refine_trace.csv", "placed_asset.obj"])?,
            };
            run.complete(entry)?;
            results.refine = Some(rec);
            Ok(o.transform)
        })(),
    )?;

    // trajectory
    let views: Vec<CameraView<f64>> = at(
        "trajectory",
        (|| {
            if let Some(entry) = run.reuse("trajectory") {
                results.trajectory = Some(read_json(&out.join("trajectory_meta.json"))?);
                run.complete(entry)?;
                return stages::load_cameras(&out.join("trajectory.json"));
            }
            let center = match cfg.trajectory.center {
                Some(c) => Vec3::from_array(c),
                None => stages::placed_center(&v.mesh, &refined)?,
            };
            let (traj, chosen) = stages::build_trajectory(&v.cameras, center, cfg.trajectory.key_views, v.rho_max)?;
            io::save_cameras(&out.join("trajectory.json"), &traj.views)?;
            let meta = TrajectoryMeta {
                schema_version: SCHEMA_VERSION,
                frame_count: traj.len(),
                rho: traj.rho,
                rho_max: v.rho_max,
                key_views: chosen,
                key_indices: traj.key_indices.clone(),
            };
            write_json(&out.join("trajectory_meta.json"), &meta)?;
            let entry = StageEntry {
                name: "trajectory".into(),
                outputs: run.outputs(&["trajectory.json", "trajectory_meta.json"])?,
            };
            run.complete(entry)?;
            results.trajectory = Some(meta);
            Ok(traj.views)
        })(),
    )?;

    // masks
    let masks = at(
        "masks",
        (|| {
            let dir = out.join("masks");
            if let Some(entry) = run.reuse("masks") {
                run.complete(entry)?;
                return stages::read_masks(&dir);
            }
            let masks = stages::make_masks(&v.mesh, &refined, &views, &cfg.masks)?;
            let manifest = stages::write_masks(&dir, &masks, &cfg.masks)?;
            let mut files = vec!["masks/masks.json".to_string()];
            files.extend(manifest.base.iter().chain(&manifest.dilated).map(|f| format!("masks/{f}")));
            let files: Vec<&str> = files.iter().map(String::as_str).collect();
            let entry = StageEntry { name: "masks".into(), outputs: run.outputs(&files)? };
            run.complete(entry)?;
            Ok(masks)
        })(),
    )?;

    // schedule
    at(
        "schedule",
        (|| {
            if let Some(entry) = run.reuse("schedule") {
                let m: crate::artifacts::ScheduleManifest = read_json(&out.join("edited/manifest.json"))?;
                results.schedule = Some(m.report);
                run.complete(entry)?;
                return Ok(());
            }
            let frames = match &v.frames {
                FrameSource::SceneMesh(p) => {
                    let scene = stages::load_mesh(p)?;
                    views.iter().map(|c| shade(&scene, c)).collect()
                }
                FrameSource::Dir(d) => stages::read_frames(d)?,
            };
            ensure!(frames.len() == views.len(), "{} frames for a {}-view trajectory", frames.len(), views.len());
            let inputs = stages::write_frames(&out.join("frames"), &frames)?;
            let mut backend = stages::make_backend(&opts.backend, Duration::from_secs(cfg.schedule.timeout_secs))?;
            let manifest = stages::schedule_to_dir(
                &frames,
                &masks,
                &cfg.schedule,
                backend.as_mut(),
                &out.join("edited"),
                opts.resume,
            )?;
            let mut files: Vec<String> = inputs.iter().map(|f| format!("frames/{}", f.file)).collect();
            files.extend(manifest.frames.iter().map(|f| format!("edited/{}", f.file)));
            files.push("edited/manifest.json".into());
            files.push("edited/checkpoint.json".into());
            let files: Vec<&str> = files.iter().map(String::as_str).collect();
            let entry = StageEntry { name: "schedule".into(), outputs: run.outputs(&files)? };
            run.complete(entry)?;
            results.schedule = Some(manifest.report);
            Ok(())
        })(),
    )?;

    // eval
    let record: EvalRecord = at(
        "eval",
        (|| {
            let gt = v.gt_pose.as_ref().map(|p| (&v.mesh, p));
            let rec = stages::evaluate_pose(&v.mesh, &refined, gt, &v.cameras, Some(&v.masks), cfg.eval.voxel_res)?;
            write_json(&out.join("eval.json"), &rec)?;
            let entry = StageEntry { name: "eval".into(), outputs: run.outputs(&["eval.json"])? };
            run.complete(entry)?;
            Ok(rec)
        })(),
    )?;
    results.eval = Some(record);
    Ok(())
}
