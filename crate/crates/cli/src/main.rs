//! `geoanchor`: command-line driver for mesh placement, trajectory
//! synthesis and masked segment editing.
//!
//! Exit codes: 0 success, 2 invalid input or configuration, 3 a stage
//! failed while running.

mod artifacts;
mod config;
mod pipeline;
mod stages;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use geoanchor_core::align::{Phase1Record, Phase1Result};
use geoanchor_core::cvm::{wire, FailFromBackend, IdentityBackend};
use geoanchor_core::geometry::Vec3;
use geoanchor_core::io;
use geoanchor_core::scene::{generate_scene, Difficulty};
use geoanchor_core::trajectory::{sample_sphere, SphericalSamplingSpec};

use artifacts::{write_json, RefineRecord, TrajectoryMeta, SCHEMA_VERSION};
use config::{Config, ReferenceSource, BACKEND_ENV};

/// Why a command stopped.
#[derive(Debug)]
pub enum Failure {
    /// Bad arguments, configuration or input files; nothing ran.
    Validation(anyhow::Error),
    /// A processing stage failed.
    Stage { stage: String, error: anyhow::Error },
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 2,
            Failure::Stage { .. } => 3,
        }
    }
}

trait OrFail<T> {
    fn invalid(self) -> Result<T, Failure>;
    fn in_stage(self, stage: &str) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> OrFail<T> for Result<T, E> {
    fn invalid(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Validation(e.into()))
    }

    fn in_stage(self, stage: &str) -> Result<T, Failure> {
        self.map_err(|e| Failure::Stage { stage: stage.into(), error: e.into() })
    }
}

#[derive(Parser)]
#[command(
    name = "geoanchor",
    version,
    about = "Place a mesh in a captured scene and prepare masked edits along a camera path"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Initial similarity alignment of a mesh to a reference view.
    Align(AlignArgs),
    /// Two-stage pose refinement from an initial alignment.
    Refine(RefineArgs),
    /// Densify key cameras into a smooth trajectory.
    Trajectory(TrajectoryArgs),
    /// Cameras on a sphere around a point.
    SampleSphere(SphereArgs),
    /// Editing masks of a placed mesh along a trajectory.
    Masks(MasksArgs),
    /// Edit frames segment by segment through an inpainting backend.
    Schedule(ScheduleArgs),
    /// Silhouette and volume IoU of a placed mesh.
    Eval(EvalArgs),
    /// Write a synthetic test scene and a matching pipeline config.
    GenScene(GenSceneArgs),
    /// Run every stage from one config file.
    Run(RunArgs),
    /// Pass-through inpainting backend on stdin/stdout, for testing.
    #[command(hide = true)]
    MockBackend(MockArgs),
}

#[derive(Args)]
struct MockArgs {
    /// Report failure for this segment and every later one.
    #[arg(long)]
    fail_from_segment: Option<usize>,
}

#[derive(Args)]
struct ConfigArg {
    /// TOML or JSON config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<Config, Failure> {
        match &self.config {
            Some(p) => Config::load(p).invalid(),
            None => Ok(Config::default()),
        }
    }
}

#[derive(Args)]
struct ViewArgs {
    #[arg(long)]
    cameras: PathBuf,
    /// One object mask per camera, in camera order.
    #[arg(long, num_args = 1.., required = true)]
    masks: Vec<PathBuf>,
    /// Camera indices the optimizer uses (default: all).
    #[arg(long, value_delimiter = ',')]
    views: Option<Vec<usize>>,
}

#[derive(Args)]
struct AlignArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    mesh: PathBuf,
    #[command(flatten)]
    views: ViewArgs,
    /// Camera the reference depth or cloud was captured from.
    #[arg(long, default_value_t = 0)]
    reference_view: usize,
    /// Depth PNG of the reference view.
    #[arg(long, conflicts_with = "cloud", required_unless_present = "cloud")]
    depth: Option<PathBuf>,
    /// Point cloud lifted from the reference view.
    #[arg(long)]
    cloud: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Output JSON (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RefineArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    mesh: PathBuf,
    /// Points on the target object.
    #[arg(long)]
    target: PathBuf,
    /// Scene points used to keep the mesh out of surrounding geometry.
    #[arg(long)]
    scene_cloud: Option<PathBuf>,
    #[command(flatten)]
    views: ViewArgs,
    /// Output of `align`.
    #[arg(long)]
    phase1: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    coarse_iters: Option<usize>,
    #[arg(long)]
    fine_iters: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Per-iteration loss trace (CSV).
    #[arg(long)]
    trace: PathBuf,
}

#[derive(Args)]
struct TrajectoryArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Camera JSON with the key views, in path order.
    #[arg(long)]
    keys: PathBuf,
    /// Largest angular sampling density, radians.
    #[arg(long)]
    rho_max: Option<f64>,
    /// First pick this many key views from `--keys`.
    #[arg(long)]
    select: Option<usize>,
    /// Scene center for key-view selection (default: mean camera center).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, value_name = "X,Y,Z")]
    center: Option<Vec<f64>>,
    #[arg(long)]
    out: PathBuf,
    /// Also write density and key positions here.
    #[arg(long)]
    meta: Option<PathBuf>,
}

#[derive(Args)]
struct SphereArgs {
    /// Sampling spec JSON; flags override its fields.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    n_theta: Option<usize>,
    #[arg(long)]
    n_phi: Option<usize>,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, value_name = "X,Y,Z")]
    center: Option<Vec<f64>>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MasksArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    mesh: PathBuf,
    /// JSON with `s`, `q`, `t` (e.g. the output of `refine`).
    #[arg(long)]
    pose: PathBuf,
    /// Trajectory camera JSON.
    #[arg(long)]
    cameras: PathBuf,
    #[arg(long)]
    dilation: Option<usize>,
    #[arg(long)]
    shadow: Option<usize>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ScheduleArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// PNG frames, processed in file-name order.
    #[arg(long)]
    frames_dir: PathBuf,
    /// Directory written by `masks`.
    #[arg(long)]
    masks_dir: PathBuf,
    #[arg(long)]
    segment_length: Option<usize>,
    #[arg(long)]
    overlap: Option<usize>,
    #[arg(long)]
    prompt: Option<String>,
    #[arg(long)]
    retries: Option<usize>,
    /// `identity` or a command speaking the inpainting protocol.
    #[arg(long, env = BACKEND_ENV)]
    backend: Option<String>,
    #[arg(long)]
    timeout_secs: Option<u64>,
    /// Continue from the checkpoint in `--out-dir`.
    #[arg(long)]
    resume: bool,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    mesh: PathBuf,
    /// Candidate pose JSON.
    #[arg(long)]
    pose: PathBuf,
    /// Ground-truth asset (default: `--mesh`).
    #[arg(long)]
    gt_mesh: Option<PathBuf>,
    #[arg(long, required_unless_present = "masks")]
    gt_pose: Option<PathBuf>,
    #[arg(long)]
    cameras: PathBuf,
    /// Reference masks, used when no ground-truth pose is given.
    #[arg(long, num_args = 1..)]
    masks: Option<Vec<PathBuf>>,
    #[arg(long, default_value_t = geoanchor_core::metrics::DEFAULT_VOXEL_RES)]
    voxel_res: usize,
    /// Output JSON (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenSceneArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "easy")]
    difficulty: Difficulty,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Artifact directory (default: `run/` next to the config).
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, env = BACKEND_ENV)]
    backend: Option<String>,
    /// Reuse unchanged stage outputs and the schedule checkpoint.
    #[arg(long)]
    resume: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Validation(e) => eprintln!("error: invalid input: {e:#}"),
                Failure::Stage { stage, error } => eprintln!("error: stage `{stage}` failed: {error:#}"),
            }
            ExitCode::from(f.exit_code())
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Align(a) => cmd_align(a),
        Command::Refine(a) => cmd_refine(a),
        Command::Trajectory(a) => cmd_trajectory(a),
        Command::SampleSphere(a) => cmd_sample_sphere(a),
        Command::Masks(a) => cmd_masks(a),
        Command::Schedule(a) => cmd_schedule(a),
        Command::Eval(a) => cmd_eval(a),
        Command::GenScene(a) => cmd_gen_scene(a),
        Command::Run(a) => cmd_run(a),
        Command::MockBackend(a) => {
            let (stdin, stdout) = (std::io::stdin(), std::io::stdout());
            let mut backend =
                FailFromBackend { inner: IdentityBackend, fail_from: a.fail_from_segment.unwrap_or(usize::MAX) };
            wire::serve(&mut stdin.lock(), &mut stdout.lock(), &mut backend).in_stage("mock-backend")?;
            Ok(())
        }
    }
}

fn emit<T: serde::Serialize>(out: Option<&Path>, value: &T, stage: &str) -> Result<(), Failure> {
    match out {
        Some(p) => write_json(p, value).in_stage(stage),
        None => {
            println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
            Ok(())
        }
    }
}

fn point3(v: &[f64]) -> Result<[f64; 3], Failure> {
    <[f64; 3]>::try_from(v).map_err(|_| Failure::Validation(anyhow::anyhow!("expected X,Y,Z, got {} values", v.len())))
}

fn cmd_align(a: AlignArgs) -> Result<(), Failure> {
    let mut cfg = a.config.load()?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.apply_seed();
    if let Some(n) = a.max_iters {
        cfg.align.max_iters = n;
    }
    let mesh = stages::load_mesh(&a.mesh).invalid()?;
    let cameras = stages::load_cameras(&a.views.cameras).invalid()?;
    let masks = stages::load_masks(&a.views.masks, &cameras).invalid()?;
    let source = match (a.depth, a.cloud) {
        (Some(d), _) => ReferenceSource::Depth(d),
        (None, Some(c)) => ReferenceSource::Cloud(c),
        (None, None) => unreachable!("clap requires one of --depth and --cloud"),
    };
    if a.reference_view >= cameras.len() {
        return Err(Failure::Validation(anyhow::anyhow!("reference view {} out of range", a.reference_view)));
    }
    let target = stages::reference_target(&source, &cameras, &masks, a.reference_view).invalid()?;
    let pairs = stages::view_pairs(&cameras, &masks, a.views.views.as_deref()).invalid()?;
    let r = stages::align(&mesh, &target, &pairs, Some(&cameras[a.reference_view]), &cfg.align).in_stage("align")?;
    emit(a.out.as_deref(), &Phase1Record::from(&r), "align")
}

fn cmd_refine(a: RefineArgs) -> Result<(), Failure> {
    let mut cfg = a.config.load()?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.apply_seed();
    if let Some(n) = a.coarse_iters {
        cfg.refine.coarse_iters = n;
    }
    if let Some(n) = a.fine_iters {
        cfg.refine.fine_iters = n;
    }
    cfg.refine.validate().invalid()?;
    let mesh = stages::load_mesh(&a.mesh).invalid()?;
    let target = stages::load_cloud(&a.target).invalid()?;
    let scene = a.scene_cloud.as_deref().map(stages::load_cloud).transpose().invalid()?;
    let cameras = stages::load_cameras(&a.views.cameras).invalid()?;
    let masks = stages::load_masks(&a.views.masks, &cameras).invalid()?;
    let pairs = stages::view_pairs(&cameras, &masks, a.views.views.as_deref()).invalid()?;
    let p1: Phase1Result<f64> =
        artifacts::read_json::<Phase1Record>(&a.phase1).and_then(|r| Ok(r.into_result()?)).invalid()?;
    let out =
        stages::refine_pose(&mesh, &target, scene.as_ref(), &cameras, &pairs, &p1, &cfg.refine).in_stage("refine")?;
    write_json(&a.out, &RefineRecord::from(&out)).in_stage("refine")?;
    let mut csv = Vec::new();
    out.trace.write_csv(&mut csv).in_stage("refine")?;
    std::fs::write(&a.trace, csv).in_stage("refine")
}

fn cmd_trajectory(a: TrajectoryArgs) -> Result<(), Failure> {
    let cfg = a.config.load()?;
    let rho_max = a
        .rho_max
        .or(cfg.trajectory.rho_max)
        .context("--rho-max (or trajectory.rho_max in the config) is required")
        .invalid()?;
    let cams = stages::load_cameras(&a.keys).invalid()?;
    let center = a.center.as_deref().map(point3).transpose()?;
    let select = a.select.or(a.config.config.as_ref().map(|_| cfg.trajectory.key_views));
    let (traj, key_views) = match select {
        Some(n) => {
            let center = match center.or(cfg.trajectory.center) {
                Some(c) => Vec3::from_array(c),
                None => Vec3::centroid(&cams.iter().map(|c| c.center()).collect::<Vec<_>>()).expect("non-empty"),
            };
            stages::build_trajectory(&cams, center, n, rho_max).in_stage("trajectory")?
        }
        None => {
            let t = geoanchor_core::trajectory::densify_trajectory(&cams, rho_max).in_stage("trajectory")?;
            (t, (0..cams.len()).collect())
        }
    };
    io::save_cameras(&a.out, &traj.views).in_stage("trajectory")?;
    log::info!("{} views, rho = {:.6} rad", traj.len(), traj.rho);
    if let Some(p) = &a.meta {
        let meta = TrajectoryMeta {
            schema_version: SCHEMA_VERSION,
            frame_count: traj.len(),
            rho: traj.rho,
            rho_max,
            key_views,
            key_indices: traj.key_indices.clone(),
        };
        write_json(p, &meta).in_stage("trajectory")?;
    }
    Ok(())
}

fn cmd_sample_sphere(a: SphereArgs) -> Result<(), Failure> {
    let mut spec: SphericalSamplingSpec = match &a.spec {
        Some(p) => artifacts::read_json(p).invalid()?,
        None => SphericalSamplingSpec::default(),
    };
    if let Some(r) = a.radius {
        spec.radius = r;
    }
    if let Some(n) = a.n_theta {
        spec.n_theta = n;
    }
    if let Some(n) = a.n_phi {
        spec.n_phi = n;
    }
    if let Some(b) = a.budget {
        spec.budget = b;
    }
    if let Some(c) = a.center.as_deref() {
        spec.center = point3(c)?;
    }
    let cams = sample_sphere::<f64>(&spec).invalid()?;
    io::save_cameras(&a.out, &cams).in_stage("sample-sphere")
}

fn cmd_masks(a: MasksArgs) -> Result<(), Failure> {
    let mut cfg = a.config.load()?;
    if let Some(d) = a.dilation {
        cfg.masks.dilation_px = d;
    }
    if let Some(s) = a.shadow {
        cfg.masks.shadow_px = s;
    }
    let mesh = stages::load_mesh(&a.mesh).invalid()?;
    let pose = stages::load_pose(&a.pose).invalid()?;
    let cams = stages::load_cameras(&a.cameras).invalid()?;
    let masks = stages::make_masks(&mesh, &pose, &cams, &cfg.masks).in_stage("masks")?;
    stages::write_masks(&a.out_dir, &masks, &cfg.masks).in_stage("masks")?;
    Ok(())
}

fn cmd_schedule(a: ScheduleArgs) -> Result<(), Failure> {
    let mut cfg = a.config.load()?;
    let s = &mut cfg.schedule;
    if let Some(v) = a.segment_length {
        s.segment_length = v;
    }
    if let Some(v) = a.overlap {
        s.overlap = v;
    }
    if let Some(v) = a.prompt {
        s.prompt = v;
    }
    if let Some(v) = a.retries {
        s.retries = v;
    }
    if let Some(v) = a.backend {
        s.backend = v;
    }
    if let Some(v) = a.timeout_secs {
        s.timeout_secs = v;
    }
    if s.segment_length == 0 || s.overlap >= s.segment_length {
        return Err(Failure::Validation(anyhow::anyhow!(
            "need 0 <= overlap < segment_length, got overlap {} and length {}",
            s.overlap,
            s.segment_length
        )));
    }
    let frames = stages::read_frames(&a.frames_dir).invalid()?;
    let masks = stages::read_masks(&a.masks_dir).invalid()?;
    let mut backend = stages::make_backend(&s.backend, Duration::from_secs(s.timeout_secs)).invalid()?;
    stages::schedule_to_dir(&frames, &masks, &cfg.schedule, backend.as_mut(), &a.out_dir, a.resume)
        .in_stage("schedule")?;
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<(), Failure> {
    let mesh = stages::load_mesh(&a.mesh).invalid()?;
    let pose = stages::load_pose(&a.pose).invalid()?;
    let cams = stages::load_cameras(&a.cameras).invalid()?;
    let gt_mesh = a.gt_mesh.as_deref().map(stages::load_mesh).transpose().invalid()?;
    let gt_pose = a.gt_pose.as_deref().map(stages::load_pose).transpose().invalid()?;
    let masks = a.masks.as_deref().map(|m| stages::load_masks(m, &cams)).transpose().invalid()?;
    if a.voxel_res < geoanchor_core::metrics::MIN_VOXEL_RES {
        return Err(Failure::Validation(anyhow::anyhow!(
            "--voxel-res must be at least {}",
            geoanchor_core::metrics::MIN_VOXEL_RES
        )));
    }
    let gt = gt_pose.as_ref().map(|p| (gt_mesh.as_ref().unwrap_or(&mesh), p));
    let rec = stages::evaluate_pose(&mesh, &pose, gt, &cams, masks.as_deref(), a.voxel_res).in_stage("eval")?;
    emit(a.out.as_deref(), &rec, "eval")
}

/// Trajectory density used by generated pipeline configs, radians.
const GENERATED_RHO_MAX: f64 = 0.05;

fn cmd_gen_scene(a: GenSceneArgs) -> Result<(), Failure> {
    let scene = generate_scene(a.seed, a.difficulty);
    scene.write_dir(&a.out_dir).in_stage("gen-scene")?;
    let d = Config::default();
    let text = format!(
        "# Pipeline config for the generated {difficulty} scene; omitted keys take\n\
         # their defaults.\n\
         seed = {seed}\n\n\
         [inputs]\n\
         scene = \"scene.json\"\n\n\
         [trajectory]\n\
         key_views = {keys}\n\
         rho_max = {rho}\n\n\
         [masks]\n\
         dilation_px = {dil}\n\
         shadow_px = {shadow}\n\n\
         [schedule]\n\
         segment_length = {len}\n\
         overlap = {overlap}\n\
         backend = \"identity\"\n\n\
         [eval]\n\
         voxel_res = {res}\n",
        difficulty = a.difficulty,
        seed = a.seed,
        keys = d.trajectory.key_views,
        rho = GENERATED_RHO_MAX,
        dil = d.masks.dilation_px,
        shadow = d.masks.shadow_px,
        len = d.schedule.segment_length,
        overlap = d.schedule.overlap,
        res = d.eval.voxel_res,
    );
    debug_assert!(toml::from_str::<Config>(&text).is_ok());
    std::fs::write(a.out_dir.join("pipeline.toml"), text).in_stage("gen-scene")?;
    log::info!("wrote {} scene (seed {}) to {}", a.difficulty, a.seed, a.out_dir.display());
    Ok(())
}

fn cmd_run(a: RunArgs) -> Result<(), Failure> {
    let mut cfg = Config::load(&a.config).invalid()?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let out_dir = a.out_dir.unwrap_or_else(|| a.config.parent().unwrap_or(Path::new(".")).join("run"));
    let backend = a.backend.unwrap_or_else(|| cfg.schedule.backend.clone());
    let opts = pipeline::RunOptions { out_dir, resume: a.resume, backend };
    let summary = pipeline::run(&a.config, cfg, &opts)?;
    if let Some(e) = &summary.results.eval {
        log::info!("done: mean 2D IoU {:.4}, 3D IoU {:?}", e.mean_2d, e.iou_3d);
    }
    Ok(())
}
