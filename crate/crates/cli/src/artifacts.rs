//! JSON records written by the subcommands. Each object form carries a
//! `schema_version` matching the schema files under `schemas/`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use geoanchor_core::align::Phase1Record;
use geoanchor_core::cvm::ScheduleReport;
use geoanchor_core::metrics::IoUReport;
use geoanchor_core::refine::{RefineOutcome, Stage};

pub const SCHEMA_VERSION: u32 = 1;

/// Writes pretty JSON followed by a newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<T> {
    let bytes = std::fs::read(path).map_err(|e| anyhow::anyhow!("cannot read {}: {e}", path.display()))?;
    serde_json::from_slice(&bytes).map_err(|e| anyhow::anyhow!("invalid JSON in {}: {e}", path.display()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageLoss {
    pub iterations: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// Final transform of a refinement with per-stage loss summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineRecord {
    pub schema_version: u32,
    pub s: f64,
    pub q: [f64; 4],
    pub t: [f64; 3],
    pub coarse: Option<StageLoss>,
    pub fine: Option<StageLoss>,
    pub aborted: Option<String>,
}

impl From<&RefineOutcome<f64>> for RefineRecord {
    fn from(out: &RefineOutcome<f64>) -> Self {
        let stage = |s: Stage| {
            let recs: Vec<_> = out.trace.stage(s).collect();
            let (first, last) = (recs.first()?, recs.last()?);
            Some(StageLoss { iterations: recs.len() - 1, initial_loss: first.total, final_loss: last.total })
        };
        Self {
            schema_version: SCHEMA_VERSION,
            s: out.transform.scale(),
            q: out.transform.rotation().to_wxyz(),
            t: out.transform.translation().to_array(),
            coarse: stage(Stage::Coarse),
            fine: stage(Stage::Fine),
            aborted: out.aborted.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub schema_version: u32,
    pub frame_count: usize,
    pub rho: f64,
    pub rho_max: f64,
    /// Input camera indices chosen as key views, in trajectory order.
    pub key_views: Vec<usize>,
    /// Positions of the key views within the trajectory.
    pub key_indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MasksManifest {
    pub schema_version: u32,
    pub frame_count: usize,
    pub width: usize,
    pub height: usize,
    pub dilation_px: usize,
    pub shadow_px: usize,
    /// Raw silhouettes, relative to the manifest.
    pub base: Vec<String>,
    /// Editing regions, relative to the manifest.
    pub dilated: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub file: String,
    /// Digest of the decoded pixels (see `image_digest`).
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleManifest {
    pub schema_version: u32,
    pub frame_count: usize,
    pub segment_length: usize,
    pub overlap: usize,
    /// Half-open frame ranges.
    pub segments: Vec<[usize; 2]>,
    pub prompt: String,
    pub report: ScheduleReport,
    pub frames: Vec<FrameEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalReference {
    /// Silhouettes and occupancy of the asset at a known pose.
    GroundTruth,
    /// Only the supplied object masks; no 3D score.
    InputMasks,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub schema_version: u32,
    pub reference: EvalReference,
    pub per_view_2d: Vec<f64>,
    pub mean_2d: f64,
    pub iou_3d: Option<f64>,
    pub voxel_res: usize,
    pub empty_views: Vec<usize>,
}

impl EvalRecord {
    pub fn from_report(r: IoUReport) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            reference: EvalReference::GroundTruth,
            per_view_2d: r.per_view_2d,
            mean_2d: r.mean_2d,
            iou_3d: Some(r.iou_3d),
            voxel_res: r.voxel_res,
            empty_views: r.empty_views,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageEntry {
    pub name: String,
    /// Artifact path relative to the run directory -> file SHA-256.
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageFailure {
    pub stage: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResults {
    pub phase1: Option<Phase1Record>,
    pub refine: Option<RefineRecord>,
    pub trajectory: Option<TrajectoryMeta>,
    pub schedule: Option<ScheduleReport>,
    pub eval: Option<EvalRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub status: RunStatus,
    pub seed: u64,
    pub config_sha256: String,
    pub stages: Vec<StageEntry>,
    pub failure: Option<StageFailure>,
    pub results: RunResults,
}

/// Progress marker for `run --resume`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub schema_version: u32,
    pub config_sha256: String,
    pub completed: Vec<StageEntry>,
    pub failure: Option<StageFailure>,
}
