//! Pipeline configuration: one TOML or JSON file with a section per stage.
//! Relative paths resolve against the file's directory; paths taken from a
//! scene manifest resolve against the manifest's directory.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use geoanchor_core::align::IcpConfig;
use geoanchor_core::refine::RefineConfig;
use geoanchor_core::scene::SceneManifest;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Master seed; every stage seed is derived from it.
    pub seed: u64,
    pub inputs: Inputs,
    pub align: IcpConfig,
    pub refine: RefineConfig,
    pub trajectory: TrajectorySection,
    pub masks: MaskSection,
    pub schedule: ScheduleSection,
    pub eval: EvalSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Inputs {
    /// Scene manifest written by `gen-scene`; fills every input not given
    /// explicitly.
    pub scene: Option<PathBuf>,
    pub mesh: Option<PathBuf>,
    pub cameras: Option<PathBuf>,
    /// One object mask per camera.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub masks: Vec<PathBuf>,
    pub reference_view: Option<usize>,
    /// Reference depth map, unprojected inside the reference mask.
    pub reference_depth: Option<PathBuf>,
    /// Alternatively, a cloud already lifted from the reference view.
    pub reference_cloud: Option<PathBuf>,
    /// Refinement target; defaults to the alignment target.
    pub target_cloud: Option<PathBuf>,
    /// Scene points for the penetration term.
    pub scene_cloud: Option<PathBuf>,
    /// Views seen by the optimizers; all views when absent.
    pub optimization_views: Option<Vec<usize>>,
    /// Scene geometry rendered to produce the frames to edit.
    pub scene_mesh: Option<PathBuf>,
    /// Directory of frame PNGs, one per trajectory view, used instead of
    /// `scene_mesh`.
    pub frames_dir: Option<PathBuf>,
    /// Ground-truth asset pose for evaluation.
    pub gt_pose: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectorySection {
    pub key_views: usize,
    /// Largest allowed angular sampling density, radians. Required.
    pub rho_max: Option<f64>,
    /// Point the key views are scored against; the placed asset's center
    /// when absent.
    pub center: Option<[f64; 3]>,
}

impl Default for TrajectorySection {
    fn default() -> Self {
        Self { key_views: 4, rho_max: None, center: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskSection {
    pub dilation_px: usize,
    pub shadow_px: usize,
}

impl Default for MaskSection {
    fn default() -> Self {
        Self { dilation_px: 4, shadow_px: 6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    pub segment_length: usize,
    pub overlap: usize,
    pub prompt: String,
    pub retries: usize,
    /// `identity` for the built-in pass-through, otherwise a command line
    /// speaking the inpainting wire protocol.
    pub backend: String,
    pub timeout_secs: u64,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self {
            segment_length: 16,
            overlap: 4,
            prompt: String::new(),
            retries: 1,
            backend: "identity".into(),
            timeout_secs: 120,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub voxel_res: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { voxel_res: 64 }
    }
}

/// Environment variable overriding `schedule.backend`.
pub const BACKEND_ENV: &str = "GEOANCHOR_BACKEND_CMD";

impl Config {
    /// Parses `path` as JSON when its extension is `.json`, TOML otherwise.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let cfg = if is_json {
            serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?
        } else {
            toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?
        };
        Ok(cfg)
    }

    /// Stage seeds come from the master seed so one number controls every
    /// random choice.
    pub fn apply_seed(&mut self) {
        self.align.seed = derive_seed(self.seed, 1);
        self.refine.seed = derive_seed(self.seed, 2);
    }

    pub fn to_canonical_json(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("config serializes")
    }
}

/// SplitMix64 step keyed by a stream number.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Inputs with absolute paths and every default filled in.
#[derive(Debug, Clone)]
pub struct ResolvedInputs {
    pub mesh: PathBuf,
    pub cameras: PathBuf,
    pub masks: Vec<PathBuf>,
    pub reference_view: usize,
    pub reference: ReferenceSource,
    pub target_cloud: Option<PathBuf>,
    pub scene_cloud: Option<PathBuf>,
    pub optimization_views: Option<Vec<usize>>,
    pub frames: FrameSource,
    pub gt_pose: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub enum ReferenceSource {
    Depth(PathBuf),
    Cloud(PathBuf),
}

#[derive(Debug, Clone)]
pub enum FrameSource {
    SceneMesh(PathBuf),
    Dir(PathBuf),
}

fn rel(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn existing(label: &str, p: PathBuf) -> anyhow::Result<PathBuf> {
    if !p.exists() {
        bail!("{label} not found: {}", p.display());
    }
    Ok(p)
}

impl Inputs {
    /// Resolves paths against `base` and the optional scene manifest and
    /// checks that every referenced file exists.
    pub fn resolve(&self, base: &Path) -> anyhow::Result<ResolvedInputs> {
        let explicit = |p: &Option<PathBuf>| p.as_ref().map(|p| rel(base, p));
        let scene = match &self.scene {
            Some(s) => {
                let path = existing("scene manifest", rel(base, s))?;
                let text = std::fs::read(&path)?;
                let m: SceneManifest = serde_json::from_slice(&text)
                    .with_context(|| format!("invalid scene manifest {}", path.display()))?;
                let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
                Some((m, dir))
            }
            None => None,
        };
        let from_scene = |f: fn(&SceneManifest) -> &str| scene.as_ref().map(|(m, d)| d.join(f(m)));

        let mesh = explicit(&self.mesh).or_else(|| from_scene(|m| &m.asset));
        let mesh = existing("mesh", mesh.context("inputs.mesh is required")?)?;
        let cameras = explicit(&self.cameras).or_else(|| from_scene(|m| &m.cameras));
        let cameras = existing("cameras", cameras.context("inputs.cameras is required")?)?;
        let masks: Vec<PathBuf> = if !self.masks.is_empty() {
            self.masks.iter().map(|p| rel(base, p)).collect()
        } else if let Some((m, d)) = &scene {
            m.masks.iter().map(|f| d.join(f)).collect()
        } else {
            bail!("inputs.masks is required");
        };
        let masks = masks.into_iter().map(|p| existing("mask", p)).collect::<anyhow::Result<_>>()?;
        let reference_view = self.reference_view.or(scene.as_ref().map(|(m, _)| m.reference_view)).unwrap_or(0);

        let reference = match (explicit(&self.reference_depth), explicit(&self.reference_cloud)) {
            (Some(_), Some(_)) => bail!("give only one of inputs.reference_depth and inputs.reference_cloud"),
            (Some(d), None) => ReferenceSource::Depth(existing("reference depth", d)?),
            (None, Some(c)) => ReferenceSource::Cloud(existing("reference cloud", c)?),
            (None, None) => match from_scene(|m| &m.monocular_target) {
                Some(c) => ReferenceSource::Cloud(existing("reference cloud", c)?),
                None => bail!("inputs.reference_depth or inputs.reference_cloud is required"),
            },
        };
        let target_cloud = explicit(&self.target_cloud).or_else(|| from_scene(|m| &m.sparse_target));
        let scene_cloud = explicit(&self.scene_cloud).or_else(|| from_scene(|m| &m.scene_points));
        let frames =
            match (explicit(&self.frames_dir), explicit(&self.scene_mesh).or_else(|| from_scene(|m| &m.scene_mesh))) {
                (Some(d), _) => FrameSource::Dir(existing("frames directory", d)?),
                (None, Some(m)) => FrameSource::SceneMesh(existing("scene mesh", m)?),
                (None, None) => bail!("inputs.frames_dir or inputs.scene_mesh is required"),
            };
        let optimization_views =
            self.optimization_views.clone().or_else(|| scene.as_ref().map(|(m, _)| m.optimization_views.clone()));
        Ok(ResolvedInputs {
            mesh,
            cameras,
            masks,
            reference_view,
            reference,
            target_cloud: target_cloud.map(|p| existing("target cloud", p)).transpose()?,
            scene_cloud: scene_cloud.map(|p| existing("scene cloud", p)).transpose()?,
            optimization_views,
            frames,
            gt_pose: explicit(&self.gt_pose)
                .or_else(|| from_scene(|m| &m.gt_pose))
                .map(|p| existing("ground-truth pose", p))
                .transpose()?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_and_json_forms_agree() {
        let toml_text = r#"
            seed = 7
            [inputs]
            mesh = "a.obj"
            [trajectory]
            rho_max = 0.1
            [schedule]
            overlap = 2
        "#;
        let json_text =
            r#"{"seed": 7, "inputs": {"mesh": "a.obj"}, "trajectory": {"rho_max": 0.1}, "schedule": {"overlap": 2}}"#;
        let a: Config = toml::from_str(toml_text).unwrap();
        let b: Config = serde_json::from_str(json_text).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.schedule.segment_length, 16);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<Config>("[refine]\nlamda_geo = 1.0\n").is_err());
        assert!(toml::from_str::<Config>("[align]\nmax_iter = 3\n").is_err());
        assert!(toml::from_str::<Config>("colour = 1\n").is_err());
    }

    #[test]
    fn stage_seeds_follow_the_master_seed() {
        let mut a = Config { seed: 3, ..Default::default() };
        let mut b = a.clone();
        a.apply_seed();
        b.apply_seed();
        assert_eq!(a, b);
        assert_ne!(a.align.seed, a.refine.seed);
        let mut c = Config { seed: 4, ..Default::default() };
        c.apply_seed();
        assert_ne!(a.align.seed, c.align.seed);
    }
}
